"""Evaluation: confusion matrix, per-class report, one-vs-rest ROC/AUC, PCA."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .beats import AamiClass
from .errors import ConfigError, ShapeError, UndefinedAUCError

CLASS_NAMES = [c.name for c in AamiClass]


def confusion_matrix(true, pred, num_classes=5):
    """Counts with rows = true class, columns = predicted class."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ShapeError(f"label sequences differ in length: {len(true)} vs {len(pred)}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass(frozen=True)
class ClassificationReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    weighted_avg: dict

    def rows(self, names=None):
        names = names or [str(i) for i in range(len(self.support))]
        return [(n, self.precision[i], self.recall[i], self.f1[i], int(self.support[i]))
                for i, n in enumerate(names)]


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def classification_report(confusion) -> ClassificationReport:
    cm = np.asarray(confusion, dtype=np.float64)
    tp = np.diag(cm)
    precision = _ratio(tp, cm.sum(axis=0))
    recall = _ratio(tp, cm.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    support = cm.sum(axis=1).astype(np.int64)
    total = support.sum()
    w = support / total if total else np.zeros_like(precision)
    weighted = {
        "precision": float(w @ precision),
        "recall": float(w @ recall),
        "f1": float(w @ f1),
        "support": int(total),
    }
    return ClassificationReport(precision, recall, f1, support, weighted)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] = +inf for the (0, 0) point


def roc_curve(scores, positive):
    """Threshold sweep over distinct scores, highest first.

    Equal scores enter in one step, so the trapezoid over a tied block
    credits each positive/negative tie with one half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"AUC undefined: {n_pos} positives and {n_neg} negatives")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], positive[order]
    last_of_block = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(p)[last_of_block]
    fp = np.cumsum(~p)[last_of_block]
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return RocCurve(fpr, tpr, np.r_[np.inf, s[last_of_block]])


def auc_from_curve(curve):
    dx = np.diff(curve.fpr)
    return float(np.sum(dx * (curve.tpr[1:] + curve.tpr[:-1]) / 2))


def roc_auc(scores, labels, k):
    """One-vs-rest curve and AUC for class ``k`` from ``[n, classes]`` scores."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    curve = roc_curve(scores[:, k], labels == k)
    return curve, auc_from_curve(curve)


def per_class_auc(scores, labels, num_classes=5):
    """AUC per class; ``None`` (with a warning) where a class is absent or universal."""
    curves, aucs = [], []
    for k in range(num_classes):
        try:
            c, a = roc_auc(scores, labels, k)
        except UndefinedAUCError as exc:
            warnings.warn(f"class {CLASS_NAMES[k] if k < len(CLASS_NAMES) else k}: {exc}", RuntimeWarning,
                          stacklevel=2)
            c, a = None, None
        curves.append(c)
        aucs.append(a)
    return curves, aucs


def macro_auc(aucs):
    defined = [a for a in aucs if a is not None]
    if not defined:
        raise UndefinedAUCError("no class has a defined AUC")
    return float(np.mean(defined))


@dataclass(frozen=True)
class AucDispersion:
    mean: float
    std: float
    per_repeat: list
    skipped: list = field(default_factory=list)  # (repeat, class) pairs with undefined AUC


def macro_auc_with_dispersion(repeats, num_classes=5):
    """Mean and population std of macro AUC over ``(scores, labels)`` repeats."""
    repeats = list(repeats)
    if len(repeats) < 2:
        raise ConfigError(f"need at least 2 repeats, got {len(repeats)}")
    values, skipped = [], []
    for r, (scores, labels) in enumerate(repeats):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, aucs = per_class_auc(scores, labels, num_classes)
        for k, a in enumerate(aucs):
            if a is None:
                skipped.append((r, k))
                warnings.warn(f"repeat {r}: class {k} AUC undefined, skipped", RuntimeWarning, stacklevel=2)
        values.append(macro_auc(aucs))
    v = np.asarray(values)
    return AucDispersion(float(v.mean()), float(v.std()), values, skipped)


def pca_project(vectors, out_dims=2):
    """Project centred rows onto the top covariance eigenvectors.

    Returns ``(projection [n, out_dims], explained variance ratios,
    components [out_dims, d])``. Each component is signed so that its
    largest-magnitude loading is positive.
    """
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"pca_project expects an n x d matrix, got shape {list(X.shape)}")
    n, d = X.shape
    if n < 2 or d < out_dims:
        raise ShapeError(f"need n >= 2 and d >= {out_dims}, got n={n}, d={d}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0, None)
    evecs = evecs[:, ::-1]
    total = evals.sum()
    if total <= 1e-12 * max(1.0, np.abs(X).max() ** 2):
        raise ConfigError("PCA undefined for zero-variance data")
    comps = evecs[:, :out_dims].T.copy()
    lead = np.argmax(np.abs(comps), axis=1)
    comps *= np.sign(comps[np.arange(out_dims), lead])[:, None]
    return Xc @ comps.T, evals[:out_dims] / total, comps


def separation_ratio(points, labels):
    """trace(between-class scatter) / trace(within-class scatter)."""
    P = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    mu = P.mean(axis=0)
    between = within = 0.0
    for c in np.unique(labels):
        Pc = P[labels == c]
        mc = Pc.mean(axis=0)
        between += len(Pc) * float(np.sum((mc - mu) ** 2))
        within += float(np.sum((Pc - mc) ** 2))
    if within == 0:
        return np.inf
    return between / within


@dataclass
class EvalReport:
    confusion: np.ndarray
    report: ClassificationReport
    per_class_auc: list
    macro_auc: float
    curves: list
    dispersion: AucDispersion | None = None


def evaluate(probs, labels, num_classes=5, dispersion_seeds=None):
    """Build the full report from probability rows and true labels.

    With ``dispersion_seeds``, macro AUC is also recomputed on seeded random
    halves of the evaluated set to give a spread.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    cm = confusion_matrix(labels, probs.argmax(axis=1), num_classes)
    curves, aucs = per_class_auc(probs, labels, num_classes)
    disp = None
    if dispersion_seeds:
        repeats = []
        for seed in dispersion_seeds:
            idx = np.random.default_rng(seed).permutation(len(labels))[: max(2, len(labels) // 2)]
            repeats.append((probs[idx], labels[idx]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            disp = macro_auc_with_dispersion(repeats, num_classes)
    return EvalReport(cm, classification_report(cm), aucs, macro_auc(aucs), curves, disp)


def _fmt_auc(a):
    return "undefined" if a is None else f"{a:.4f}"


def report_table(ev: EvalReport, names=CLASS_NAMES):
    lines = [f"{'Label':>8} {'Precision':>10} {'Recall':>10} {'F-1':>10} {'Support':>9} {'AUC':>10}"]
    for (name, p, r, f, s), a in zip(ev.report.rows(names), ev.per_class_auc):
        lines.append(f"{name:>8} {p:>10.4f} {r:>10.4f} {f:>10.4f} {s:>9d} {_fmt_auc(a):>10}")
    w = ev.report.weighted_avg
    lines.append(f"{'Average':>8} {w['precision']:>10.4f} {w['recall']:>10.4f} {w['f1']:>10.4f} "
                 f"{w['support']:>9d} {ev.macro_auc:>10.4f}")
    if ev.dispersion is not None:
        lines.append(f"macro AUC {ev.macro_auc:.4f}; over {len(ev.dispersion.per_repeat)} resamples "
                     f"{ev.dispersion.mean:.4f} +/- {ev.dispersion.std:.4f}")
    return "\n".join(lines) + "\n"


def report_csv(ev: EvalReport, names=CLASS_NAMES):
    lines = ["class,precision,recall,f1,support,auc"]
    for (name, p, r, f, s), a in zip(ev.report.rows(names), ev.per_class_auc):
        lines.append(f"{name},{p:.6f},{r:.6f},{f:.6f},{s},{'' if a is None else f'{a:.6f}'}")
    w = ev.report.weighted_avg
    lines.append(f"weighted_avg,{w['precision']:.6f},{w['recall']:.6f},{w['f1']:.6f},{w['support']},"
                 f"{ev.macro_auc:.6f}")
    return "\n".join(lines) + "\n"


def roc_csv(ev: EvalReport, names=CLASS_NAMES):
    lines = ["class,fpr,tpr"]
    for name, c in zip(names, ev.curves):
        if c is None:
            continue
        lines.extend(f"{name},{x:.6f},{y:.6f}" for x, y in zip(c.fpr, c.tpr))
    return "\n".join(lines) + "\n"


def confusion_csv(cm, names=CLASS_NAMES):
    lines = ["true\\pred," + ",".join(names)]
    for name, row in zip(names, cm):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def pca_csv(points, labels):
    lines = ["x,y,label"]
    lines.extend(f"{x:.6f},{y:.6f},{int(l)}" for (x, y), l in zip(points, labels))
    return "\n".join(lines) + "\n"
