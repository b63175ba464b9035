"""Acceptance criteria, one test each, each printing a PASS/FAIL line.

Criteria 7, 8 and 12 need real MIT-BIH records. Point ABCNN_MITDB_DIR at a
directory of ``<name>.hea/.dat/.atr`` files (or place them under
``data/mitdb``). ABCNN_MITDB_RECORDS optionally restricts the run to a
comma-separated subset of at least eight records. Without the data these
three criteria fail.
"""
import math
import os
import statistics
import time

import numpy as np
import pytest

from abcnn import beats as B
from abcnn import cli
from abcnn import metrics as E
from abcnn import model as M
from abcnn import tensor as T
from abcnn import trainer as TR
from abcnn import wfdb_io as W
from conftest import DATA, FIXTURE_RECORDS, GOLDEN, WFDB_DIR, mitdb_dir, probe_gradients
from test_tensor import PRIMITIVES, _away_from_zero, _distinct


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


def test_criterion_01_format_fidelity(verdict, rng):
    t0 = time.perf_counter()
    samples = rng.integers(-2048, 2048, size=(2, 10**6))
    packed = W.encode_format212(samples)
    ok = len(packed) == 3 * 10**6 and np.array_equal(W.decode_format212(packed, 10**6), samples)
    raw = rng.integers(0, 256, size=3 * 10**6, dtype=np.uint8).tobytes()
    ok &= W.encode_format212(W.decode_format212(raw, 10**6)) == raw
    for name in FIXTURE_RECORDS:
        h = W.parse_header((WFDB_DIR / f"{name}.hea").read_bytes())
        adc = W.decode_format212((WFDB_DIR / f"{name}.dat").read_bytes(), h.num_samples, h.num_signals)
        ok &= np.array_equal(adc, np.load(GOLDEN / f"{name}_adc.npy"))
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 10, f"1e6 frames both directions + {len(FIXTURE_RECORDS)} golden records, "
                                    f"{elapsed:.2f}s (limit 10s)")


def test_criterion_02_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_prim, names = 0.0, []
    for name, (op, xshape, wshape) in sorted(PRIMITIVES.items()):
        x = T.Tensor(_distinct(rng, xshape) if name == "maxpool" else _away_from_zero(rng, xshape),
                     requires_grad=True)
        w = T.Tensor(rng.standard_normal(wshape), requires_grad=True) if wshape else None
        R = rng.standard_normal(op(x, w).shape)

        def value():
            return float((op(T.Tensor(x.data), None if w is None else T.Tensor(w.data)).data * R).sum())

        T.sum(T.mul(op(x, w), R)).backward()
        worst_prim = max(worst_prim, probe_gradients(value, x, x.grad, rng))
        if w is not None:
            worst_prim = max(worst_prim, probe_gradients(value, w, w.grad, rng))
        names.append(name)

    params = M.init_params(M.AbcnnConfig(), seed=0, dtype=np.float64)
    for t in params:
        if t.name.endswith(".bias"):
            t.data[:] = 0.1 * rng.standard_normal(t.shape)
    x, y = rng.standard_normal((2, 2, 240)), np.array([0, 2])

    def loss_value():
        return float(M.loss(M.forward(x, params).probs, y).data)

    params.zero_grad()
    M.loss(M.forward(x, params).probs, y).backward()
    stats, worst_model = {}, 0.0
    for _, t in params.items():
        worst_model = max(worst_model, probe_gradients(loss_value, t, t.grad, rng, probes=12, stats=stats))
    elapsed = time.perf_counter() - t0
    ok = worst_prim < 1e-4 and worst_model < 1e-4 and stats["probes"] >= 100 and elapsed < 120
    verdict(2, ok, f"{len(names)} primitives max rel err {worst_prim:.2e}; default ABCNN "
                   f"{stats['probes']} probes ({stats['kinks']} kink redraws) max rel err {worst_model:.2e}; "
                   f"{elapsed:.1f}s (limit 120s)")


def test_criterion_03_shape_contract(verdict):
    want = [(2, 240, 1), (2, 240, 4), (2, 120, 4), (2, 120, 8), (2, 60, 8), (960,), (240,), (60,), (5,)]
    default = M.forward(np.zeros((1, 2, 240)), M.init_params(M.AbcnnConfig(), seed=0)).trace
    illus = M.forward(np.zeros((1, 2, 240)), M.init_params(M.AbcnnConfig.illustrative(), seed=0)).trace
    ok = default == want and illus[2] == (2, 120, 2) and illus[5] == (480,)
    verdict(3, ok, f"default {default}; illustrative X3={illus[2]} flatten={illus[5]}")


def test_criterion_04_attention_invariants(verdict):
    rng = np.random.default_rng(4)
    params = M.init_params(M.AbcnnConfig(), seed=4, dtype=np.float64)
    params["attention.bias"].data[:] = rng.standard_normal(params["attention.bias"].shape)
    x = rng.standard_normal((1000, 2, 240)) * rng.uniform(0.1, 10, size=(1000, 1, 1))
    r = M.forward(x, params)
    dev_heads = float(np.abs(r.head_attention.sum(axis=-1) - 1).max())
    dev_mean = float(np.abs(r.attention.sum(axis=-1) - 1).max())
    zero = M.zero_params(M.AbcnnConfig(), dtype=np.float64)
    _, w, heads = M.attention_forward(T.Tensor(x[:50]), zero, 32)
    dev_uniform = float(max(np.abs(w.data - 1 / 240).max(), np.abs(heads.data - 1 / 240).max()))
    ok = dev_heads <= 1e-6 and dev_mean <= 1e-6 and dev_uniform <= 1e-9
    verdict(4, ok, f"1000 inputs: max |sum-1| heads {dev_heads:.1e}, mean {dev_mean:.1e}; "
                   f"zero scorer max |w-1/240| {dev_uniform:.1e}")


def _pairwise_auc(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


def test_criterion_05_metric_oracles(verdict):
    rng = np.random.default_rng(5)
    worst, done = 0.0, 0
    while done < 50:
        n = int(rng.integers(2, 21))
        scores = np.round(rng.random(n), int(rng.integers(1, 4)))  # coarse rounding forces ties
        positive = rng.random(n) < 0.5
        if positive.all() or not positive.any():
            continue
        got = E.auc_from_curve(E.roc_curve(scores, positive))
        worst = max(worst, abs(got - _pairwise_auc(scores, positive)))
        done += 1
    r = E.classification_report(np.array([[8, 2], [3, 7]]))
    hand = dict(p=(8 / 11, 7 / 9), r=(0.8, 0.7), f=(16 / 21, 14 / 19))
    report_err = max(float(np.abs(r.precision - hand["p"]).max()), float(np.abs(r.recall - hand["r"]).max()),
                     float(np.abs(r.f1 - hand["f"]).max()))
    ok = worst <= 1e-9 and report_err <= 1e-12 and r.support.tolist() == [10, 10]
    verdict(5, ok, f"50 score sets max |sweep-pairwise| {worst:.1e}; [[8,2],[3,7]] report err {report_err:.1e}")


def test_criterion_06_adam_oracle(verdict):
    grads, lr, b1, b2, eps = [2.0, -1.0, 0.5], 0.0005, 0.9, 0.999, 1e-8
    theta, m, v = 1.5, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    p, state = {"w": T.Tensor(np.array([1.5]), requires_grad=True)}, TR.AdamState()
    for g in grads:
        p["w"].grad = np.array([g])
        TR.adam_step(p, state)
    err3 = abs(float(p["w"].data[0]) - theta)
    q, state = {"w": T.Tensor(np.array([0.0]), requires_grad=True)}, TR.AdamState()
    q["w"].grad = np.array([3.0])
    TR.adam_step(q, state)
    err1 = abs(abs(float(q["w"].data[0])) - lr)
    verdict(6, err3 <= 1e-12 and err1 <= 1e-6 * lr,
            f"3-step error {err3:.1e} (limit 1e-12); first step |step|-lr = {err1:.1e} (limit {1e-6 * lr:.0e})")


# desk-scale MIT-BIH run shared by criteria 7, 8 and 12

MITDB_EPOCHS = 50
MITDB_LIMIT_S = 30 * 60


@pytest.fixture(scope="module")
def desk_scale():
    root = mitdb_dir()
    if root is None:
        return None
    stems = W.list_records(root)
    wanted = os.environ.get("ABCNN_MITDB_RECORDS")
    if wanted:
        keep = {w.strip() for w in wanted.split(",") if w.strip()}
        stems = [s for s in stems if s.name in keep]
    if len(stems) < 8:
        return {"error": f"only {len(stems)} MIT-BIH records under {root}; need at least 8"}
    records = [W.load_record(s) for s in stems]
    pool = B.build_dataset(records, per_subject=2000, seed=0)
    split = B.split_train_test(pool, 0.8, seed=0)
    Xte, yte = B.stack_segments(split.test)
    opts = TR.TrainOptions(max_epochs=MITDB_EPOCHS, seed=0, monitor="test")
    out = {"records": len(records), "train": len(split.train), "test": len(split.test)}
    for tag, cfg in (("abcnn", M.AbcnnConfig()), ("cnn", M.AbcnnConfig(attention_enabled=False))):
        t0 = time.perf_counter()
        params, hist = TR.train(split, cfg, opts)
        out[f"{tag}_seconds"] = time.perf_counter() - t0
        out[f"{tag}_epochs"] = hist.stopped_epoch
        probs, _, feats = M.predict(params, Xte)
        out[f"{tag}_auc"] = E.macro_auc(E.per_class_auc(probs, yte)[1])
        if tag == "abcnn":
            out["ratio_raw"] = E.separation_ratio(E.pca_project(Xte.reshape(len(Xte), -1))[0], yte)
            out["ratio_learned"] = E.separation_ratio(E.pca_project(feats)[0], yte)
    return out


def _need_mitdb(run, n, verdict):
    if run is None:
        verdict(n, False, "MIT-BIH records not found; set ABCNN_MITDB_DIR to a WFDB directory")
    if "error" in run:
        verdict(n, False, run["error"])


def test_criterion_07_desk_scale_auc(verdict, desk_scale):
    _need_mitdb(desk_scale, 7, verdict)
    r = desk_scale
    ok = r["abcnn_auc"] >= 0.95 and r["abcnn_epochs"] <= MITDB_EPOCHS and r["abcnn_seconds"] < MITDB_LIMIT_S
    verdict(7, ok, f"{r['records']} records, {r['train']}/{r['test']} beats: ABCNN macro AUC "
                   f"{r['abcnn_auc']:.4f} after {r['abcnn_epochs']} epochs in {r['abcnn_seconds'] / 60:.1f} min")


def test_criterion_08_ablation_direction(verdict, desk_scale):
    _need_mitdb(desk_scale, 8, verdict)
    r = desk_scale
    verdict(8, r["abcnn_auc"] >= r["cnn_auc"] - 0.01,
            f"ABCNN {r['abcnn_auc']:.4f} vs CNN {r['cnn_auc']:.4f} (need ABCNN >= CNN - 0.01)")


def test_criterion_09_early_stopping(verdict):
    split = B.split_train_test(B.read_segments(DATA / "fixture_segments.abseg"), 0.8, seed=0)
    snaps = {}

    def monitor(params, epoch):
        snaps[epoch] = {k: t.data.copy() for k, t in params.items()}
        return {1: 1.0, 2: 0.9}.get(epoch, 0.9), 0.5

    cfg = M.AbcnnConfig(num_heads=1, fc1_units=16, fc2_units=8)
    params, hist = TR.train(split, cfg, TR.TrainOptions(batch_size=64, max_epochs=50, seed=1, monitor="test"),
                            monitor_fn=monitor)
    same = all(np.array_equal(t.data, snaps[2][k]) for k, t in params.items())
    ok = hist.stopped_epoch == 22 and hist.best_epoch == 2 and same
    verdict(9, ok, f"halted at epoch {hist.stopped_epoch}, best {hist.best_epoch}, "
                   f"returned weights equal epoch-2 snapshot: {same}")


def test_criterion_10_determinism(verdict, tmp_path, capsys):
    segs = str(DATA / "fixture_segments.abseg")
    for d in ("a", "b"):
        assert cli.main(["train", segs, "--seed", "11", "--out", str(tmp_path / d)]) == 0
    capsys.readouterr()
    same = {f: (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
            for f in ("history.csv", "checkpoint.abcnn")}
    epochs = len((tmp_path / "a" / "history.csv").read_text().splitlines()) - 2
    verdict(10, all(same.values()), f"two default-config train runs ({epochs} epochs each), identical: {same}")


def test_criterion_11_latency(verdict, tmp_path, capsys):
    ckpt = tmp_path / "default.abcnn"
    M.save_checkpoint(ckpt, M.init_params(M.AbcnnConfig(), seed=0))
    seg = B.read_segments(DATA / "fixture_segments.abseg")[0]
    beat = tmp_path / "beat.csv"
    beat.write_text("ch0,ch1\n" + "".join(f"{a:.9g},{b:.9g}\n" for a, b in seg.data.T))
    times = []
    for _ in range(100):
        t0 = time.perf_counter()
        assert cli.main(["predict", str(ckpt), str(beat)]) == 0
        times.append(time.perf_counter() - t0)
    capsys.readouterr()
    med = statistics.median(times)
    verdict(11, med < 0.1, f"predict with default 32-head checkpoint: median {med * 1000:.1f} ms over 100 runs")


def test_criterion_12_visualization(verdict, desk_scale):
    _need_mitdb(desk_scale, 12, verdict)
    r = desk_scale
    verdict(12, r["ratio_learned"] > r["ratio_raw"],
            f"PCA separation ratio learned {r['ratio_learned']:.3f} vs raw {r['ratio_raw']:.3f}")
