"""Mini-batch Adam training with patience-based early stopping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import model as M
from .beats import DatasetSplit, split_train_test, stack_segments
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One Adam update in place, from the ``.grad`` of each tensor.

    A missing gradient counts as zero.
    """
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"{name}: gradient shape {list(g.shape)} != parameter shape {list(p.data.shape)}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise ShapeError(f"{name}: optimizer state shape {list(m.shape)} != {list(p.data.shape)}")
        if not p.data.flags.c_contiguous or not p.data.flags.writeable:
            p.data = np.ascontiguousarray(p.data).copy()
        flat_g = np.ascontiguousarray(g, dtype=p.data.dtype).reshape(-1)
        kernels.adam_update(p.data.reshape(-1), flat_g, m.reshape(-1), v.reshape(-1),
                            state.lr, state.beta1, state.beta2, state.eps, c1, c2)
    return params, state


class EarlyStopping:
    """Tracks the best monitored loss; ``update`` returns True on a new best."""

    def __init__(self, patience=20):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.since_improvement = 0

    def update(self, value, epoch):
        if value < self.best:
            self.best, self.best_epoch, self.since_improvement = value, epoch, 0
            return True
        self.since_improvement += 1
        return False

    @property
    def should_stop(self):
        return self.since_improvement >= self.patience


@dataclass(frozen=True)
class HistoryRow:
    iteration: int
    epoch: int
    train_loss: float
    monitor_loss: float
    monitor_accuracy: float


@dataclass
class TrainHistory:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    def epoch_rows(self):
        return [r for r in self.rows if r.epoch > 0]

    def to_csv(self, header_comment=None):
        lines = []
        if header_comment:
            lines.append(f"# {header_comment}")
        lines.append("iteration,train_loss,monitor_loss,monitor_accuracy")
        for r in self.rows:
            lines.append(f"{r.iteration},{r.train_loss:.8g},{r.monitor_loss:.8g},{r.monitor_accuracy:.8g}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainOptions:
    batch_size: int = 128
    max_epochs: int = 50
    patience: int = 20
    lr: float = 0.0005
    seed: int = 0
    monitor: str = "validation"  # or "test"
    validation_fraction: float = 0.10
    log_every: int = 0  # extra history rows every N batches; 0 = per epoch only
    eval_batch_size: int = 1024

    def __post_init__(self):
        if self.monitor not in ("validation", "test"):
            raise ConfigError(f"monitor must be 'validation' or 'test', got {self.monitor!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")


def evaluate_loss_accuracy(params, X, y=None, kind=None, batch_size=1024):
    """Mean per-sample loss and argmax accuracy (inference mode).

    ``X`` is either stacked inputs (with ``y``) or a list of segments.
    """
    if y is None:
        X, y = stack_segments(X, dtype=params["conv1.kernel"].dtype)
    if len(X) == 0:
        raise ConfigError("cannot evaluate an empty segment set")
    kind = kind or params.config.loss
    total, correct = 0.0, 0
    for s in range(0, len(X), batch_size):
        r = M.forward(X[s:s + batch_size], params, training=False)
        n = len(X[s:s + batch_size])
        total += float(M.loss(r.probs, y[s:s + batch_size], kind).data) * n
        correct += int((r.probs.data.argmax(axis=1) == y[s:s + batch_size]).sum())
    return total / len(X), correct / len(X)


def _snapshot(params):
    return {k: t.data.copy() for k, t in params.items()}


def _restore(params, snap):
    for name, t in params.items():
        t.data = snap[name].copy()
        t.grad = None


def train(split: DatasetSplit, config=None, opts=None, params=None, monitor_fn=None):
    """Fit the model and return ``(best params, history)``.

    The monitored set is a validation slice carved from the training
    segments, or the test set when ``opts.monitor == "test"``.
    ``monitor_fn(params, epoch) -> (loss, accuracy)`` replaces the
    monitored evaluation when given.
    """
    opts = opts or TrainOptions()
    config = config or (params.config if params is not None else M.AbcnnConfig())
    if not split.train:
        raise ConfigError("training set is empty")
    train_segs = list(split.train)
    if opts.monitor == "test":
        monitor_segs = list(split.test)
    else:
        if len(train_segs) < 2:
            raise ConfigError("need at least 2 training segments to carve a validation set")
        inner = split_train_test(train_segs, 1 - opts.validation_fraction, seed=opts.seed + 1)
        train_segs, monitor_segs = inner.train, inner.test
    if params is None:
        params = M.init_params(config, seed=opts.seed)
    dtype = params["conv1.kernel"].dtype
    X, y = stack_segments(train_segs, dtype=dtype)
    Xm, ym = (stack_segments(monitor_segs, dtype=dtype) if monitor_segs else (None, None))
    if monitor_fn is None and Xm is None:
        raise ConfigError("monitored set is empty")
    shuffle_rng = np.random.default_rng(opts.seed)
    dropout_rng = np.random.default_rng(opts.seed + 2)
    state = AdamState(lr=opts.lr)
    stopper = EarlyStopping(opts.patience)
    history = TrainHistory()
    best = _snapshot(params)
    step = 0

    def monitored(epoch):
        if monitor_fn is not None:
            return monitor_fn(params, epoch)
        return evaluate_loss_accuracy(params, Xm, ym, config.loss, opts.eval_batch_size)

    for epoch in range(1, opts.max_epochs + 1):
        order = shuffle_rng.permutation(len(X))
        running, seen = 0.0, 0
        for s in range(0, len(X), opts.batch_size):
            idx = order[s:s + opts.batch_size]
            params.zero_grad()
            r = M.forward(X[idx], params, training=True, rng=dropout_rng)
            L = M.loss(r.probs, y[idx], config.loss)
            L.backward()
            adam_step(params, state)
            step += 1
            running += float(L.data) * len(idx)
            seen += len(idx)
            if opts.log_every and step % opts.log_every == 0 and s + opts.batch_size < len(X):
                mloss, macc = monitored(epoch)
                history.rows.append(HistoryRow(step, 0, running / seen, mloss, macc))
        mloss, macc = monitored(epoch)
        history.rows.append(HistoryRow(step, epoch, running / seen, mloss, macc))
        if stopper.update(mloss, epoch):
            best = _snapshot(params)
        log.info("epoch %d train_loss=%.5f monitor_loss=%.5f monitor_acc=%.4f",
                 epoch, running / seen, mloss, macc)
        history.stopped_epoch = epoch
        if stopper.should_stop:
            break
    history.best_epoch = stopper.best_epoch
    _restore(params, best)
    return params, history
