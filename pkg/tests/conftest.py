import os
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).resolve().parent / "data"
WFDB_DIR = DATA / "wfdb"
GOLDEN = DATA / "golden"
FIXTURE_RECORDS = ("s01", "s02", "s03")


class PiecewisePattern:
    """Records every ReLU mask and max-pool argmax produced while active.

    Central differences are only an oracle where the loss is smooth on
    ``[theta - h, theta + h]``; a probe whose nudges change this pattern
    straddles a kink and is redrawn.
    """

    def __init__(self):
        self.parts = []

    def __enter__(self):
        from abcnn import kernels, tensor
        self._saved = (tensor.relu, kernels.maxpool_forward)
        relu, pool = self._saved

        def relu_rec(x):
            self.parts.append(np.asarray(tensor.as_tensor(x).data > 0))
            return relu(x)

        def pool_rec(*args):
            y, idx = pool(*args)
            self.parts.append(np.asarray(idx).copy())
            return y, idx

        tensor.relu, kernels.maxpool_forward = relu_rec, pool_rec
        return self

    def __exit__(self, *exc):
        from abcnn import kernels, tensor
        tensor.relu, kernels.maxpool_forward = self._saved

    def key(self):
        return [p.tobytes() for p in self.parts]


def _value_and_pattern(fn):
    with PiecewisePattern() as rec:
        v = fn()
    return v, rec.key()


def probe_gradients(fn, tensor, analytic, rng, probes=20, step=1e-3, floor=1e-8, stats=None):
    """Max relative error between central differences of ``fn()`` and ``analytic``.

    ``fn`` recomputes the scalar loss from ``tensor.data``. Entries are
    drawn at random; draws whose +-step nudge crosses a ReLU or max-pool
    switch are replaced (counted in ``stats["kinks"]``). Relative error is
    ``|num - ana| / max(|num|, |ana|, floor)``.
    """
    flat = tensor.data.reshape(-1)
    ana = analytic.reshape(-1)
    _, base = _value_and_pattern(fn)
    worst, done, drawn = 0.0, 0, 0
    order = rng.permutation(flat.size)
    for i in order:
        if done >= min(probes, flat.size):
            break
        drawn += 1
        orig = flat[i]
        flat[i] = orig + step
        up, pu = _value_and_pattern(fn)
        flat[i] = orig - step
        down, pd = _value_and_pattern(fn)
        flat[i] = orig
        if pu != base or pd != base:
            continue
        numeric = (up - down) / (2 * step)
        worst = max(worst, abs(numeric - ana[i]) / max(abs(numeric), abs(ana[i]), floor))
        done += 1
    if stats is not None:
        stats["kinks"] = stats.get("kinks", 0) + drawn - done
        stats["probes"] = stats.get("probes", 0) + done
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def wfdb_dir():
    return WFDB_DIR


def mitdb_dir():
    """Local MIT-BIH directory if one is configured, else ``None``."""
    cand = os.environ.get("ABCNN_MITDB_DIR") or str(Path(__file__).resolve().parents[1] / "data" / "mitdb")
    p = Path(cand)
    return p if p.is_dir() and any(p.glob("*.hea")) else None
