"""The attention-based CNN and its attention-free ablation.

Pipeline per beat ``[channels, window, 1]``: multi-head time-slice
attention, two (conv, ReLU, max-pool) blocks, flatten, dense+ReLU+dropout,
dense+ReLU, dense, softmax.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataIOError, ParseError, ShapeError


@dataclass(frozen=True)
class AbcnnConfig:
    window_len: int = 240
    num_channels: int = 2
    num_heads: int = 32
    conv1_kernels: int = 4
    conv1_kernel: tuple = (2, 2)
    conv1_stride: tuple = (1, 1)
    pool1_window: tuple = (1, 2)
    pool1_stride: tuple = (1, 2)
    conv2_kernels: int = 8
    conv2_kernel: tuple = (2, 2)
    conv2_stride: tuple = (1, 1)
    pool2_window: tuple = (1, 2)
    pool2_stride: tuple = (1, 2)
    fc1_units: int = 240
    fc2_units: int = 60
    num_classes: int = 5
    dropout_rate: float = 0.3
    attention_enabled: bool = True
    attention_activation: str = "tanh"
    loss: str = "bce"

    def __post_init__(self):
        counts = ("window_len", "num_channels", "conv1_kernels", "conv2_kernels", "fc1_units", "fc2_units")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_heads < 1:
            raise ConfigError(f"num_heads must be >= 1, got {self.num_heads}")
        if self.num_classes != 5:
            raise ConfigError(f"num_classes must be 5, got {self.num_classes}")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.attention_activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown attention activation {self.attention_activation!r}")
        if self.loss not in ("bce", "categorical"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    @classmethod
    def illustrative(cls, **overrides):
        """The narrated walkthrough: 2 then 4 kernels, [1,1] then [1,2]."""
        base = dict(conv1_kernels=2, conv1_kernel=(1, 1), conv2_kernels=4, conv2_kernel=(1, 2))
        base.update(overrides)
        return cls(**base)

    def to_text(self):
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines)

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values (config file / checkpoint block)."""
        kwargs = {}
        known = {f.name: f for f in fields(cls)}
        for key, raw in mapping.items():
            if key not in known:
                continue
            default = known[key].default
            try:
                if isinstance(default, tuple):
                    kwargs[key] = tuple(int(p) for p in str(raw).replace("x", ",").split(","))
                elif isinstance(default, bool):
                    kwargs[key] = _parse_bool(raw)
                elif isinstance(default, int):
                    kwargs[key] = int(raw)
                elif isinstance(default, float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw)
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for {key}") from None
        return cls(**kwargs)


def _parse_bool(raw):
    if isinstance(raw, bool):
        return raw
    s = str(raw).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


_ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu, "identity": lambda t: t}


def layer_shapes(config):
    """Declared per-sample shapes from input to class scores."""
    c, w = config.num_channels, config.window_len
    shapes = [(c, w, 1)]
    h, width = c, w
    for kernels_, kernel, stride, pwin, pstride in (
        (config.conv1_kernels, config.conv1_kernel, config.conv1_stride, config.pool1_window, config.pool1_stride),
        (config.conv2_kernels, config.conv2_kernel, config.conv2_stride, config.pool2_window, config.pool2_stride),
    ):
        h, _ = T.conv_geometry(h, kernel[0], stride[0], "same")
        width, _ = T.conv_geometry(width, kernel[1], stride[1], "same")
        shapes.append((h, width, kernels_))
        if pwin[0] > h or pwin[1] > width:
            raise ConfigError(f"pool window {list(pwin)} exceeds feature extent {[h, width]}")
        h = (h - pwin[0]) // pstride[0] + 1
        width = (width - pwin[1]) // pstride[1] + 1
        shapes.append((h, width, kernels_))
    shapes.append((h * width * config.conv2_kernels,))
    shapes += [(config.fc1_units,), (config.fc2_units,), (config.num_classes,)]
    return shapes


def _glorot(rng, shape, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class ModelParams:
    """Named, ordered trainable tensors plus the config that shapes them."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = dict(tensors)
        expected = param_shapes(config)
        if list(self.tensors) != list(expected):
            raise ShapeError(f"parameter names {list(self.tensors)} do not match config {list(expected)}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeError(f"{name}: shape {list(self.tensors[name].shape)} but config implies {list(shape)}")

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def items(self):
        return self.tensors.items()

    def count(self):
        return int(sum(t.data.size for t in self.tensors.values()))

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def copy(self):
        return ModelParams(self.config, {k: T.Tensor(v.data.copy(), requires_grad=True, name=k)
                                         for k, v in self.tensors.items()})

    def astype(self, dtype):
        return ModelParams(self.config, {k: T.Tensor(v.data.astype(dtype), requires_grad=True, name=k)
                                         for k, v in self.tensors.items()})


def param_shapes(config):
    shapes = layer_shapes(config)
    out = {}
    if config.attention_enabled:
        n_in = config.num_channels * config.window_len
        out["attention.weight"] = (config.num_heads, config.window_len, n_in)
        out["attention.bias"] = (config.num_heads, config.window_len)
    out["conv1.kernel"] = tuple(config.conv1_kernel) + (1, config.conv1_kernels)
    out["conv1.bias"] = (config.conv1_kernels,)
    out["conv2.kernel"] = tuple(config.conv2_kernel) + (config.conv1_kernels, config.conv2_kernels)
    out["conv2.bias"] = (config.conv2_kernels,)
    out["fc1.weight"] = (config.fc1_units, shapes[5][0])
    out["fc1.bias"] = (config.fc1_units,)
    out["fc2.weight"] = (config.fc2_units, config.fc1_units)
    out["fc2.bias"] = (config.fc2_units,)
    out["out.weight"] = (config.num_classes, config.fc2_units)
    out["out.bias"] = (config.num_classes,)
    return out


def init_params(config, seed=0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform weights, zero biases, from a seeded generator."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        elif name == "attention.weight":
            data = _glorot(rng, shape, shape[2], shape[1], dtype)
        elif name.endswith(".kernel"):
            kh, kw, cin, cout = shape
            data = _glorot(rng, shape, kh * kw * cin, kh * kw * cout, dtype)
        else:
            data = _glorot(rng, shape, shape[1], shape[0], dtype)
        tensors[name] = T.Tensor(data, requires_grad=True, name=name)
    return ModelParams(config, tensors)


def zero_params(config, dtype=np.float32) -> ModelParams:
    return ModelParams(config, {n: T.Tensor(np.zeros(s, dtype=dtype), requires_grad=True, name=n)
                                for n, s in param_shapes(config).items()})


def build_plain_cnn(config=None, seed=0, dtype=np.float32):
    """Same network and hyper-parameters with the attention layer removed."""
    config = replace(config or AbcnnConfig(), attention_enabled=False)
    return config, init_params(config, seed, dtype)


@dataclass
class ForwardResult:
    probs: T.Tensor  # [B, classes]
    attention: np.ndarray | None  # [B, window], mean over heads
    head_attention: np.ndarray | None  # [B, heads, window]
    features: T.Tensor  # [B, fc2_units]
    trace: list


@dataclass(frozen=True)
class Prediction:
    probabilities: np.ndarray
    predicted_class: int
    attention_weights: np.ndarray | None


def _as_batch(x, config):
    x = np.asarray(x.data if isinstance(x, T.Tensor) else x)
    c, w = config.num_channels, config.window_len
    if x.shape in ((c, w), (c, w, 1)):
        x = x.reshape(1, c, w)
    elif x.ndim == 4 and x.shape[1:] == (c, w, 1):
        x = x.reshape(x.shape[0], c, w)
    elif not (x.ndim == 3 and x.shape[1:] == (c, w)):
        raise ShapeError(f"input shape {list(x.shape)} does not match [{c}, {w}, 1] (optionally batched)")
    return x


def attention_forward(x, params, num_heads):
    """Multi-head time-slice attention.

    Each head scores the flattened sample with activation(W x + b), turns
    the scores into a softmax over time slices; heads are averaged and the
    average scales every channel at each time slice. Returns
    ``(weighted x, mean weights [B, window], per-head weights [B, H, window])``.
    """
    if num_heads < 1:
        raise ConfigError(f"num_heads must be >= 1, got {num_heads}")
    x = T.as_tensor(x)
    B, c, w = x.shape
    W, b = params["attention.weight"], params["attention.bias"]
    if W.shape[0] != num_heads:
        raise ShapeError(f"attention weights hold {W.shape[0]} heads, config asks for {num_heads}")
    activation = _ACTIVATIONS[params.config.attention_activation]
    flat = T.reshape(x, (B, c * w))
    scores = T.dense(flat, T.reshape(W, (num_heads * w, c * w)), T.reshape(b, (num_heads * w,)))
    heads = T.softmax(activation(T.reshape(scores, (B, num_heads, w))), axis=-1)
    weights = T.mean(heads, axis=1)
    weighted = T.mul(x, T.reshape(weights, (B, 1, w)))
    return weighted, weights, heads


def forward(x, params, training=False, rng=None) -> ForwardResult:
    config = params.config
    xb = _as_batch(x, config).astype(params["conv1.kernel"].dtype, copy=False)
    B = xb.shape[0]
    h = T.Tensor(xb)
    trace = [(config.num_channels, config.window_len, 1)]
    attn = head_attn = None
    if config.attention_enabled:
        h, weights, heads = attention_forward(h, params, config.num_heads)
        attn, head_attn = weights.data, heads.data
    h = T.reshape(h, (B, config.num_channels, config.window_len, 1))
    for i, (stride, pwin, pstride) in enumerate(
        ((config.conv1_stride, config.pool1_window, config.pool1_stride),
         (config.conv2_stride, config.pool2_window, config.pool2_stride)), start=1):
        h = T.relu(T.conv2d(h, params[f"conv{i}.kernel"], params[f"conv{i}.bias"], stride=stride))
        trace.append(h.shape[1:])
        h = T.maxpool(h, window=pwin, stride=pstride)
        trace.append(h.shape[1:])
    h = T.flatten(h)
    trace.append(h.shape[1:])
    h = T.relu(T.dense(h, params["fc1.weight"], params["fc1.bias"]))
    h = T.dropout(h, config.dropout_rate, training=training, rng=rng)
    trace.append(h.shape[1:])
    features = T.relu(T.dense(h, params["fc2.weight"], params["fc2.bias"]))
    trace.append(features.shape[1:])
    logits = T.dense(features, params["out.weight"], params["out.bias"])
    probs = T.softmax(logits, axis=-1)
    trace.append(probs.shape[1:])
    return ForwardResult(probs, attn, head_attn, features, [tuple(s) for s in trace])


def loss(probs, labels, kind="bce"):
    """Batch-mean loss of probability rows against integer labels.

    ``"bce"`` averages per-class binary cross-entropy over the classes;
    ``"categorical"`` is ordinary cross-entropy.
    """
    probs = T.as_tensor(probs)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    p = probs if probs.ndim == 2 else T.reshape(probs, (1, -1))
    onehot = np.zeros(p.shape, dtype=p.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    if kind == "bce":
        return T.binary_cross_entropy(p, onehot)
    if kind == "categorical":
        return T.categorical_cross_entropy(p, onehot)
    raise ConfigError(f"unknown loss {kind!r}")


def predict(params, x, batch_size=512):
    """Inference-mode probabilities, attention weights and fc2 features."""
    xb = _as_batch(x, params.config)
    probs, attn, feats = [], [], []
    for start in range(0, len(xb), batch_size):
        r = forward(xb[start:start + batch_size], params, training=False)
        probs.append(r.probs.data)
        feats.append(r.features.data)
        if r.attention is not None:
            attn.append(r.attention)
    return (np.concatenate(probs), np.concatenate(attn) if attn else None, np.concatenate(feats))


def predict_one(params, x) -> Prediction:
    probs, attn, _ = predict(params, x)
    return Prediction(probs[0], int(np.argmax(probs[0])), None if attn is None else attn[0])


# checkpoint: magic | u32 len + key=value config block | u32 count |
# per tensor: u16 name len, name, u8 ndim, u32 dims, float32 LE data
CHECKPOINT_MAGIC = b"ABCNN1"


def save_checkpoint(path, params, meta=None):
    block = params.config.to_text()
    if meta:
        block += "\n" + "\n".join(f"{k}={v}" for k, v in meta.items())
    block_bytes = block.encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(block_bytes)), block_bytes,
             struct.pack("<I", len(params.tensors))]
    for name, t in params.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from None


def load_checkpoint(path, dtype=np.float32):
    """Return ``(ModelParams, meta)``; ``meta`` holds the non-config keys."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    if buf[:6] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not an ABCNN1 checkpoint (magic {buf[:6]!r})")
    try:
        pos = 6
        (blen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        mapping = {}
        for line in buf[pos:pos + blen].decode("utf-8").splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                mapping[k.strip()] = v.strip()
        pos += blen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape))
            if pos + 4 * size > len(buf):
                raise struct.error(f"tensor {name} truncated")
            data = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).astype(dtype)
            pos += 4 * size
            tensors[name] = T.Tensor(data, requires_grad=True, name=name)
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint: {exc}") from None
    config = AbcnnConfig.from_mapping(mapping)
    known = set(asdict(config))
    meta = {k: v for k, v in mapping.items() if k not in known}
    return ModelParams(config, tensors), meta
