"""From annotated records to labelled, z-scored beat windows.

Beats are grouped into the five AAMI classes, cut as fixed windows around
the annotated R peak, standardised per channel and split into train/test.
Segments can be stored in the ``ABSEG1`` binary container.
"""
from __future__ import annotations

import csv
import enum
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataIOError, ParseError, ShapeError, UnmappedSymbolError

WINDOW_LEN = 240
NUM_CHANNELS = 2


class AamiClass(enum.IntEnum):
    N = 0
    S = 1
    V = 2
    F = 3
    Q = 4


AAMI_SYMBOLS = {
    AamiClass.N: "NLRej",
    AamiClass.S: "AaJS",
    AamiClass.V: "VE",
    AamiClass.F: "F",
    AamiClass.Q: "/fQ",
}
_SYMBOL_TO_CLASS = {s: cls for cls, syms in AAMI_SYMBOLS.items() for s in syms}


def map_symbol_to_aami(symbol) -> AamiClass:
    try:
        return _SYMBOL_TO_CLASS[symbol]
    except KeyError:
        raise UnmappedSymbolError(f"beat symbol {symbol!r} has no AAMI class") from None


@dataclass(frozen=True, eq=False)
class BeatSegment:
    data: np.ndarray  # [channels, window]
    label: AamiClass
    record_name: str
    r_index: int


@dataclass
class SegmentStats:
    """Running counts of what segmentation emitted and dropped."""

    emitted: Counter = field(default_factory=Counter)
    edge_skipped: int = 0
    unmapped: Counter = field(default_factory=Counter)

    def summary_lines(self):
        lines = [f"{cls.name}: {self.emitted.get(cls, 0)}" for cls in AamiClass]
        lines.append(f"total: {sum(self.emitted.values())}")
        lines.append(f"edge_skipped: {self.edge_skipped}")
        unmapped = ", ".join(f"{s!r}={n}" for s, n in sorted(self.unmapped.items()))
        lines.append(f"unmapped: {sum(self.unmapped.values())}" + (f" ({unmapped})" if unmapped else ""))
        return lines


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    test: list
    seed: int | None


def segment_beats(record, window_len=WINDOW_LEN, stats=None) -> list[BeatSegment]:
    """Cut ``[r - window_len//2, r - window_len//2 + window_len)`` for each beat.

    Beats whose window leaves the record, or whose symbol is outside the
    AAMI table, are skipped and counted in ``stats``.
    """
    if window_len < 1:
        raise ConfigError(f"window_len must be positive, got {window_len}")
    stats = stats if stats is not None else SegmentStats()
    half = window_len // 2
    n = record.signals.shape[1]
    out = []
    for ann in record.annotations:
        try:
            label = map_symbol_to_aami(ann.symbol)
        except UnmappedSymbolError:
            stats.unmapped[ann.symbol] += 1
            continue
        start = ann.sample_index - half
        if start < 0 or start + window_len > n:
            stats.edge_skipped += 1
            continue
        window = np.array(record.signals[:, start:start + window_len], dtype=np.float64)
        out.append(BeatSegment(window, label, record.name, ann.sample_index))
        stats.emitted[label] += 1
    return out


def zscore(data, tol=1e-12):
    """Standardise each row to zero mean, unit population std.

    Rows with std below ``tol`` become all zeros.
    """
    x = np.asarray(data, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    flat = sd < tol
    return np.where(flat, 0.0, (x - mu) / np.where(flat, 1.0, sd))


def build_dataset(records, per_subject=2000, seed=None, selection="first",
                  window_len=WINDOW_LEN, stats=None) -> list[BeatSegment]:
    """Normalised segments, at most ``per_subject`` from each record.

    ``selection="first"`` keeps the earliest valid beats; ``"random"``
    draws without replacement using ``seed`` and keeps temporal order.
    """
    records = list(records)
    if not records:
        raise ConfigError("build_dataset needs at least one record")
    if per_subject < 1:
        raise ConfigError(f"per_subject must be >= 1, got {per_subject}")
    if selection not in ("first", "random"):
        raise ConfigError(f"unknown selection rule {selection!r}")
    rng = np.random.default_rng(seed)
    stats = stats if stats is not None else SegmentStats()
    pool = []
    for record in records:
        local = SegmentStats()
        segs = segment_beats(record, window_len, local)
        if len(segs) > per_subject:
            if selection == "first":
                segs = segs[:per_subject]
            else:
                keep = np.sort(rng.choice(len(segs), per_subject, replace=False))
                segs = [segs[i] for i in keep]
        stats.edge_skipped += local.edge_skipped
        stats.unmapped.update(local.unmapped)
        for s in segs:
            stats.emitted[s.label] += 1
            pool.append(BeatSegment(zscore(s.data), s.label, s.record_name, s.r_index))
    return pool


def split_train_test(pool, ratio=0.80, seed=0) -> DatasetSplit:
    pool = list(pool)
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    if len(pool) < 2:
        raise ConfigError(f"need at least 2 segments to split, got {len(pool)}")
    order = np.random.default_rng(seed).permutation(len(pool))
    cut = int(np.floor(ratio * len(pool)))
    return DatasetSplit([pool[i] for i in order[:cut]], [pool[i] for i in order[cut:]], seed)


def stack_segments(segments, dtype=np.float32):
    """``(X[n, channels, window], y[n])`` arrays for a segment list."""
    if not segments:
        raise ConfigError("no segments to stack")
    X = np.stack([s.data for s in segments]).astype(dtype)
    y = np.array([int(s.label) for s in segments], dtype=np.int64)
    return X, y


# ABSEG1 container: magic, u64 count, then per segment
# u8 label | u16 name length | name | i64 r_index | float32[2*240] row-major
MAGIC = b"ABSEG1"


def write_segments(path, segments):
    path = Path(path)
    parts = [MAGIC, struct.pack("<Q", len(segments))]
    for s in segments:
        if s.data.shape != (NUM_CHANNELS, WINDOW_LEN):
            raise ShapeError(f"segment shape {list(s.data.shape)} != [{NUM_CHANNELS}, {WINDOW_LEN}]")
        name = s.record_name.encode("utf-8")
        parts.append(struct.pack("<BH", int(s.label), len(name)))
        parts.append(name)
        parts.append(struct.pack("<q", int(s.r_index)))
        parts.append(np.ascontiguousarray(s.data, dtype="<f4").tobytes())
    try:
        path.write_bytes(b"".join(parts))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from None


def read_segments(path) -> list[BeatSegment]:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    if buf[:len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not an ABSEG1 container (magic {buf[:6]!r})")
    pos = len(MAGIC)
    nbytes = NUM_CHANNELS * WINDOW_LEN * 4
    try:
        (count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        out = []
        for _ in range(count):
            label, name_len = struct.unpack_from("<BH", buf, pos)
            pos += 3
            name = buf[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (r_index,) = struct.unpack_from("<q", buf, pos)
            pos += 8
            if pos + nbytes > len(buf):
                raise struct.error("segment data truncated")
            data = np.frombuffer(buf, dtype="<f4", count=NUM_CHANNELS * WINDOW_LEN, offset=pos)
            pos += nbytes
            out.append(BeatSegment(data.reshape(NUM_CHANNELS, WINDOW_LEN).astype(np.float32),
                                   AamiClass(label), name, r_index))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: corrupt ABSEG1 container at byte {pos}: {exc}") from None
    if pos != len(buf):
        raise ParseError(f"{path}: {len(buf) - pos} trailing bytes after {count} segments")
    return out


def write_segments_csv(path, segments):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        nch, nt = segments[0].data.shape if segments else (NUM_CHANNELS, WINDOW_LEN)
        w.writerow(["record", "r_index", "label"] + [f"ch{c}_{t}" for c in range(nch) for t in range(nt)])
        for s in segments:
            w.writerow([s.record_name, s.r_index, int(s.label)] + [f"{v:.7g}" for v in s.data.ravel()])
