"""Reader for MIT-BIH records in WFDB layout.

Three files per record: a text header (``.hea``), format-212 samples
(``.dat``) and MIT-format beat annotations (``.atr``). Only format 212 is
accepted. A plain CSV layout is also supported for small or non-WFDB data.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DataIOError, ParseError, SampleRangeError, UnsupportedFormatError

# WFDB's default when a header leaves gain unset (or sets it to zero)
DEFAULT_GAIN = 200.0

# MIT annotation codes -> mnemonic symbols (WFDB ecgcodes.h)
CODE_TO_SYMBOL = {
    1: "N", 2: "L", 3: "R", 4: "a", 5: "V", 6: "F", 7: "J", 8: "A", 9: "S",
    10: "E", 11: "j", 12: "/", 13: "Q", 14: "~", 16: "|", 18: "s", 19: "T",
    20: "*", 21: "D", 22: '"', 23: "=", 24: "p", 25: "B", 26: "^", 27: "t",
    28: "+", 29: "u", 30: "?", 31: "!", 32: "[", 33: "]", 34: "e", 35: "n",
    36: "@", 37: "x", 38: "f", 39: "(", 40: ")", 41: "r",
}
SYMBOL_TO_CODE = {s: c for c, s in CODE_TO_SYMBOL.items()}
BEAT_SYMBOLS = frozenset("NLRBAaJSVrFejnE/fQ?")

SKIP, NUM, SUB, CHN, AUX = 59, 60, 61, 62, 63


@dataclass(frozen=True)
class SignalSpec:
    file_name: str
    storage_format: int
    gain: float
    baseline: int
    adc_zero: int
    lead_name: str


@dataclass(frozen=True)
class RecordHeader:
    record_name: str
    num_signals: int
    sampling_rate: float
    num_samples: int | None
    signals: tuple[SignalSpec, ...]

    @property
    def gains(self):
        return np.array([s.gain for s in self.signals])

    @property
    def lead_names(self):
        return [s.lead_name for s in self.signals]


@dataclass(frozen=True)
class BeatAnnotation:
    sample_index: int
    symbol: str
    aux: bytes = b""


@dataclass(frozen=True)
class EcgRecord:
    """Physical-unit (mV) signals, shape ``[channels, samples]``, plus beats."""

    header: RecordHeader
    signals: np.ndarray
    annotations: tuple[BeatAnnotation, ...] = field(default=())

    @property
    def name(self):
        return self.header.record_name

    @property
    def num_samples(self):
        return self.signals.shape[1]


def _decode_text(buf):
    if isinstance(buf, str):
        return buf
    try:
        return bytes(buf).decode("ascii")
    except UnicodeDecodeError as exc:
        raise ParseError(f"header is not ASCII text (byte {exc.start})") from exc


def _parse_gain(token, lineno):
    # gain[(baseline)][/units]
    text = token.split("/", 1)[0]
    baseline = None
    if "(" in text:
        text, rest = text.split("(", 1)
        try:
            baseline = int(rest.rstrip(")"))
        except ValueError:
            raise ParseError(f"line {lineno}: bad baseline in gain field {token!r}") from None
    try:
        gain = float(text)
    except ValueError:
        raise ParseError(f"line {lineno}: bad gain field {token!r}") from None
    return gain, baseline


def parse_header(buf) -> RecordHeader:
    lines = []
    for lineno, raw in enumerate(_decode_text(buf).splitlines(), start=1):
        stripped = raw.strip()
        if stripped and not stripped.startswith("#"):
            lines.append((lineno, stripped.split()))
    if not lines:
        raise ParseError("header has no record line")

    lineno, rec = lines[0]
    if len(rec) < 2:
        raise ParseError(f"line {lineno}: record line needs at least a name and a signal count")
    name = rec[0]
    if "/" in name:
        raise UnsupportedFormatError(f"line {lineno}: multi-segment record {name!r} is not supported")
    try:
        nsig = int(rec[1])
        fs = float(rec[2].split("/")[0].split("(")[0]) if len(rec) > 2 else 250.0
        nsamp = int(rec[3]) if len(rec) > 3 else None
    except ValueError:
        raise ParseError(f"line {lineno}: malformed record line {' '.join(rec)!r}") from None
    if nsig < 1:
        raise ParseError(f"line {lineno}: record declares {nsig} signals, need at least 1")
    if fs <= 0:
        raise ParseError(f"line {lineno}: sampling rate must be positive, got {fs}")
    if nsamp is not None and nsamp < 0:
        raise ParseError(f"line {lineno}: negative sample count {nsamp}")
    if len(lines) - 1 < nsig:
        raise ParseError(f"header declares {nsig} signals but has {len(lines) - 1} signal lines")

    specs = []
    for lineno, tok in lines[1:1 + nsig]:
        if len(tok) < 2:
            raise ParseError(f"line {lineno}: signal line needs a file name and a format")
        fmt_token = tok[1]
        digits = ""
        for ch in fmt_token:
            if not ch.isdigit():
                break
            digits += ch
        if not digits:
            raise ParseError(f"line {lineno}: bad storage format {fmt_token!r}")
        fmt = int(digits)
        if fmt != 212:
            raise UnsupportedFormatError(f"line {lineno}: storage format {fmt} is not supported (only 212)")
        gain, baseline = (DEFAULT_GAIN, None)
        if len(tok) > 2:
            gain, baseline = _parse_gain(tok[2], lineno)
        if gain == 0:
            gain = DEFAULT_GAIN
        try:
            adc_zero = int(tok[4]) if len(tok) > 4 else 0
        except ValueError:
            raise ParseError(f"line {lineno}: bad ADC zero {tok[4]!r}") from None
        lead = " ".join(tok[8:]) if len(tok) > 8 else f"ch{len(specs)}"
        specs.append(SignalSpec(tok[0], fmt, gain, adc_zero if baseline is None else baseline, adc_zero, lead))

    if len({s.file_name for s in specs}) != 1:
        raise UnsupportedFormatError("signals spread over several .dat files are not supported")
    return RecordHeader(name, nsig, fs, nsamp, tuple(specs))


def decode_format212(buf, num_samples_per_channel, num_channels=2) -> np.ndarray:
    """Return ADC integers of shape ``[num_channels, num_samples_per_channel]``."""
    total = num_samples_per_channel * num_channels
    need = -(-3 * total // 2)
    if len(buf) < need:
        raise ParseError(f"format-212 data truncated at byte offset {len(buf)}: "
                         f"{total} samples need {need} bytes")
    flat = kernels.decode_212(np.frombuffer(bytes(buf[:need]), dtype=np.uint8), total)
    return flat.reshape(num_samples_per_channel, num_channels).T.copy()


def encode_format212(channels) -> bytes:
    """Interleave ``[channels, samples]`` ADC integers into format-212 bytes."""
    arr = np.asarray(channels)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.size and (arr.min() < -2048 or arr.max() > 2047):
        bad = arr[(arr < -2048) | (arr > 2047)].flat[0]
        raise SampleRangeError(f"sample {bad} outside the 12-bit range [-2048, 2047]")
    if arr.dtype.kind not in "iu":
        if not np.all(arr == np.round(arr)):
            raise ParseError("format-212 samples must be integers")
    return kernels.encode_212(arr.T.astype(np.int64).ravel())


def parse_annotations(buf, beats_only=True) -> list[BeatAnnotation]:
    data = bytes(buf)
    n = len(data)
    out = []
    t = 0
    pos = 0
    while True:
        if pos + 2 > n:
            raise ParseError(f"annotation stream ended at byte {pos} without an EOF word")
        word = data[pos] | (data[pos + 1] << 8)
        code, dt = word >> 10, word & 0x3FF
        pos += 2
        if code == 0 and dt == 0:
            break
        if code == SKIP:
            if pos + 4 > n:
                raise ParseError(f"truncated SKIP interval at byte {pos}")
            hi = data[pos] | (data[pos + 1] << 8)
            lo = data[pos + 2] | (data[pos + 3] << 8)
            interval = (hi << 16) | lo
            if interval >= 1 << 31:
                interval -= 1 << 32
            t += interval
            pos += 4
        elif code == AUX:
            if pos + dt > n:
                raise ParseError(f"truncated AUX payload at byte {pos}: need {dt} bytes")
            payload = data[pos:pos + dt]
            pos += dt + (dt & 1)
            if out and out[-1].sample_index == t:
                last = out[-1]
                out[-1] = BeatAnnotation(last.sample_index, last.symbol, payload)
        elif code in (NUM, SUB, CHN):
            continue
        else:
            t += dt
            symbol = CODE_TO_SYMBOL.get(code)
            if symbol is None:
                continue
            if beats_only and symbol not in BEAT_SYMBOLS:
                continue
            out.append(BeatAnnotation(t, symbol))
    return out


def encode_annotations(annotations) -> bytes:
    """Write annotations as an MIT annotation stream.

    Items are :class:`BeatAnnotation` or ``(sample, symbol[, aux])``
    tuples. Intervals above 1023 use a SKIP word. Needed to build fixtures.
    """
    words = bytearray()
    prev = 0
    for item in annotations:
        if isinstance(item, BeatAnnotation):
            sample, symbol, aux = item.sample_index, item.symbol, item.aux
        else:
            sample, symbol, aux = (tuple(item) + (b"",))[:3]
        dt = int(sample) - prev
        if dt < 0:
            raise ParseError("annotations must be in non-decreasing sample order")
        if dt > 1023:
            words += (SKIP << 10).to_bytes(2, "little")
            words += ((dt >> 16) & 0xFFFF).to_bytes(2, "little") + (dt & 0xFFFF).to_bytes(2, "little")
            dt = 0
        words += ((SYMBOL_TO_CODE[symbol] << 10) | dt).to_bytes(2, "little")
        if aux:
            if len(aux) > 255:
                raise ParseError("AUX payload longer than 255 bytes")
            words += ((AUX << 10) | len(aux)).to_bytes(2, "little") + bytes(aux) + b"\x00" * (len(aux) & 1)
        prev = int(sample)
    return bytes(words) + b"\x00\x00"


def _read(path):
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise DataIOError(f"missing file {path}") from None
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None


def load_record(stem, annotator="atr") -> EcgRecord:
    """Load ``<stem>.hea``, its ``.dat`` and ``<stem>.<annotator>``."""
    stem = Path(stem)
    hea_path = stem.with_name(stem.name + ".hea")
    try:
        header = parse_header(_read(hea_path))
    except ParseError as exc:
        raise type(exc)(f"{hea_path}: {exc}") from None
    dat_path = stem.parent / header.signals[0].file_name
    raw = _read(dat_path)
    nsig = header.num_signals
    nsamp = header.num_samples
    if nsamp is None:
        nsamp = (2 * len(raw) // 3) // nsig
        header = RecordHeader(header.record_name, nsig, header.sampling_rate, nsamp, header.signals)
    try:
        adc = decode_format212(raw, nsamp, nsig)
    except ParseError as exc:
        raise ParseError(f"{dat_path}: {exc}") from None
    baseline = np.array([s.baseline for s in header.signals], dtype=np.float64)[:, None]
    signals = (adc - baseline) / header.gains[:, None]
    atr_path = stem.with_name(f"{stem.name}.{annotator}")
    try:
        anns = parse_annotations(_read(atr_path))
    except ParseError as exc:
        raise ParseError(f"{atr_path}: {exc}") from None
    anns = [a for a in anns if a.sample_index < nsamp]
    return EcgRecord(header, signals, tuple(anns))


def load_csv_record(signal_csv, annotation_csv, sampling_rate=360.0, name=None) -> EcgRecord:
    """Read the CSV layout: ``ch0,ch1,...`` mV columns and ``sample_index,symbol`` rows."""
    signal_csv = Path(signal_csv)
    try:
        with open(signal_csv, newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataIOError(f"missing file {signal_csv}") from None
    if not rows:
        raise ParseError(f"{signal_csv}: empty signal CSV")
    leads = [c.strip() for c in rows[0]]
    try:
        values = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{signal_csv}: {exc}") from None
    if values.size == 0:
        values = np.zeros((0, len(leads)))
    if values.shape[1] != len(leads):
        raise ParseError(f"{signal_csv}: rows have {values.shape[1]} columns, header has {len(leads)}")
    anns = []
    try:
        with open(annotation_csv, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for lineno, r in enumerate(reader, start=2):
                if not r:
                    continue
                try:
                    anns.append(BeatAnnotation(int(r[0]), r[1].strip()))
                except (ValueError, IndexError):
                    raise ParseError(f"{annotation_csv}: line {lineno}: bad annotation row {r!r}") from None
    except FileNotFoundError:
        raise DataIOError(f"missing file {annotation_csv}") from None
    specs = tuple(SignalSpec(signal_csv.name, 212, 1.0, 0, 0, lead) for lead in leads)
    header = RecordHeader(name or signal_csv.stem, len(leads), float(sampling_rate), values.shape[0], specs)
    return EcgRecord(header, values.T.copy(), tuple(anns))


def list_records(data_dir):
    """Record stems (sorted) for every ``.hea`` file in ``data_dir``."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataIOError(f"{data_dir} is not a directory")
    stems = sorted(p.with_suffix("") for p in data_dir.glob("*.hea"))
    if not stems:
        raise DataIOError(f"no .hea files in {data_dir}; expected MIT-BIH records as <name>.hea/.dat/.atr")
    return stems


__all__ = [
    "BeatAnnotation", "EcgRecord", "RecordHeader", "SignalSpec", "decode_format212",
    "encode_format212", "encode_annotations", "list_records", "load_csv_record",
    "load_record", "parse_annotations", "parse_header",
]
