"""Synthetic two-lead ECG records with AAMI-labelled beats.

Each beat is a sum of Gaussian waves (P, Q, R, S, T) whose layout
depends on the beat class. Records can be written in WFDB layout
(``.hea``/``.dat``/``.atr``) so the full ingestion path can be exercised
without MIT-BIH on disk.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .beats import AamiClass
from .wfdb_io import BeatAnnotation, EcgRecord, RecordHeader, SignalSpec, encode_annotations, encode_format212

FS = 360.0
GAIN = 200.0
ADC_ZERO = 1024

# (centre s, amplitude mV, width s) per wave, lead I
_WAVES = {
    AamiClass.N: [(-0.20, 0.15, 0.025), (-0.03, -0.10, 0.010), (0.0, 1.00, 0.012),
                  (0.03, -0.20, 0.010), (0.25, 0.30, 0.050)],
    AamiClass.S: [(-0.14, -0.10, 0.020), (-0.03, -0.08, 0.010), (0.0, 0.90, 0.012),
                  (0.03, -0.25, 0.010), (0.22, 0.25, 0.045)],
    AamiClass.V: [(-0.02, -0.30, 0.030), (0.02, 1.30, 0.035), (0.08, -0.40, 0.030),
                  (0.30, -0.45, 0.070)],
    AamiClass.F: [(-0.20, 0.08, 0.025), (-0.02, -0.20, 0.020), (0.01, 1.15, 0.024),
                  (0.05, -0.30, 0.020), (0.28, -0.05, 0.060)],
    AamiClass.Q: [(-0.06, 0.80, 0.003), (0.0, 0.70, 0.030), (0.05, -0.50, 0.030),
                  (0.28, 0.35, 0.060)],
}
# second lead: per-wave scale relative to lead I
_LEAD2 = {AamiClass.N: 0.5, AamiClass.S: 0.6, AamiClass.V: -0.7, AamiClass.F: -0.2, AamiClass.Q: 0.9}

_SYMBOLS = {AamiClass.N: "NLR", AamiClass.S: "A", AamiClass.V: "V", AamiClass.F: "F", AamiClass.Q: "/"}
DEFAULT_MIX = (0.70, 0.09, 0.09, 0.04, 0.08)


def _beat(cls, t, rng):
    out = np.zeros((2, t.size))
    jitter = 1 + 0.12 * rng.standard_normal()
    for centre, amp, width in _WAVES[cls]:
        c = centre * (1 + 0.08 * rng.standard_normal())
        w = width * (1 + 0.10 * rng.standard_normal())
        wave = amp * jitter * np.exp(-0.5 * ((t - c) / w) ** 2)
        out[0] += wave
        out[1] += _LEAD2[cls] * wave * (1 + 0.1 * rng.standard_normal())
    return out


def synth_record(name, num_beats, seed, mix=DEFAULT_MIX, fs=FS, noise=0.03):
    """Return ``(EcgRecord, adc)`` where ``adc`` is the int16 sample matrix."""
    rng = np.random.default_rng(seed)
    classes = rng.choice(len(AamiClass), size=num_beats, p=np.asarray(mix) / np.sum(mix))
    rr = []
    for k in classes:
        base = 0.8 + 0.1 * rng.standard_normal()
        rr.append(base * (0.7 if k == AamiClass.S else 1.0))
    r_peaks = np.cumsum(np.r_[0.6, np.clip(rr[:-1], 0.45, 1.4)])
    n = int((r_peaks[-1] + 0.9) * fs)
    t = np.arange(n) / fs
    sig = np.zeros((2, n))
    for r, k in zip(r_peaks, classes):
        lo, hi = max(0, int((r - 0.45) * fs)), min(n, int((r + 0.55) * fs))
        sig[:, lo:hi] += _beat(AamiClass(k), t[lo:hi] - r, rng)
    wander = 0.08 * np.sin(2 * np.pi * 0.25 * t + rng.uniform(0, 2 * np.pi))
    sig += wander + noise * rng.standard_normal(sig.shape)
    adc = np.clip(np.round(sig * GAIN) + ADC_ZERO, -2048, 2047).astype(np.int16)

    anns = []
    last = -1
    for r, k in zip(r_peaks, classes):
        idx = int(round(r * fs))
        if idx <= last:
            continue
        syms = _SYMBOLS[AamiClass(k)]
        anns.append(BeatAnnotation(idx, syms[rng.integers(len(syms))]))
        last = idx
    specs = tuple(SignalSpec(f"{name}.dat", 212, GAIN, ADC_ZERO, ADC_ZERO, lead) for lead in ("MLII", "V5"))
    header = RecordHeader(name, 2, fs, n, specs)
    physical = (adc.astype(np.float64) - ADC_ZERO) / GAIN
    return EcgRecord(header, physical, tuple(anns)), adc


def write_wfdb(directory, record, adc, extra_annotations=()):
    """Write ``record`` as ``<name>.hea/.dat/.atr`` under ``directory``.

    ``extra_annotations`` are ``(sample, symbol)`` pairs merged in (rhythm
    marks, unmapped beats) to exercise parser filtering.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = record.name
    (directory / f"{name}.dat").write_bytes(encode_format212(adc))
    lines = [f"{name} {adc.shape[0]} {record.header.sampling_rate:g} {adc.shape[1]}"]
    for ch, spec in enumerate(record.header.signals):
        checksum = int(adc[ch].astype(np.int64).sum()) % 65536
        if checksum >= 32768:
            checksum -= 65536
        lines.append(f"{name}.dat 212 {spec.gain:g} 11 {spec.adc_zero} {int(adc[ch, 0])} {checksum} 0 {spec.lead_name}")
    lines.append("# synthetic record")
    (directory / f"{name}.hea").write_text("\n".join(lines) + "\n")
    merged = sorted([(a.sample_index, a.symbol, a.aux) for a in record.annotations]
                    + [(tuple(e) + (b"",))[:3] for e in extra_annotations])
    (directory / f"{name}.atr").write_bytes(encode_annotations(merged))


def synth_corpus(num_records, beats_per_record, seed=0, mix=DEFAULT_MIX):
    return [synth_record(f"syn{i:03d}", beats_per_record, seed * 1000 + i, mix)[0] for i in range(num_records)]
