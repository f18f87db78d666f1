"""Sample streams: synthetic generators, CSV ingestion, rolling z-score and beat framing.

Every stream is an iterator of :class:`SignalFrame`.  Generators are pure
functions of their inputs (the synthetic generator of its spec, seed included).
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, ParseError, SchemaError

LOGISTIC_R = 3.99
SEGMENT_KINDS = ("quiescent", "chaos", "anomaly_burst", "tachycardia", "bradycardia")


@dataclass(frozen=True, slots=True)
class SignalFrame:
    t: int
    value: float
    label: bool | None = None


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int
    length: int
    intensity: float = 1.0

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class SyntheticSpec:
    """Layout of a synthetic stream.

    ``frequency`` is in cycles per sample.  Samples not covered by any
    segment belong to the quiescent baseline.
    """

    total_len: int
    amplitude: float = 1.0
    frequency: float = 0.01
    segments: tuple[Segment, ...] = field(default_factory=tuple)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.total_len < 1:
            raise ConfigError(f"synthetic.total_len must be >= 1, got {self.total_len}")
        if self.noise_sigma < 0:
            raise ConfigError(f"synthetic.noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.frequency < 0:
            raise ConfigError(f"synthetic.frequency must be >= 0, got {self.frequency}")
        ordered = sorted(self.segments, key=lambda s: s.start)
        for seg in ordered:
            if seg.kind not in SEGMENT_KINDS:
                raise ConfigError(f"unknown segment kind {seg.kind!r}")
            if seg.length < 1:
                raise ConfigError(f"segment at {seg.start} has non-positive length {seg.length}")
            if seg.start < 0 or seg.stop > self.total_len:
                raise ConfigError(
                    f"segment [{seg.start}, {seg.stop}) outside stream [0, {self.total_len})"
                )
            if seg.intensity < 0:
                raise ConfigError(f"segment at {seg.start} has negative intensity")
        for a, b in zip(ordered, ordered[1:]):
            if b.start < a.stop:
                raise ConfigError(f"segments [{a.start}, {a.stop}) and [{b.start}, {b.stop}) overlap")

    def with_seed(self, seed: int) -> SyntheticSpec:
        return SyntheticSpec(
            total_len=self.total_len,
            amplitude=self.amplitude,
            frequency=self.frequency,
            segments=self.segments,
            noise_sigma=self.noise_sigma,
            seed=seed,
        )


@dataclass(frozen=True)
class Beat:
    samples: np.ndarray
    label: bool | None = None
    start: int = 0  # stream index of the first sample


def _logistic_orbit(n: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.uniform(0.1, 0.9)
    for _ in range(100):  # burn-in off the transient
        x = LOGISTIC_R * x * (1.0 - x)
    out = np.empty(n)
    for i in range(n):
        x = LOGISTIC_R * x * (1.0 - x)
        out[i] = x
    return out


def _impulse_train(n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros(n)
    width = 1.5
    k = np.arange(-5, 6)
    shape = np.exp(-(k**2) / (2 * width**2))
    pos = int(rng.integers(0, 16))
    while pos < n:
        amp = abs(rng.normal(1.0, 0.25))
        lo, hi = max(0, pos - 5), min(n, pos + 6)
        out[lo:hi] += amp * shape[lo - pos + 5 : hi - pos + 5]
        pos += int(rng.integers(8, 32))
    return out


def synthetic_arrays(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(values, labels)`` arrays for ``spec``."""
    n = spec.total_len
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(0.0, spec.noise_sigma, n) if spec.noise_sigma > 0 else np.zeros(n)

    freq = np.full(n, spec.frequency)
    overlay = np.zeros(n)
    labels = np.zeros(n, dtype=bool)
    for seg in sorted(spec.segments, key=lambda s: s.start):
        sl = slice(seg.start, seg.stop)
        if seg.kind == "quiescent":
            continue
        labels[sl] = True
        if seg.kind == "chaos":
            overlay[sl] = seg.intensity * (2.0 * _logistic_orbit(seg.length, rng) - 1.0)
        elif seg.kind == "anomaly_burst":
            overlay[sl] = seg.intensity * _impulse_train(seg.length, rng)
        else:  # tachycardia / bradycardia
            freq[sl] = spec.frequency * seg.intensity

    phase = np.empty(n)
    phase[0] = 0.0
    np.cumsum(freq[:-1], out=phase[1:])
    values = spec.amplitude * np.sin(2.0 * np.pi * phase) + overlay + noise
    return values, labels


def generate_synthetic(spec: SyntheticSpec) -> Iterator[SignalFrame]:
    values, labels = synthetic_arrays(spec)
    for t in range(spec.total_len):
        yield SignalFrame(t, float(values[t]), bool(labels[t]))


def _resolve_column(col: str | int, header: list[str] | None, what: str) -> int:
    if isinstance(col, int):
        idx = col
    elif header is not None and col in header:
        return header.index(col)
    elif header is None and str(col).isdigit():
        idx = int(col)
    else:
        raise SchemaError(f"{what} column {col!r} not found (header: {header})")
    if header is not None and not 0 <= idx < len(header):
        raise SchemaError(f"{what} column index {idx} out of range")
    return idx


def load_csv_series(
    path: str | Path,
    value_column: str | int = 0,
    label_column: str | int | None = None,
    delimiter: str = ",",
    has_header: bool = True,
) -> Iterator[SignalFrame]:
    """Read a CSV file into frames; ``t`` is the 0-based data-row ordinal.

    Columns are addressed by header name, or by 0-based index.  Labels must be
    0 or 1.  Raises FileNotFoundError, SchemaError or ParseError (with the
    1-based data row).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = None
        if has_header:
            header = next(reader, None)
            if header is None:
                return
            header = [h.strip() for h in header]
        vi = _resolve_column(value_column, header, "value")
        li = None if label_column is None else _resolve_column(label_column, header, "label")
        t = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            row_no = t + 1
            need = max(vi, li if li is not None else -1)
            if need >= len(row):
                raise SchemaError(f"row {row_no} has {len(row)} columns, need column {need}")
            try:
                value = float(row[vi])
            except ValueError:
                raise ParseError(f"row {row_no}: cannot parse value {row[vi]!r}", row_no) from None
            if not math.isfinite(value):
                raise ParseError(f"row {row_no}: non-finite value {row[vi]!r}", row_no)
            label = None
            if li is not None:
                cell = row[li].strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"row {row_no}: label must be 0 or 1, got {cell!r}", row_no)
                label = cell == "1"
            yield SignalFrame(t, value, label)
            t += 1


def rolling_zscore(stream: Iterable[SignalFrame], window_len: int = 3600) -> Iterator[SignalFrame]:
    """Trailing-window z-score with population std; a flat window maps to 0."""
    if window_len < 1:
        raise ConfigError(f"window_len must be >= 1, got {window_len}")
    buf: deque[float] = deque(maxlen=window_len)
    for frame in stream:
        buf.append(frame.value)
        w = np.fromiter(buf, dtype=float, count=len(buf))
        # exact flatness test: a rounded std of a constant window need not be 0
        if w.max() == w.min():
            z = 0.0
        else:
            z = float((frame.value - w.mean()) / w.std())
        yield SignalFrame(frame.t, z, frame.label)


def normalize_beat(samples: np.ndarray) -> np.ndarray:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0 or samples.max() == samples.min():
        return np.zeros_like(samples)
    return (samples - samples.mean()) / samples.std()


def segment_beats(stream: Iterable[SignalFrame], beat_len: int) -> list[Beat]:
    """Cut the stream into non-overlapping ``beat_len`` windows, each z-normalized.

    The trailing partial window is dropped.  A beat is anomalous if any of its
    frames is; labels stay ``None`` for unlabeled streams.
    """
    if beat_len < 2:
        raise ConfigError(f"beat_len must be >= 2, got {beat_len}")
    frames = list(stream)
    if len(frames) < beat_len:
        warnings.warn(f"stream of {len(frames)} samples is shorter than beat_len={beat_len}")
        return []
    beats = []
    for start in range(0, len(frames) - beat_len + 1, beat_len):
        chunk = frames[start : start + beat_len]
        labels = [f.label for f in chunk]
        label = None if all(lb is None for lb in labels) else any(bool(lb) for lb in labels)
        beats.append(Beat(normalize_beat(np.array([f.value for f in chunk])), label, start))
    return beats


def frames_from_arrays(values: Sequence[float], labels: Sequence[bool] | None = None) -> list[SignalFrame]:
    if labels is None:
        return [SignalFrame(t, float(v)) for t, v in enumerate(values)]
    return [SignalFrame(t, float(v), bool(lb)) for t, (v, lb) in enumerate(zip(values, labels))]
