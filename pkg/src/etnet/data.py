"""Synthetic event-triggered series, anomaly/noise injection, resampling, and CSV windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

WAVE_KINDS = ("sine", "square", "triangle")
FORMAT_VERSION = 1
CSV_MARKER = "# etnet-format:"


class DataFormatError(ValueError):
    pass


@dataclass
class TimeSeries:
    values: np.ndarray
    interval: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.values.size < 1:
            raise ValueError("a time series needs at least one sample")
        if not self.interval > 0:
            raise ValueError("sampling interval must be positive")

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def with_values(self, values) -> "TimeSeries":
        return TimeSeries(values, self.interval)


@dataclass
class EventSpec:
    indicator: np.ndarray
    intensity: np.ndarray
    kind: str = "MTC"  # or "HTC"

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.indicator.shape != self.intensity.shape:
            raise ValueError("indicator and intensity must share length")
        if self.kind not in ("MTC", "HTC"):
            raise ValueError(f"event kind must be MTC or HTC, got {self.kind!r}")


@dataclass
class AnomalySpec:
    type: int
    magnitude: float
    location: int
    span: int = 1

    def check(self, length: int) -> None:
        if self.type not in (1, 2, 3, 4):
            raise ValueError(f"anomaly type must be 1..4, got {self.type}")
        if self.location < 0 or self.span < 1 or self.location + self.span > length:
            raise ValueError(f"anomaly span [{self.location}, {self.location + self.span}) outside [0, {length})")


@dataclass
class NoiseSpec:
    type: int
    parameter: float


def _ts(x, interval: float | None = None) -> TimeSeries:
    if isinstance(x, TimeSeries):
        return x
    return TimeSeries(x, 1.0 if interval is None else interval)


# --------------------------------------------------------------------------
# generators


def clean_wave(kind: str, t: np.ndarray, period: float, phase: float = 0.0) -> np.ndarray:
    """Unit-amplitude wave at (possibly fractional) sample positions ``t``.

    All three kinds share zero crossings: the square wave is the sign of the
    sine, the triangle peaks where the sine does.
    """
    cycles = np.asarray(t, dtype=float) / period + phase / (2.0 * np.pi)
    frac = cycles - np.floor(cycles)
    if kind == "sine":
        return np.sin(2.0 * np.pi * cycles)
    if kind == "square":
        return np.where(frac < 0.5, 1.0, -1.0)
    if kind == "triangle":
        shifted = (frac + 0.25) % 1.0
        return 1.0 - 4.0 * np.abs(shifted - 0.5)
    raise ValueError(f"unknown wave kind {kind!r}; expected one of {WAVE_KINDS}")


def gen_wave(
    kind: str,
    length: int,
    period: float,
    phase: float = 0.0,
    awgn_sigma: float = 0.0,
    seed: int | np.random.Generator | None = 0,
    interval: float = 1.0,
) -> TimeSeries:
    if period < 2:
        raise ValueError("period must be at least 2 samples")
    clean = clean_wave(kind, np.arange(length), period, phase)
    if awgn_sigma > 0:
        rng = np.random.default_rng(seed)
        clean = clean + rng.normal(0.0, awgn_sigma, size=length)
    return TimeSeries(clean, interval)


def compose_events(events: Sequence[EventSpec]) -> TimeSeries:
    """Sum of intensity-weighted event indicators."""
    if not events:
        raise ValueError("need at least one event")
    length = events[0].indicator.shape
    total = np.zeros(length)
    for ev in events:
        if ev.indicator.shape != length:
            raise ValueError("all events must share length")
        total += ev.intensity * ev.indicator
    return TimeSeries(total)


def mtc_event(length: int, period: int, size: float = 1.0, offset: int = 0) -> EventSpec:
    indicator = np.zeros(length)
    indicator[offset::period] = 1.0
    return EventSpec(indicator, np.full(length, size), "MTC")


def htc_event(length: int, start: int, duration: int, size: float = 20.0) -> EventSpec:
    indicator = np.zeros(length)
    indicator[start : start + duration] = 1.0
    return EventSpec(indicator, np.full(length, size), "HTC")


# --------------------------------------------------------------------------
# anomalies and noise


def default_anomaly(kind: int, length: int, rng: np.random.Generator, amplitude: float = 1.0) -> AnomalySpec:
    """Magnitudes and spans relative to the clean amplitude, at a random location."""
    if kind == 1:
        magnitude, span = 3.0 * amplitude, max(1, round(0.10 * length))
    elif kind == 2:
        magnitude, span = 5.0 * amplitude, max(1, round(0.05 * length))
    elif kind == 3:
        magnitude, span = 0.0, max(1, round(0.20 * length))
    elif kind == 4:
        magnitude, span = 5.0 * amplitude, 1
    else:
        raise ValueError(f"anomaly type must be 1..4, got {kind}")
    location = int(rng.integers(0, length - span + 1))
    return AnomalySpec(kind, magnitude, location, span)


def inject_anomaly(x, spec: AnomalySpec, seed: int | np.random.Generator | None = 0) -> TimeSeries:
    x = _ts(x)
    spec.check(len(x))
    out = x.values.copy()
    sl = slice(spec.location, spec.location + spec.span)
    if spec.type == 1:
        rng = np.random.default_rng(seed)
        out[sl] += rng.normal(0.0, spec.magnitude, size=spec.span)
    elif spec.type == 2:
        out[sl] += spec.magnitude
    elif spec.type == 3:
        out[sl] = 0.0
    else:
        out[spec.location] += spec.magnitude
    return x.with_values(out)


def upsample(values: np.ndarray, factor: float) -> np.ndarray:
    n = len(values)
    new_n = int(round((n - 1) * factor)) + 1
    grid = np.linspace(0.0, n - 1, new_n)
    return np.interp(grid, np.arange(n), values)


def apply_noise(x, spec: NoiseSpec, seed: int | np.random.Generator | None = 0) -> TimeSeries:
    """1: upsample by linear interpolation; 2: decimate; 3: circular shift; 4: AWGN."""
    x = _ts(x)
    v = x.values
    if spec.type == 1:
        if spec.parameter < 1:
            raise ValueError("upsampling factor must be >= 1")
        return TimeSeries(upsample(v, spec.parameter), x.interval / spec.parameter)
    if spec.type == 2:
        step = int(spec.parameter)
        if step < 1 or step > len(v):
            raise ValueError(f"decimation factor {spec.parameter} invalid for length {len(v)}")
        return TimeSeries(v[::step], x.interval * step)
    if spec.type == 3:
        return x.with_values(np.roll(v, int(spec.parameter)))
    if spec.type == 4:
        if spec.parameter < 0:
            raise ValueError("noise sigma must be >= 0")
        rng = np.random.default_rng(seed)
        return x.with_values(v + rng.normal(0.0, spec.parameter, size=len(v)))
    raise ValueError(f"noise type must be 1..4, got {spec.type}")


def resample(x: TimeSeries, new_interval: float) -> TimeSeries:
    """Linear interpolation onto a grid of spacing ``new_interval`` over the same duration."""
    if not new_interval > 0:
        raise ValueError("new interval must be positive")
    duration = (len(x) - 1) * x.interval
    n = int(math.floor(duration / new_interval + 1e-9)) + 1
    t_new = np.arange(n) * new_interval
    t_old = np.arange(len(x)) * x.interval
    return TimeSeries(np.interp(t_new, t_old, x.values), new_interval)


def rebin(x: TimeSeries, new_interval: float) -> TimeSeries:
    """Aggregate onto coarser bins of width ``new_interval`` by per-bin mean.

    Each sample is treated as constant over its own interval, so bins that
    straddle a boundary take an area-weighted share.  A trailing partial bin
    is dropped.  Values stay in units per original interval.
    """
    ratio = new_interval / x.interval
    if not ratio >= 1.0:
        raise ValueError("rebin only coarsens; use resample to refine")
    v = x.values
    n = int(math.floor(len(v) / ratio + 1e-9))
    if n < 1:
        raise ValueError(f"series of {len(v)} samples is shorter than one bin")
    cum = np.concatenate([[0.0], np.cumsum(v)])

    def area(t):
        i = np.minimum(np.floor(t).astype(int), len(v) - 1)
        return cum[i] + (t - i) * v[i]

    edges = np.arange(n + 1) * ratio
    return TimeSeries((area(edges[1:]) - area(edges[:-1])) / ratio, new_interval)


def stretch(values, length: int) -> np.ndarray:
    """Linear interpolation of a window onto ``length`` evenly spaced points over its span."""
    v = np.asarray(values, dtype=float)
    if len(v) == length:
        return v.copy()
    if len(v) == 1:
        return np.full(length, v[0])
    return np.interp(np.linspace(0.0, len(v) - 1.0, length), np.arange(len(v)), v)


# --------------------------------------------------------------------------
# synthetic datasets


@dataclass
class Dataset:
    windows: np.ndarray  # (N, L)
    labels: np.ndarray  # (N,) 0/1 for anomaly sets, class index for clustering sets
    kinds: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.windows)


def wave_copies(
    copies: int,
    length: int,
    period: float,
    awgn_sigma: float,
    rng: np.random.Generator,
    kinds: Sequence[str] = WAVE_KINDS,
    random_phase: bool = True,
    phase_jitter: float | None = None,
) -> Dataset:
    """``copies`` noisy copies of each wave kind with a fresh phase per copy.

    ``phase_jitter`` bounds the phase to ``[-jitter, jitter]`` radians; otherwise
    ``random_phase`` draws it from the whole cycle.
    """
    rows, labels, names = [], [], []
    for cls, kind in enumerate(kinds):
        for _ in range(copies):
            if phase_jitter is not None:
                phase = rng.uniform(-phase_jitter, phase_jitter)
            else:
                phase = rng.uniform(0.0, 2.0 * np.pi) if random_phase else 0.0
            rows.append(gen_wave(kind, length, period, phase, awgn_sigma, rng).values)
            labels.append(cls)
            names.append(kind)
    windows = np.array(rows) if rows else np.empty((0, length))
    return Dataset(windows, np.array(labels, dtype=int), names)


def anomaly_test_set(
    normals: int,
    anomalies_per_type: int,
    length: int,
    period: float,
    awgn_sigma: float,
    rng: np.random.Generator,
    types: Sequence[int] = (1, 2, 3, 4),
) -> Dataset:
    """Clean-class windows labelled 0 followed by injected anomalies labelled 1.

    ``kinds`` records the wave for normals and ``typeN`` for anomalies.
    """
    rows, labels, names = [], [], []
    for i in range(normals):
        kind = WAVE_KINDS[i % len(WAVE_KINDS)]
        rows.append(gen_wave(kind, length, period, rng.uniform(0, 2 * np.pi), awgn_sigma, rng).values)
        labels.append(0)
        names.append(kind)
    for t in types:
        for i in range(anomalies_per_type):
            kind = WAVE_KINDS[i % len(WAVE_KINDS)]
            base = gen_wave(kind, length, period, rng.uniform(0, 2 * np.pi), awgn_sigma, rng)
            spec = default_anomaly(t, length, rng)
            rows.append(inject_anomaly(base, spec, rng).values)
            labels.append(1)
            names.append(f"type{t}")
    return Dataset(np.array(rows), np.array(labels, dtype=int), names)


def contaminate(train: Dataset, fraction: float, rng: np.random.Generator, types: Sequence[int] = (1, 2, 3, 4)) -> Dataset:
    """Replace ``fraction`` of the windows with anomalous versions of themselves."""
    windows = train.windows.copy()
    labels = np.zeros(len(windows), dtype=int)
    n = int(round(fraction * len(windows)))
    picks = rng.choice(len(windows), size=n, replace=False)
    for j, i in enumerate(picks):
        spec = default_anomaly(types[j % len(types)], windows.shape[1], rng)
        windows[i] = inject_anomaly(windows[i], spec, rng).values
        labels[i] = 1
    return Dataset(windows, labels, list(train.kinds))


# --------------------------------------------------------------------------
# windows and CSV


def window_series(x, window_len: float, bin_len: float = 1.0) -> list[TimeSeries]:
    """Non-overlapping windows of ``window_len / bin_len`` samples; the remainder is dropped."""
    x = _ts(x, bin_len)
    size = int(round(window_len / bin_len))
    if size < 1:
        raise ValueError("window must hold at least one bin")
    count = len(x) // size
    return [x.with_values(x.values[i * size : (i + 1) * size]) for i in range(count)]


def _data_lines(path: Path):
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.startswith(CSV_MARKER):
                version = line[len(CSV_MARKER) :].strip()
                if version != str(FORMAT_VERSION):
                    raise DataFormatError(f"{path}:{lineno}: unsupported format version {version!r}")
                continue
            if line.startswith("#") or not line.strip():
                continue
            yield lineno, line


def load_windows(path, window_len: float = 120, bin_len: float = 1.0) -> list[TimeSeries]:
    """Read windows from CSV.

    Two layouts are accepted, chosen by the header:

    * ``series_id,index,value`` -- long traces of binned counts, windowed with
      :func:`window_series`;
    * ``window_id,x0,x1,...`` -- one window per row.
    """
    path = Path(path)
    rows = list(_data_lines(path))
    if not rows:
        return []
    header_no, header_line = rows[0]
    header = next(csv.reader([header_line]))
    body = rows[1:]
    if [h.strip() for h in header] == ["series_id", "index", "value"]:
        traces: dict[str, list[tuple[float, float]]] = {}
        for lineno, line in body:
            fields = next(csv.reader([line]))
            if len(fields) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            try:
                traces.setdefault(fields[0], []).append((float(fields[1]), float(fields[2])))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric index or value") from None
        out = []
        for points in traces.values():
            points.sort()
            out += window_series(TimeSeries([v for _, v in points], bin_len), window_len, bin_len)
        return out
    if not header or header[0].strip() != "window_id":
        raise DataFormatError(f"{path}:{header_no}: unrecognised header {header_line.strip()!r}")
    out = []
    for lineno, line in body:
        fields = next(csv.reader([line]))
        try:
            values = [float(v) for v in fields[1:] if v.strip() != ""]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric sample") from None
        if not values:
            raise DataFormatError(f"{path}:{lineno}: empty window")
        out.append(TimeSeries(values, bin_len))
    return out


def load_window_ids(path) -> list[str]:
    """Ids of a one-window-per-row file, or positional ids for trace files."""
    path = Path(path)
    rows = list(_data_lines(path))
    if not rows:
        return []
    header = next(csv.reader([rows[0][1]]))
    if header and header[0].strip() == "window_id":
        return [next(csv.reader([line]))[0] for _, line in rows[1:]]
    return [str(i) for i in range(len(load_windows(path)))]


def write_windows(path, windows, ids: Sequence[str] | None = None) -> None:
    windows = [np.asarray(w, dtype=float) for w in windows]
    width = max((len(w) for w in windows), default=0)
    ids = list(ids) if ids is not None else [str(i) for i in range(len(windows))]
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_MARKER} {FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["window_id"] + [f"x{i}" for i in range(width)])
        for wid, w in zip(ids, windows):
            writer.writerow([wid] + [repr(float(v)) for v in w])


def write_truth(path, ids: Sequence[str], labels, kinds: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"{CSV_MARKER} {FORMAT_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(["window_id", "label", "kind"])
        for wid, lab, kind in zip(ids, labels, kinds):
            writer.writerow([wid, int(lab), kind])


def read_table(path) -> list[dict[str, str]]:
    """Rows of a versioned CSV as dicts keyed by header."""
    rows = list(_data_lines(Path(path)))
    if not rows:
        return []
    header = [h.strip() for h in next(csv.reader([rows[0][1]]))]
    out = []
    for lineno, line in rows[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(fields)}")
        out.append(dict(zip(header, fields)))
    return out
