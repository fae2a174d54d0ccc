"""Shared data containers and elementary transformations.

Time tags are stored as integer nanoseconds so that binning and
correlation windows are exact; conversion to seconds happens only at
API edges. All containers are frozen after construction and safe to
share between workers.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "TimeTagStream",
    "BinnedTrace",
    "Histogram",
    "Spectrum",
    "Param",
    "FitResult",
    "bin_timetags",
    "background_stats",
    "make_histogram",
    "save_timetags",
    "load_timetags",
    "save_timetags_csv",
    "load_timetags_csv",
    "write_trace_csv",
    "read_trace_csv",
    "write_histogram_csv",
    "write_spectrum_csv",
    "read_spectrum_csv",
]

_MAGIC = b"PTT1"


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeTagStream:
    """Ordered photon detection timestamps in integer nanoseconds.

    An empty stream with positive duration is valid.
    """

    timestamps: np.ndarray
    duration_ns: int
    channel: int = 0

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.int64)
        object.__setattr__(self, "timestamps", _readonly(ts))
        if self.duration_ns < 0:
            raise ValueError("duration_ns must be non-negative")
        if ts.size:
            if ts[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(ts) <= 0):
                raise ValueError("timestamps must be strictly increasing")
            if ts[-1] > self.duration_ns:
                raise ValueError("timestamps must not exceed duration_ns")

    @property
    def duration_s(self) -> float:
        return self.duration_ns * 1e-9

    def rate_hz(self) -> float:
        """Mean detected rate over the acquisition."""
        if self.duration_ns == 0:
            return 0.0
        return self.timestamps.size / self.duration_s

    def __len__(self) -> int:
        return self.timestamps.size


@dataclass(frozen=True)
class BinnedTrace:
    """Counts per fixed-width time bin."""

    bin_width_s: float
    counts: np.ndarray
    t0_s: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if self.bin_width_s <= 0:
            raise ValueError("bin_width_s must be positive")
        if c.ndim != 1 or c.size < 1:
            raise ValueError("counts must be a non-empty 1-d array")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", _readonly(c))

    @property
    def n_bins(self) -> int:
        return self.counts.size

    @property
    def duration_s(self) -> float:
        return self.n_bins * self.bin_width_s

    def times_s(self) -> np.ndarray:
        """Left edge of each bin in seconds."""
        return self.t0_s + np.arange(self.n_bins) * self.bin_width_s


@dataclass(frozen=True)
class Histogram:
    """Left-closed histogram; values outside the edge range are not counted
    but their number is kept in n_outside."""

    edges: np.ndarray
    counts: np.ndarray
    n_outside: int = 0

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        c = np.asarray(self.counts, dtype=np.int64)
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("edges must be strictly increasing with >= 2 entries")
        if c.size != e.size - 1:
            raise ValueError("len(counts) must equal len(edges) - 1")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "edges", _readonly(e))
        object.__setattr__(self, "counts", _readonly(c))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass(frozen=True)
class Spectrum:
    """Wavelength grid (nm, strictly increasing) plus counts."""

    wavelengths_nm: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.wavelengths_nm, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if w.size != c.size:
            raise ValueError("wavelengths and counts must have equal length")
        if w.size < 2 or np.any(np.diff(w) <= 0):
            raise ValueError("wavelengths must be strictly increasing")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "wavelengths_nm", _readonly(w))
        object.__setattr__(self, "counts", _readonly(c))


class Param(NamedTuple):
    value: float
    error: float
    unit: str = ""


@dataclass(frozen=True)
class FitResult:
    """Estimated parameters with uncertainties and a goodness metric.

    goodness_kind flags whether goodness is a residual sum of squares
    ('rss') or a log-likelihood ('loglik').
    """

    params: Mapping[str, Param]
    goodness: float
    goodness_kind: str
    converged: bool
    n_points: int
    flags: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.goodness_kind not in ("rss", "loglik"):
            raise ValueError("goodness_kind must be 'rss' or 'loglik'")
        for name, p in self.params.items():
            if not np.isfinite(p.error) or p.error < 0:
                raise ValueError(f"uncertainty for {name!r} must be >= 0 and finite")
        if self.converged and not np.isfinite(self.goodness):
            raise ValueError("goodness must be finite when converged")

    def value(self, name: str) -> float:
        return self.params[name].value

    def error(self, name: str) -> float:
        return self.params[name].error

    def to_jsonable(self) -> dict:
        """(value, error, unit) triples plus bookkeeping, for result JSON."""
        return {
            "params": {
                k: {"value": p.value, "error": p.error, "unit": p.unit}
                for k, p in self.params.items()
            },
            "goodness": self.goodness,
            "goodness_kind": self.goodness_kind,
            "converged": self.converged,
            "n_points": self.n_points,
            "flags": list(self.flags),
            "meta": self.meta,
        }


def bin_timetags(stream: TimeTagStream, bin_width_s: float) -> BinnedTrace:
    """Bin a time-tag stream into fixed-width counts.

    counts[i] is the number of tags in [i*bw, (i+1)*bw); the trailing
    partial bin is dropped because partial bins bias Poisson statistics.
    """
    if bin_width_s <= 0:
        raise ValueError("bin_width_s must be positive")
    bw_ns = int(round(bin_width_s * 1e9))
    if bw_ns < 1:
        raise ValueError("bin_width_s must be at least 1 ns")
    n_bins = stream.duration_ns // bw_ns
    if n_bins < 1:
        raise ValueError("duration shorter than one bin")
    ts = stream.timestamps
    ts = ts[ts < n_bins * bw_ns]
    counts = np.bincount(ts // bw_ns, minlength=n_bins)
    return BinnedTrace(bin_width_s=bw_ns * 1e-9, counts=counts, t0_s=0.0)


def background_stats(trace: BinnedTrace, region) -> tuple[float, float]:
    """Sample mean and sample standard deviation of counts/bin over a region.

    region is a slice or an (start, stop) index pair. A single-bin region
    has zero spread by convention.
    """
    if isinstance(region, slice):
        sel = trace.counts[region]
    else:
        lo, hi = region
        sel = trace.counts[lo:hi]
    if sel.size == 0:
        raise ValueError("background region is empty")
    mean = float(np.mean(sel))
    sigma = 0.0 if sel.size < 2 else float(np.std(sel, ddof=1))
    return mean, sigma


def make_histogram(values: Sequence[float], edges: Sequence[float]) -> Histogram:
    """Left-closed histogram of values over explicit edges.

    Values outside [edges[0], edges[-1]) are ignored; their number is
    reported via Histogram.n_outside.
    """
    e = np.asarray(edges, dtype=float)
    if e.size < 2 or np.any(np.diff(e) <= 0):
        raise ValueError("edges must be strictly increasing with >= 2 entries")
    v = np.asarray(values, dtype=float)
    idx = np.searchsorted(e, v, side="right") - 1
    in_range = (idx >= 0) & (v < e[-1])
    counts = np.bincount(idx[in_range], minlength=e.size - 1)
    return Histogram(edges=e, counts=counts, n_outside=int(v.size - in_range.sum()))


# ---------------------------------------------------------------------------
# serialization

def save_timetags(stream: TimeTagStream, path) -> None:
    """Binary format: magic 'PTT1', u32 channel, u64 count, then
    little-endian u64 timestamps in nanoseconds."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", stream.channel, len(stream)))
        f.write(stream.timestamps.astype("<u8").tobytes())


def load_timetags(path, duration_ns: int | None = None) -> TimeTagStream:
    """Read the binary format. The header carries no duration; pass one
    (normally from the run manifest) or the last timestamp is used."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
        channel, count = struct.unpack("<IQ", f.read(12))
        ts = np.frombuffer(f.read(8 * count), dtype="<u8").astype(np.int64)
        if ts.size != count:
            raise ValueError("truncated timestamp block")
    if duration_ns is None:
        duration_ns = int(ts[-1]) if ts.size else 0
    return TimeTagStream(timestamps=ts, duration_ns=duration_ns, channel=channel)


def save_timetags_csv(stream: TimeTagStream, path) -> None:
    # one timestamp per line, nanoseconds
    with open(path, "w", newline="") as f:
        for t in stream.timestamps:
            f.write(f"{int(t)}\n")


def load_timetags_csv(path, duration_ns: int | None = None, channel: int = 0) -> TimeTagStream:
    ts = np.loadtxt(path, dtype=np.int64, ndmin=1) if _nonempty(path) else np.empty(0, np.int64)
    if duration_ns is None:
        duration_ns = int(ts[-1]) if ts.size else 0
    return TimeTagStream(timestamps=ts, duration_ns=duration_ns, channel=channel)


def _nonempty(path) -> bool:
    import os

    return os.path.getsize(path) > 0


def write_trace_csv(trace: BinnedTrace, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("time_s,counts\n")
        for t, c in zip(trace.times_s(), trace.counts):
            f.write(f"{float(t)!r},{int(c)}\n")


def read_trace_csv(path, bin_width_s: float | None = None) -> BinnedTrace:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    times, counts = data[:, 0], data[:, 1].astype(np.int64)
    if bin_width_s is None:
        if times.size < 2:
            raise ValueError("cannot infer bin width from a single row")
        bin_width_s = float(np.median(np.diff(times)))
    return BinnedTrace(bin_width_s=bin_width_s, counts=counts, t0_s=float(times[0]))


def write_histogram_csv(hist: Histogram, path, unit: str = "") -> None:
    suffix = f"_{unit}" if unit else ""
    with open(path, "w", newline="") as f:
        f.write(f"edge_lo{suffix},edge_hi{suffix},count\n")
        for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
            f.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")


def write_spectrum_csv(spec: Spectrum, path) -> None:
    with open(path, "w", newline="") as f:
        f.write("wavelength_nm,counts\n")
        for w, c in zip(spec.wavelengths_nm, spec.counts):
            f.write(f"{float(w)!r},{float(c)!r}\n")


def read_spectrum_csv(path) -> Spectrum:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Spectrum(wavelengths_nm=data[:, 0], counts=data[:, 1])
