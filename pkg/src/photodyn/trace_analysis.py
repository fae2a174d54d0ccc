"""Threshold ON/OFF classification of binned traces and interval
statistics.

The threshold estimator of the active fraction is known to be biased;
it is flagged as such and the histogram-mixture model in photon_stats
is the unbiased counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinnedTrace, FitResult, Param
from .errors import InsufficientDataError, InvalidArgumentError

__all__ = [
    "IntervalRecord",
    "classify_on_off",
    "fit_interval_rate",
    "on_probability_threshold",
    "intervals_csv_rows",
]


@dataclass(frozen=True)
class IntervalRecord:
    """Interior ON/OFF interval durations of one trace.

    The first and last runs touch the trace boundary, so their lengths
    are censored; they are excluded from the duration lists.
    """

    on_durations: tuple  # seconds
    off_durations: tuple
    threshold: float  # counts/bin
    n_sigma: float
    runs: tuple  # interior (state, start_s, duration_s) in time order

    def __post_init__(self):
        for d in self.on_durations + self.off_durations:
            if d <= 0:
                raise InvalidArgumentError("durations must be positive")


def classify_on_off(
    trace: BinnedTrace,
    bg_mean: float,
    bg_sigma: float,
    n_sigma: float = 3.0,
) -> IntervalRecord:
    """Mark bins ON where counts exceed bg_mean + n_sigma * bg_sigma,
    then collapse maximal constant runs into intervals."""
    if bg_sigma < 0:
        raise InvalidArgumentError("bg_sigma must be >= 0")
    if trace.n_bins < 3:
        raise InvalidArgumentError("trace must have at least 3 bins")
    threshold = bg_mean + n_sigma * bg_sigma
    on = trace.counts > threshold

    change = np.nonzero(np.diff(on))[0] + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [on.size]])
    bw = trace.bin_width_s

    on_durs, off_durs, runs = [], [], []
    # boundary runs are censored; drop the first and last
    for k in range(1, starts.size - 1):
        dur = (ends[k] - starts[k]) * bw
        state = bool(on[starts[k]])
        runs.append(("on" if state else "off", trace.t0_s + starts[k] * bw, dur))
        (on_durs if state else off_durs).append(dur)

    return IntervalRecord(
        on_durations=tuple(on_durs),
        off_durations=tuple(off_durs),
        threshold=float(threshold),
        n_sigma=float(n_sigma),
        runs=tuple(runs),
    )


def fit_interval_rate(durations, min_count: int = 50) -> FitResult:
    """Switching rate from an interval-duration sample.

    Two estimators: (a) the inverse mean duration, the
    maximum-likelihood rate for exponential intervals, and (b) the
    slope of a count-weighted straight-line fit to the log duration
    histogram over cells holding at least 5 intervals. (a) is the
    reported value; (b) is an independent shape check, and
    disagreement beyond 25% flags non-exponential statistics.

    Thresholded traces yield durations quantized to the trace bin
    width; the histogram then uses exactly that width so each duration
    value gets its own bin, and two boundary corrections apply. A real
    interval straddles one extra bin on average, so (a) divides by the
    mean minus one bin. And the single-bin cell of the histogram is
    depleted, because an interval clipping a bin edge only trips the
    threshold when enough of it lands inside; cells above it keep the
    exact geometric decay, so (b) drops the lowest occupied cell.
    Continuous samples get a span-based width and no corrections. For
    an exponential sample the fitted log-counts are then linear in
    duration with slope -rate in both cases.
    """
    d = np.asarray(durations, dtype=float)
    if d.size < min_count:
        raise InsufficientDataError(
            f"need at least {min_count} durations, got {d.size}"
        )
    if np.any(d <= 0):
        raise InvalidArgumentError("durations must be positive")

    w_min = float(np.min(d))
    ratios = d / w_min
    quantized = float(np.max(np.abs(ratios - np.round(ratios)))) < 1e-6
    w = w_min if quantized else float(np.percentile(d, 90)) / 30.0

    mean_d = float(np.mean(d))
    # skip the correction when every dwell sits in the lowest cell:
    # mean - w is then pure summation noise and 1/(mean - w) explodes
    if quantized and mean_d - w > 1e-9 * w:
        mean_d -= w
    rate_mean = 1.0 / mean_d
    se_mean = rate_mean / np.sqrt(d.size)

    k = np.round(d / w).astype(int)
    counts = np.bincount(k)
    ks = np.nonzero(counts >= 5)[0]
    ks = ks[ks > 0]
    if quantized and ks.size >= 3:
        ks = ks[1:]

    flags = ()
    if ks.size < 2:
        # degenerate histogram, semilog fit impossible; report (a)
        return FitResult(
            params={"rate": Param(rate_mean, se_mean, "Hz")},
            goodness=0.0,
            goodness_kind="rss",
            converged=True,
            n_points=int(d.size),
            flags=("non-exponential", "semilog-degenerate"),
            meta={
                "rate_inverse_mean_hz": rate_mean,
                "estimator": "inverse_mean",
            },
        )

    x = ks * w
    y = np.log(counts[ks].astype(float))
    wgt = np.sqrt(counts[ks].astype(float))
    coeffs, cov = np.polyfit(x, y, 1, w=wgt, cov="unscaled")
    # Poisson: var(log c) ~ 1/c, matching unit-variance scaled residuals
    rate_slope = -float(coeffs[0])
    se_slope = float(np.sqrt(cov[0, 0]))

    if rate_slope <= 0:
        flags = flags + ("non-exponential", "non-decaying-histogram")
    elif abs(rate_slope - rate_mean) > 0.25 * rate_mean:
        flags = flags + ("non-exponential",)

    resid = y - np.polyval(coeffs, x)
    return FitResult(
        params={"rate": Param(rate_mean, se_mean, "Hz")},
        goodness=float(np.sum((wgt * resid) ** 2)),
        goodness_kind="rss",
        converged=True,
        n_points=int(d.size),
        flags=flags,
        meta={
            "rate_inverse_mean_hz": rate_mean,
            "rate_semilog_hz": rate_slope,
            "estimator": "inverse_mean",
            "histogram_bins_used": int(ks.size),
        },
    )


def on_probability_threshold(record: IntervalRecord, trace: BinnedTrace) -> dict:
    """Fraction of bins above the record's threshold, boundary bins
    included. Carries the threshold-bias flag so downstream consumers
    do not mistake it for the model-based estimate."""
    on = trace.counts > record.threshold
    return {
        "on_probability": float(np.mean(on)),
        "flags": ["threshold-biased"],
        "threshold": record.threshold,
        "n_sigma": record.n_sigma,
    }


def intervals_csv_rows(record: IntervalRecord):
    """Rows for intervals.csv: (state, start_s, duration_s)."""
    return [(state, start, dur) for state, start, dur in record.runs]
