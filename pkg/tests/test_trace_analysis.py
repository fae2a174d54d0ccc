"""Threshold classification and dwell-time rate estimation."""

import numpy as np
import pytest

from photodyn.core import BinnedTrace
from photodyn.errors import InsufficientDataError, InvalidArgumentError
from photodyn.simulator import LaserDrive, Shelving, simulate_trace
from photodyn.trace_analysis import (
    classify_on_off,
    fit_interval_rate,
    intervals_csv_rows,
    on_probability_threshold,
)

from conftest import quiet_model, rng_for, unit_detection


def test_classify_hand_example():
    tr = BinnedTrace(1e-3, np.array([0, 9, 9, 0, 0, 9, 0]))
    rec = classify_on_off(tr, bg_mean=0.0, bg_sigma=1.0, n_sigma=3.0)
    assert rec.threshold == pytest.approx(3.0)
    # first and last runs touch the record boundary and are censored
    assert sorted(rec.on_durations) == [1e-3, 2e-3]
    assert list(rec.off_durations) == [2e-3]
    states = [s for s, _, _ in rec.runs]
    assert states == ["on", "off", "on"]


def test_classify_scale_equivariance():
    counts = np.array([0, 9, 9, 0, 0, 9, 0, 0, 9, 9, 9, 0])
    a = classify_on_off(BinnedTrace(1e-3, counts), 0.0, 1.0)
    b = classify_on_off(BinnedTrace(2e-3, counts), 0.0, 1.0)
    np.testing.assert_allclose(np.sort(b.on_durations), 2 * np.sort(a.on_durations))
    np.testing.assert_allclose(np.sort(b.off_durations), 2 * np.sort(a.off_durations))


def test_classify_validation():
    with pytest.raises(InvalidArgumentError):
        classify_on_off(BinnedTrace(1e-3, np.array([1, 2])), 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        classify_on_off(BinnedTrace(1e-3, np.array([1, 2, 3])), 0.0, -1.0)


def test_on_probability_counts_boundary_bins():
    tr = BinnedTrace(1e-3, np.array([0, 9, 9, 0, 0, 9, 0]))
    rec = classify_on_off(tr, 0.0, 1.0, n_sigma=3.0)
    out = on_probability_threshold(rec, tr)
    assert out["on_probability"] == pytest.approx(3 / 7)
    assert "threshold-biased" in out["flags"]


def test_on_probability_monotone_in_threshold():
    rng = rng_for(301)
    counts = rng.poisson(12.0, size=4000) + rng.integers(0, 30, size=4000)
    tr = BinnedTrace(1e-3, counts)
    probs = []
    for n_sigma in (1.0, 2.0, 3.0, 4.0, 5.0, 6.0):
        rec = classify_on_off(tr, 12.0, np.sqrt(12.0), n_sigma=n_sigma)
        probs.append(on_probability_threshold(rec, tr)["on_probability"])
    assert all(b <= a for a, b in zip(probs, probs[1:]))


def test_fit_interval_rate_continuous_exponential():
    rng = rng_for(302)
    rate = 40.0
    durations = rng.exponential(1.0 / rate, size=2000)
    fit = fit_interval_rate(durations)
    assert fit.converged
    assert fit.value("rate") == pytest.approx(rate, rel=0.06)
    assert fit.meta["estimator"] == "inverse_mean"
    # the histogram-slope cross-check agrees, so no shape flag
    assert fit.meta["rate_semilog_hz"] == pytest.approx(rate, rel=0.25)
    assert "non-exponential" not in fit.flags


def test_fit_interval_rate_quantized_bias_correction():
    """Dwells measured through the classifier via a simulated shelving
    telegraph: estimates must land on the generator rates even though
    durations only exist as whole bins."""
    entry, escape = 40.0, 100.0
    # gate = s/(1+s) with s = 1e4; kappa_up = entry/gate keeps the
    # effective entry rate at exactly 40 Hz
    m = quiet_model(shelving=Shelving(kappa_up_hz=entry * (1 + 1e-4),
                                      d_up_hz=escape))
    det = unit_detection(background_cps=5e3)
    drive = LaserDrive(p_res_uw=7.6e4)
    tr = simulate_trace(m, det, drive, 60.0, 1e-3, seed=901)
    rec = classify_on_off(tr, bg_mean=5.0, bg_sigma=np.sqrt(5.0), n_sigma=3.0)
    on = fit_interval_rate(rec.on_durations)
    off = fit_interval_rate(rec.off_durations)
    assert on.value("rate") == pytest.approx(entry, rel=0.12)
    assert off.value("rate") == pytest.approx(escape, rel=0.12)


def test_fit_interval_rate_rejects_bad_input():
    with pytest.raises(InsufficientDataError):
        fit_interval_rate(np.full(10, 1e-3))
    with pytest.raises(InvalidArgumentError):
        fit_interval_rate(np.array([1e-3] * 60 + [0.0]))


def test_fit_interval_rate_degenerate_single_cell():
    fit = fit_interval_rate(np.full(60, 5e-3))
    assert "semilog-degenerate" in fit.flags
    assert fit.value("rate") == pytest.approx(200.0)


def test_fit_interval_rate_flags_non_exponential():
    rng = rng_for(303)
    durations = rng.uniform(5e-3, 10e-3, size=2000)
    fit = fit_interval_rate(durations)
    assert "non-exponential" in fit.flags


def test_intervals_csv_rows_shape():
    tr = BinnedTrace(1e-3, np.array([0, 9, 9, 0, 0, 9, 0]))
    rec = classify_on_off(tr, 0.0, 1.0)
    rows = intervals_csv_rows(rec)
    assert all(len(r) == 3 for r in rows)
    states = {r[0] for r in rows}
    assert states <= {"on", "off"}
