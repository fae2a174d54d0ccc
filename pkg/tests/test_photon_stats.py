"""Photon-number mixture model.

The pmf assembly is dual-checked against a from-scratch oracle that
never touches scipy: Poisson terms via lgamma, weights written out
longhand. Fits are exercised on synthetic draws with known truth.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photodyn.core import Histogram
from photodyn.errors import FitFailedError, InvalidArgumentError
from photodyn.photon_stats import (
    MixtureParams,
    chi2_gof,
    fit_mixture,
    mixture_pmf,
    on_fraction,
    pmf_compare_rows,
    select_lambda_max,
)

from conftest import rng_for


def poisson_pmf_oracle(n, lam):
    return math.exp(n * math.log(lam) - lam - math.lgamma(n + 1))


def mixture_pmf_oracle(p_e, lam_b, gamma, lam_max, j_points, n_max):
    """Uniform-mode mixture written out with no shared code paths."""
    lams = [(j - 0.5) * lam_max / j_points for j in range(1, j_points + 1)]
    weights = [math.exp(-gamma * l) for l in lams]
    z = sum(weights)
    weights = [w / z for w in weights]
    out = []
    for n in range(n_max + 1):
        bg = (1.0 - p_e) * poisson_pmf_oracle(n, lam_b)
        em = p_e * sum(w * poisson_pmf_oracle(n, l) for w, l in zip(weights, lams))
        out.append(bg + em)
    return np.array(out)


def unit_hist(counts):
    counts = np.asarray(counts, dtype=np.int64)
    return Histogram(np.arange(counts.size + 1, dtype=float), counts)


def sample_mixture(rng, params, size):
    lam, w = params.component_grid()
    out = np.empty(size, dtype=np.int64)
    emitter = rng.random(size) < params.p_e
    out[~emitter] = rng.poisson(params.lambda_b, size=(~emitter).sum())
    comp = rng.choice(lam.size, size=int(emitter.sum()), p=w)
    out[emitter] = rng.poisson(lam[comp])
    return out


# ---------------------------------------------------------------------------
# pmf assembly


@pytest.mark.parametrize("gamma", [0.0, 0.05])
def test_pmf_matches_oracle(gamma):
    p = MixtureParams(p_e=0.3, lambda_b=1.2, gamma=gamma, lambda_max=25.0,
                      j_points=16)
    n_max = 70
    got = mixture_pmf(p, n_max)
    want = mixture_pmf_oracle(0.3, 1.2, gamma, 25.0, 16, n_max)
    np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-300)


def test_pmf_two_component_closed_form():
    p = MixtureParams(p_e=0.4, lambda_b=0.8, gamma=0.0, lambda_max=20.0,
                      j_points=2)
    got = mixture_pmf(p, 60)
    want = np.array([
        0.6 * poisson_pmf_oracle(n, 0.8)
        + 0.4 * 0.5 * (poisson_pmf_oracle(n, 5.0) + poisson_pmf_oracle(n, 15.0))
        for n in range(61)
    ])
    np.testing.assert_allclose(got, want, rtol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    p_e=st.floats(0.0, 1.0),
    lam_b=st.floats(0.05, 8.0),
    gamma=st.floats(0.0, 0.3),
    lam_max=st.floats(2.0, 60.0),
    j_points=st.integers(2, 96),
    mode=st.sampled_from(["uniform", "lorentzian_pushforward"]),
)
def test_pmf_normalization_property(p_e, lam_b, gamma, lam_max, j_points, mode):
    p = MixtureParams(p_e, lam_b, gamma, lam_max, j_points, mode)
    # generous support over BOTH components so truncation error cannot
    # mask a weight leak
    top = max(lam_max, lam_b)
    n_max = math.ceil(top + 9.0 * math.sqrt(top) + 10.0)
    pmf = mixture_pmf(p, n_max)
    assert np.all(pmf >= 0)
    assert abs(pmf.sum() - 1.0) <= 1e-9


def test_pmf_support_floor_enforced():
    p = MixtureParams(0.3, 1.0, 0.0, 30.0)
    floor = math.ceil(30.0 + 6.0 * math.sqrt(30.0))
    with pytest.raises(InvalidArgumentError):
        mixture_pmf(p, floor - 1)
    assert abs(mixture_pmf(p, floor).sum() - 1.0) <= 1e-6


def test_pushforward_weights_concentrate_near_top():
    p = MixtureParams(0.5, 1.0, 0.0, 30.0, j_points=64,
                      weight_mode="lorentzian_pushforward")
    lam, w = p.component_grid()
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    # the saturation pushforward piles weight at the resonant end
    assert w[-8:].sum() > w[:8].sum()


def test_component_grid_midpoints():
    p = MixtureParams(0.5, 1.0, 0.0, 16.0, j_points=4)
    lam, w = p.component_grid()
    np.testing.assert_allclose(lam, [2.0, 6.0, 10.0, 14.0])
    np.testing.assert_allclose(w, 0.25)


def test_params_validation():
    with pytest.raises(InvalidArgumentError):
        MixtureParams(1.5, 1.0, 0.0, 10.0)
    with pytest.raises(InvalidArgumentError):
        MixtureParams(0.5, 0.0, 0.0, 10.0)
    with pytest.raises(InvalidArgumentError):
        MixtureParams(0.5, 1.0, -0.1, 10.0)
    with pytest.raises(InvalidArgumentError):
        MixtureParams(0.5, 1.0, 0.0, 10.0, j_points=1)
    with pytest.raises(InvalidArgumentError):
        MixtureParams(0.5, 1.0, 0.0, 10.0, weight_mode="exact")


# ---------------------------------------------------------------------------
# fitting


def test_fit_recovers_on_fraction():
    truth = MixtureParams(p_e=0.30, lambda_b=1.0, gamma=0.0, lambda_max=28.0)
    draws = sample_mixture(rng_for(401), truth, 20_000)
    fit = fit_mixture(unit_hist(np.bincount(draws)), lambda_max=28.0)
    assert fit.converged
    assert fit.value("p_e") == pytest.approx(0.30, abs=0.02)
    assert fit.value("lambda_b") == pytest.approx(1.0, abs=0.1)
    assert fit.meta["model_id"] == "poisson_mixture"
    p = on_fraction(fit)
    assert p.value == fit.value("p_e")
    assert p.error > 0


def test_fit_pure_background_gives_tiny_p_e():
    draws = rng_for(402).poisson(2.0, size=20_000)
    fit = fit_mixture(unit_hist(np.bincount(draws)), lambda_max=25.0)
    assert fit.value("p_e") < 0.02


def test_fit_rejects_thin_or_degenerate_data():
    with pytest.raises(InvalidArgumentError):
        fit_mixture(unit_hist([10, 20, 5]), lambda_max=10.0)
    with pytest.raises(FitFailedError):
        fit_mixture(unit_hist([0, 5000, 0]), lambda_max=10.0)
    with pytest.raises(InvalidArgumentError):
        fit_mixture(Histogram(np.array([0.0, 0.5, 1.0]), np.array([800, 800])),
                    lambda_max=10.0)


def test_select_lambda_max_finds_generator_value():
    truth = MixtureParams(p_e=0.25, lambda_b=0.8, gamma=0.0, lambda_max=24.0)
    draws = sample_mixture(rng_for(403), truth, 40_000)
    hist = unit_hist(np.bincount(draws))
    best, curve = select_lambda_max(hist, (16.0, 20.0, 24.0, 28.0, 32.0))
    assert best.lambda_max == pytest.approx(24.0)
    bics = {row["lambda_max"]: row["bic"] for row in curve}
    assert bics[24.0] == min(bics.values())
    assert len(curve) == 5


def test_on_fraction_from_bare_params():
    p = on_fraction(MixtureParams(0.4, 1.0, 0.0, 10.0))
    assert p.value == 0.4
    assert math.isnan(p.error)


def test_grid_resolution_converged_at_default():
    base = dict(p_e=0.35, lambda_b=1.5, gamma=0.02, lambda_max=30.0)
    a = mixture_pmf(MixtureParams(j_points=64, **base), 80)
    b = mixture_pmf(MixtureParams(j_points=128, **base), 80)
    assert np.max(np.abs(a - b)) < 1e-3


# ---------------------------------------------------------------------------
# goodness of fit


def test_chi2_gof_calibration():
    truth = MixtureParams(p_e=0.3, lambda_b=1.0, gamma=0.0, lambda_max=22.0)
    draws = sample_mixture(rng_for(404), truth, 30_000)
    hist = unit_hist(np.bincount(draws))
    chi2, dof, p = chi2_gof(hist, truth)
    assert dof >= 1
    assert p > 1e-3  # the true model must not be rejected

    wrong = MixtureParams(p_e=0.6, lambda_b=1.0, gamma=0.0, lambda_max=22.0)
    _, _, p_wrong = chi2_gof(hist, wrong)
    assert p_wrong < 1e-6


def test_pmf_compare_rows_are_normalized_frequencies():
    truth = MixtureParams(p_e=0.3, lambda_b=1.0, gamma=0.0, lambda_max=22.0)
    draws = sample_mixture(rng_for(405), truth, 5_000)
    hist = unit_hist(np.bincount(draws))
    rows = pmf_compare_rows(hist, truth)
    ns, emp, mod = zip(*rows)
    assert list(ns) == list(range(hist.counts.size))
    assert sum(emp) == pytest.approx(1.0)
    assert sum(mod) == pytest.approx(1.0, abs=0.01)
