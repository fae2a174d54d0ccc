"""Photon-number histogram model: background Poissonian plus a weighted
continuum of emitter Poissonians, fitted by maximum likelihood with BIC
selection of the on-resonance mean.

This is the unbiased counterpart of the threshold ON fraction: the
emitter-event probability p_e is read off directly instead of being
distorted by a counts threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import chi2 as chi2_dist
from scipy.stats import poisson

from .core import FitResult, Histogram, Param
from .errors import FitFailedError, InvalidArgumentError

__all__ = [
    "MixtureParams",
    "mixture_pmf",
    "fit_mixture",
    "select_lambda_max",
    "on_fraction",
    "chi2_gof",
    "pmf_compare_rows",
]

_WEIGHT_MODES = ("uniform", "lorentzian_pushforward")
# fixed ratio of detuning spread to the power-broadened half width used
# by the pushforward weight shape
_PUSHFORWARD_SPREAD = 1.5


@dataclass(frozen=True)
class MixtureParams:
    p_e: float
    lambda_b: float
    gamma: float
    lambda_max: float
    j_points: int = 64
    weight_mode: str = "uniform"

    def __post_init__(self):
        if not 0.0 <= self.p_e <= 1.0:
            raise InvalidArgumentError("p_e must lie in [0, 1]")
        if self.lambda_b <= 0 or self.lambda_max <= 0:
            raise InvalidArgumentError("lambda_b and lambda_max must be positive")
        if self.gamma < 0:
            raise InvalidArgumentError("gamma must be >= 0")
        if self.j_points < 2:
            raise InvalidArgumentError("need at least 2 grid points")
        if self.weight_mode not in _WEIGHT_MODES:
            raise InvalidArgumentError(f"weight_mode must be one of {_WEIGHT_MODES}")

    def component_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint grid on (0, lambda_max] and normalized weights
        p(lambda_j) * exp(-gamma * lambda_j)."""
        j = np.arange(1, self.j_points + 1)
        lam = (j - 0.5) * self.lambda_max / self.j_points
        if self.weight_mode == "uniform":
            shape = np.ones_like(lam)
        else:
            # Gaussian detuning pushed through a Lorentzian line into
            # mean-count space: lambda = lambda_max / (1 + (delta/hwhm)^2)
            ratio = self.lambda_max / lam - 1.0
            delta_over_sigma = np.sqrt(ratio) / _PUSHFORWARD_SPREAD
            jac = self.lambda_max / (
                2.0 * lam**2 * np.sqrt(np.maximum(ratio, 1e-300))
            )
            shape = np.exp(-0.5 * delta_over_sigma**2) * jac
        w = shape * np.exp(-self.gamma * lam)
        total = w.sum()
        if total <= 0:
            raise InvalidArgumentError("weights sum to zero; gamma too large?")
        w = w / total
        assert abs(w.sum() - 1.0) < 1e-12
        return lam, w


def mixture_pmf(params: MixtureParams, n_max: int) -> np.ndarray:
    """P(n) for n = 0..n_max under the background-plus-continuum model.

    n_max must be at least lambda_max + 6 sqrt(lambda_max) so the
    truncated tail is negligible.
    """
    floor = math.ceil(params.lambda_max + 6.0 * math.sqrt(params.lambda_max))
    if n_max < floor:
        raise InvalidArgumentError(f"n_max must be >= {floor} for these parameters")
    n = np.arange(n_max + 1)
    lam, w = params.component_grid()
    emitter = w @ poisson.pmf(n[None, :], lam[:, None])
    return (1.0 - params.p_e) * poisson.pmf(n, params.lambda_b) + params.p_e * emitter


def _check_unit_hist(hist: Histogram) -> np.ndarray:
    edges = hist.edges
    expected = np.arange(edges.size, dtype=float)
    if not np.allclose(edges, expected, atol=1e-9):
        raise InvalidArgumentError(
            "histogram must have unit-width integer edges starting at 0"
        )
    return hist.counts


def _log_likelihood(counts: np.ndarray, params: MixtureParams) -> float:
    n = np.arange(counts.size)
    lam, w = params.component_grid()
    emitter = w @ poisson.pmf(n[None, :], lam[:, None])
    p = (1.0 - params.p_e) * poisson.pmf(n, params.lambda_b) + params.p_e * emitter
    occupied = counts > 0
    # floor keeps the objective finite when a cell underflows, so the
    # optimizer sees a steep slope instead of an infinite cliff
    return float(np.sum(counts[occupied] * np.log(np.maximum(p[occupied], 1e-300))))


def fit_mixture(
    hist: Histogram,
    lambda_max: float,
    weight_mode: str = "uniform",
    j_points: int = 64,
) -> FitResult:
    """Multinomial maximum-likelihood fit of (p_e, lambda_b, gamma) at
    fixed lambda_max. Multi-start; the best log-likelihood wins.

    Requires at least 10^3 recorded bins.
    """
    counts = _check_unit_hist(hist)
    total = hist.total
    if total < 1000:
        raise InvalidArgumentError(f"need >= 1000 recorded bins, got {total}")
    if np.count_nonzero(counts) < 2:
        raise FitFailedError("single occupied cell carries no mixture information")
    if counts.size - 1 < math.ceil(lambda_max + 6.0 * math.sqrt(lambda_max)):
        # extend the support so the model tail is represented
        pad = math.ceil(lambda_max + 6.0 * math.sqrt(lambda_max)) - (counts.size - 1)
        counts = np.concatenate([counts, np.zeros(pad, dtype=counts.dtype)])

    def neg_ll(x):
        p_e, lam_b, gamma = x
        try:
            params = MixtureParams(
                p_e=min(max(p_e, 0.0), 1.0),
                lambda_b=max(lam_b, 1e-9),
                gamma=max(gamma, 0.0),
                lambda_max=lambda_max,
                j_points=j_points,
                weight_mode=weight_mode,
            )
            ll = _log_likelihood(counts, params)
        except InvalidArgumentError:
            # weights underflow wholesale when the optimizer probes a
            # huge gamma; score the point as bad instead of raising
            return np.inf
        return np.inf if not np.isfinite(ll) else -ll

    n_vals = np.arange(counts.size)
    mean_n = float((n_vals * counts).sum() / total)
    mode_n = float(np.argmax(counts))
    lam_b_guesses = sorted({max(mode_n, 0.2), max(0.5 * mean_n, 0.2)})
    starts = []
    for lb in lam_b_guesses:
        for pe, g in ((0.05, 0.0), (0.2, 0.5), (0.5, 0.1)):
            starts.append((pe, lb, g))
    bounds = [(0.0, 1.0), (1e-9, None), (0.0, None)]

    best = None
    n_failed = 0
    for x0 in starts:
        res = minimize(neg_ll, x0, method="L-BFGS-B", bounds=bounds)
        if not np.isfinite(res.fun):
            n_failed += 1
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise FitFailedError(
            f"all {len(starts)} starts failed for lambda_max={lambda_max}"
        )

    p_opt = best.x
    logl = -float(best.fun)
    se, cov_flags = _mle_errors(neg_ll, p_opt)

    params = {
        "p_e": Param(float(p_opt[0]), se[0]),
        "lambda_b": Param(float(p_opt[1]), se[1], "counts/bin"),
        "gamma": Param(float(p_opt[2]), se[2]),
    }
    return FitResult(
        params=params,
        goodness=logl,
        goodness_kind="loglik",
        converged=bool(best.success),
        n_points=int(total),
        flags=cov_flags + (() if best.success else ("max-iterations",)),
        meta={
            "model_id": "poisson_mixture",
            "lambda_max": float(lambda_max),
            "j_points": int(j_points),
            "weight_mode": weight_mode,
            "weight_mode_note": "the component weight shape p(lambda') is a "
            "modeling assumption, not a measured quantity",
            "logL": logl,
            "n_starts": len(starts),
            "n_starts_failed": n_failed,
        },
    )


def _mle_errors(neg_ll, x_opt, rel_step: float = 1e-4):
    """Standard errors from a central finite-difference Hessian."""
    k = len(x_opt)
    h = np.maximum(np.abs(x_opt) * rel_step, 1e-7)
    hess = np.zeros((k, k))
    f0 = neg_ll(x_opt)

    def f(dx):
        return neg_ll(x_opt + dx)

    for i in range(k):
        ei = np.zeros(k)
        ei[i] = h[i]
        hess[i, i] = (f(ei) - 2.0 * f0 + f(-ei)) / h[i] ** 2
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(ei + ej) - f(ei - ej) - f(-ei + ej) + f(-ei - ej)
            ) / (4.0 * h[i] * h[j])
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)
        if np.any(diag < 0) or not np.all(np.isfinite(diag)):
            raise np.linalg.LinAlgError
        return np.sqrt(diag).tolist(), ()
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(hess)
        diag = np.abs(np.diag(cov))
        return np.sqrt(diag).tolist(), ("degenerate-covariance",)


def select_lambda_max(
    hist: Histogram,
    lambda_max_grid,
    weight_mode: str = "uniform",
    j_points: int = 64,
):
    """Scan lambda_max over a grid, minimizing BIC = 4 ln(n) - 2 logL.

    Returns (best MixtureParams, curve), where curve rows are dicts
    with lambda_max, bic and the underlying fit (None where it failed).
    """
    grid = np.asarray(lambda_max_grid, dtype=float)
    if grid.size < 3:
        raise InvalidArgumentError("lambda_max grid needs at least 3 points")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("lambda_max grid must be strictly increasing")

    n = hist.total
    penalty = 4.0 * math.log(n)
    curve = []
    for lm in grid:
        try:
            fit = fit_mixture(hist, float(lm), weight_mode, j_points)
            bic = penalty - 2.0 * fit.goodness
        except FitFailedError:
            fit, bic = None, math.inf
        curve.append({"lambda_max": float(lm), "bic": bic, "fit": fit})

    finite = [row for row in curve if row["fit"] is not None]
    if not finite:
        raise FitFailedError("mixture fit failed at every lambda_max grid point")
    best_row = min(finite, key=lambda row: row["bic"])
    fit = best_row["fit"]
    best = MixtureParams(
        p_e=fit.value("p_e"),
        lambda_b=fit.value("lambda_b"),
        gamma=fit.value("gamma"),
        lambda_max=best_row["lambda_max"],
        j_points=j_points,
        weight_mode=weight_mode,
    )
    return best, curve


def on_fraction(fitted) -> Param:
    """Emitter-event probability with its standard error.

    Accepts the FitResult from fit_mixture (preferred) or bare
    MixtureParams, in which case no error is available.
    """
    if isinstance(fitted, FitResult):
        return fitted.params["p_e"]
    if isinstance(fitted, MixtureParams):
        return Param(fitted.p_e, float("nan"))
    raise InvalidArgumentError("expected FitResult or MixtureParams")


def chi2_gof(hist: Histogram, params: MixtureParams, min_expected: float = 5.0):
    """Pearson chi-square of the histogram against the model, pooling
    sparse cells from the right. Returns (chi2, dof, p_value)."""
    counts = _check_unit_hist(hist).astype(float)
    total = counts.sum()
    floor_n = math.ceil(params.lambda_max + 6.0 * math.sqrt(params.lambda_max))
    pmf = mixture_pmf(params, max(counts.size - 1, floor_n))
    expected = total * pmf
    k = counts.size
    exp_cells, obs_cells = [], []
    acc_e = acc_o = 0.0
    for i in range(max(k, expected.size)):
        acc_e += expected[i] if i < expected.size else 0.0
        acc_o += counts[i] if i < k else 0.0
        if acc_e >= min_expected:
            exp_cells.append(acc_e)
            obs_cells.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0 or acc_o > 0:
        if exp_cells:
            exp_cells[-1] += acc_e
            obs_cells[-1] += acc_o
        else:
            exp_cells, obs_cells = [acc_e], [acc_o]
    exp_arr = np.array(exp_cells)
    obs_arr = np.array(obs_cells)
    # the model leaves a sliver of mass beyond the last cell; fold it in
    exp_arr[-1] += total - exp_arr.sum()
    chi2 = float(np.sum((obs_arr - exp_arr) ** 2 / exp_arr))
    dof = max(len(exp_cells) - 1 - 4, 1)
    p = float(chi2_dist.sf(chi2, dof))
    return chi2, dof, p


def pmf_compare_rows(hist: Histogram, params: MixtureParams):
    """(n, empirical, model) rows for pmf_compare.csv."""
    counts = _check_unit_hist(hist).astype(float)
    total = counts.sum()
    floor_n = math.ceil(params.lambda_max + 6.0 * math.sqrt(params.lambda_max))
    pmf = mixture_pmf(params, max(counts.size - 1, floor_n))
    rows = []
    for n in range(counts.size):
        rows.append((n, counts[n] / total, float(pmf[n])))
    return rows
