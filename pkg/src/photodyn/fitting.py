"""Nonlinear least-squares engine and the named model fits.

Every built-in model ships an analytic Jacobian; the generic entry
point nlls_fit handles weighting, covariance, and convergence
bookkeeping so the per-model wrappers stay thin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import find_peaks

from .core import BinnedTrace, FitResult, Histogram, Param, Spectrum
from .errors import AnalysisFailedError, FitFailedError, InvalidArgumentError

__all__ = [
    "ModelSpec",
    "MODELS",
    "model_spec",
    "nlls_fit",
    "fit_saturation",
    "fit_gaussian_histogram",
    "fit_odmr",
    "fit_pump_probe",
    "fit_sinusoid_180",
    "analyze_spectrum",
    "two_line_anticorrelation",
    "qe_lower_bound",
    "QEBound",
    "SpectrumAnalysis",
    "SPEED_OF_LIGHT_NM_THZ",
]

SPEED_OF_LIGHT_NM_THZ = 299792.458

_TINY = 1e-30  # open lower bound standing in for "strictly positive"


@dataclass(frozen=True)
class ModelSpec:
    """A fittable model: callable, analytic Jacobian, names, box bounds."""

    model_id: str
    param_names: tuple
    fn: Callable
    jac: Optional[Callable]
    lower: tuple
    upper: tuple

    def __post_init__(self):
        if not self.model_id:
            raise InvalidArgumentError("model_id must be non-empty")
        if len(set(self.param_names)) != len(self.param_names):
            raise InvalidArgumentError("parameter names must be unique")
        if not (len(self.lower) == len(self.upper) == len(self.param_names)):
            raise InvalidArgumentError("bounds must match parameter count")

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def has_jacobian(self) -> bool:
        return self.jac is not None


# ---------------------------------------------------------------------------
# model functions


def _saturation(x, p):
    i_inf, p_sat = p
    return i_inf * x / (x + p_sat)


def _saturation_jac(x, p):
    i_inf, p_sat = p
    den = x + p_sat
    return np.column_stack([x / den, -i_inf * x / den**2])


def _gaussian(x, p):
    amp, center, sigma = p
    return amp * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def _gaussian_jac(x, p):
    amp, center, sigma = p
    u = (x - center) / sigma
    e = np.exp(-0.5 * u**2)
    return np.column_stack([e, amp * e * u / sigma, amp * e * u**2 / sigma])


def _lorentzian_dip(x, p):
    baseline, depth, f0, fwhm = p
    g = 0.25 * fwhm**2
    return baseline - depth * g / ((x - f0) ** 2 + g)


def _lorentzian_dip_jac(x, p):
    baseline, depth, f0, fwhm = p
    d2 = (x - f0) ** 2
    g = 0.25 * fwhm**2
    u = d2 + g
    return np.column_stack(
        [
            np.ones_like(x),
            -g / u,
            -depth * g * 2.0 * (x - f0) / u**2,
            -depth * 0.5 * fwhm * d2 / u**2,
        ]
    )


def _exp_recovery(x, p):
    amp, offset, tau = p
    return offset + amp * np.exp(-x / tau)


def _exp_recovery_jac(x, p):
    amp, offset, tau = p
    e = np.exp(-x / tau)
    return np.column_stack([e, np.ones_like(x), amp * e * x / tau**2])


_DEG = np.pi / 180.0


def _sinusoid_180(x, p):
    mean, amp, theta0 = p
    return mean + amp * np.cos(2.0 * (x - theta0) * _DEG)


def _sinusoid_180_jac(x, p):
    mean, amp, theta0 = p
    arg = 2.0 * (x - theta0) * _DEG
    return np.column_stack(
        [np.ones_like(x), np.cos(arg), amp * np.sin(arg) * 2.0 * _DEG]
    )


def _double_gaussian(x, p):
    a1, c1, s1, a2, c2, s2, baseline = p
    return (
        a1 * np.exp(-0.5 * ((x - c1) / s1) ** 2)
        + a2 * np.exp(-0.5 * ((x - c2) / s2) ** 2)
        + baseline
    )


def _double_gaussian_jac(x, p):
    a1, c1, s1, a2, c2, s2, baseline = p
    u1 = (x - c1) / s1
    u2 = (x - c2) / s2
    e1 = np.exp(-0.5 * u1**2)
    e2 = np.exp(-0.5 * u2**2)
    return np.column_stack(
        [
            e1,
            a1 * e1 * u1 / s1,
            a1 * e1 * u1**2 / s1,
            e2,
            a2 * e2 * u2 / s2,
            a2 * e2 * u2**2 / s2,
            np.ones_like(x),
        ]
    )


_INF = np.inf

MODELS = {
    "saturation": ModelSpec(
        "saturation", ("I_inf", "P_sat"), _saturation, _saturation_jac,
        (0.0, _TINY), (_INF, _INF),
    ),
    "gaussian": ModelSpec(
        "gaussian", ("amp", "center", "sigma"), _gaussian, _gaussian_jac,
        (0.0, -_INF, _TINY), (_INF, _INF, _INF),
    ),
    "lorentzian_dip": ModelSpec(
        "lorentzian_dip", ("baseline", "depth", "f0", "fwhm"),
        _lorentzian_dip, _lorentzian_dip_jac,
        (-_INF, -_INF, -_INF, _TINY), (_INF, _INF, _INF, _INF),
    ),
    "exp_recovery": ModelSpec(
        "exp_recovery", ("amp", "offset", "tau"), _exp_recovery, _exp_recovery_jac,
        (-_INF, -_INF, _TINY), (_INF, _INF, _INF),
    ),
    "sinusoid_180": ModelSpec(
        "sinusoid_180", ("mean", "amplitude", "theta0"),
        _sinusoid_180, _sinusoid_180_jac,
        (-_INF, 0.0, -_INF), (_INF, _INF, _INF),
    ),
    "double_gaussian": ModelSpec(
        "double_gaussian",
        ("amp1", "center1", "sigma1", "amp2", "center2", "sigma2", "baseline"),
        _double_gaussian, _double_gaussian_jac,
        (0.0, -_INF, _TINY, 0.0, -_INF, _TINY, -_INF),
        (_INF, _INF, _INF, _INF, _INF, _INF, _INF),
    ),
}


def model_spec(model_id: str) -> ModelSpec:
    try:
        return MODELS[model_id]
    except KeyError:
        raise InvalidArgumentError(f"unknown model {model_id!r}") from None


# ---------------------------------------------------------------------------
# generic engine


def nlls_fit(
    spec: ModelSpec,
    x: Sequence[float],
    y: Sequence[float],
    y_err: Optional[Sequence[float]] = None,
    start: Optional[Sequence[float]] = None,
    units: Optional[Sequence[str] | dict] = None,
) -> FitResult:
    """Weighted least squares for one model.

    Uncertainties come from the Jacobian at the optimum and are scaled
    by the reduced chi-square when no y_err is supplied. Data are
    sorted internally so the result does not depend on input order.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgumentError("x and y must be 1-d arrays of equal length")
    k = spec.n_params
    if x.size < k + 1:
        raise InvalidArgumentError(
            f"need at least {k + 1} points to fit {k} parameters, got {x.size}"
        )
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidArgumentError("x and y must be finite")
    if y_err is not None:
        y_err = np.asarray(y_err, dtype=float)
        if y_err.shape != y.shape or np.any(y_err <= 0):
            raise InvalidArgumentError("y_err must be positive and match y")

    order = np.lexsort((y, x))
    x, y = x[order], y[order]
    if y_err is not None:
        y_err = y_err[order]
    if start is None:
        raise InvalidArgumentError("start parameters are required")
    p0 = np.asarray(start, dtype=float)
    if p0.size != k:
        raise InvalidArgumentError(f"start must have {k} entries")

    w = 1.0 if y_err is None else 1.0 / y_err

    def resid(p):
        return (spec.fn(x, p) - y) * w

    kwargs = {}
    if spec.jac is not None:
        if y_err is None:
            kwargs["jac"] = lambda p: spec.jac(x, p)
        else:
            kwargs["jac"] = lambda p: spec.jac(x, p) * w[:, None]

    res = least_squares(
        resid,
        np.clip(p0, spec.lower, spec.upper),
        bounds=(spec.lower, spec.upper),
        method="trf",
        xtol=1e-10,
        ftol=1e-12,
        gtol=1e-12,
        max_nfev=200 * (k + 1),
        **kwargs,
    )

    jac = np.atleast_2d(res.jac)
    sv = np.linalg.svd(jac, compute_uv=False)
    if sv[0] == 0.0 or sv[-1] / sv[0] < 1e-13:
        raise FitFailedError(f"singular Jacobian in {spec.model_id} fit")

    rss = float(2.0 * res.cost)
    dof = x.size - k
    cov = np.linalg.inv(jac.T @ jac)
    if y_err is None:
        cov = cov * (rss / dof)
    perr = np.sqrt(np.diag(cov))

    if units is None:
        units = [""] * k
    elif isinstance(units, dict):
        units = [units.get(name, "") for name in spec.param_names]
    params = {
        name: Param(float(v), float(e), u)
        for name, v, e, u in zip(spec.param_names, res.x, perr, units)
    }
    converged = bool(res.status > 0)
    return FitResult(
        params=params,
        goodness=rss,
        goodness_kind="rss",
        converged=converged,
        n_points=int(x.size),
        flags=() if converged else ("max-iterations",),
        meta={"model_id": spec.model_id},
    )


# ---------------------------------------------------------------------------
# named fits


def fit_saturation(powers_uw: Sequence[float], rates_mcs: Sequence[float]) -> FitResult:
    """Count rate vs excitation power, I(P) = I_inf * P / (P + P_sat).

    Powers in microwatts, rates in Mc/s.
    """
    p = np.asarray(powers_uw, dtype=float)
    r = np.asarray(rates_mcs, dtype=float)
    i0 = float(np.max(r)) * 1.2 + 1e-12
    half = 0.5 * np.max(r)
    above = np.nonzero(r >= half)[0]
    psat0 = float(p[above[0]]) if above.size else float(np.median(p))
    out = nlls_fit(
        MODELS["saturation"], p, r, start=(i0, max(psat0, 1e-6)),
        units=("Mc/s", "uW"),
    )
    i_inf, p_sat = out.value("I_inf"), out.value("P_sat")
    out.meta["half_power_ratio"] = float(
        _saturation(np.array([p_sat]), (i_inf, p_sat))[0] / i_inf
    )
    return out


def fit_gaussian_histogram(hist: Histogram) -> FitResult:
    """Gaussian profile of a histogram; reports center, fwhm and two_sigma.

    Requires at least 5 occupied bins.
    """
    occupied = int(np.count_nonzero(hist.counts))
    if occupied < 5:
        raise InvalidArgumentError(f"need >= 5 occupied bins, got {occupied}")
    xc = hist.centers()
    yc = hist.counts.astype(float)
    total = yc.sum()
    mean = float((xc * yc).sum() / total)
    var = float((yc * (xc - mean) ** 2).sum() / total)
    sigma0 = max(np.sqrt(var), 0.25 * float(np.min(hist.widths())))
    out = nlls_fit(
        MODELS["gaussian"], xc, yc, start=(float(yc.max()), mean, sigma0)
    )
    sigma = out.value("sigma")
    serr = out.error("sigma")
    fwhm_per_sigma = 2.0 * np.sqrt(2.0 * np.log(2.0))
    params = dict(out.params)
    params["fwhm"] = Param(fwhm_per_sigma * sigma, fwhm_per_sigma * serr)
    params["two_sigma"] = Param(2.0 * sigma, 2.0 * serr)
    flags = out.flags
    if sigma < 0.5 * float(np.median(hist.widths())):
        flags = flags + ("width-below-resolution",)
    return FitResult(
        params=params,
        goodness=out.goodness,
        goodness_kind="rss",
        converged=out.converged,
        n_points=out.n_points,
        flags=flags,
        meta=out.meta,
    )


def fit_odmr(freqs_ghz: Sequence[float], contrast: Sequence[float]) -> FitResult:
    """Lorentzian resonance on a flat baseline.

    Works for either sign: a dip has positive depth, a peak negative.
    Reports f0 (GHz), contrast_peak = |depth|, fwhm (GHz).
    """
    f = np.asarray(freqs_ghz, dtype=float)
    y = np.asarray(contrast, dtype=float)
    base0 = float(np.median(y))
    lo, hi = float(np.min(y)), float(np.max(y))
    # pick the larger excursion from the baseline as the resonance
    if base0 - lo >= hi - base0:
        depth0, f00 = base0 - lo, float(f[np.argmin(y)])
    else:
        depth0, f00 = base0 - hi, float(f[np.argmax(y)])
    span = float(f.max() - f.min())
    out = nlls_fit(
        MODELS["lorentzian_dip"], f, y,
        start=(base0, depth0, f00, span / 4.0),
        units=("", "", "GHz", "GHz"),
    )
    depth, derr = out.value("depth"), out.error("depth")
    params = dict(out.params)
    params["contrast_peak"] = Param(abs(depth), derr)
    params["fwhm"] = Param(abs(out.value("fwhm")), out.error("fwhm"), "GHz")
    return FitResult(
        params=params,
        goodness=out.goodness,
        goodness_kind="rss",
        converged=out.converged,
        n_points=out.n_points,
        flags=out.flags,
        meta=out.meta,
    )


_RECOVERY = ModelSpec(
    "recovery_growth",
    ("A", "T1"),
    lambda x, p: p[0] * (1.0 - np.exp(-x / p[1])),
    lambda x, p: np.column_stack(
        [1.0 - np.exp(-x / p[1]), -p[0] * np.exp(-x / p[1]) * x / p[1] ** 2]
    ),
    (-_INF, _TINY),
    (_INF, _INF),
)


def fit_pump_probe(transients: Sequence[tuple[float, BinnedTrace]]) -> FitResult:
    """Shelf relaxation time from pump / dark-delay / readout transients.

    transients is a list of (delay_s, readout trace) pairs. Each
    readout decays from its initial overshoot toward the illuminated
    steady level; the overshoot amplitude grows with delay as
    A*(1 - exp(-delay/T1)).

    Requires >= 5 delays spanning at least a factor of 20, enough to
    pin both the plateau and the bend of a two-parameter recovery.
    """
    if len(transients) < 5:
        raise InvalidArgumentError("need >= 5 delay points")
    delays = np.array([d for d, _ in transients], dtype=float)
    if delays.min() <= 0 or delays.max() / delays.min() < 20.0:
        raise InvalidArgumentError(
            "delays must be positive and span at least a factor of 20"
        )

    # The decay time inside the read window is set by the illuminated
    # dynamics, so one value serves every delay. Fit it where the
    # overshoot is largest (longest delay); short-delay windows are
    # nearly flat and cannot identify it on their own. With tau shared,
    # amplitude and offset per delay reduce to a linear solve.
    prepared = []
    for delay, trace in transients:
        t = trace.times_s() + 0.5 * trace.bin_width_s - trace.t0_s
        y = trace.counts.astype(float)
        prepared.append((float(delay), t, y))
    tau_read = None
    deferred = list(sorted(range(len(prepared)), key=lambda i: -prepared[i][0]))
    for i in deferred:
        _, t, y = prepared[i]
        a0 = float(y[0] - y[-1])
        c0 = float(y[-1])
        tau0 = max(t[-1] / 5.0, float(t[1] - t[0]))
        try:
            fit = nlls_fit(MODELS["exp_recovery"], t, y, start=(a0, c0, tau0))
        except FitFailedError:
            continue
        tau_read = fit.value("tau")
        break
    if tau_read is None:
        raise FitFailedError(
            "no read transient identifies the decay time inside the read window"
        )

    amps, steadies, contrasts = [], [], []
    for _, t, y in prepared:
        basis = np.column_stack([np.exp(-t / tau_read), np.ones_like(t)])
        (amp, off), *_ = np.linalg.lstsq(basis, y, rcond=None)
        amps.append(float(amp))
        steadies.append(float(off))
        early = amp + off
        contrasts.append(float(amp / early) if early > 0 else np.nan)

    amps = np.array(amps)
    a_sorted = amps[np.argsort(delays)]
    fit = nlls_fit(
        _RECOVERY, delays, amps,
        start=(float(a_sorted[-1]), float(np.median(delays))),
        units=("counts/bin", "s"),
    )
    a_full = fit.value("A")
    steady = float(np.mean(steadies))
    early = a_full + steady
    if early <= 0:
        raise FitFailedError("recovered early-time level is not positive")
    contrast = a_full / early
    # first order in A only; steady-level scatter is reported via meta
    contrast_err = steady * fit.error("A") / early**2

    flags = fit.flags
    # flag amplitude reversals larger than scatter about the model
    resid_scale = float(np.sqrt(fit.goodness / max(fit.n_points - 2, 1)))
    drops = np.diff(a_sorted)
    if np.any(drops < -3.0 * resid_scale):
        flags = flags + ("non-monotone-recovery",)

    params = dict(fit.params)
    params["T1"] = Param(fit.value("T1"), fit.error("T1"), "s")
    params["contrast"] = Param(float(contrast), float(abs(contrast_err)))
    return FitResult(
        params=params,
        goodness=fit.goodness,
        goodness_kind="rss",
        converged=fit.converged,
        n_points=fit.n_points,
        flags=flags,
        meta={
            "model_id": "recovery_growth",
            "per_delay_amplitude": [float(a) for a in amps],
            "per_delay_contrast": [float(c) for c in contrasts],
            "steady_level": steady,
            "read_decay_time_s": float(tau_read),
        },
    )


def fit_sinusoid_180(angles_deg: Sequence[float], values: Sequence[float]) -> FitResult:
    """180-degree-periodic modulation v = m + a*cos(2*(theta - theta0)).

    Angles must span at least two thirds of the 180-degree period;
    closing the period exactly would only repeat the first point.
    Extrema are reported in [0, 180). Constant data yields amplitude
    ~ 0 with the extrema flagged unidentifiable.
    """
    th = np.asarray(angles_deg, dtype=float)
    v = np.asarray(values, dtype=float)
    if th.size != v.size or th.size < 4:
        raise InvalidArgumentError("need matching angle/value arrays, >= 4 points")
    if th.max() - th.min() < 120.0 - 1e-9:
        raise InvalidArgumentError("angles must span >= 120 degrees")

    # linear pre-solve in (m, p, q) with v = m + p cos2theta + q sin2theta
    c2 = np.cos(2.0 * th * _DEG)
    s2 = np.sin(2.0 * th * _DEG)
    design = np.column_stack([np.ones_like(th), c2, s2])
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    m0, p0, q0 = coef
    a0 = float(np.hypot(p0, q0))
    theta0 = float(np.degrees(0.5 * np.arctan2(q0, p0)))

    scale = max(float(np.std(v)), abs(m0), 1e-12)
    if a0 < 1e-9 * scale:
        params = {
            "mean": Param(float(m0), float(np.std(v, ddof=1) / np.sqrt(th.size))),
            "amplitude": Param(a0, 0.0),
            "theta_min": Param(float("nan"), 0.0, "deg"),
            "theta_max": Param(float("nan"), 0.0, "deg"),
        }
        return FitResult(
            params=params, goodness=float(np.sum((v - m0) ** 2)),
            goodness_kind="rss", converged=True, n_points=int(th.size),
            flags=("extrema-unidentifiable",), meta={"model_id": "sinusoid_180"},
        )

    out = nlls_fit(
        MODELS["sinusoid_180"], th, v, start=(float(m0), a0, theta0),
        units=("", "", "deg"),
    )
    t0 = out.value("theta0") % 180.0
    terr = out.error("theta0")
    theta_max = t0
    theta_min = (t0 + 90.0) % 180.0
    params = dict(out.params)
    params["theta_max"] = Param(theta_max, terr, "deg")
    params["theta_min"] = Param(theta_min, terr, "deg")
    flags = out.flags
    if out.value("amplitude") < 2.0 * out.error("amplitude"):
        flags = flags + ("extrema-unidentifiable",)
    return FitResult(
        params=params, goodness=out.goodness, goodness_kind="rss",
        converged=out.converged, n_points=out.n_points, flags=flags,
        meta=out.meta,
    )


class QEBound(NamedTuple):
    value: float
    assumption: str
    flags: tuple


def qe_lower_bound(i_inf_mcs: float, eta: float, tau_ns: float) -> QEBound:
    """Quantum-efficiency lower bound 2 * I_inf * tau / eta.

    Assumes the saturated emission rate of an ideal two-level emitter,
    half the radiative rate. All inputs must be positive.
    """
    if i_inf_mcs <= 0 or eta <= 0 or tau_ns <= 0:
        raise InvalidArgumentError("all inputs must be positive")
    value = 2.0 * (i_inf_mcs * 1e6) * (tau_ns * 1e-9) / eta
    flags = ("out-of-model",) if value > 1.0 else ()
    return QEBound(
        value=value,
        assumption=(
            "saturated two-level emitter radiates at half its radiative "
            "rate; detected I_inf = eta * QE / (2 tau) gives QE >= 2 I_inf tau / eta"
        ),
        flags=flags,
    )


# ---------------------------------------------------------------------------
# spectrum analyses


@dataclass(frozen=True)
class SpectrumAnalysis:
    zpl_center_nm: float
    zpl2_center_nm: Optional[float]
    dw_factor: float
    gap_thz: Optional[float]
    flags: tuple
    fits: dict


_trapz = getattr(np, "trapezoid", None) or np.trapz


def _area(spec: Spectrum, lo_nm: float, hi_nm: float) -> float:
    w, c = spec.wavelengths_nm, spec.counts
    sel = (w >= lo_nm) & (w <= hi_nm)
    if sel.sum() < 2:
        return 0.0
    return float(_trapz(c[sel], w[sel]))


def _window(spec: Spectrum, center: float, half_width: float):
    sel = (spec.wavelengths_nm >= center - half_width) & (
        spec.wavelengths_nm <= center + half_width
    )
    return spec.wavelengths_nm[sel], spec.counts[sel]


def _try_double_zpl(x, y, c0):
    """Single vs double Gaussian around the main line; prefer the pair
    only when it is clearly resolved."""
    amp0 = float(y.max())
    sig0 = 0.05
    single = nlls_fit(MODELS["gaussian"], x, y, start=(amp0, c0, sig0))
    # start the pair on the two most prominent peaks when both show;
    # symmetric offsets around the maximum tend to find a broad blob
    # plus a sliver instead of the true doublet
    peaks, props = find_peaks(y, prominence=0.08 * float(y.max() - y.min()))
    if peaks.size >= 2:
        i1, i2 = sorted(peaks[np.argsort(props["prominences"])[-2:]])
        start = (float(y[i1]), float(x[i1]), 0.03,
                 float(y[i2]), float(x[i2]), 0.03, float(np.min(y)))
    else:
        start = (amp0, c0 - 0.05, sig0,
                 0.5 * amp0, c0 + 0.07, sig0, float(np.min(y)))
    try:
        double = nlls_fit(MODELS["double_gaussian"], x, y, start=start)
    except FitFailedError:
        return single, None
    sep = abs(double.value("center2") - double.value("center1"))
    cleanly_split = (
        double.converged
        and single.goodness > 4.0 * double.goodness
        and sep > 0.03
        and min(double.value("amp1"), double.value("amp2")) > 0.05 * amp0
    )
    return single, (double if cleanly_split else None)


def analyze_spectrum(
    spec: Spectrum,
    zpl_band_nm: float = 2.0,
    total_band_nm: tuple[float, float] = (560.0, 700.0),
) -> SpectrumAnalysis:
    """Emission-spectrum summary: line center(s), the weight of the
    zero-phonon line inside the configured band, and the frequency gap
    to the first phonon sideband.

    dw_factor integrates raw counts, not fitted profiles, over
    [center - zpl_band_nm, center + zpl_band_nm] against the total band.
    """
    w, c = spec.wavelengths_nm, spec.counts
    span = float(c.max() - c.min())
    if span <= 0:
        raise AnalysisFailedError("flat spectrum, no line found")
    peaks, props = find_peaks(c, prominence=0.05 * span)
    if peaks.size == 0:
        raise AnalysisFailedError("no line found above the noise floor")
    main = peaks[np.argmax(c[peaks])]
    c0 = float(w[main])

    x, y = _window(spec, c0, 0.6)
    flags: tuple = ()
    fits: dict = {}
    try:
        single, double = _try_double_zpl(x, y, c0)
    except FitFailedError:
        raise AnalysisFailedError("line profile fit failed")
    if double is not None:
        fits["zpl"] = double
        a1 = double.value("amp1") * double.value("sigma1")
        a2 = double.value("amp2") * double.value("sigma2")
        if a1 >= a2:
            zpl_center = double.value("center1")
            zpl2_center = double.value("center2")
        else:
            zpl_center = double.value("center2")
            zpl2_center = double.value("center1")
    else:
        fits["zpl"] = single
        zpl_center = single.value("center")
        zpl2_center = None

    # first sideband: next peak redward of the line, outside its fit window
    gap_thz = None
    red = peaks[(w[peaks] > zpl_center + 0.6)]
    if red.size:
        psb = red[np.argmax(c[red])]
        first_red = red[0]
        # prefer the nearest resolved sideband over a taller distant one
        if c[first_red] > 0.1 * c[psb]:
            psb = first_red
        xp, yp = _window(spec, float(w[psb]), 2.0)
        try:
            psb_fit = nlls_fit(
                MODELS["gaussian"], xp, yp,
                start=(float(yp.max()), float(w[psb]), 0.4),
            )
            fits["psb"] = psb_fit
            psb_center = psb_fit.value("center")
            gap_thz = abs(
                SPEED_OF_LIGHT_NM_THZ / zpl_center
                - SPEED_OF_LIGHT_NM_THZ / psb_center
            )
        except FitFailedError:
            flags = flags + ("psb-fit-failed",)
    else:
        flags = flags + ("psb-not-found",)

    zpl_area = _area(spec, zpl_center - zpl_band_nm, zpl_center + zpl_band_nm)
    total_area = _area(spec, *total_band_nm)
    if total_area <= 0:
        raise AnalysisFailedError("total band holds no signal")
    dw = zpl_area / total_area

    return SpectrumAnalysis(
        zpl_center_nm=float(zpl_center),
        zpl2_center_nm=None if zpl2_center is None else float(zpl2_center),
        dw_factor=float(dw),
        gap_thz=None if gap_thz is None else float(gap_thz),
        flags=flags,
        fits=fits,
    )


def two_line_anticorrelation(frames: Sequence[Spectrum]) -> dict:
    """Frame-by-frame areas of two competing lines and their Pearson
    correlation, plus the spread of the summed intensity.

    The two line profiles are fixed once, on the summed spectrum where
    both lines are guaranteed to show; each frame is then decomposed
    linearly into those two templates plus a flat floor. Free per-frame
    fits would be the wrong tool here: a frame dominated by one line
    cannot identify the other's profile, yet its near-zero area is
    exactly the signal.

    Requires >= 20 frames on a common wavelength grid, and the summed
    spectrum must resolve both lines.
    """
    if len(frames) < 20:
        raise InvalidArgumentError("need >= 20 frames")
    w = frames[0].wavelengths_nm
    for frame in frames[1:]:
        if frame.wavelengths_nm.shape != w.shape or not np.allclose(
            frame.wavelengths_nm, w
        ):
            raise InvalidArgumentError("frames must share one wavelength grid")
    summed = np.sum([f.counts for f in frames], axis=0).astype(float)

    c0 = float(w[np.argmax(summed)])
    try:
        _, double = _try_double_zpl(w, summed, c0)
    except FitFailedError as exc:
        raise AnalysisFailedError("line profile fit failed on the summed "
                                  "spectrum") from exc
    if double is None:
        raise AnalysisFailedError(
            "summed spectrum does not resolve two lines"
        )
    comps = sorted(
        [
            (double.value("center1"), double.value("sigma1")),
            (double.value("center2"), double.value("sigma2")),
        ]
    )
    templates = np.column_stack(
        [
            np.exp(-0.5 * ((w - c) / s) ** 2)
            for c, s in comps
        ]
        + [np.ones_like(w)]
    )
    a1s, a2s = [], []
    for frame in frames:
        coef, *_ = np.linalg.lstsq(templates, frame.counts.astype(float),
                                   rcond=None)
        a1s.append(coef[0] * comps[0][1] * np.sqrt(2.0 * np.pi))
        a2s.append(coef[1] * comps[1][1] * np.sqrt(2.0 * np.pi))
    a1 = np.array(a1s)
    a2 = np.array(a2s)
    total = a1 + a2
    if np.std(a1) == 0.0 or np.std(a2) == 0.0:
        r = 0.0
    else:
        r = float(np.corrcoef(a1, a2)[0, 1])
    cv = float(np.std(total, ddof=1) / np.mean(total))
    return {
        "pearson_r": r,
        "total_intensity_cv": cv,
        "n_frames": len(frames),
        "centers_nm": [c for c, _ in comps],
        "areas_line1": a1.tolist(),
        "areas_line2": a2.tolist(),
    }
