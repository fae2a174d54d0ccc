"""Run-directory persistence and the analysis stage registry.

A run directory is the only interface between simulation and analysis:
raw series as CSV (or the binary tag format), `run.json` as the
manifest, analysis outputs as JSON/CSV next to them. Everything written
here is deterministic: no timestamps, sorted JSON keys, repr-formatted
floats.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, is_dataclass
from pathlib import Path

import numpy as np

from ._version import __version__
from .core import (
    BinnedTrace,
    FitResult,
    Histogram,
    Spectrum,
    load_timetags,
    make_histogram,
    read_spectrum_csv,
    read_trace_csv,
    save_timetags,
    write_spectrum_csv,
    write_trace_csv,
)
from .correlation import fit_g2, g2_histogram, write_g2_csv
from .errors import (
    AnalysisFailedError,
    DataIOError,
    InsufficientDataError,
    InvalidArgumentError,
    PhotodynError,
)
from .fitting import (
    analyze_spectrum,
    fit_gaussian_histogram,
    fit_odmr,
    fit_pump_probe,
    fit_saturation,
    fit_sinusoid_180,
    qe_lower_bound,
    two_line_anticorrelation,
)
from .photon_stats import (
    chi2_gof,
    fit_mixture,
    on_fraction,
    pmf_compare_rows,
    select_lambda_max,
)
from .protocols import (
    AngleRecord,
    AngleSweep,
    ODMRRecord,
    ODMRSweep,
    PLERecord,
    PLEScan,
    PumpProbe,
    PumpProbeRecord,
    SaturationRecord,
    SaturationSweep,
    SpectrumFrames,
    SpectrumJob,
    TimeTagJob,
    TraceJob,
    ple_peak_positions,
)
from .trace_analysis import (
    classify_on_off,
    fit_interval_rate,
    intervals_csv_rows,
    on_probability_threshold,
)

__all__ = [
    "protocol_kind",
    "persist_run",
    "load_manifest",
    "analyze_run",
    "axis_values",
    "STAGE_NAMES",
    "DEFAULT_STAGES",
]

_KINDS = {
    TraceJob: "trace",
    TimeTagJob: "timetags",
    PLEScan: "ple",
    SaturationSweep: "saturation",
    PumpProbe: "pump_probe",
    ODMRSweep: "odmr",
    AngleSweep: "angle",
    SpectrumJob: "spectrum",
    SpectrumFrames: "spectrum_frames",
}


def protocol_kind(protocol) -> str:
    kind = _KINDS.get(type(protocol))
    if kind is None:
        raise InvalidArgumentError(f"unknown protocol type {type(protocol).__name__}")
    return kind


def _jsonable(obj):
    if isinstance(obj, FitResult):
        return obj.to_jsonable()
    if hasattr(obj, "to_jsonable"):
        return obj.to_jsonable()
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                        else v for v in row])


def _read_csv_columns(path: Path) -> dict:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            cols = {name: [] for name in header}
            for row in reader:
                for name, cell in zip(header, row):
                    cols[name].append(float(cell))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except (StopIteration, ValueError) as exc:
        raise DataIOError(f"malformed CSV {path}: {exc}") from exc
    return {k: np.asarray(v) for k, v in cols.items()}


# ---------------------------------------------------------------------------
# persistence


def persist_run(run_dir, record, *, protocol, model, detection, analysis,
                seed, config_hash) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    kind = protocol_kind(protocol)

    if kind == "trace":
        write_trace_csv(record, run_dir / "trace.csv")
    elif kind == "timetags":
        save_timetags(record, run_dir / "timetags.ptt")
    elif kind == "ple":
        header = ["detuning_ghz"] + [f"scan_{i}" for i in range(record.counts.shape[0])]
        rows = [
            [record.detunings_ghz[j]] + record.counts[:, j].tolist()
            for j in range(record.detunings_ghz.size)
        ]
        _write_csv(run_dir / "ple.csv", header, rows)
    elif kind == "saturation":
        _write_csv(
            run_dir / "saturation.csv",
            ["power_uw", "rate_mcs", "on_time_s", "counts"],
            zip(record.powers_uw, record.rates_mcs, record.on_time_s,
                record.counts.tolist()),
        )
    elif kind == "pump_probe":
        rows = []
        for delay, trace in zip(record.delays_s, record.transients):
            for i, c in enumerate(trace.counts):
                rows.append((float(delay), i * trace.bin_width_s, int(c)))
        _write_csv(run_dir / "pump_probe.csv", ["delay_s", "time_s", "counts"], rows)
    elif kind == "odmr":
        _write_csv(
            run_dir / "odmr.csv",
            ["freq_ghz", "pl_on_cps", "pl_off_cps", "contrast", "pl_change_sign"],
            zip(record.freqs_ghz, record.pl_on_cps, record.pl_off_cps,
                record.contrast, record.pl_change_sign.tolist()),
        )
    elif kind == "angle":
        _write_csv(run_dir / "angle.csv", ["theta_deg", "rate_cps"],
                   zip(record.thetas_deg, record.rates_cps))
    elif kind == "spectrum":
        write_spectrum_csv(record, run_dir / "spectrum.csv")
    elif kind == "spectrum_frames":
        header = ["wavelength_nm"] + [f"frame_{i}" for i in range(len(record))]
        grid = record[0].wavelengths_nm
        rows = [
            [grid[j]] + [float(sp.counts[j]) for sp in record]
            for j in range(grid.size)
        ]
        _write_csv(run_dir / "frames.csv", header, rows)

    proto_params = asdict(protocol)
    manifest = {
        "format": "photodyn-run/1",
        "version": __version__,
        "protocol": kind,
        "seed": seed,
        "config_hash": config_hash,
        "detection": asdict(detection),
        "model": {
            "lifetime_ns": model.lifetime_ns,
            "debye_waller": model.debye_waller,
            "p_sat_uw": model.p_sat_uw,
            "i_inf_target_mcs": model.i_inf_target_mcs,
            "sigma_inh_ghz": model.sigma_inh_ghz,
            "detuning_mode": model.detuning_mode,
        },
        "protocol_params": proto_params,
        "analysis": list(analysis),
    }
    _write_json(run_dir / "run.json", manifest)
    return run_dir


def load_manifest(run_dir) -> dict:
    path = Path(run_dir) / "run.json"
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataIOError(f"malformed manifest {path}: {exc}") from exc
    if manifest.get("format") != "photodyn-run/1":
        raise DataIOError(f"{path}: not a photodyn run manifest")
    return manifest


def axis_values(value, path: str = "axis") -> np.ndarray:
    """A sweep axis: an explicit array, or {start, stop, step} /
    {start, stop, n [, spacing = "log"]}."""
    if isinstance(value, (list, tuple, np.ndarray)):
        return np.asarray(value, dtype=float)
    if isinstance(value, dict):
        extra = set(value) - {"start", "stop", "step", "n", "spacing"}
        if extra:
            raise InvalidArgumentError(f"{path}: unknown axis keys {sorted(extra)}")
        try:
            start, stop = float(value["start"]), float(value["stop"])
        except KeyError as exc:
            raise InvalidArgumentError(f"{path}: axis needs start and stop") from exc
        if "step" in value:
            step = float(value["step"])
            if step <= 0:
                raise InvalidArgumentError(f"{path}: step must be positive")
            return np.arange(start, stop + 0.5 * step, step)
        n = int(value.get("n", 0))
        if n < 2:
            raise InvalidArgumentError(f"{path}: axis needs step or n >= 2")
        if value.get("spacing", "linear") == "log":
            if start <= 0:
                raise InvalidArgumentError(f"{path}: log axis needs start > 0")
            return np.geomspace(start, stop, n)
        return np.linspace(start, stop, n)
    raise InvalidArgumentError(f"{path}: expected an array or an axis table")


# ---------------------------------------------------------------------------
# analysis stages
#
# Each stage reads raw files plus the manifest, writes its outputs, and
# returns the list of files written. Stage parameters come from the
# manifest's analysis entries.


def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise InvalidArgumentError(f"missing input {path}")
    return path


def _load_trace(run_dir: Path) -> BinnedTrace:
    return read_trace_csv(_require(run_dir, "trace.csv"))


def stage_intervals(run_dir: Path, manifest: dict, params: dict) -> list:
    trace = _load_trace(run_dir)
    bg_cps = float(manifest["detection"]["background_cps"])
    bg_mean = params.get("bg_mean", bg_cps * trace.bin_width_s)
    bg_sigma = params.get("bg_sigma", float(np.sqrt(bg_mean)))
    n_sigma = params.get("n_sigma", 3.0)
    record = classify_on_off(trace, bg_mean, bg_sigma, n_sigma=n_sigma)

    result = {
        "threshold_counts": record.threshold,
        "n_sigma": record.n_sigma,
        "n_on": len(record.on_durations),
        "n_off": len(record.off_durations),
        "on_probability": on_probability_threshold(record, trace),
    }
    min_count = int(params.get("min_count", 50))
    fitted_any = False
    for key, durations in (("on", record.on_durations), ("off", record.off_durations)):
        try:
            fit = fit_interval_rate(durations, min_count=min_count)
            result[key] = fit
            fitted_any = True
        except (InsufficientDataError, InvalidArgumentError) as exc:
            result[key] = {"error": str(exc)}
    if not fitted_any:
        raise AnalysisFailedError("neither on nor off interval set was fittable")

    _write_json(run_dir / "intervals.json", result)
    _write_csv(run_dir / "intervals.csv", ["state", "start_s", "duration_s"],
               intervals_csv_rows(record))
    return ["intervals.json", "intervals.csv"]


def stage_mixture(run_dir: Path, manifest: dict, params: dict) -> list:
    trace = _load_trace(run_dir)
    stride = int(params.get("stride", 1))
    counts = trace.counts[::stride].astype(float)
    n_max = int(counts.max())
    hist = make_histogram(counts, np.arange(n_max + 2, dtype=float))
    _write_csv(run_dir / "photon_hist.csv", ["n", "count"],
               zip(range(n_max + 1), hist.counts.tolist()))

    weight_mode = params.get("weight_mode", "uniform")
    j_points = int(params.get("j_points", 64))
    if "lambda_max_grid" in params:
        grid = axis_values(params["lambda_max_grid"], "lambda_max_grid")
    else:
        grid = np.linspace(0.55 * n_max, 1.1 * n_max, 12)
    best, curve = select_lambda_max(hist, grid, weight_mode, j_points)
    best_fit = next(row["fit"] for row in curve if row["lambda_max"] == best.lambda_max)
    chi2, dof, p_value = chi2_gof(hist, best)
    p_e = on_fraction(best_fit)

    _write_json(run_dir / "mixture_fit.json", {
        "fit": best_fit,
        "lambda_max": best.lambda_max,
        "weight_mode": weight_mode,
        "j_points": j_points,
        "stride": stride,
        "p_e": {"value": p_e.value, "error": p_e.error},
        "bic_curve": [
            {"lambda_max": row["lambda_max"], "bic": row["bic"],
             "converged": row["fit"] is not None}
            for row in curve
        ],
        "chi2": {"value": chi2, "dof": dof, "p_value": p_value},
    })
    _write_csv(run_dir / "pmf_compare.csv", ["n", "empirical", "model"],
               pmf_compare_rows(hist, best))
    return ["mixture_fit.json", "photon_hist.csv", "pmf_compare.csv"]


def stage_g2(run_dir: Path, manifest: dict, params: dict) -> list:
    duration_s = manifest.get("protocol_params", {}).get("duration_s")
    duration_ns = int(round(duration_s * 1e9)) if duration_s else None
    stream = load_timetags(_require(run_dir, "timetags.ptt"), duration_ns=duration_ns)
    bw = float(params.get("bin_width_ns", 1.0))
    max_lag = float(params.get("max_lag_ns", 50.0 * bw))
    curve = g2_histogram(stream, max_lag, bw)
    write_g2_csv(curve, run_dir / "g2.csv")
    outputs = ["g2.csv"]
    fit = fit_g2(curve, expected_tau_a_ns=params.get("expected_tau_a_ns"))
    _write_json(run_dir / "g2_fit.json", fit)
    outputs.append("g2_fit.json")
    return outputs


def stage_saturation_fit(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "saturation.csv"))
    keep = np.isfinite(cols["rate_mcs"])
    fit = fit_saturation(cols["power_uw"][keep], cols["rate_mcs"][keep])
    _write_json(run_dir / "saturation_fit.json", fit)
    return ["saturation_fit.json"]


def stage_qe_bound(run_dir: Path, manifest: dict, params: dict) -> list:
    path = _require(run_dir, "saturation_fit.json")
    with open(path) as fh:
        sat = json.load(fh)
    i_inf = sat["params"]["I_inf"]["value"]
    eta = float(params.get("eta", manifest["detection"]["eta"]))
    tau_ns = float(params.get("tau_ns", manifest["model"]["lifetime_ns"]))
    bound = qe_lower_bound(i_inf, eta, tau_ns)
    _write_json(run_dir / "qe_bound.json", {
        "qe_lower_bound": bound.value,
        "assumption": bound.assumption,
        "flags": list(bound.flags),
        "i_inf_mcs": i_inf,
        "eta": eta,
        "tau_ns": tau_ns,
    })
    return ["qe_bound.json"]


def stage_ple_envelope(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "ple.csv"))
    detunings = cols.pop("detuning_ghz")
    scans = [cols[k] for k in sorted(cols, key=lambda s: int(s.split("_")[1]))]
    counts = np.vstack(scans)
    peaks = detunings[np.argmax(counts, axis=1)]
    _write_csv(run_dir / "ple_peaks.csv", ["scan", "peak_ghz"],
               list(enumerate(peaks.tolist())))

    step = float(np.median(np.diff(detunings)))
    edges = np.concatenate([detunings - 0.5 * step, [detunings[-1] + 0.5 * step]])
    hist = make_histogram(peaks, edges)
    fit = fit_gaussian_histogram(hist)
    _write_json(run_dir / "ple_envelope.json", fit)
    return ["ple_envelope.json", "ple_peaks.csv"]


def stage_pump_probe_fit(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "pump_probe.csv"))
    delays = np.unique(cols["delay_s"])
    transients = []
    for d in delays:
        sel = cols["delay_s"] == d
        times = cols["time_s"][sel]
        order = np.argsort(times)
        bw = float(np.median(np.diff(times[order])))
        transients.append(
            (float(d), BinnedTrace(bin_width_s=bw,
                                   counts=cols["counts"][sel][order].astype(np.int64)))
        )
    fit = fit_pump_probe(transients)
    _write_json(run_dir / "pump_probe_fit.json", fit)
    return ["pump_probe_fit.json"]


def stage_odmr_fit(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "odmr.csv"))
    fit = fit_odmr(cols["freq_ghz"], cols["contrast"])
    sign_at_peak = int(cols["pl_change_sign"][int(np.argmax(cols["contrast"]))])
    out = fit.to_jsonable()
    out["pl_change_sign"] = sign_at_peak
    _write_json(run_dir / "odmr_fit.json", out)
    return ["odmr_fit.json"]


def stage_angle_fit(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "angle.csv"))
    fit = fit_sinusoid_180(cols["theta_deg"], cols["rate_cps"])
    _write_json(run_dir / "angle_fit.json", fit)
    return ["angle_fit.json"]


def stage_spectrum_analysis(run_dir: Path, manifest: dict, params: dict) -> list:
    spectrum = read_spectrum_csv(_require(run_dir, "spectrum.csv"))
    result = analyze_spectrum(spectrum)
    _write_json(run_dir / "spectrum_analysis.json", {
        "zpl_center_nm": result.zpl_center_nm,
        "zpl2_center_nm": result.zpl2_center_nm,
        "dw_factor": result.dw_factor,
        "gap_thz": result.gap_thz,
        "flags": list(result.flags),
        "fits": {k: v for k, v in result.fits.items()},
    })
    return ["spectrum_analysis.json"]


def stage_anticorrelation(run_dir: Path, manifest: dict, params: dict) -> list:
    cols = _read_csv_columns(_require(run_dir, "frames.csv"))
    grid = cols.pop("wavelength_nm")
    frames = [
        Spectrum(wavelengths_nm=grid, counts=cols[k])
        for k in sorted(cols, key=lambda s: int(s.split("_")[1]))
    ]
    result = two_line_anticorrelation(frames)
    _write_json(run_dir / "anticorrelation.json", result)
    _write_csv(
        run_dir / "frame_areas.csv",
        ["frame", "area_line1", "area_line2"],
        [
            (i, a1, a2)
            for i, (a1, a2) in enumerate(zip(result["areas_line1"],
                                             result["areas_line2"]))
        ],
    )
    return ["anticorrelation.json", "frame_areas.csv"]


_STAGES = {
    "intervals": stage_intervals,
    "mixture": stage_mixture,
    "g2": stage_g2,
    "saturation_fit": stage_saturation_fit,
    "qe_bound": stage_qe_bound,
    "ple_envelope": stage_ple_envelope,
    "pump_probe_fit": stage_pump_probe_fit,
    "odmr_fit": stage_odmr_fit,
    "angle_fit": stage_angle_fit,
    "spectrum_analysis": stage_spectrum_analysis,
    "anticorrelation": stage_anticorrelation,
}
STAGE_NAMES = frozenset(_STAGES)

DEFAULT_STAGES = {
    "trace": ("intervals", "mixture"),
    "timetags": ("g2",),
    "ple": ("ple_envelope",),
    "saturation": ("saturation_fit", "qe_bound"),
    "pump_probe": ("pump_probe_fit",),
    "odmr": ("odmr_fit",),
    "angle": ("angle_fit",),
    "spectrum": ("spectrum_analysis",),
    "spectrum_frames": ("anticorrelation",),
}


def analyze_run(run_dir, stages=None) -> dict:
    """Run analysis stages against an existing run directory.

    Stage failures are isolated: every requested stage runs, and the
    report records each outcome. The report is also written to
    analysis_report.json in the run directory.
    """
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    configured = {s["stage"]: {k: v for k, v in s.items() if k != "stage"}
                  for s in manifest.get("analysis", [])}
    if stages is None:
        names = list(configured) or list(
            DEFAULT_STAGES.get(manifest["protocol"], ())
        )
    else:
        names = list(stages)
    unknown = [n for n in names if n not in STAGE_NAMES]
    if unknown:
        raise InvalidArgumentError(
            f"unknown stages {unknown}; known: {sorted(STAGE_NAMES)}"
        )

    report = {"run": run_dir.name, "stages": {}}
    for name in names:
        entry = {"ok": False, "outputs": [], "error": None}
        try:
            entry["outputs"] = _STAGES[name](run_dir, manifest,
                                             configured.get(name, {}))
            entry["ok"] = True
        except PhotodynError as exc:
            entry["error"] = {"type": type(exc).__name__, "message": str(exc)}
        report["stages"][name] = entry
    _write_json(run_dir / "analysis_report.json", report)
    return report
