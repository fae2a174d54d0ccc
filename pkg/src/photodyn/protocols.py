"""Measurement protocols built on the slow-state engine.

Each descriptor bundles a sweep axis with its drive settings;
run_protocol dispatches on descriptor type and returns a typed record
set. Every sweep point derives an independent RNG substream from
(master seed, point index, repetition index), so points can be
reordered or parallelized without changing results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import BinnedTrace, Spectrum
from .errors import InvalidArgumentError
from .simulator import (
    DetectionModel,
    EmitterModel,
    EnvState,
    LaserDrive,
    PulseSequence,
    Timeline,
    emission_rate,
    evolve_timeline,
    initial_env,
    simulate_timetags,
    simulate_trace,
)

__all__ = [
    "TraceJob",
    "TimeTagJob",
    "PLEScan",
    "SaturationSweep",
    "PumpProbe",
    "ODMRSweep",
    "AngleSweep",
    "SpectrumJob",
    "SpectrumFrames",
    "PLERecord",
    "SaturationRecord",
    "PumpProbeRecord",
    "ODMRRecord",
    "AngleRecord",
    "SequenceRecord",
    "run_protocol",
    "ple_peak_positions",
]


def _rng(master_seed: int, point: int, rep: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(master_seed, point, rep)))


def _pmap(fn, n: int) -> list:
    """fn(i) for i in range(n), fanned out over PHOTODYN_THREADS workers.

    Each point draws randomness only from its own substream, so the
    assembled list is identical for any worker count.
    """
    threads = int(os.environ.get("PHOTODYN_THREADS", "1") or "1")
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=min(threads, n)) as pool:
        return list(pool.map(fn, range(n)))


def _check_axis(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise InvalidArgumentError(f"{name} sweep is empty")
    if arr.size > 1 and np.any(np.diff(arr) <= 0):
        raise InvalidArgumentError(f"{name} axis must be strictly increasing")
    return arr


# ---------------------------------------------------------------------------
# descriptors


@dataclass(frozen=True)
class TraceJob:
    """Single binned fluorescence trace under constant drive."""

    drive: LaserDrive
    duration_s: float = 1.0
    bin_width_s: float = 1e-3

    def __post_init__(self):
        if self.bin_width_s <= 0 or self.duration_s < self.bin_width_s:
            raise InvalidArgumentError("duration must cover at least one bin")


@dataclass(frozen=True)
class TimeTagJob:
    """Photon-resolved stream under constant drive."""

    drive: LaserDrive
    duration_s: float = 1.0
    event_cap: int = int(1e8)

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidArgumentError("duration must be positive")
        if self.event_cap < 1:
            raise InvalidArgumentError("event cap must be >= 1")


@dataclass(frozen=True)
class PLEScan:
    drive: LaserDrive
    detunings_ghz: Sequence[float]
    dwell_s: float = 10e-6
    n_scans: int = 200

    def __post_init__(self):
        if self.dwell_s <= 0:
            raise InvalidArgumentError("dwell must be positive")
        if self.n_scans < 1:
            raise InvalidArgumentError("need at least one scan")


@dataclass(frozen=True)
class SaturationSweep:
    drive: LaserDrive
    powers_uw: Sequence[float]
    duration_s: float = 0.2

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidArgumentError("duration must be positive")


@dataclass(frozen=True)
class PumpProbe:
    drive: LaserDrive  # pump and readout illumination
    delays_s: Sequence[float]
    pump_s: float = 25e-3
    read_s: float = 25e-3
    read_bin_s: float = 0.2e-3
    n_reps: int = 30

    def __post_init__(self):
        if min(self.pump_s, self.read_s, self.read_bin_s) <= 0:
            raise InvalidArgumentError("pump, read and bin durations must be positive")
        if self.read_s < 2 * self.read_bin_s:
            raise InvalidArgumentError("readout must cover at least two bins")
        if self.n_reps < 1:
            raise InvalidArgumentError("n_reps must be >= 1")


@dataclass(frozen=True)
class ODMRSweep:
    drive: LaserDrive  # mw_on/mw_freq are overridden per point
    freqs_ghz: Sequence[float]
    chunk_s: float = 0.25
    n_chunks: int = 8  # alternating MW-on / MW-off chunks per point

    def __post_init__(self):
        if self.chunk_s <= 0:
            raise InvalidArgumentError("chunk duration must be positive")
        if self.n_chunks < 2 or self.n_chunks % 2:
            raise InvalidArgumentError("n_chunks must be even and >= 2")


@dataclass(frozen=True)
class AngleSweep:
    drive: LaserDrive
    thetas_deg: Sequence[float]
    duration_s: float = 2.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise InvalidArgumentError("duration must be positive")


@dataclass(frozen=True)
class SpectrumJob:
    """Wavelength-resolved emission, accumulated over integration_s.

    The two pathways emit at nearby but distinct line centers; the
    sideband structure is an instrument-fixed template red of the line.
    """

    drive: LaserDrive
    integration_s: float = 10.0
    grid_nm: tuple = (560.0, 700.0, 0.02)
    line1_nm: float = 585.00
    line2_nm: float = 585.12
    line_sigma_nm: float = 0.035
    acoustic_gap_thz: float = 2.0
    acoustic_sigma_nm: float = 0.35

    def __post_init__(self):
        lo, hi, step = self.grid_nm
        if not (lo < hi and step > 0):
            raise InvalidArgumentError("bad wavelength grid")
        if self.integration_s <= 0:
            raise InvalidArgumentError("integration must be positive")


@dataclass(frozen=True)
class SpectrumFrames:
    """Consecutive short spectra of the line region only."""

    drive: LaserDrive
    n_frames: int = 40
    frame_s: float = 1.0
    grid_nm: tuple = (584.4, 585.7, 0.005)
    line1_nm: float = 585.00
    line2_nm: float = 585.12
    line_sigma_nm: float = 0.035

    def __post_init__(self):
        if self.n_frames < 1:
            raise InvalidArgumentError("need at least one frame")
        if self.frame_s <= 0:
            raise InvalidArgumentError("frame duration must be positive")


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class PLERecord:
    detunings_ghz: np.ndarray
    counts: np.ndarray  # (n_scans, n_points)
    dwell_s: float


@dataclass(frozen=True)
class SaturationRecord:
    powers_uw: np.ndarray
    rates_mcs: np.ndarray  # background-subtracted mean rate of ON stretches
    on_time_s: np.ndarray
    counts: np.ndarray


@dataclass(frozen=True)
class PumpProbeRecord:
    delays_s: np.ndarray
    transients: tuple  # BinnedTrace per delay, counts summed over reps
    n_reps: int


@dataclass(frozen=True)
class ODMRRecord:
    freqs_ghz: np.ndarray
    pl_on_cps: np.ndarray
    pl_off_cps: np.ndarray
    contrast: np.ndarray  # |on - off| / off
    pl_change_sign: np.ndarray  # +1 where MW raises PL, -1 where it lowers


@dataclass(frozen=True)
class AngleRecord:
    thetas_deg: np.ndarray
    rates_cps: np.ndarray
    duration_s: float


@dataclass(frozen=True)
class SequenceRecord:
    timelines: tuple  # one Timeline per executed segment, all repeats
    final_env: EnvState


# ---------------------------------------------------------------------------
# runners


def _run_ple(model, detection, job: PLEScan, seed) -> PLERecord:
    grid = _check_axis(job.detunings_ghz, "detuning")

    def one_scan(scan: int) -> np.ndarray:
        rng = _rng(seed, scan)
        env = initial_env(model, job.drive, rng)
        row = np.zeros(grid.size, dtype=np.int64)
        t = 0.0
        for i, det in enumerate(grid):
            drive = replace(job.drive, detuning_laser_ghz=float(det))
            tl, env = evolve_timeline(model, detection, drive, env, job.dwell_s, rng, t0_s=t)
            lam = tl.expected_counts(np.array([t, t + job.dwell_s]))[0]
            lam += detection.background_cps * job.dwell_s
            row[i] = rng.poisson(lam)
            t += job.dwell_s
        return row

    counts = np.stack(_pmap(one_scan, job.n_scans))
    return PLERecord(detunings_ghz=grid, counts=counts, dwell_s=job.dwell_s)


def ple_peak_positions(record: PLERecord) -> np.ndarray:
    """Per-scan location of the count maximum, in GHz."""
    idx = np.argmax(record.counts, axis=1)
    return record.detunings_ghz[idx]


def _run_saturation(model, detection, job: SaturationSweep, seed) -> SaturationRecord:
    powers = _check_axis(job.powers_uw, "power")

    def one_power(i: int) -> tuple:
        rng = _rng(seed, i)
        drive = replace(job.drive, p_res_uw=float(powers[i]))
        env = initial_env(model, drive, rng)
        tl, _ = evolve_timeline(model, detection, drive, env, job.duration_s, rng)
        nominal = emission_rate(
            model, detection, drive,
            EnvState(detuning_ghz=drive.detuning_laser_ghz),
        )
        on = (~tl.shelved) & (tl.rates_cps >= 0.5 * nominal)
        t_on = tl.time_where(on)
        if t_on <= 0:
            return np.nan, 0.0, 0
        lam = float(np.sum((tl.rates_cps * np.diff(tl.edges_s))[on]))
        lam += detection.background_cps * t_on
        c = int(rng.poisson(lam))
        return (c / t_on - detection.background_cps) / 1e6, t_on, c

    rows = _pmap(one_power, powers.size)
    rates = np.array([r[0] for r in rows])
    on_times = np.array([r[1] for r in rows])
    counts = np.array([r[2] for r in rows], dtype=np.int64)
    return SaturationRecord(
        powers_uw=powers, rates_mcs=rates, on_time_s=on_times, counts=counts
    )


def _run_pump_probe(model, detection, job: PumpProbe, seed) -> PumpProbeRecord:
    delays = _check_axis(job.delays_s, "delay")
    dark = replace(
        job.drive, p_res_uw=0.0, p_blue_uw=0.0, p_green_uw=0.0, mw_on=False
    )
    n_bins = int(round(job.read_s / job.read_bin_s))
    read_edges = np.arange(n_bins + 1) * job.read_bin_s

    def one_delay(i: int) -> BinnedTrace:
        delay = float(delays[i])
        lam = np.zeros(n_bins)
        for rep in range(job.n_reps):
            rng = _rng(seed, i, rep)
            env = initial_env(model, job.drive, rng)
            _, env = evolve_timeline(model, detection, job.drive, env, job.pump_s, rng)
            _, env = evolve_timeline(model, detection, dark, env, delay, rng)
            tl, _ = evolve_timeline(model, detection, job.drive, env, job.read_s, rng,
                                    t0_s=0.0)
            lam += tl.expected_counts(read_edges)
        lam += job.n_reps * detection.background_cps * job.read_bin_s
        rng_draw = _rng(seed, i, job.n_reps)
        return BinnedTrace(bin_width_s=job.read_bin_s, counts=rng_draw.poisson(lam))

    transients = _pmap(one_delay, delays.size)
    return PumpProbeRecord(
        delays_s=delays, transients=tuple(transients), n_reps=job.n_reps
    )


def _run_odmr(model, detection, job: ODMRSweep, seed) -> ODMRRecord:
    freqs = _check_axis(job.freqs_ghz, "frequency")

    def one_freq(i: int) -> tuple:
        rng = _rng(seed, i)
        on_drive = replace(job.drive, mw_on=True, mw_freq_ghz=float(freqs[i]))
        off_drive = replace(job.drive, mw_on=False)
        env = initial_env(model, on_drive, rng)
        # settle into illuminated steady state before counting
        _, env = evolve_timeline(model, detection, off_drive, env, 5 * job.chunk_s, rng)
        counts = {True: 0, False: 0}
        for chunk in range(job.n_chunks):
            mw = chunk % 2 == 0
            drive = on_drive if mw else off_drive
            tl, env = evolve_timeline(model, detection, drive, env, job.chunk_s, rng)
            lam = tl.mean_rate_cps() * job.chunk_s
            lam += detection.background_cps * job.chunk_s
            counts[mw] += int(rng.poisson(lam))
        half = job.n_chunks // 2
        return counts[True] / (half * job.chunk_s), counts[False] / (half * job.chunk_s)

    rows = _pmap(one_freq, freqs.size)
    pl_on = np.array([r[0] for r in rows])
    pl_off = np.array([r[1] for r in rows])
    diff = pl_on - pl_off
    contrast = np.abs(diff) / np.where(pl_off > 0, pl_off, np.nan)
    return ODMRRecord(
        freqs_ghz=freqs,
        pl_on_cps=pl_on,
        pl_off_cps=pl_off,
        contrast=contrast,
        pl_change_sign=np.sign(diff).astype(int),
    )


def _run_angle(model, detection, job: AngleSweep, seed) -> AngleRecord:
    thetas = _check_axis(job.thetas_deg, "angle")

    def one_angle(i: int) -> float:
        rng = _rng(seed, i)
        drive = replace(job.drive, theta_deg=float(thetas[i]))
        env = initial_env(model, drive, rng)
        # discard the approach to steady state
        _, env = evolve_timeline(model, detection, drive, env, 0.25 * job.duration_s, rng)
        tl, _ = evolve_timeline(model, detection, drive, env, job.duration_s, rng)
        lam = tl.mean_rate_cps() * job.duration_s
        lam += detection.background_cps * job.duration_s
        return rng.poisson(lam) / job.duration_s

    rates = np.array(_pmap(one_angle, thetas.size))
    return AngleRecord(thetas_deg=thetas, rates_cps=rates, duration_s=job.duration_s)


_PSB_TEMPLATE = (
    # (kind, center spec, sigma_nm, weight); acoustic center tracks the line
    ("acoustic", None, None, 0.25),
    ("fixed", 631.6, 3.0, 0.40),
    ("fixed", 645.0, 4.0, 0.20),
    ("fixed", 662.0, 15.0, 0.15),
)

_C_NM_THZ = 299792.458


def _gauss_profile(grid, center, sigma):
    g = np.exp(-0.5 * ((grid - center) / sigma) ** 2)
    return g / (sigma * np.sqrt(2.0 * np.pi))


def _pathway_weights(tl: Timeline) -> tuple[float, float]:
    w = tl.rates_cps * np.diff(tl.edges_s)
    total = w.sum()
    if total <= 0:
        return 0.5, 0.5
    w1 = float(w[tl.pathways == 1].sum() / total)
    return w1, 1.0 - w1


def _synth_spectrum(
    grid, step, n_zpl_1, n_zpl_2, n_psb,
    line1_nm, line2_nm, line_sigma_nm,
    acoustic_gap_thz, acoustic_sigma_nm, rng,
) -> Spectrum:
    lam = np.zeros_like(grid)
    lam += n_zpl_1 * _gauss_profile(grid, line1_nm, line_sigma_nm)
    lam += n_zpl_2 * _gauss_profile(grid, line2_nm, line_sigma_nm)
    if n_psb > 0:
        line_nm = (line1_nm * n_zpl_1 + line2_nm * n_zpl_2) / max(
            n_zpl_1 + n_zpl_2, 1e-300
        )
        freq_thz = _C_NM_THZ / line_nm
        acoustic_nm = _C_NM_THZ / (freq_thz - acoustic_gap_thz)
        for kind, center, sigma, weight in _PSB_TEMPLATE:
            if kind == "acoustic":
                center, sigma = acoustic_nm, acoustic_sigma_nm
            lam += n_psb * weight * _gauss_profile(grid, center, sigma)
    counts = rng.poisson(lam * step).astype(float)
    return Spectrum(wavelengths_nm=grid, counts=counts)


def _run_spectrum(model, detection, job: SpectrumJob, seed) -> Spectrum:
    rng = _rng(seed, 0)
    env = initial_env(model, job.drive, rng)
    tl, _ = evolve_timeline(model, detection, job.drive, env, job.integration_s, rng)
    total = tl.mean_rate_cps() * job.integration_s
    w1, w2 = _pathway_weights(tl)
    dw = model.debye_waller
    lo, hi, step = job.grid_nm
    grid = np.arange(lo, hi + 0.5 * step, step)
    return _synth_spectrum(
        grid, step,
        total * dw * w1, total * dw * w2, total * (1.0 - dw),
        job.line1_nm, job.line2_nm, job.line_sigma_nm,
        job.acoustic_gap_thz, job.acoustic_sigma_nm, rng,
    )


def _run_frames(model, detection, job: SpectrumFrames, seed) -> list:
    lo, hi, step = job.grid_nm
    grid = np.arange(lo, hi + 0.5 * step, step)

    def one_frame(i: int) -> Spectrum:
        rng = _rng(seed, i)
        env = initial_env(model, job.drive, rng)
        tl, _ = evolve_timeline(model, detection, job.drive, env, job.frame_s, rng)
        total = tl.mean_rate_cps() * job.frame_s
        w1, w2 = _pathway_weights(tl)
        dw = model.debye_waller
        return _synth_spectrum(
            grid, step, total * dw * w1, total * dw * w2, 0.0,
            job.line1_nm, job.line2_nm, job.line_sigma_nm, 2.0, 0.35, rng,
        )

    return _pmap(one_frame, job.n_frames)


def _run_sequence(model, detection, seq: PulseSequence, seed) -> SequenceRecord:
    rng = _rng(seed, 0)
    env = initial_env(model, seq.segments[0][0], rng)
    timelines = []
    t = 0.0
    for _ in range(seq.repeat):
        for drive, dur in seq.segments:
            tl, env = evolve_timeline(model, detection, drive, env, dur, rng, t0_s=t)
            timelines.append(tl)
            t += dur
    return SequenceRecord(timelines=tuple(timelines), final_env=env)


def _run_trace(model, detection, job: TraceJob, seed) -> BinnedTrace:
    return simulate_trace(
        model, detection, job.drive, job.duration_s, job.bin_width_s, seed
    )


def _run_timetags(model, detection, job: TimeTagJob, seed):
    return simulate_timetags(
        model, detection, job.drive, job.duration_s, seed, event_cap=job.event_cap
    )


_RUNNERS = {
    TraceJob: _run_trace,
    TimeTagJob: _run_timetags,
    PLEScan: _run_ple,
    SaturationSweep: _run_saturation,
    PumpProbe: _run_pump_probe,
    ODMRSweep: _run_odmr,
    AngleSweep: _run_angle,
    SpectrumJob: _run_spectrum,
    SpectrumFrames: _run_frames,
    PulseSequence: _run_sequence,
}


def run_protocol(model: EmitterModel, detection: DetectionModel, job, seed: int):
    """Execute one protocol descriptor (or a raw PulseSequence) and
    return its record set."""
    runner = _RUNNERS.get(type(job))
    if runner is None:
        raise InvalidArgumentError(f"no protocol for {type(job).__name__}")
    return runner(model, detection, job, seed)
