"""Hot inner loops with a compiled and an interpreted implementation.

The compiled path uses numba when it is importable; setting the
environment variable PHOTODYN_DISABLE_NUMBA to a non-empty value other
than 0/false forces the plain numpy path. Both paths are deterministic
for a fixed seed, but they consume randomness differently, so streams
produced by the two backends are not bit-identical to each other.

benchmarks/bench_kernels.py times one against the other.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "HAS_NUMBA",
    "numba_enabled",
    "pair_histogram",
    "photon_segment",
]

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap if not (args and callable(args[0])) else args[0]


def numba_enabled() -> bool:
    """Compiled path active? Re-read the env flag on every call so a
    benchmark can flip backends inside one process."""
    flag = os.environ.get("PHOTODYN_DISABLE_NUMBA", "").strip().lower()
    if flag not in ("", "0", "false"):
        return False
    return HAS_NUMBA


# ---------------------------------------------------------------------------
# pair histogram (autocorrelation numerator)
#
# Forward pairs i < j with dt = ts[j] - ts[i] land in bin
# k = (2 dt + bw) // (2 bw), i.e. edges at (k - 1/2) bw and (k + 1/2) bw.
# Integer arithmetic keeps the edge assignment exact.


@njit(cache=True, nogil=True)
def _pair_hist_nb(ts, bw_ns, n_bins, i_lo, i_hi):  # pragma: no cover - exercised via dispatch
    counts = np.zeros(n_bins, dtype=np.int64)
    dt_max = ((2 * n_bins - 1) * bw_ns - 1) // 2
    n = ts.size
    for i in range(i_lo, i_hi):
        for j in range(i + 1, n):
            dt = ts[j] - ts[i]
            if dt > dt_max:
                break
            counts[(2 * dt + bw_ns) // (2 * bw_ns)] += 1
    return counts


def _pair_hist_np(ts, bw_ns, n_bins, i_lo, i_hi):
    counts = np.zeros(n_bins, dtype=np.int64)
    dt_max = ((2 * n_bins - 1) * bw_ns - 1) // 2
    n = ts.size
    offset = 1
    while offset < n:
        hi = min(i_hi, n - offset)
        if hi <= i_lo:
            break
        dt = ts[i_lo + offset : hi + offset] - ts[i_lo:hi]
        dt = dt[dt <= dt_max]
        if dt.size == 0:
            break
        k = (2 * dt + bw_ns) // (2 * bw_ns)
        counts += np.bincount(k, minlength=n_bins)
        offset += 1
    return counts


def pair_histogram(
    timestamps: np.ndarray,
    bin_width_ns: int,
    n_bins: int,
    i_lo: int = 0,
    i_hi: int | None = None,
) -> np.ndarray:
    """Histogram of forward pair separations from a sorted int64 stream.

    The optional [i_lo, i_hi) range restricts the EARLIER index of each
    pair while partners are still taken from the whole stream, which is
    the ownership rule the threaded caller uses to count boundary pairs
    exactly once. Cost is O(n_owned * partners_per_tag), never O(n^2).
    """
    ts = np.ascontiguousarray(timestamps, dtype=np.int64)
    if bin_width_ns < 1 or n_bins < 1:
        raise ValueError("bin_width_ns and n_bins must be positive")
    if i_hi is None:
        i_hi = ts.size
    if not 0 <= i_lo <= i_hi <= ts.size:
        raise ValueError("bad index range")
    if numba_enabled():
        return _pair_hist_nb(
            ts, np.int64(bin_width_ns), np.int64(n_bins),
            np.int64(i_lo), np.int64(i_hi),
        )
    return _pair_hist_np(ts, np.int64(bin_width_ns), np.int64(n_bins), int(i_lo), int(i_hi))


# ---------------------------------------------------------------------------
# excitation/emission cycling inside one bright segment
#
# Two-level optical cycle: ground -> excited at rate r_exc, excited ->
# ground at rate gamma with one photon per decay. Photons are thinned by
# the detection probability before being stored, which keeps memory
# proportional to the detected count.


@njit(cache=True)
def _photon_seg_nb(t0, t1, r_exc, gamma, p_det, start_excited, seed):  # pragma: no cover
    np.random.seed(seed)
    expected = (t1 - t0) * p_det * r_exc * gamma / (r_exc + gamma + 1e-300)
    cap = int(expected + 6.0 * np.sqrt(expected + 1.0) + 16.0)
    out = np.empty(cap, dtype=np.int64)
    n = 0
    t = float(t0)
    excited = start_excited
    while True:
        if not excited:
            if r_exc <= 0.0:
                return out[:n], False
            t += np.random.exponential(1.0 / r_exc)
            if t >= t1:
                return out[:n], False
            excited = True
        t += np.random.exponential(1.0 / gamma)
        if t >= t1:
            return out[:n], True
        excited = False
        if np.random.random() < p_det:
            if n == cap:
                grown = np.empty(cap * 2, dtype=np.int64)
                grown[:cap] = out
                out = grown
                cap *= 2
            out[n] = np.int64(t)
            n += 1


def _photon_seg_np(t0, t1, r_exc, gamma, p_det, start_excited, rng):
    if r_exc <= 0.0:
        # no re-excitation: at most one pending decay
        if start_excited:
            t = t0 + rng.exponential(1.0 / gamma)
            if t < t1:
                if rng.random() < p_det:
                    return np.array([np.int64(t)]), False
                return np.empty(0, np.int64), False
            return np.empty(0, np.int64), True
        return np.empty(0, np.int64), False

    chunks = []
    t = float(t0)
    excited = bool(start_excited)
    mean_cycle = 1.0 / r_exc + 1.0 / gamma
    while t < t1:
        n = int((t1 - t) / mean_cycle * 1.2 + 64)
        waits_g = rng.exponential(1.0 / r_exc, n)
        waits_e = rng.exponential(1.0 / gamma, n)
        if excited:
            waits_g[0] = 0.0
            excited = False
        photon_t = t + np.cumsum(waits_g + waits_e)
        keep = photon_t < t1
        stop = int(np.argmin(keep)) if not keep.all() else n
        if stop < n:
            # segment boundary falls inside cycle stop: state depends on
            # whether the upward wait had already completed
            excited = photon_t[stop] - waits_e[stop] < t1
            det = rng.random(stop) < p_det
            chunks.append(photon_t[:stop][det].astype(np.int64))
            t = t1
        else:
            det = rng.random(n) < p_det
            chunks.append(photon_t[det].astype(np.int64))
            t = float(photon_t[-1])
    out = np.concatenate(chunks) if chunks else np.empty(0, np.int64)
    return out, excited


def photon_segment(
    t0_ns: float,
    t1_ns: float,
    r_exc_per_ns: float,
    gamma_per_ns: float,
    p_det: float,
    start_excited: bool,
    rng: np.random.Generator,
) -> tuple[np.ndarray, bool]:
    """Detected photon times (int64 ns) inside [t0, t1) plus the
    electronic state at the segment end."""
    if t1_ns <= t0_ns:
        return np.empty(0, np.int64), bool(start_excited)
    if gamma_per_ns <= 0.0:
        raise ValueError("gamma_per_ns must be positive")
    if not 0.0 <= p_det <= 1.0:
        raise ValueError("p_det must lie in [0, 1]")
    if numba_enabled():
        seed = int(rng.integers(0, 2**31 - 1))
        return _photon_seg_nb(
            float(t0_ns), float(t1_ns), float(r_exc_per_ns), float(gamma_per_ns),
            float(p_det), bool(start_excited), seed,
        )
    return _photon_seg_np(
        float(t0_ns), float(t1_ns), float(r_exc_per_ns), float(gamma_per_ns),
        float(p_det), bool(start_excited), rng,
    )
