"""photodyn: stochastic photophysics simulator and closed-loop analysis
toolkit for a blinking, spectrally wandering single-photon emitter.

The package splits into data containers (`core`), the two-tier
simulator (`simulator`, `kernels`), measurement protocols
(`protocols`), analysis (`trace_analysis`, `photon_stats`,
`correlation`, `fitting`), run-directory plumbing (`pipeline`,
`config`) and the acceptance machinery (`closed_loop`, `cli`).

Environment flags: PHOTODYN_DISABLE_NUMBA=1 selects the pure-numpy
kernel fallbacks; PHOTODYN_THREADS=N parallelizes sweep points without
changing any output byte.
"""

from ._version import __version__
from .core import (
    BinnedTrace,
    FitResult,
    Histogram,
    Param,
    Spectrum,
    TimeTagStream,
    bin_timetags,
    load_timetags,
    make_histogram,
    save_timetags,
)
from .correlation import G2Curve, fit_g2, g2_histogram
from .errors import (
    AnalysisFailedError,
    DataIOError,
    FitFailedError,
    InsufficientDataError,
    InvalidArgumentError,
    PhotodynError,
)
from .fitting import (
    MODELS,
    QEBound,
    analyze_spectrum,
    fit_saturation,
    nlls_fit,
    qe_lower_bound,
    two_line_anticorrelation,
)
from .photon_stats import (
    MixtureParams,
    fit_mixture,
    mixture_pmf,
    on_fraction,
    select_lambda_max,
)
from .pipeline import analyze_run, load_manifest, persist_run
from .protocols import (
    AngleSweep,
    ODMRSweep,
    PLEScan,
    PumpProbe,
    SaturationSweep,
    SpectrumFrames,
    SpectrumJob,
    TimeTagJob,
    TraceJob,
    run_protocol,
)
from .simulator import (
    DetectionModel,
    EmitterModel,
    LaserDrive,
    MWModel,
    PathwaySwitch,
    SDJumpModel,
    Shelving,
    TelegraphDetuning,
    emission_rate,
    saturation_parameter,
    simulate_timetags,
    simulate_trace,
)
from .trace_analysis import IntervalRecord, classify_on_off, fit_interval_rate
from .config import RunConfig, load_config, parse_config
from .closed_loop import run_suites

__all__ = [
    "__version__",
    "BinnedTrace",
    "FitResult",
    "Histogram",
    "Param",
    "Spectrum",
    "TimeTagStream",
    "bin_timetags",
    "load_timetags",
    "make_histogram",
    "save_timetags",
    "G2Curve",
    "fit_g2",
    "g2_histogram",
    "AnalysisFailedError",
    "DataIOError",
    "FitFailedError",
    "InsufficientDataError",
    "InvalidArgumentError",
    "PhotodynError",
    "MODELS",
    "QEBound",
    "analyze_spectrum",
    "fit_saturation",
    "nlls_fit",
    "qe_lower_bound",
    "two_line_anticorrelation",
    "MixtureParams",
    "fit_mixture",
    "mixture_pmf",
    "on_fraction",
    "select_lambda_max",
    "analyze_run",
    "load_manifest",
    "persist_run",
    "AngleSweep",
    "ODMRSweep",
    "PLEScan",
    "PumpProbe",
    "SaturationSweep",
    "SpectrumFrames",
    "SpectrumJob",
    "TimeTagJob",
    "TraceJob",
    "run_protocol",
    "DetectionModel",
    "EmitterModel",
    "LaserDrive",
    "MWModel",
    "PathwaySwitch",
    "SDJumpModel",
    "Shelving",
    "TelegraphDetuning",
    "emission_rate",
    "saturation_parameter",
    "simulate_timetags",
    "simulate_trace",
    "IntervalRecord",
    "classify_on_off",
    "fit_interval_rate",
    "RunConfig",
    "load_config",
    "parse_config",
    "run_suites",
]
