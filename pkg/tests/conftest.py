"""Shared builders.

Most tests want a quiet emitter (every fluctuator off, near-delta
inhomogeneous line) so the resonant count rate is constant in time and
only shot noise remains.
"""

import numpy as np

from photodyn.simulator import DetectionModel, EmitterModel, LaserDrive

# one verdict line per acceptance criterion plus its component checks,
# filled by test_acceptance and echoed after the pytest summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def quiet_model(**over):
    over.setdefault("sigma_inh_ghz", 1e-9)
    return EmitterModel(**over)


def unit_detection(**over):
    """Detect every emitted photon: eta=1, all bands, c_cal=1."""
    over.setdefault("eta", 1.0)
    over.setdefault("band", "all")
    over.setdefault("c_cal", 1.0)
    return DetectionModel(**over)


def resonant_drive(p_res_uw=7.6, **over):
    return LaserDrive(p_res_uw=p_res_uw, **over)


def rng_for(tag: int) -> np.random.Generator:
    # fixed per-test substreams so reruns are bit-identical
    return np.random.default_rng(np.random.SeedSequence(entropy=(991, tag)))
