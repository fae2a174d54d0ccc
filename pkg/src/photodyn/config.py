"""TOML run-configuration ingestion.

A config names the emitter model, the detection chain, one protocol,
and an ordered list of analysis stages. Keys carry their units in their
names, mirroring the dataclass fields they fill. Unknown keys are
rejected with their dotted path so typos fail loudly instead of
silently running defaults.
"""

from __future__ import annotations

import hashlib
import sys
from dataclasses import dataclass, fields as dc_fields

if sys.version_info >= (3, 11):  # pragma: no cover
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import DataIOError, InvalidArgumentError
from .pipeline import STAGE_NAMES, axis_values
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
)

__all__ = ["RunConfig", "load_config", "parse_config", "config_hash"]


@dataclass(frozen=True)
class RunConfig:
    model: EmitterModel
    detection: DetectionModel
    protocol: object
    analysis: tuple
    seed: int
    output_dir: str | None
    config_hash: str


def config_hash(raw_bytes: bytes) -> str:
    return hashlib.sha256(raw_bytes).hexdigest()


def _build(cls, table: dict, path: str, overrides: dict | None = None):
    """Fill a dataclass from a TOML table, rejecting unknown keys."""
    if not isinstance(table, dict):
        raise InvalidArgumentError(f"{path}: expected a table")
    known = {f.name for f in dc_fields(cls)}
    kwargs = dict(overrides or {})
    for key, value in table.items():
        if key not in known:
            raise InvalidArgumentError(f"{path}.{key}: unknown key")
        if key in kwargs:
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from exc


def _build_model(table: dict) -> EmitterModel:
    table = dict(table)
    overrides = {}
    if "sd_jump" in table:
        sd = table.pop("sd_jump")
        extra = set(sd) - {"pathway1", "pathway2"}
        if extra:
            raise InvalidArgumentError(f"model.sd_jump.{extra.pop()}: unknown key")
        overrides["sd_jump"] = (
            _build(SDJumpModel, sd.get("pathway1", {}), "model.sd_jump.pathway1"),
            _build(SDJumpModel, sd.get("pathway2", {}), "model.sd_jump.pathway2"),
        )
    for key, cls in (
        ("pathway_switch", PathwaySwitch),
        ("shelving", Shelving),
        ("mw", MWModel),
        ("telegraph", TelegraphDetuning),
    ):
        if key in table:
            overrides[key] = _build(cls, table.pop(key), f"model.{key}")
    if "lifetime_ns" in table and "gamma_rad_per_ns" not in table:
        overrides["gamma_rad_per_ns"] = 1.0 / float(table["lifetime_ns"])
    return _build(EmitterModel, table, "model", overrides)


_AXIS_KEYS = {
    "ple": ("detunings_ghz", PLEScan),
    "saturation": ("powers_uw", SaturationSweep),
    "pump_probe": ("delays_s", PumpProbe),
    "odmr": ("freqs_ghz", ODMRSweep),
    "angle": ("thetas_deg", AngleSweep),
}
_PLAIN_KINDS = {
    "trace": TraceJob,
    "timetags": TimeTagJob,
    "spectrum": SpectrumJob,
    "spectrum_frames": SpectrumFrames,
}


def _build_protocol(table: dict, drive: LaserDrive):
    table = dict(table)
    kind = table.pop("kind", None)
    if kind in _PLAIN_KINDS:
        return _build(_PLAIN_KINDS[kind], table, f"protocol({kind})",
                      {"drive": drive})
    if kind in _AXIS_KEYS:
        axis_key, cls = _AXIS_KEYS[kind]
        if axis_key not in table:
            raise InvalidArgumentError(f"protocol({kind}): missing {axis_key}")
        axis = axis_values(table.pop(axis_key), f"protocol.{axis_key}")
        return _build(cls, table, f"protocol({kind})",
                      {"drive": drive, axis_key: axis})
    known = sorted(list(_PLAIN_KINDS) + list(_AXIS_KEYS))
    raise InvalidArgumentError(f"protocol.kind must be one of {known}, got {kind!r}")


def parse_config(raw_bytes: bytes) -> RunConfig:
    try:
        data = tomllib.loads(raw_bytes.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        # tomllib reports line and column in the message
        raise InvalidArgumentError(f"config parse error: {exc}") from exc

    top_known = {"seed", "output_dir", "model", "detection", "drive", "protocol",
                 "analysis"}
    for key in data:
        if key not in top_known:
            raise InvalidArgumentError(f"{key}: unknown top-level key")
    if "seed" not in data:
        raise InvalidArgumentError("seed: required")
    seed = data["seed"]
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise InvalidArgumentError("seed: must be an unsigned 64-bit integer")
    if "protocol" not in data:
        raise InvalidArgumentError("protocol: required")

    model = _build_model(data.get("model", {}))
    detection = _build(DetectionModel, data.get("detection", {}), "detection")
    drive = _build(LaserDrive, data.get("drive", {}), "drive")
    protocol = _build_protocol(data["protocol"], drive)

    analysis = data.get("analysis", [])
    if not isinstance(analysis, list):
        raise InvalidArgumentError("analysis: expected an array of tables")
    for i, stage in enumerate(analysis):
        name = stage.get("stage")
        if name not in STAGE_NAMES:
            raise InvalidArgumentError(
                f"analysis[{i}].stage: {name!r} not in {sorted(STAGE_NAMES)}"
            )

    return RunConfig(
        model=model,
        detection=detection,
        protocol=protocol,
        analysis=tuple(dict(s) for s in analysis),
        seed=seed,
        output_dir=data.get("output_dir"),
        config_hash=config_hash(raw_bytes),
    )


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)
