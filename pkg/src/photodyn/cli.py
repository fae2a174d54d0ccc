"""Command-line entry points.

Exit codes: 0 success, 2 usage or configuration error, 3 unreadable or
malformed data, 4 analysis failure. `closed-loop` additionally exits 1
when every stage ran but some acceptance check failed, so scripts can
tell a failed verdict from a crashed run.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from ._version import __version__
from .closed_loop import MASTER_SEED, SUITE_NAMES, format_report, run_suites
from .config import load_config
from .errors import (
    AnalysisFailedError,
    DataIOError,
    FitFailedError,
    InvalidArgumentError,
)
from .pipeline import STAGE_NAMES, analyze_run, load_manifest, persist_run
from .protocols import run_protocol

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_ANALYSIS = 4


def _fail(exc, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except InvalidArgumentError as exc:
            _fail(exc, EXIT_USAGE)
        except DataIOError as exc:
            _fail(exc, EXIT_IO)
        except (FitFailedError, AnalysisFailedError) as exc:
            _fail(exc, EXIT_ANALYSIS)
        except OSError as exc:
            _fail(exc, EXIT_IO)
        except json.JSONDecodeError as exc:
            _fail(exc, EXIT_IO)

    return wrapper


def _set_threads(threads):
    if threads is not None:
        if threads < 1:
            raise InvalidArgumentError("--threads must be at least 1")
        os.environ["PHOTODYN_THREADS"] = str(threads)


@click.group()
@click.version_option(__version__, prog_name="photodyn")
def main():
    """Simulate an optically active emitter and analyze the runs."""


@main.command()
@click.option("-c", "--config", "config_path", required=True,
              type=click.Path(), help="TOML run configuration.")
@click.option("-o", "--out", "out_dir", type=click.Path(), default=None,
              help="Run directory to create (overrides config output_dir).")
@click.option("--seed", type=int, default=None,
              help="Override the config seed.")
@click.option("--threads", type=int, default=None,
              help="Worker processes for sweep points (PHOTODYN_THREADS).")
@click.option("--no-analysis", is_flag=True,
              help="Persist the raw run only; skip configured stages.")
@_handled
def simulate(config_path, out_dir, seed, threads, no_analysis):
    """Generate one run directory from a config, then analyze it."""
    _set_threads(threads)
    cfg = load_config(config_path)
    target = out_dir or cfg.output_dir
    if target is None:
        raise InvalidArgumentError(
            "no output directory: pass -o or set output_dir in the config"
        )
    run_seed = cfg.seed if seed is None else seed
    if run_seed < 0 or run_seed >= 2**64:
        raise InvalidArgumentError("--seed must be an unsigned 64-bit integer")
    record = run_protocol(cfg.model, cfg.detection, cfg.protocol, run_seed)
    run_dir = Path(target)
    persist_run(
        run_dir,
        record,
        protocol=cfg.protocol,
        model=cfg.model,
        detection=cfg.detection,
        analysis=list(cfg.analysis),
        seed=run_seed,
        config_hash=cfg.config_hash,
    )
    click.echo(f"run written: {run_dir}")
    if cfg.analysis and not no_analysis:
        _report_stages(analyze_run(run_dir))


def _report_stages(report: dict):
    failed = []
    for name, entry in report["stages"].items():
        if entry["ok"]:
            outputs = ", ".join(entry["outputs"]) or "no outputs"
            click.echo(f"  {name}: ok ({outputs})")
        else:
            err = entry["error"]
            click.echo(f"  {name}: FAILED {err['type']}: {err['message']}")
            failed.append(name)
    if failed:
        _fail(f"stages failed: {', '.join(failed)}", EXIT_ANALYSIS)


@main.command()
@click.argument("run_dir", type=click.Path())
@click.option("--stages", default=None,
              help="Comma-separated stage names; default is the manifest list.")
@_handled
def analyze(run_dir, stages):
    """Run analysis stages against an existing run directory."""
    names = None
    if stages is not None:
        names = [s.strip() for s in stages.split(",") if s.strip()]
        if not names:
            raise InvalidArgumentError("--stages given but empty")
    _report_stages(analyze_run(run_dir, names))


@main.command("closed-loop")
@click.argument("suites", nargs=-1, required=True)
@click.option("-o", "--out", "out_root", type=click.Path(),
              default="closed-loop", show_default=True,
              help="Root directory for suite run directories and the report.")
@click.option("--seed", type=int, default=MASTER_SEED, show_default=True,
              help="Master seed all suite runs derive from.")
@click.option("--threads", type=int, default=None,
              help="Worker processes for sweep points (PHOTODYN_THREADS).")
@_handled
def closed_loop(suites, out_root, seed, threads):
    """Run acceptance suites end to end (names like A4-mixture, A4, all).

    Exits 0 only when every check in every selected suite passes.
    """
    _set_threads(threads)
    report = run_suites(list(suites), out_root, master_seed=seed)
    click.echo(format_report(report))
    click.echo(f"report: {Path(out_root) / 'closed_loop_report.json'}")
    if not report["passed"]:
        sys.exit(1)


@main.command()
@click.argument("run_dir", type=click.Path())
@_handled
def report(run_dir):
    """Summarize a run directory or a closed-loop root."""
    root = Path(run_dir)
    loop = root / "closed_loop_report.json"
    if loop.exists():
        with open(loop) as fh:
            data = json.load(fh)
        click.echo(format_report(data))
        if not data.get("passed"):
            sys.exit(1)
        return
    manifest = load_manifest(root)
    click.echo(f"protocol: {manifest['protocol']}  seed: {manifest['seed']}")
    analysis = root / "analysis_report.json"
    if analysis.exists():
        with open(analysis) as fh:
            data = json.load(fh)
        _report_stages(data)
    else:
        configured = [s["stage"] for s in manifest.get("analysis", [])]
        click.echo(
            "not analyzed yet; configured stages: "
            + (", ".join(configured) or "none")
        )


@main.command("list")
@_handled
def list_names():
    """List the known suites and analysis stages."""
    click.echo("suites: " + ", ".join(SUITE_NAMES))
    click.echo("stages: " + ", ".join(sorted(STAGE_NAMES)))


if __name__ == "__main__":
    main()
