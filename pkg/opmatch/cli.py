#!/usr/bin/env python3
"""
opmatch CLI
===========

Command-line interface for the operator-matching pipeline:
generate -> train-prior -> match -> restore -> evaluate, plus the Gaussian
oracle suite, single-image SR kernel learning and the noise sweep.

Exit codes: 0 success, 1 failed check or unexpected error, 2 configuration
error, 3 numerical failure, 4 missing prerequisite step.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict

import click

from . import __version__, pipeline
from .core.config import RunConfig, load_config
from .core.errors import OpmatchError
from .core.session import RunSession

logger = logging.getLogger("opmatch")

ARTIFACT_KEYS = (
    "corpus",
    "prior",
    "operator",
    "kernel",
    "history",
    "metrics",
    "kernel_metrics",
    "report",
    "sweep",
)


def configure_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)
    logger.propagate = False


def _fail(exc: BaseException, code: int) -> None:
    click.echo(f"Error: {exc}", err=True)
    sys.exit(code)


def run_command(ctx: click.Context, command: str, step: Callable[..., Dict[str, Any]], **kwargs):
    """Load config, open the run session, execute ``step`` and map errors to exit codes."""
    opts = ctx.obj
    try:
        cfg: RunConfig = load_config(opts["config"], {"seed": opts["seed"], "output_dir": opts["out"]})
        out = Path(cfg.output_dir)
        with RunSession(command, cfg, out, ledger=opts["ledger"]) as session:
            result = step(cfg, out, **kwargs)
            for key in ARTIFACT_KEYS:
                if key in result:
                    session.artifact(result[key], key)
            for path in result.get("restored", []):
                session.artifact(path, "restored")
    except OpmatchError as e:
        _fail(e, e.exit_code)
    except Exception as e:  # noqa: BLE001
        logger.debug("unexpected failure", exc_info=True)
        _fail(e, 1)
    return result


@click.group()
@click.version_option(version=__version__)
@click.option("--config", "-c", "config", type=click.Path(dir_okay=False), help="TOML run configuration")
@click.option("--seed", type=int, default=None, help="Override the configured seed")
@click.option("--out", "-o", "out", type=click.Path(file_okay=False), default=None, help="Output directory")
@click.option("--no-ledger", is_flag=True, help="Skip the SQLite run ledger")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx, config, seed, out, no_ledger, verbose):
    """
    opmatch - learn degradation operators from unpaired data

    Fits a blur (or blur + downsampling) operator so that degraded clean
    images look like the corrupted set, then restores images with it.
    """
    configure_logging(verbose)
    ctx.ensure_object(dict)
    ctx.obj.update(config=config, seed=seed, out=out, ledger=not no_ledger)


@cli.command()
@click.pass_context
def generate(ctx):
    """Generate the synthetic clean/corrupted/test corpus."""
    result = run_command(ctx, "generate", pipeline.run_generate)
    counts = ", ".join(f"{k}={v}" for k, v in sorted(result["counts"].items()))
    click.echo(f"✓ Corpus written: {result['corpus']} ({counts})")


@cli.command(name="train-prior")
@click.pass_context
def train_prior(ctx):
    """Train the flow prior on corrupted patches."""
    result = run_command(ctx, "train-prior", pipeline.run_train_prior)
    click.echo(f"✓ Prior saved to {result['prior']} ({result['parameters']} parameters)")


@cli.command()
@click.pass_context
def match(ctx):
    """Learn the degradation operator against the trained prior."""
    result = run_command(ctx, "match", pipeline.run_match)
    click.echo(f"✓ Operator saved to {result['operator']} after {result['steps']} step(s)")


@cli.command()
@click.option("--input", "-i", "inputs", multiple=True, type=click.Path(exists=True), help="Image file or directory")
@click.pass_context
def restore(ctx, inputs):
    """Restore images (default: the corpus test split)."""
    result = run_command(ctx, "restore", pipeline.run_restore, inputs=list(inputs))
    click.echo(f"✓ Restored {len(result['restored'])} image(s)")


@cli.command()
@click.pass_context
def evaluate(ctx):
    """Score restorations and the learned kernel against the corpus truth."""
    result = run_command(ctx, "evaluate", pipeline.run_evaluate)
    for key, value in result["summary"].items():
        if value is not None:
            click.echo(f"{key:<12} {value:.4f}")
    click.echo(f"✓ Metrics written to {result['metrics']}")


@cli.command()
@click.pass_context
def oracle(ctx):
    """Run the closed-form Gaussian checks and write a pass/fail report."""
    result = run_command(ctx, "oracle", pipeline.run_oracle)
    click.echo(f"✓ {result['passed']}/{result['total']} oracle case(s) passed ({result['report']})")


@cli.command(name="match-sr")
@click.option("--image", type=click.Path(exists=True, dir_okay=False), default=None, help="Low-resolution image")
@click.pass_context
def match_sr(ctx, image):
    """Learn the downscaling kernel of a single image."""
    result = run_command(ctx, "match-sr", pipeline.run_match_sr, image=image)
    click.echo(f"✓ SR operator saved to {result['operator']}")


@cli.command(name="sweep-noise")
@click.pass_context
def sweep_noise(ctx):
    """Repeat generate/train/match over the configured noise levels."""
    result = run_command(ctx, "sweep-noise", pipeline.run_sweep_noise)
    for row in result["rows"]:
        click.echo(f"sigma={row['noise_sigma']:<6g} kernel_ncc={row['kernel_ncc']:.4f}")
    click.echo(f"✓ Sweep written to {result['sweep']}")


if __name__ == "__main__":
    cli()
