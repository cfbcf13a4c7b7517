"""Command line entry point: ``fqra <stage> [options]``."""
from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .errors import FqraError, MissingStageError, StageError
from .pipeline import (
    STAGES,
    format_config,
    load_config,
    run_pipeline,
    run_synth,
)


def _split(text: str | None, cast=str):
    if text is None:
        return None
    return tuple(cast(x.strip()) for x in text.split(",") if x.strip())


def common(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="key = value [unit] config file"),
        click.option("--preset", type=click.Choice(["desk", "paper"]), default=None,
                     help="base settings before the config file is applied"),
        click.option("--seed", type=int, default=None, help="seed for synthetic data"),
        click.option("--methods", default=None, help="comma list, e.g. HS,CP,sFQRA"),
        click.option("--levels", default=None, help="comma list of coverage levels, e.g. 0.5,0.8,0.98"),
        click.option("--market", type=click.Choice(["DA", "IDA"]), default=None),
        click.option("--data", "data_path", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="market CSV; synthetic data is used when omitted"),
        click.option("--out-dir", type=click.Path(file_okay=False), default="artifacts", show_default=True),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _config(config_path, preset, seed, methods, levels, market, data_path):
    return load_config(
        config_path, preset,
        seed=seed, methods=_split(methods), coverages=_split(levels, float),
        market=market, data_path=data_path,
    )


def _run(fn, *args):
    try:
        return fn(*args)
    except (StageError, MissingStageError, FqraError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="log progress to stderr")
def main(verbose: bool) -> None:
    """Factor quantile regression forecasting pipeline."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _stage_command(name: str):
    @main.command(name=name, help=f"Run the {name} stage.")
    @common
    def command(config_path, preset, seed, methods, levels, market, data_path, out_dir):
        cfg = _run(_config, config_path, preset, seed, methods, levels, market, data_path)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg))
        result = _run(STAGES[name], cfg, out)
        paths = result if isinstance(result, list) else [result]
        for p in paths:
            click.echo(str(p))

    return command


for _name in STAGES:
    _stage_command(_name)


@main.command()
@common
def synth(config_path, preset, seed, methods, levels, market, data_path, out_dir):
    """Write a synthetic market CSV sized for the configured run."""
    cfg = _run(_config, config_path, preset, seed, methods, levels, market, data_path)
    click.echo(str(_run(run_synth, cfg, Path(out_dir))))


@main.command()
@common
def run(config_path, preset, seed, methods, levels, market, data_path, out_dir):
    """Run every stage from ingest to report."""
    cfg = _run(_config, config_path, preset, seed, methods, levels, market, data_path)
    out = _run(run_pipeline, cfg, Path(out_dir))
    click.echo(f"artifacts in {out} (config hash {cfg.config_hash()})")


@main.command("show-config")
@common
def show_config(config_path, preset, seed, methods, levels, market, data_path, out_dir):
    """Print the resolved configuration."""
    cfg = _run(_config, config_path, preset, seed, methods, levels, market, data_path)
    click.echo(format_config(cfg), nl=False)


if __name__ == "__main__":
    main()
