"""Command-line entry points for running and analysing experiments."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import bench, harness

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Multi-fidelity hyperparameter optimization experiments."""


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True),
              help="experiment config JSON")
@click.option("--out", "out_dir", required=True, type=click.Path(),
              help="run directory to create")
def run_cmd(config_path: str, out_dir: str) -> None:
    """Run one experiment and write its run directory."""
    config = harness.ExperimentConfig.from_dict(json.loads(Path(config_path).read_text()))
    result = harness.run(config)
    harness.write_run_dir(result, config, out_dir)
    click.echo(f"method={result.method} seed={result.seed} "
               f"final={result.final_metric:.6g} vtime={result.elapsed_vtime:.1f} "
               f"measurements={result.n_measurements}")


@main.command("compare")
@click.option("--runs", "run_dirs", required=True, multiple=True,
              type=click.Path(exists=True), help="run directories (repeatable)")
@click.option("--reference", default="hb", show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="write the table as CSV instead of printing")
def compare_cmd(run_dirs: tuple[str, ...], reference: str, out_path: str | None) -> None:
    """Build a speed-up table over the given run directories."""
    groups: dict[str, list[harness.RunResult]] = {}
    for d in run_dirs:
        result = harness.load_run_dir(d)
        groups.setdefault(result.method, []).append(result)
    rows = harness.compare(groups, reference)
    if out_path:
        harness.write_compare_csv(rows, out_path)
        click.echo(f"wrote {out_path}")
        return
    for row in rows:
        click.echo(f"{row['method']:>20}  final={row['mean_final']:.5g} "
                   f"ttt={row['median_time_to_target']:.6g}  speedup={row['speedup']}")


@main.group("bench")
def bench_group() -> None:
    """Generate benchmark definition files."""


@bench_group.command("gen-toy")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--phi", default=0.2, show_default=True, help="noise level")
@click.option("--max-epoch", default=27, show_default=True)
@click.option("--amplitude", default=10.0, show_default=True)
@click.option("--cost-per-unit", default=1.0, show_default=True)
def gen_toy_cmd(out_path: str, phi: float, max_epoch: int, amplitude: float,
                cost_per_unit: float) -> None:
    """Write a toy benchmark description."""
    spec = {"kind": "toy", "phi": phi, "max_epoch": max_epoch,
            "amplitude": amplitude, "cost_per_unit": cost_per_unit}
    Path(out_path).write_text(json.dumps(spec, indent=2) + "\n")
    click.echo(f"wrote {out_path}")


@bench_group.command("gen-tabular")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--n-configs", default=200, show_default=True)
@click.option("--max-epoch", default=27, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--low-tau", default=-0.3, show_default=True,
              help="target rank correlation between epoch-1 and final metrics")
@click.option("--with-costs/--no-costs", default=False, show_default=True,
              help="embed per-epoch costs instead of drawing them at load time")
def gen_tabular_cmd(out_path: str, n_configs: int, max_epoch: int, seed: int,
                    low_tau: float, with_costs: bool) -> None:
    """Write a synthetic learning-curve benchmark."""
    data = bench.generate_tabular(n_configs=n_configs, max_epoch=max_epoch,
                                  seed=seed, low_tau=low_tau, with_costs=with_costs)
    Path(out_path).write_text(json.dumps(data) + "\n")
    click.echo(f"wrote {out_path} ({n_configs} rows, {max_epoch} epochs)")


@main.group("report")
def report_group() -> None:
    """Re-export artifacts from a run directory."""


@report_group.command("weights")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def report_weights_cmd(run_dir: str, out_path: str | None) -> None:
    """Per-iteration surrogate weight log."""
    result = harness.load_run_dir(run_dir)
    if out_path:
        harness.write_weights_csv(result, out_path)
        click.echo(f"wrote {out_path}")
        return
    click.echo("iteration,resource,weight")
    for it, r, w in result.weights_log:
        click.echo(f"{it},{r},{w}")


@report_group.command("trajectory")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def report_trajectory_cmd(run_dir: str, out_path: str | None) -> None:
    """Incumbent-over-time trajectory."""
    result = harness.load_run_dir(run_dir)
    if out_path:
        harness.export_trajectory(result, out_path)
        click.echo(f"wrote {out_path}")
        return
    click.echo("vtime,best_metric,config_id")
    for t, y, cid in result.trajectory:
        click.echo(f"{t},{y},{cid}")


if __name__ == "__main__":
    sys.exit(main())
