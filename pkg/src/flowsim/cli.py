"""Command-line front end: single runs, decider comparisons, group-size
sweeps and trajectory export."""

from __future__ import annotations

import dataclasses
import json
import math
import pathlib
import time

import click
import numpy as np

from .baselines import random_grouped_decider, sequential_decider
from .engine import EngineConfig, run_scenario, staged_group_decider
from .metrics import RunMetrics, compute_metrics
from .scenario import load_scenario
from .templates import TEMPLATES, network_scenario

DECIDERS = {
    "group": staged_group_decider,
    "sequential": sequential_decider,
    "random": random_grouped_decider,
}


def _build_scenario(scenario_path, template, vehicles, seed):
    if scenario_path:
        return load_scenario(scenario_path), ()
    if template == "network":
        return network_scenario(seed=seed)
    kwargs = {"seed": seed}
    if template == "svo":
        kwargs = {"svo_angle": math.pi / 4, "seed": seed}
    elif vehicles:
        kwargs["n_vehicles"] = vehicles
    return TEMPLATES[template](**kwargs), ()


def _write_metrics(path: pathlib.Path, metrics: RunMetrics):
    doc = dataclasses.asdict(metrics)
    path.write_text(json.dumps(doc, indent=2, default=float) + "\n")


def _metrics_table(rows: dict[str, list[RunMetrics]], columns) -> str:
    header = ["decider"] + list(columns)
    lines = [header]
    for name, ms in rows.items():
        vals = [name]
        for col in columns:
            xs = [getattr(m, col) for m in ms]
            xs = [x for x in xs if not (isinstance(x, float) and math.isnan(x))]
            vals.append("%.2f" % float(np.mean(xs)) if xs else "nan")
        lines.append(vals)
    widths = [max(len(r[i]) for r in lines) for i in range(len(header))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths))
                     for r in lines)


@click.group()
def main():
    """Closed-loop traffic flow generation experiments."""


scenario_opts = [
    click.option("--scenario", "scenario_path", type=click.Path(exists=True),
                 default=None, help="Scenario YAML file."),
    click.option("--template", type=click.Choice(sorted(TEMPLATES) + ["network"]),
                 default="ramp", show_default=True),
    click.option("--vehicles", type=int, default=None,
                 help="Vehicle count for templates that take one."),
    click.option("--seed", type=int, default=0, show_default=True),
    click.option("--duration", type=float, default=60.0, show_default=True),
    click.option("--iterations", type=int, default=None,
                 help="Total search iteration budget per decision round."),
    click.option("--out-dir", type=click.Path(file_okay=False), default="runs",
                 show_default=True),
]


def with_options(opts):
    def deco(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return deco


@main.command()
@with_options(scenario_opts)
@click.option("--decider", type=click.Choice(sorted(DECIDERS)), default="group",
              show_default=True)
def run(scenario_path, template, vehicles, seed, duration, iterations,
        out_dir, decider):
    """Run one closed-loop simulation; write trajectory CSV and metrics."""
    scenario, arrivals = _build_scenario(scenario_path, template, vehicles, seed)
    cfg = EngineConfig(seed=seed, duration=duration, total_budget=iterations)
    log = run_scenario(scenario, cfg, decider=DECIDERS[decider],
                       arrivals=arrivals)
    metrics = compute_metrics(log, scenario)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}-{decider}-seed{seed}"
    log.write_csv(out / f"{stem}.csv")
    _write_metrics(out / f"{stem}.metrics.json", metrics)
    click.echo(f"wrote {out / stem}.csv")
    click.echo(f"success_rate={metrics.success_rate:.3f} "
               f"collisions={metrics.collisions} "
               f"avg_finish_time={metrics.avg_finish_time:.2f}")
    if metrics.collisions:
        raise SystemExit(1)


@main.command()
@with_options(scenario_opts)
@click.option("--repeats", type=int, default=10, show_default=True)
@click.option("--deciders", default="group,sequential,random",
              show_default=True, help="Comma-separated decider names.")
def compare(scenario_path, template, vehicles, seed, duration, iterations,
            out_dir, repeats, deciders):
    """Run every decider over repeated seeds; emit a metrics table."""
    names = [d.strip() for d in deciders.split(",") if d.strip()]
    unknown = sorted(set(names) - set(DECIDERS))
    if unknown:
        raise click.BadParameter(f"unknown decider(s): {', '.join(unknown)}")
    rows: dict[str, list[RunMetrics]] = {}
    for name in names:
        ms = []
        for rep in range(repeats):
            s = seed + rep
            scenario, arrivals = _build_scenario(scenario_path, template,
                                                 vehicles, s)
            cfg = EngineConfig(seed=s, duration=duration,
                               total_budget=iterations)
            t0 = time.perf_counter()
            log = run_scenario(scenario, cfg, decider=DECIDERS[name],
                               arrivals=arrivals)
            m = compute_metrics(log, scenario)
            ms.append(m)
            click.echo(f"{name} seed={s} success={m.success_rate:.2f} "
                       f"collisions={m.collisions} "
                       f"wall={time.perf_counter() - t0:.1f}s", err=True)
        rows[name] = ms
    columns = ("success_rate", "expanded_nodes", "avg_available_actions",
               "min_distance", "avg_finish_time", "max_finish_time",
               "avg_headway", "avg_speed", "avg_travel_time", "throughput",
               "acceleration_ratio")
    table = _metrics_table(rows, columns)
    click.echo(table)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "compare.json"
    report.write_text(json.dumps(
        {name: [dataclasses.asdict(m) for m in ms]
         for name, ms in rows.items()}, indent=2, default=float) + "\n")
    (out / "compare.txt").write_text(table + "\n")
    click.echo(f"wrote {report}", err=True)


@main.command("sweep-nlimit")
@click.option("--vehicles", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--repeats", type=int, default=10, show_default=True)
@click.option("--duration", type=float, default=30.0, show_default=True)
@click.option("--limits", default="1,2,3,4,5", show_default=True)
@click.option("--out-dir", type=click.Path(file_okay=False), default="runs",
              show_default=True)
def sweep_nlimit(vehicles, seed, repeats, duration, limits, out_dir):
    """Sweep the maximum group size on the freeway template; emit the
    expanded-nodes / min-distance / finish-time / group-size series."""
    from .templates import freeway_scenario

    series = []
    for n_limit in [int(x) for x in limits.split(",")]:
        nodes, dists, finishes, sizes = [], [], [], []
        for rep in range(repeats):
            s = seed + rep
            scenario = freeway_scenario(n_vehicles=vehicles, seed=s)
            cfg = EngineConfig(seed=s, duration=duration)
            cfg.grouping.n_limit = n_limit
            log = run_scenario(scenario, cfg)
            m = compute_metrics(log, scenario)
            nodes.append(m.avg_expanded_nodes)
            dists.append(m.min_distance)
            if not math.isnan(m.avg_finish_time):
                finishes.append(m.avg_finish_time)
            sizes.append(max(max(d.group_sizes) for d in log.decisions))
        series.append({
            "n_limit": n_limit,
            "avg_expanded_nodes": float(np.mean(nodes)),
            "avg_min_distance": float(np.mean(dists)),
            "avg_finish_time": float(np.mean(finishes)) if finishes else None,
            "avg_max_group_size": float(np.mean(sizes)),
        })
        click.echo(json.dumps(series[-1]))
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "nlimit_sweep.json").write_text(json.dumps(series, indent=2) + "\n")
    click.echo(f"wrote {out / 'nlimit_sweep.json'}", err=True)


@main.command()
@with_options(scenario_opts)
@click.option("--decider", type=click.Choice(sorted(DECIDERS)), default="group",
              show_default=True)
@click.option("--fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
def export(scenario_path, template, vehicles, seed, duration, iterations,
           out_dir, decider, fmt):
    """Run a scenario and export its trajectories."""
    scenario, arrivals = _build_scenario(scenario_path, template, vehicles, seed)
    cfg = EngineConfig(seed=seed, duration=duration, total_budget=iterations)
    log = run_scenario(scenario, cfg, decider=DECIDERS[decider],
                       arrivals=arrivals)
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{scenario.name}-{decider}-seed{seed}"
    if fmt == "csv":
        path = out / f"{stem}.csv"
        log.write_csv(path)
    else:
        path = out / f"{stem}.json"
        doc = {"metadata": log.metadata(),
               "columns": list(log.COLUMNS),
               "rows": [list(r) for r in log.rows]}
        path.write_text(json.dumps(doc, default=float) + "\n")
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
