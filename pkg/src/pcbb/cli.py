"""Command-line harness: seed sweeps over the protocols and summary tables.

    pcbb-sim run --config configs/table3.cfg [--protocol pcbb] [--seeds 1-20] [--out DIR]
    pcbb-sim compare results/summary.csv other/summary.csv

Flags given on the command line override the matching config-file values.
Exit status is 0 on success, 1 on a runtime failure and 2 on a config error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import engine, metrics
from .config import ConfigError, ExperimentConfig, ScenarioConfig, parse_kinds, parse_seeds, load_config

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

SUMMARY_HEADER = ["scenario_hash", "protocol", "metric", "n", "mean", "stddev"]
COMPARE_METRICS = (
    ("reception_1000_1500", "reception (1000,1500] m"),
    ("final_delay_us", "delay at final second (us)"),
    ("final_collision_ratio", "final collision ratio"),
)


def _one_run(cfg: ScenarioConfig, seed: int, out_dir: Path, trace: bool) -> dict[str, float]:
    tr = engine.run(cfg, seed)
    m = metrics.compute(tr)
    metrics.write_csvs(m, out_dir)
    if trace:
        tr.write(out_dir / "trace.csv", include_beacons=False)
    return m.summary()


def _job(args):
    return _one_run(*args)


def aggregate(rows: list[dict[str, float]]) -> dict[str, tuple[int, float, float]]:
    """``{metric: (n, mean, stddev)}`` over runs, ignoring NaN entries."""
    out = {}
    for key in rows[0]:
        vals = np.array([r[key] for r in rows], dtype=float)
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            out[key] = (0, math.nan, math.nan)
        else:
            sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
            out[key] = (int(vals.size), float(np.mean(vals)), sd)
    return out


def _num(v: float) -> str:
    return "nan" if v != v else f"{v:.6f}"


def run_experiment(exp: ExperimentConfig, out: Path, *, jobs: int = 1, quiet: bool = False, trace: bool = False) -> Path:
    """Run every protocol x seed of ``exp`` and write ``summary.csv``."""
    out.mkdir(parents=True, exist_ok=True)
    tasks = []
    for kind in exp.protocols:
        cfg = exp.for_protocol(kind)
        for seed in exp.seeds:
            tasks.append((cfg, seed, out / kind.value / f"seed_{seed}", trace))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, tasks))
    else:
        results = []
        for t in tasks:
            results.append(_job(t))
            if not quiet:
                print(f"{t[0].protocol.kind.value} seed {t[1]}: done", file=sys.stderr)
    scen_hash = exp.scenario.scenario_hash()
    path = out / "summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        n_seeds = len(exp.seeds)
        for i, kind in enumerate(exp.protocols):
            agg = aggregate(results[i * n_seeds : (i + 1) * n_seeds])
            for metric, (n, mean, sd) in agg.items():
                w.writerow([scen_hash, kind.value, metric, n, _num(mean), _num(sd)])
    return path


@dataclasses.dataclass
class Summary:
    path: str
    scenario_hash: str
    values: dict  # (protocol, metric) -> (mean, stddev)
    protocols: list


def read_summary(path) -> Summary:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(SUMMARY_HEADER) - set(rows[0]):
        raise ValueError(f"{path}: not a summary file")
    hashes = {r["scenario_hash"] for r in rows}
    if len(hashes) != 1:
        raise ValueError(f"{path}: mixes several scenarios")
    values, protocols = {}, []
    for r in rows:
        if r["protocol"] not in protocols:
            protocols.append(r["protocol"])
        values[(r["protocol"], r["metric"])] = (float(r["mean"]), float(r["stddev"]))
    return Summary(str(path), hashes.pop(), values, protocols)


def compare(summaries: Sequence[Summary]) -> list[list[str]]:
    """Side-by-side rows, one column per protocol in the order given."""
    if not summaries:
        raise ValueError("compare needs at least one summary")
    first = summaries[0].scenario_hash
    for s in summaries[1:]:
        if s.scenario_hash != first:
            raise ConfigError(f"scenario mismatch: {summaries[0].path} has {first}, {s.path} has {s.scenario_hash}")
    columns = [(s, p) for s in summaries for p in s.protocols]
    table = [["metric"] + [p for _, p in columns]]
    for key, label in COMPARE_METRICS:
        row = [label]
        for s, p in columns:
            mean, sd = s.values.get((p, key), (math.nan, math.nan))
            row.append(f"{mean:.4g} +/- {sd:.2g}")
        table.append(row)
    return table


def format_table(table: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in table)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcbb-sim", description="Emergency-message forwarding simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a seed sweep")
    r.add_argument("--config", required=True, help="key = value config file")
    r.add_argument("--protocol", help="comma list overriding protocol.kind")
    r.add_argument("--seeds", help="seed list or range such as 1-20, overriding run.seeds")
    r.add_argument("--seed", type=int, help="single seed, overriding run.seeds")
    r.add_argument("--out", help="output directory, overriding run.output_dir")
    r.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    r.add_argument("--trace", action="store_true", help="also write the emergency-event trace per run")
    r.add_argument("--quiet", action="store_true")

    c = sub.add_parser("compare", help="compare summary files")
    c.add_argument("summaries", nargs="+")
    c.add_argument("--out", help="also write the table as CSV")
    return ap


def _apply_overrides(exp: ExperimentConfig, ns) -> ExperimentConfig:
    changes = {}
    try:
        if ns.protocol:
            changes["protocols"] = parse_kinds(ns.protocol)
        if ns.seeds:
            changes["seeds"] = parse_seeds(ns.seeds)
        if ns.seed is not None:
            changes["seeds"] = (ns.seed,)
    except ValueError as exc:
        raise ConfigError(f"bad command-line override: {exc}") from exc
    if ns.out:
        changes["output_dir"] = ns.out
    return dataclasses.replace(exp, **changes)


def _cmd_run(ns) -> int:
    try:
        require = () if ns.protocol else ("protocol.kind",)
        exp = _apply_overrides(load_config(ns.config, require=require), ns)
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"error: {ns.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        path = run_experiment(exp, Path(exp.output_dir), jobs=ns.jobs, quiet=ns.quiet, trace=ns.trace)
    except Exception as exc:  # noqa: BLE001 - any failure mid-sweep is a runtime error
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not ns.quiet:
        print(path)
    return EXIT_OK


def _cmd_compare(ns) -> int:
    try:
        summaries = [read_summary(p) for p in ns.summaries]
        table = compare(summaries)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(format_table(table))
    if ns.out:
        with open(ns.out, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(table)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    if ns.command == "run":
        return _cmd_run(ns)
    return _cmd_compare(ns)


if __name__ == "__main__":
    sys.exit(main())
