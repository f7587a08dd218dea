"""Command-line entry point: generate, diagnose, split, evaluate, compare, report.

Every subcommand is deterministic given its inputs and seeds.  Exit
codes: 0 on success, 1 for user or configuration errors, 2 for
internal failures.  The data path can default from ``CMLBENCH_DATA``
and the worker count from ``CMLBENCH_WORKERS``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import comparison as cmp
from . import dataset as ds
from . import evaluation as ev
from . import figures
from . import indicators as ind
from .dynamics import sample_ic

__all__ = ["main", "RunConfig", "UserError", "parse_instance_filter"]


class UserError(Exception):
    """A problem the user can fix: bad flag, missing file, bad config."""


@dataclass(frozen=True)
class RunConfig:
    """Resolved invocation of one subcommand."""

    subcommand: str
    data: Optional[str] = None
    grid_config: Optional[str] = None
    instance_filter: Optional[str] = None
    model: Optional[str] = None
    seeds: tuple[int, ...] = (0,)
    cap: int = ev.DEFAULT_ROLLOUT_CAP
    out: Optional[str] = None
    workers: int = 1


def parse_instance_filter(spec: Optional[str]):
    """Build a predicate from ``K=2.0,rho=0.1,N=8``; ``*`` and omitted keys match all."""
    if not spec:
        return lambda instance: True
    wanted: dict[str, float] = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise UserError(f"bad filter term {part!r}; expected key=value")
        key, _, value = part.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in ("K", "rho", "N"):
            raise UserError(f"unknown filter key {key!r}; use K, rho, or N")
        if value == "*":
            continue
        try:
            wanted[key] = float(value)
        except ValueError:
            raise UserError(f"bad filter value for {key!r}: {value!r}") from None

    def predicate(instance: ds.GridInstance) -> bool:
        return (("K" not in wanted or instance.K == wanted["K"])
                and ("rho" not in wanted or instance.rho == wanted["rho"])
                and ("N" not in wanted or instance.N == wanted["N"]))

    return predicate


def _parse_seeds(text: str) -> tuple[int, ...]:
    try:
        seeds = tuple(int(s.strip()) for s in text.split(",") if s.strip())
    except ValueError:
        raise UserError(f"bad seeds list {text!r}") from None
    if not seeds:
        raise UserError("seeds list is empty")
    return seeds


def _workers(args) -> int:
    if args.workers is not None:
        return max(1, args.workers)
    env = os.environ.get("CMLBENCH_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UserError(f"bad CMLBENCH_WORKERS value {env!r}") from None
    return os.cpu_count() or 1


def _data_path(args) -> str:
    data = getattr(args, "data", None) or os.environ.get("CMLBENCH_DATA")
    if not data:
        raise UserError("no data path: pass --data or set CMLBENCH_DATA")
    return data


def _require_file(path, what: str) -> str:
    if not Path(path).exists():
        raise UserError(f"{what} not found: {path}")
    return str(path)


# ---------------------------------------------------------------- generate

def _generate_task(payload):
    instance, n_ics, master_seed, transient, record = payload
    states, seeds, diags = ds.generate_instance_arrays(
        instance, n_ics, master_seed, transient=transient, record=record)
    return instance, states, seeds, diags


def cmd_generate(args) -> int:
    if args.grid_config:
        grid = ds.parse_grid_config(_require_file(args.grid_config, "grid config"))
    elif args.full:
        grid = ds.DesignGrid()
    else:
        grid = ds.DesignGrid.desk()
    if args.master_seed is not None:
        grid = ds.DesignGrid(
            k_values=grid.k_values, rho_values=grid.rho_values,
            n_values=grid.n_values, ics_per_instance=grid.ics_per_instance,
            master_seed=args.master_seed, transient=grid.transient,
            record=grid.record)
    keep = parse_instance_filter(args.filter)
    instances = [g for g in ds.build_grid(grid) if keep(g)]
    if not instances:
        raise UserError("instance filter matched nothing")

    out = args.out or _data_path(args)
    diagnostics_path = args.diagnostics or str(Path(out).with_suffix("")) + \
        ".diagnostics.csv"
    workers = _workers(args)
    payloads = [(g, grid.ics_per_instance, grid.master_seed, grid.transient,
                 grid.record) for g in instances]
    diag_rows = []
    with ds.TrajectoryStore(out, "w") as store:
        store.set_grid_metadata(grid)
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_generate_task, payloads, chunksize=1)
                for instance, states, seeds, diags in results:
                    for i in range(states.shape[0]):
                        store.write_trajectory(instance, i, states[i],
                                               seeds[i], diags[i],
                                               grid.transient)
                        diag_rows.append((instance.key, i, diags[i]))
        else:
            for payload in payloads:
                instance, states, seeds, diags = _generate_task(payload)
                for i in range(states.shape[0]):
                    store.write_trajectory(instance, i, states[i], seeds[i],
                                           diags[i], grid.transient)
                    diag_rows.append((instance.key, i, diags[i]))
    ind.write_diagnostics_csv(diagnostics_path, diag_rows)
    print(f"generated {len(instances)} instances x {grid.ics_per_instance} ICs "
          f"-> {out}")
    print(f"diagnostics -> {diagnostics_path}")
    return 0


# ---------------------------------------------------------------- diagnose

def cmd_diagnose(args) -> int:
    data = _require_file(_data_path(args), "data file")
    rows = []
    with ds.TrajectoryStore(data, "r") as store:
        for instance in store.instances():
            for i in store.ic_indices(instance):
                traj, diag = store.read_trajectory(instance, i)
                if args.recompute:
                    ic = sample_ic(traj.seed, instance.N)
                    diag = ind.diagnose_orbit(
                        ic, instance.params, traj.seed,
                        transient=traj.transient_discarded,
                        lyapunov_horizon=traj.T)
                rows.append((instance.key, i, diag))
    ind.write_diagnostics_csv(args.out, rows)
    print(f"diagnostics for {len(rows)} trajectories -> {args.out}")
    return 0


# ---------------------------------------------------------------- split

def cmd_split(args) -> int:
    n_ics = args.n_ics
    if n_ics is None:
        data = _require_file(_data_path(args), "data file")
        with ds.TrajectoryStore(data, "r") as store:
            instances = store.instances()
            if not instances:
                raise UserError(f"data file {data} holds no instances")
            n_ics = len(store.ic_indices(instances[0]))
    if args.ratios:
        try:
            ratios = tuple(int(r) for r in args.ratios.split(","))
        except ValueError:
            raise UserError(f"bad ratios {args.ratios!r}") from None
        if len(ratios) != 3:
            raise UserError("ratios must be train,val,test")
    else:
        ratios = ds.default_split_ratios(n_ics)
    try:
        split = ds.split_ics(n_ics, ratios, args.split_seed)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    payload = {"n_ics": n_ics, "split_seed": split.split_seed,
               "train": list(split.train), "val": list(split.val),
               "test": list(split.test)}
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"split {ratios[0]}/{ratios[1]}/{ratios[2]} of {n_ics} ICs -> {args.out}")
    return 0


def _load_split(path) -> ds.SplitSpec:
    with open(path) as fh:
        payload = json.load(fh)
    return ds.SplitSpec(train=tuple(payload["train"]), val=tuple(payload["val"]),
                        test=tuple(payload["test"]),
                        split_seed=payload["split_seed"])


# ---------------------------------------------------------------- evaluate

def _evaluate_task(payload):
    (path, instance, split, model, seeds, cap, length, horizon, stride,
     timeout) = payload
    with ds.TrajectoryStore(path, "r") as store:
        trajectories = store.load_instance(instance)
    return ev.evaluate_instance(trajectories, instance, split, model,
                                seeds=seeds, cap=cap, length=length,
                                horizon=horizon, train_stride=stride,
                                timeout=timeout)


def cmd_evaluate(args) -> int:
    data = _require_file(_data_path(args), "data file")
    keep = parse_instance_filter(args.filter)
    seeds = _parse_seeds(args.seeds)
    with ds.TrajectoryStore(data, "r") as store:
        instances = [g for g in store.instances() if keep(g)]
        if not instances:
            raise UserError("instance filter matched no stored instances")
        n_ics = len(store.ic_indices(instances[0]))
    if args.split_file:
        split = _load_split(_require_file(args.split_file, "split file"))
        if split.n_ics != n_ics:
            raise UserError(f"split file covers {split.n_ics} ICs, "
                            f"data has {n_ics}")
    else:
        split = ds.split_ics(n_ics, ds.default_split_ratios(n_ics),
                             args.split_seed)
    if args.cap % args.horizon:
        raise UserError("cap must be a multiple of the horizon")

    payloads = [(data, g, split, args.model, seeds, args.cap, args.length,
                 args.horizon, args.train_stride, args.timeout)
                for g in instances]
    workers = _workers(args)
    results: list[ev.InstanceResult] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_evaluate_task, payloads, chunksize=1):
                results.extend(chunk)
    else:
        for payload in payloads:
            results.extend(_evaluate_task(payload))
    ev.write_results_csv(args.out, results)
    if args.details:
        ev.write_details_csv(args.details, results,
                             {i: split.test for i in range(len(results))})
    n_valid = sum(r.valid for r in results)
    print(f"evaluated model={args.model} on {len(instances)} instances x "
          f"{len(seeds)} seeds: {n_valid}/{len(results)} valid -> {args.out}")
    return 0


# ---------------------------------------------------------------- compare

def _seed_mean_scores(rows: Sequence[ev.ResultRow]) -> cmp.Scores:
    grouped: dict[tuple[str, tuple[float, float, int]], list[ev.ResultRow]] = {}
    for row in rows:
        grouped.setdefault((row.model, row.instance_key), []).append(row)
    scores: dict[str, dict[tuple[float, float, int], cmp.InstanceScore]] = {}
    for (model, key), group in sorted(grouped.items()):
        mean_vpt = float(np.mean([r.mean_vpt for r in group]))
        mean_mse = float(np.mean([r.test_mse for r in group]))
        degenerate = sum(r.n_degenerate for r in group)
        valid = (degenerate == 0 and not np.isnan(mean_mse)
                 and mean_mse < ev.VALIDITY_MSE_THRESHOLD)
        scores.setdefault(model, {})[key] = cmp.InstanceScore(
            mean_vpt=mean_vpt, valid=valid)
    return scores


def cmd_compare(args) -> int:
    rows: list[ev.ResultRow] = []
    for path in args.results:
        rows.extend(ev.read_results_csv(_require_file(path, "results file")))
    scores = _seed_mean_scores(rows)
    models = sorted(scores)
    if len(models) < 2:
        raise UserError("comparison requires results for at least two models")
    if args.pair:
        pairs = []
        for spec in args.pair:
            a, _, b = spec.partition(",")
            a, b = a.strip(), b.strip()
            if not a or not b:
                raise UserError(f"bad pair spec {spec!r}; expected A,B")
            for m in (a, b):
                if m not in scores:
                    raise UserError(f"no results for model {m!r}")
            pairs.append((a, b))
    else:
        pairs = [(a, b) for i, a in enumerate(models) for b in models[i + 1:]]

    reports = [cmp.report_pair(scores, a, b) for a, b in pairs]
    cmp.write_comparison_csv(args.out, reports)
    table = cmp.fractional_wins(scores) if len(models) >= 2 else None
    for r in reports:
        note = " (all differences zero)" if r.wilcoxon.all_zero else ""
        print(f"{r.model_a} vs {r.model_b}: pairs={r.n_pairs} "
              f"wins={r.wins_a:g}-{r.wins_b:g} "
              f"wilcoxon_p={r.wilcoxon.p_value:.6g}{note} "
              f"a_only={r.a_only} b_only={r.b_only} "
              f"mcnemar_p={r.mcnemar_p:.6g}")
    if table is not None:
        shares = ", ".join(f"{m}={table.wins[m]:g}" for m in sorted(table.wins))
        print(f"fractional wins over {table.n_scored} scored instances: {shares}")
    print(f"comparison report -> {args.out}")
    return 0


# ---------------------------------------------------------------- report

def _regime_summaries(diag_rows):
    by_instance: dict[tuple[float, float, int], list[ind.OrbitDiagnostics]] = {}
    for key, _, diag in diag_rows:
        k_part, rho_part, n_part = key.split("/")
        cell = (float(k_part[1:]), float(rho_part[3:]), int(n_part[1:]))
        by_instance.setdefault(cell, []).append(diag)
    return {cell: ind.regime_stats(diags)
            for cell, diags in by_instance.items()}


def cmd_report(args) -> int:
    diag_rows = ind.read_diagnostics_csv(
        _require_file(args.diagnostics, "diagnostics file"))
    summaries = _regime_summaries(diag_rows)
    scores = None
    if args.results:
        rows = []
        for path in args.results:
            rows.extend(ev.read_results_csv(_require_file(path, "results file")))
        scores = _seed_mean_scores(rows)
    cells = cmp.regime_report(summaries, scores)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cmp.write_design_space_csv(out_dir / "design_space.csv", cells)
    n_values = sorted({c.N for c in cells})
    for n in n_values:
        svg = figures.design_space_svg(cells, n)
        (out_dir / f"design_space_N{n}.svg").write_text(svg)
        if scores:
            svg = figures.winner_map_svg(cells, n)
            (out_dir / f"winner_map_N{n}.svg").write_text(svg)
    what = "design-space + winner maps" if scores else "design-space maps"
    print(f"{what} for N in {n_values} -> {out_dir}")
    return 0


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UserError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cmlbench",
                     description="Coupled standard map lattice benchmark")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="simulate and persist the design grid")
    p.add_argument("--grid-config", help="flat key=value grid file")
    p.add_argument("--full", action="store_true",
                   help="full 100-IC profile (default: 20-IC desk profile)")
    p.add_argument("--master-seed", type=int, default=None)
    p.add_argument("--filter", help="instance filter, e.g. K=2.0,rho=0.1,N=8")
    p.add_argument("--out", help="output HDF5 path (or CMLBENCH_DATA)")
    p.add_argument("--data", help=argparse.SUPPRESS)
    p.add_argument("--diagnostics", help="diagnostics CSV path")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("diagnose", help="export per-orbit diagnostics CSV")
    p.add_argument("--data", help="HDF5 data path (or CMLBENCH_DATA)")
    p.add_argument("--out", required=True, help="diagnostics CSV path")
    p.add_argument("--recompute", action="store_true",
                   help="recompute indicators from stored seeds")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("split", help="emit a train/val/test IC split")
    p.add_argument("--data", help="HDF5 data path (or CMLBENCH_DATA)")
    p.add_argument("--n-ics", type=int, default=None)
    p.add_argument("--ratios", help="train,val,test counts (default 70/10/20 scaled)")
    p.add_argument("--split-seed", type=int, default=7)
    p.add_argument("--out", required=True, help="split JSON path")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("evaluate", help="roll a forecaster over stored instances")
    p.add_argument("--data", help="HDF5 data path (or CMLBENCH_DATA)")
    p.add_argument("--model", required=True,
                   help="persistence|climatology|ridge|oracle|extern:<command>")
    p.add_argument("--filter", help="instance filter, e.g. K=6.5")
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--cap", type=int, default=ev.DEFAULT_ROLLOUT_CAP)
    p.add_argument("--length", type=int, default=48)
    p.add_argument("--horizon", type=int, default=12)
    p.add_argument("--train-stride", type=int, default=12)
    p.add_argument("--split-seed", type=int, default=7)
    p.add_argument("--split-file", help="split JSON from the split subcommand")
    p.add_argument("--timeout", type=float, default=60.0,
                   help="per-request timeout for external forecasters")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--details", help="optional per-trajectory CSV path")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="pairwise statistics over results CSVs")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--pair", action="append",
                   help="model pair 'A,B'; repeatable (default: all pairs)")
    p.add_argument("--out", required=True, help="comparison CSV path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="design-space CSV and SVG heatmaps")
    p.add_argument("--diagnostics", required=True, help="diagnostics CSV path")
    p.add_argument("--results", nargs="*", default=[],
                   help="results CSVs for the winner layer")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ds.GridConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # internal invariant violation
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
