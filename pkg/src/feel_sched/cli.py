"""Command-line front end: `run`, `verify`, and `compare`.

`run` executes an experiment config over its seed list (worker pool capped
by FEEL_SCHED_THREADS), writing one CSV per run plus a summary JSON.
`verify` drives the numerical verification suites. `compare` runs several
configs that differ in scheduling policy and tabulates median
time-to-target-accuracy and final accuracy over shared seeds.

Exit codes: 0 success, 1 runtime or gated-check failure, 2 config errors.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import analysis
from .config import ConfigError, ExperimentConfig, apply_overrides, build_bundle, config_hash, load_config
from .trainer import RoundReport, run_experiment

CSV_HEADER = "round,sim_seconds,loss,accuracy,scheduled,lambda_star"


# ---------------------------------------------------------------------------
# Run output
# ---------------------------------------------------------------------------

def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))  # plain shortest round-trip form
    return str(value)


def render_csv(reports: Sequence[RoundReport]) -> str:
    lines = [CSV_HEADER]
    for r in reports:
        lines.append(",".join([
            str(r.round_index),
            _csv_cell(r.cumulative_s),
            _csv_cell(r.global_loss),
            _csv_cell(r.accuracy),
            "|".join(str(i) for i in r.scheduled_ids),
            _csv_cell(r.lambda_star),
        ]))
    return "\n".join(lines) + "\n"


def _execute_seed(cfg_dict: Dict, seed: int) -> Tuple[int, str, Dict]:
    cfg = ExperimentConfig.from_dict(cfg_dict)
    bundle = build_bundle(cfg)
    reports = run_experiment(bundle, seed)
    final = reports[-1]
    metrics = {
        "seed": seed,
        "rounds_run": len(reports),
        "final_loss": final.global_loss,
        "final_accuracy": final.accuracy,
        "simulated_seconds": final.cumulative_s,
    }
    return seed, render_csv(reports), metrics


def _worker_count(n_jobs: int) -> int:
    cap = os.environ.get("FEEL_SCHED_THREADS")
    if cap is not None:
        return max(1, min(n_jobs, int(cap)))
    return max(1, min(n_jobs, os.cpu_count() or 1))


def run_config(cfg: ExperimentConfig, out_dir: Path, quiet: bool = False,
               overrides: Sequence[str] = ()) -> Dict:
    """Execute all seeds of one config; returns the summary dictionary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    seeds = list(cfg.seeds)
    start = time.time()

    workers = _worker_count(len(seeds))
    results = []
    if workers == 1 or len(seeds) == 1:
        for seed in seeds:
            results.append(_execute_seed(cfg_dict, seed))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_execute_seed, cfg_dict, s) for s in seeds]
            results = [f.result() for f in futures]

    results.sort(key=lambda item: item[0])
    per_seed = []
    for seed, csv_text, metrics in results:
        csv_path = out_dir / f"run_seed{seed}.csv"
        csv_path.write_bytes(csv_text.encode())
        per_seed.append(metrics)
        if not quiet:
            acc = metrics["final_accuracy"]
            acc_str = "n/a" if acc is None else f"{acc:.4f}"
            print(f"seed {seed}: {metrics['rounds_run']} rounds, "
                  f"loss {metrics['final_loss']:.6g}, accuracy {acc_str}, "
                  f"sim {metrics['simulated_seconds']:.6g} s")

    summary = {
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "overrides": list(overrides),
        "seeds": seeds,
        "per_seed": per_seed,
        "csv_schema": CSV_HEADER,
        "host_runtime_s": time.time() - start,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def _first_crossing(reports: Sequence[RoundReport], target: float) -> Optional[float]:
    for r in reports:
        if r.accuracy is not None and r.accuracy >= target:
            return r.cumulative_s
    return None


def compare_configs(
    configs: List[ExperimentConfig],
    labels: List[str],
    target_accuracy: Optional[float] = None,
    target_quantile: float = 0.9,
    quiet: bool = False,
) -> Dict:
    """Run each config over its (shared) seed list and tabulate the median
    simulated time-to-target and the median final accuracy per policy.

    When no explicit target is given it is derived from the first config's
    final accuracies: the level that a `target_quantile` fraction of those
    runs finish at or above (so 0.9 targets what 90% of runs achieve).
    """
    import numpy as np

    all_reports: List[List[List[RoundReport]]] = []
    for cfg in configs:
        bundle = build_bundle(cfg)
        all_reports.append([run_experiment(bundle, seed) for seed in cfg.seeds])

    finals = [
        [runs[-1].accuracy for runs in runs_per_seed]
        for runs_per_seed in all_reports
    ]
    if any(a is None for accs in finals for a in accs):
        raise ValueError("compare needs a classification task with accuracy reporting")

    if target_accuracy is None:
        target_accuracy = float(np.quantile(np.array(finals[0]), 1.0 - target_quantile))

    rows = []
    for label, runs_per_seed, accs in zip(labels, all_reports, finals):
        times = [_first_crossing(runs, target_accuracy) for runs in runs_per_seed]
        reached = [t for t in times if t is not None]
        median_time = statistics.median(reached) if len(reached) * 2 >= len(times) and reached else None
        rows.append({
            "policy": label,
            "median_time_to_target_s": median_time,
            "reached": f"{len(reached)}/{len(times)}",
            "median_final_accuracy": statistics.median(accs),
        })

    if not quiet:
        print(f"target accuracy: {target_accuracy:.4f}")
        header = f"{'policy':<24} {'median_time_to_target_s':>24} {'reached':>8} {'median_final_acc':>17}"
        print(header)
        print("-" * len(header))
        for row in rows:
            t = row["median_time_to_target_s"]
            t_str = "unreached" if t is None else f"{t:.6g}"
            print(f"{row['policy']:<24} {t_str:>24} {row['reached']:>8} "
                  f"{row['median_final_accuracy']:>17.4f}")

    return {"target_accuracy": target_accuracy, "rows": rows}


def write_compare_csv(result: Dict, path: Path) -> None:
    lines = ["policy,median_time_to_target_s,reached,median_final_accuracy"]
    for row in result["rows"]:
        t = row["median_time_to_target_s"]
        lines.append(",".join([
            row["policy"],
            "" if t is None else repr(float(t)),
            row["reached"],
            repr(float(row["median_final_accuracy"])),
        ]))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feel-sched",
        description="Importance- and channel-aware federated edge learning simulator",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    run_p = sub.add_parser("run", help="execute an experiment config over its seeds")
    run_p.add_argument("--config", help="YAML or JSON experiment file")
    run_p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted config override (repeatable)")
    run_p.add_argument("--seeds", type=int, help="run seeds 1..N instead of the config list")
    run_p.add_argument("--seed-list", help="comma-separated explicit seeds")
    run_p.add_argument("--out", default=None, help="output directory")
    run_p.add_argument("--quiet", action="store_true")

    verify_p = sub.add_parser("verify", help="run a numerical verification suite")
    verify_p.add_argument("suite", choices=["unbiasedness", "optimality", "bandwidth", "bounds", "all"])
    verify_p.add_argument("--out", default=None, help="directory for the verification JSON")
    verify_p.add_argument("--quiet", action="store_true")

    cmp_p = sub.add_parser("compare", help="compare scheduling policies on shared seeds")
    cmp_p.add_argument("configs", nargs="+", help="experiment files differing in scheduler policy/rho")
    cmp_p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    cmp_p.add_argument("--target", type=float, default=None, help="explicit target accuracy")
    cmp_p.add_argument("--force", action="store_true",
                       help="allow configs that differ beyond scheduler policy/rho")
    cmp_p.add_argument("--out", default=None, help="output directory")
    cmp_p.add_argument("--quiet", action="store_true")
    return parser


def _resolve_run_config(args) -> ExperimentConfig:
    from .config import default_config_path

    cfg = load_config(args.config or default_config_path(), args.overrides)
    if args.seed_list:
        cfg.seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
    elif args.seeds:
        cfg.seeds = list(range(1, args.seeds + 1))
    cfg.validate()
    return cfg


def _comparable(a: Dict, b: Dict) -> bool:
    """True when two config dicts differ only inside scheduler.policy/rho."""
    def scrub(d):
        d = json.loads(json.dumps(d))
        d.get("scheduler", {}).pop("policy", None)
        d.get("scheduler", {}).pop("rho", None)
        return d
    return scrub(a) == scrub(b)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = _resolve_run_config(args)
            out_dir = Path(args.out or cfg.output.dir)
            run_config(cfg, out_dir, quiet=args.quiet, overrides=args.overrides)
            return 0

        if args.verb == "verify":
            checks = analysis.run_suite(args.suite)
            report = {
                "suite": args.suite,
                "checks": [c.as_dict() for c in checks],
                "all_passed": all(c.passed for c in checks if c.gated),
            }
            if args.out:
                out_dir = Path(args.out)
                out_dir.mkdir(parents=True, exist_ok=True)
                (out_dir / f"verify_{args.suite}.json").write_text(
                    json.dumps(report, indent=2, sort_keys=True)
                )
            failed = [c for c in checks if c.gated and not c.passed]
            if not args.quiet:
                for c in checks:
                    status = "PASS" if c.passed else "FAIL"
                    print(f"[{status}] {c.name}: {c.detail} (margin {c.margin:.3e})")
            if failed:
                print(f"{len(failed)} gated check(s) failed", file=sys.stderr)
                return 1
            return 0

        if args.verb == "compare":
            configs = [load_config(p, args.overrides) for p in args.configs]
            dicts = [c.to_dict() for c in configs]
            if not args.force:
                for other in dicts[1:]:
                    if not _comparable(dicts[0], other):
                        raise ConfigError(
                            "compare configs must differ only in scheduler.policy/rho "
                            "(pass --force to override)"
                        )
            labels = [
                f"{c.scheduler.policy}"
                + (f"(rho={c.scheduler.rho})" if c.scheduler.policy == "importance_channel" else "")
                for c in configs
            ]
            result = compare_configs(configs, labels, target_accuracy=args.target, quiet=args.quiet)
            if args.out:
                out_dir = Path(args.out)
                out_dir.mkdir(parents=True, exist_ok=True)
                write_compare_csv(result, out_dir / "compare.csv")
            return 0

        raise AssertionError(f"unhandled verb {args.verb}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
