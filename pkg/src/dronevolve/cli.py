"""Command-line entry point.

Subcommands:

    run               execute (or resume) the configured experiment
    analyze           write per-generation metric tables for a finished run
    compare-baseline  retrain the conventional hexacopter and the best
                      evolved body with identical budgets and report both
    hover-check       static hover feasibility of a genotype file
    mutate-preview    show the effect of one seeded mutation
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics
from .config import ConfigError, ExperimentConfig, load_experiment_config
from .evolution import (
    EvolutionLog,
    ResumeError,
    _population_hash,
    derived_seed,
    run_evolution,
)
from .hover import check_static_hover
from .learner import RewardTrace, train
from .morphology import (
    MutationConfig,
    PARAM_NAMES,
    baseline_hexacopter,
    decode,
    genotype_to_dict,
    load_genotype,
    mutate,
    save_genotype,
)
from .tasks import evaluate_fitness

log = logging.getLogger(__name__)


def _load_config(args) -> ExperimentConfig:
    cfg = load_experiment_config(args.config)
    overrides = {}
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "budget", None) is not None:
        overrides["ppo"] = dataclasses.replace(cfg.ppo, total_timesteps=args.budget)
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


# ---------------------------------------------------------------------------
# run


def _verify_gen0(cfg: ExperimentConfig) -> int:
    """Re-derive generation 0 from the seed and compare against the stored
    hash, proving the artifacts match the (config, seed) pair."""
    from .evolution import init_population, derived_rng, _PATH_INIT

    failures = 0
    for rep in range(cfg.repetitions):
        rep_dir = cfg.repetition_dir(rep)
        try:
            log_ = EvolutionLog.load(rep_dir)
        except ResumeError as exc:
            print(f"rep {rep}: cannot load ({exc})")
            failures += 1
            continue
        evo_cfg = cfg.repetition_config(rep)
        rng = derived_rng(evo_cfg.seed, _PATH_INIT)
        population = init_population(evo_cfg, rng)
        fresh_hash = _population_hash(population)
        ok = fresh_hash == log_.gen0_hash
        print(f"rep {rep}: gen-0 hash {'matches' if ok else 'MISMATCH'} ({fresh_hash[:12]}...)")
        failures += 0 if ok else 1
    return 1 if failures else 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    if args.verify:
        return _verify_gen0(cfg)
    out_root = Path(cfg.output_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "experiment.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    for rep in range(cfg.repetitions):
        rep_dir = cfg.repetition_dir(rep)
        evo_cfg = cfg.repetition_config(rep)
        log_ = run_evolution(evo_cfg, rep_dir)
        best = max(s.summary["fitness_max"] for s in log_.generations)
        print(f"rep {rep}: {log_.n_trained} individuals trained, best fitness {best:g}")
    return 0


# ---------------------------------------------------------------------------
# analyze


_TABLE_COLUMNS = [
    "generation", "n", "fitness_mean", "fitness_max", "diversity",
    "ces_mean", "ces_std", "bis_mean", "bis_std",
    "t_b_mean", "t_b_std", "t_c_mean", "t_c_std",
    "speed_mean", "speed_std", "r_max_mean", "r_max_std",
    "volatility_mean", "volatility_std",
]


def metrics_table(log_: EvolutionLog) -> list[dict]:
    rows = []
    for rec in log_.generations:
        s = rec.summary
        rows.append({
            "generation": rec.generation,
            "n": s["n"],
            "fitness_mean": s["fitness_mean"],
            "fitness_max": s["fitness_max"],
            "diversity": s["diversity"],
            "ces_mean": s["central_symmetry"]["mean"],
            "ces_std": s["central_symmetry"]["std"],
            "bis_mean": s["bilateral_symmetry"]["mean"],
            "bis_std": s["bilateral_symmetry"]["std"],
            "t_b_mean": s["t_b"]["mean"],
            "t_b_std": s["t_b"]["std"],
            "t_c_mean": s["t_c"]["mean"],
            "t_c_std": s["t_c"]["std"],
            "speed_mean": s["speed"]["mean"],
            "speed_std": s["speed"]["std"],
            "r_max_mean": s["r_max"]["mean"],
            "r_max_std": s["r_max"]["std"],
            "volatility_mean": s["volatility"]["mean"],
            "volatility_std": s["volatility"]["std"],
        })
    return rows


def write_metrics_csv(rows: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else repr(row[k])) for k in _TABLE_COLUMNS})


def _log_dirs(root: Path) -> list[Path]:
    if (root / "manifest.json").exists():
        return [root]
    reps = sorted(p for p in root.glob("rep_*") if (p / "manifest.json").exists())
    if not reps:
        raise ResumeError(f"{root} contains no evolution log")
    return reps


def cmd_analyze(args) -> int:
    for log_dir in _log_dirs(Path(args.log_dir)):
        log_ = EvolutionLog.load(log_dir)
        out = Path(args.out) if args.out else log_dir / "metrics.csv"
        write_metrics_csv(metrics_table(log_), out)
        print(f"{log_dir}: wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# compare-baseline


def select_best_individual(log_: EvolutionLog):
    """Best of the final population: top fitness, ties broken by novelty."""
    population = log_.population(len(log_.generations) - 1)
    genotypes = [i.genotype for i in population]
    best_fitness = max(i.fitness for i in population)
    top = [i for i in population if i.fitness == best_fitness]
    if len(top) == 1:
        return top[0]
    scored = [(metrics.novelty(i.genotype, genotypes), -i.id, i) for i in top]
    scored.sort(reverse=True)
    return scored[0][2]


def compare_baseline(cfg: ExperimentConfig, log_: EvolutionLog, budget: int | None = None,
                     n_seeds: int | None = None) -> dict:
    """Train the conventional hexacopter and the best evolved body with
    identical budgets over several seeds; report the task-performance
    metrics for both."""
    ppo = cfg.ppo if budget is None else dataclasses.replace(cfg.ppo, total_timesteps=budget)
    n_seeds = n_seeds if n_seeds is not None else cfg.compare_seeds
    best = select_best_individual(log_)
    report = {
        "track": cfg.track.kind,
        "budget": ppo.total_timesteps,
        "n_seeds": n_seeds,
        "best_individual_id": best.id,
    }
    for name, genotype in (("baseline", baseline_hexacopter()), ("evolved", best.genotype)):
        ph = decode(genotype, cfg.physics)
        waypoints, max_rewards, lap_times = [], [], []
        for s in range(n_seeds):
            seed = derived_seed(cfg.seed, 200, s)
            result = train(ph, cfg.track, ppo, seed, cfg.physics, cfg.episode_seconds)
            fit = evaluate_fitness(ph, result.policy, cfg.track, cfg.physics, cfg.episode_seconds)
            waypoints.append(fit.waypoints)
            rewards = result.trace.rewards()
            if rewards.size:
                smoothed = metrics.smooth_median(rewards, cfg.descriptor_window)
                max_rewards.append(float(np.max(smoothed)))
            else:
                max_rewards.append(None)
            lap_times.append(fit.avg_lap_time)
        completed = [t for t in lap_times if t is not None]
        report[name] = {
            "genotype": genotype_to_dict(genotype),
            "waypoints": waypoints,
            "waypoints_mean": float(np.mean(waypoints)),
            "max_smoothed_reward": max_rewards,
            "avg_lap_time": lap_times,
            "avg_lap_time_mean": float(np.mean(completed)) if completed else None,
        }
    return report


def cmd_compare_baseline(args) -> int:
    cfg = _load_config(args)
    log_dir = Path(args.log_dir) if args.log_dir else _log_dirs(Path(cfg.output_dir))[0]
    log_ = EvolutionLog.load(log_dir)
    report = compare_baseline(cfg, log_, budget=args.budget, n_seeds=args.seeds)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
        print(f"wrote {args.out}")
    else:
        print(text)
    return 0


# ---------------------------------------------------------------------------
# hover-check and mutate-preview


def _load_genotype_arg(args):
    if args.genotype:
        return load_genotype(args.genotype)
    return baseline_hexacopter()


def cmd_hover_check(args) -> int:
    g = _load_genotype_arg(args)
    result = check_static_hover(decode(g), tol=args.tol)
    print(json.dumps(result.to_dict(), indent=2))
    return 0 if result.feasible else 1


def cmd_mutate_preview(args) -> int:
    g = _load_genotype_arg(args)
    rng = np.random.default_rng(args.seed)
    mutated = mutate(g, MutationConfig(), rng)
    before, after = g.as_array(), mutated.as_array()
    for i in range(before.shape[0]):
        for j, name in enumerate(PARAM_NAMES):
            if before[i, j] != after[i, j]:
                print(f"arm {i} {name}: {before[i, j]:.6f} -> {after[i, j]:.6f}")
    if args.out:
        save_genotype(args.out, mutated)
        print(f"wrote {args.out}")
    else:
        print(json.dumps(genotype_to_dict(mutated), indent=2))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dronevolve", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute or resume the configured experiment")
    run_p.add_argument("--config", required=True, help="YAML/JSON experiment config")
    run_p.add_argument("--output-dir", help="override the configured output directory")
    run_p.add_argument("--seed", type=int, help="override the master seed")
    run_p.add_argument("--budget", type=int, help="override ppo.total_timesteps (desk-scale runs)")
    run_p.add_argument("--verify", action="store_true",
                       help="re-derive generation 0 and compare hashes instead of running")
    run_p.set_defaults(func=cmd_run)

    an_p = sub.add_parser("analyze", help="write per-generation metric tables")
    an_p.add_argument("--log-dir", required=True, help="run directory (or experiment root)")
    an_p.add_argument("--out", help="output CSV path (default <log-dir>/metrics.csv)")
    an_p.set_defaults(func=cmd_analyze)

    cb_p = sub.add_parser("compare-baseline",
                          help="retrain baseline and best evolved bodies, report both")
    cb_p.add_argument("--config", required=True)
    cb_p.add_argument("--log-dir", help="evolution log to pick the best body from")
    cb_p.add_argument("--budget", type=int, help="training budget override")
    cb_p.add_argument("--seeds", type=int, help="number of training seeds per body")
    cb_p.add_argument("--seed", type=int, help="override the master seed")
    cb_p.add_argument("--out", help="write the JSON report here instead of stdout")
    cb_p.set_defaults(func=cmd_compare_baseline)

    hv_p = sub.add_parser("hover-check", help="static hover feasibility of a genotype")
    hv_p.add_argument("--genotype", help="genotype JSON file (default: baseline hexacopter)")
    hv_p.add_argument("--tol", type=float, default=1e-6)
    hv_p.set_defaults(func=cmd_hover_check)

    mp_p = sub.add_parser("mutate-preview", help="apply one seeded mutation and show the diff")
    mp_p.add_argument("--genotype", help="genotype JSON file (default: baseline hexacopter)")
    mp_p.add_argument("--seed", type=int, default=0)
    mp_p.add_argument("--out", help="write the mutated genotype here")
    mp_p.set_defaults(func=cmd_mutate_preview)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ResumeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
