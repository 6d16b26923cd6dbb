"""(mu + lambda) evolution of drone bodies with learning-in-the-loop fitness.

Each new body gets a controller trained from scratch; its fitness is the
waypoint count of a deterministic evaluation rollout with that controller.
Survivor selection keeps the best mu of parents plus offspring, so the best
fitness never decreases.  Runs are checkpointed per generation and resumable,
and are bit-reproducible from the master seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import PhysicalConstants
from . import metrics
from .hover import check_static_hover
from .learner import PPOConfig, RewardTrace, save_policy, train
from .morphology import (
    Genotype,
    MutationConfig,
    RepairFailed,
    decode,
    genotype_from_dict,
    genotype_to_dict,
    mutate,
    random_genotype,
)
from .tasks import DEFAULT_EPISODE_SECONDS, Track, evaluate_fitness

log = logging.getLogger(__name__)

MANIFEST_SCHEMA = "evolution-log/1"


class InitExhausted(RuntimeError):
    """Could not fill the initial population with hover-capable bodies."""


class ResumeError(RuntimeError):
    """An on-disk run directory could not be resumed."""


@dataclass(frozen=True)
class EvolutionConfig:
    track: Track
    mu: int = 12
    lam: int = 12
    generations: int = 40
    seed: int = 0
    mutation: MutationConfig = field(default_factory=MutationConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    physics: PhysicalConstants = field(default_factory=PhysicalConstants)
    init_attempt_cap: int = 10_000
    episode_seconds: float = DEFAULT_EPISODE_SECONDS
    descriptor_window: int = metrics.DEFAULT_SMOOTHING_WINDOW

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError("mu and lam must be positive")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")

    def to_dict(self) -> dict:
        return {
            "track": self.track.to_dict(),
            "mu": self.mu,
            "lam": self.lam,
            "generations": self.generations,
            "seed": self.seed,
            "mutation": self.mutation.to_dict(),
            "ppo": self.ppo.to_dict(),
            "physics": self.physics.to_dict(),
            "init_attempt_cap": self.init_attempt_cap,
            "episode_seconds": self.episode_seconds,
            "descriptor_window": self.descriptor_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvolutionConfig":
        return cls(
            track=Track.from_dict(d["track"]),
            mu=int(d["mu"]),
            lam=int(d["lam"]),
            generations=int(d["generations"]),
            seed=int(d["seed"]),
            mutation=MutationConfig.from_dict(d["mutation"]),
            ppo=PPOConfig.from_dict(d["ppo"]),
            physics=PhysicalConstants.from_dict(d["physics"]),
            init_attempt_cap=int(d["init_attempt_cap"]),
            episode_seconds=float(d["episode_seconds"]),
            descriptor_window=int(d["descriptor_window"]),
        )


@dataclass
class Individual:
    id: int
    genotype: Genotype
    parent_id: int | None
    generation_born: int
    fitness: int | None = None
    episode_return: float | None = None
    avg_lap_time: float | None = None
    descriptors: metrics.LearningDescriptors | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "genotype": genotype_to_dict(self.genotype),
            "parent_id": self.parent_id,
            "generation_born": self.generation_born,
            "fitness": self.fitness,
            "episode_return": self.episode_return,
            "avg_lap_time": self.avg_lap_time,
            "descriptors": self.descriptors.to_dict() if self.descriptors else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Individual":
        desc = d.get("descriptors")
        return cls(
            id=int(d["id"]),
            genotype=genotype_from_dict(d["genotype"]),
            parent_id=None if d["parent_id"] is None else int(d["parent_id"]),
            generation_born=int(d["generation_born"]),
            fitness=None if d["fitness"] is None else int(d["fitness"]),
            episode_return=d["episode_return"],
            avg_lap_time=d["avg_lap_time"],
            descriptors=metrics.LearningDescriptors.from_dict(desc) if desc else None,
        )


# ---------------------------------------------------------------------------
# Deterministic seed derivation


def derived_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Independent stream keyed by (master seed, path); resume-safe because
    it never depends on how much randomness earlier stages consumed."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), *map(int, path)]))


def derived_seed(master_seed: int, *path: int) -> int:
    """63-bit integer seed derived the same way, for torch-side seeding."""
    state = np.random.SeedSequence([int(master_seed), *map(int, path)]).generate_state(2)
    return int((int(state[0]) << 31) ^ int(state[1]))


# Purpose codes for seed-path derivation.
_PATH_INIT = 0
_PATH_REPRODUCE = 1
_PATH_TRAIN = 2


# ---------------------------------------------------------------------------
# Population operators


def init_population(
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    sampler=None,
    hover_check=None,
) -> list[Individual]:
    """Random bodies filtered by the static hover test until mu accepted.

    ``sampler`` and ``hover_check`` are injectable for tests; defaults are
    random_genotype and check_static_hover.
    """
    sampler = sampler or (lambda r: random_genotype(r, cfg.physics))
    hover_check = hover_check or (lambda ph: check_static_hover(ph, g=cfg.physics.g).feasible)
    accepted: list[Individual] = []
    rejected = 0
    for _ in range(cfg.init_attempt_cap):
        g = sampler(rng)
        if hover_check(decode(g, cfg.physics)):
            accepted.append(
                Individual(id=len(accepted), genotype=g, parent_id=None, generation_born=0)
            )
            if len(accepted) == cfg.mu:
                log.info("initial population filled; %d hover-infeasible rejects", rejected)
                return accepted
        else:
            rejected += 1
    raise InitExhausted(
        f"{len(accepted)}/{cfg.mu} feasible bodies after {cfg.init_attempt_cap} attempts "
        f"({rejected} hover rejects)"
    )


def reproduce(
    parents: list[Individual],
    cfg: EvolutionConfig,
    rng: np.random.Generator,
    next_id: int,
    generation: int,
) -> list[Individual]:
    """lambda offspring, each a mutation of a uniformly drawn parent.

    Mutations whose repair fails are resampled (fresh parent draw included).
    """
    offspring = []
    while len(offspring) < cfg.lam:
        parent = parents[int(rng.integers(len(parents)))]
        try:
            child = mutate(parent.genotype, cfg.mutation, rng, cfg.physics)
        except RepairFailed:
            continue
        offspring.append(
            Individual(
                id=next_id + len(offspring),
                genotype=child,
                parent_id=parent.id,
                generation_born=generation,
            )
        )
    return offspring


def select_mu_plus_lambda(
    parents: list[Individual], offspring: list[Individual], mu: int | None = None
) -> list[Individual]:
    """Best mu of parents + offspring by fitness.

    Ties break toward higher episode_return, then the older generation, then
    the smaller creation id (a deterministic total order).
    """
    mu = mu if mu is not None else len(parents)
    pool = list(parents) + list(offspring)
    for ind in pool:
        if ind.fitness is None:
            raise ValueError(f"individual {ind.id} has no fitness")
    pool.sort(
        key=lambda ind: (
            -ind.fitness,
            -(ind.episode_return if ind.episode_return is not None else float("-inf")),
            ind.generation_born,
            ind.id,
        )
    )
    return pool[:mu]


# ---------------------------------------------------------------------------
# Run log and persistence


def _population_hash(individuals: list[Individual]) -> str:
    payload = json.dumps([genotype_to_dict(i.genotype) for i in individuals], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


@dataclass
class GenerationRecord:
    generation: int
    population_ids: list[int]
    summary: dict


class EvolutionLog:
    """Everything a run produced: individuals, per-generation populations and
    aggregates, reward traces, and policy checkpoints.

    When bound to a directory the log persists each generation as it
    completes:

        manifest.json                  config + seed + progress
        gen_000/trained.json           individuals trained this generation
        gen_000/population.json        the mu survivors, full records
        gen_000/summary.json           per-generation aggregates
        traces/ind_00000.csv           reward trace per trained individual
        policies/ind_00000.pt          controller checkpoint per individual

    Discarded offspring stay in trained.json, so a resumed run sees every
    individual ever created and id assignment stays deterministic.
    """

    def __init__(self, cfg: EvolutionConfig, out_dir: str | Path | None = None):
        self.cfg = cfg
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.individuals: dict[int, Individual] = {}
        self.generations: list[GenerationRecord] = []
        self._pending_trained: list[int] = []
        self.gen0_hash: str | None = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            (self.out_dir / "traces").mkdir(exist_ok=True)
            (self.out_dir / "policies").mkdir(exist_ok=True)

    # -- bookkeeping

    @property
    def n_trained(self) -> int:
        return len(self.individuals)

    def population(self, generation: int) -> list[Individual]:
        rec = self.generations[generation]
        return [self.individuals[i] for i in rec.population_ids]

    def record_trained(self, ind: Individual, trace: RewardTrace, policy) -> None:
        self.individuals[ind.id] = ind
        self._pending_trained.append(ind.id)
        if self.out_dir is not None:
            trace.save_csv(self.out_dir / "traces" / f"ind_{ind.id:05d}.csv")
            if policy is not None:
                save_policy(
                    self.out_dir / "policies" / f"ind_{ind.id:05d}.pt",
                    policy,
                    self.cfg.ppo,
                    metadata={"individual": ind.id},
                )

    def complete_generation(self, generation: int, population: list[Individual]) -> None:
        summary = population_summary(population, self.cfg)
        trained_ids = list(self._pending_trained)
        self._pending_trained = []
        self.generations.append(
            GenerationRecord(
                generation=generation,
                population_ids=[i.id for i in population],
                summary=summary,
            )
        )
        if generation == 0:
            self.gen0_hash = _population_hash(population)
        if self.out_dir is not None:
            gen_dir = self.out_dir / f"gen_{generation:03d}"
            gen_dir.mkdir(exist_ok=True)
            (gen_dir / "trained.json").write_text(
                json.dumps([self.individuals[i].to_dict() for i in trained_ids], indent=2) + "\n"
            )
            (gen_dir / "population.json").write_text(
                json.dumps([i.to_dict() for i in population], indent=2) + "\n"
            )
            (gen_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
            self._write_manifest()

    def _write_manifest(self) -> None:
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "config": self.cfg.to_dict(),
            "completed_generations": len(self.generations),
            "finished": len(self.generations) == self.cfg.generations + 1,
            "n_trained": self.n_trained,
            "gen0_hash": self.gen0_hash,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @property
    def finished(self) -> bool:
        return len(self.generations) == self.cfg.generations + 1

    # -- persistence

    @classmethod
    def load(cls, out_dir: str | Path) -> "EvolutionLog":
        out_dir = Path(out_dir)
        manifest_path = out_dir / "manifest.json"
        if not manifest_path.exists():
            raise ResumeError(f"no manifest.json in {out_dir}")
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise ResumeError(f"corrupted manifest.json in {out_dir}: {exc}") from exc
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise ResumeError(f"unsupported manifest schema {manifest.get('schema')!r}")
        log_ = cls(EvolutionConfig.from_dict(manifest["config"]), out_dir)
        log_.gen0_hash = manifest.get("gen0_hash")
        for gen in range(manifest["completed_generations"]):
            gen_dir = out_dir / f"gen_{gen:03d}"
            try:
                trained = [
                    Individual.from_dict(d)
                    for d in json.loads((gen_dir / "trained.json").read_text())
                ]
                population_ids = [
                    int(d["id"]) for d in json.loads((gen_dir / "population.json").read_text())
                ]
                summary = json.loads((gen_dir / "summary.json").read_text())
            except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ResumeError(f"generation {gen}: corrupted checkpoint ({exc})") from exc
            for ind in trained:
                log_.individuals[ind.id] = ind
            missing = [i for i in population_ids if i not in log_.individuals]
            if missing:
                raise ResumeError(f"generation {gen}: population references unknown ids {missing}")
            log_.generations.append(
                GenerationRecord(generation=gen, population_ids=population_ids, summary=summary)
            )
        return log_


def population_summary(population: list[Individual], cfg: EvolutionConfig) -> dict:
    """Per-generation aggregates: fitness stats, genotypic diversity, body
    symmetry, and learning-descriptor means/stds (degenerate speeds skipped)."""
    fitness = np.array([i.fitness for i in population], dtype=float)
    genotypes = [i.genotype for i in population]
    ces = []
    bis = []
    for g in genotypes:
        ph = decode(g, cfg.physics)
        ces.append(metrics.central_symmetry(ph.motor_positions))
        bis.append(metrics.bilateral_symmetry(ph.motor_positions))
    desc = [i.descriptors for i in population if i.descriptors is not None]
    speeds = [d.speed for d in desc if not d.degenerate]

    def _stats(xs):
        if len(xs) == 0:
            return {"mean": None, "std": None}
        return {"mean": float(np.mean(xs)), "std": float(np.std(xs))}

    return {
        "n": len(population),
        "fitness_mean": float(fitness.mean()),
        "fitness_max": float(fitness.max()),
        "diversity": metrics.diversity(genotypes) if len(genotypes) >= 2 else 0.0,
        "central_symmetry": _stats(ces),
        "bilateral_symmetry": _stats(bis),
        "t_b": _stats([d.t_b for d in desc]),
        "t_c": _stats([d.t_c for d in desc]),
        "speed": _stats(speeds),
        "r_max": _stats([d.r_max for d in desc]),
        "volatility": _stats([d.volatility for d in desc]),
    }


# ---------------------------------------------------------------------------
# The full loop


def default_evaluator(ind: Individual, cfg: EvolutionConfig):
    """Train a controller for the individual and evaluate its fitness.

    Returns (trained Individual, RewardTrace, Policy).  The train seed is
    derived from (master seed, generation born, individual id) so resumed
    runs reproduce exactly.
    """
    ph = decode(ind.genotype, cfg.physics)
    seed = derived_seed(cfg.seed, _PATH_TRAIN, ind.generation_born, ind.id)
    result = train(ph, cfg.track, cfg.ppo, seed, cfg.physics, cfg.episode_seconds)
    report = evaluate_fitness(ph, result.policy, cfg.track, cfg.physics, cfg.episode_seconds)
    ind.fitness = report.waypoints
    ind.episode_return = report.episode_return
    ind.avg_lap_time = report.avg_lap_time
    if len(result.trace) >= 2:
        ind.descriptors = metrics.descriptors(result.trace.rewards(), cfg.descriptor_window)
    return ind, result.trace, result.policy


def run_evolution(
    cfg: EvolutionConfig,
    out_dir: str | Path | None = None,
    evaluator=None,
) -> EvolutionLog:
    """Run (or resume) a full evolution: init, then reproduce / train /
    evaluate / select for cfg.generations generations.

    With ``out_dir`` set, each completed generation is checkpointed and a
    rerun picks up after the last completed one.  ``evaluator`` is
    injectable for tests and defaults to the real train-and-evaluate.
    """
    evaluator = evaluator or default_evaluator

    log_ = None
    if out_dir is not None and (Path(out_dir) / "manifest.json").exists():
        log_ = EvolutionLog.load(out_dir)
        if log_.cfg.to_dict() != cfg.to_dict():
            raise ResumeError(f"config mismatch with existing run in {out_dir}")
        if log_.finished:
            log.info("run in %s already finished; nothing to do", out_dir)
            return log_
        log.info("resuming run in %s after generation %d", out_dir, len(log_.generations) - 1)
    if log_ is None:
        log_ = EvolutionLog(cfg, out_dir)

    if len(log_.generations) == 0:
        rng = derived_rng(cfg.seed, _PATH_INIT)
        population = init_population(cfg, rng)
        for ind in population:
            ind, trace, policy = evaluator(ind, cfg)
            log_.record_trained(ind, trace, policy)
        log_.complete_generation(0, population)
    else:
        population = log_.population(len(log_.generations) - 1)

    for gen in range(len(log_.generations), cfg.generations + 1):
        # Ids are a function of (mu, lam, generation) alone so that resumed
        # and fresh runs assign identical lineages.
        next_id = cfg.mu + (gen - 1) * cfg.lam
        rng = derived_rng(cfg.seed, _PATH_REPRODUCE, gen)
        offspring = reproduce(population, cfg, rng, next_id, gen)
        for ind in offspring:
            ind, trace, policy = evaluator(ind, cfg)
            log_.record_trained(ind, trace, policy)
        population = select_mu_plus_lambda(population, offspring, cfg.mu)
        log_.complete_generation(gen, population)
    return log_
