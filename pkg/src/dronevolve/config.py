"""Experiment configuration: schema, validation, and file loading.

Config files are YAML (JSON works too, being a YAML subset).  Example:

    seed: 1234
    output_dir: runs/circle
    repetitions: 5
    track: {kind: circle, radius: 2.0, n_gates: 8}
    evolution: {mu: 12, lam: 12, generations: 40}
    ppo: {total_timesteps: 250000000}
    compare: {seeds: 10}

Unknown keys and type mismatches raise ConfigError naming the offending
field path.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .constants import PhysicalConstants
from .evolution import EvolutionConfig, derived_seed
from .learner import PPOConfig
from .metrics import DEFAULT_SMOOTHING_WINDOW
from .morphology import MutationConfig
from .tasks import BadParams, DEFAULT_EPISODE_SECONDS, Track, track_from_config

_PATH_REPETITION = 100  # seed-derivation purpose code for per-repetition seeds


class ConfigError(ValueError):
    """A config file failed validation; the message names the field."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full experiment needs: the per-run evolution settings, a
    master seed, repetition count, and output location."""

    seed: int
    output_dir: str
    track: Track
    mu: int = 12
    lam: int = 12
    generations: int = 40
    repetitions: int = 1
    mutation: MutationConfig = field(default_factory=MutationConfig)
    ppo: PPOConfig = field(default_factory=PPOConfig)
    physics: PhysicalConstants = field(default_factory=PhysicalConstants)
    episode_seconds: float = DEFAULT_EPISODE_SECONDS
    descriptor_window: int = DEFAULT_SMOOTHING_WINDOW
    init_attempt_cap: int = 10_000
    compare_seeds: int = 3

    def repetition_seed(self, rep: int) -> int:
        return derived_seed(self.seed, _PATH_REPETITION, rep)

    def repetition_config(self, rep: int) -> EvolutionConfig:
        return EvolutionConfig(
            track=self.track,
            mu=self.mu,
            lam=self.lam,
            generations=self.generations,
            seed=self.repetition_seed(rep),
            mutation=self.mutation,
            ppo=self.ppo,
            physics=self.physics,
            init_attempt_cap=self.init_attempt_cap,
            episode_seconds=self.episode_seconds,
            descriptor_window=self.descriptor_window,
        )

    def repetition_dir(self, rep: int) -> Path:
        return Path(self.output_dir) / f"rep_{rep:02d}"

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "track": self.track.to_dict(),
            "evolution": {"mu": self.mu, "lam": self.lam, "generations": self.generations},
            "repetitions": self.repetitions,
            "mutation": self.mutation.to_dict(),
            "ppo": self.ppo.to_dict(),
            "physics": self.physics.to_dict(),
            "episode_seconds": self.episode_seconds,
            "descriptor_window": self.descriptor_window,
            "init_attempt_cap": self.init_attempt_cap,
            "compare": {"seeds": self.compare_seeds},
        }


def _require(d: dict, key: str, types, path: str):
    if key not in d:
        raise ConfigError(f"{path}{key}: required field is missing")
    value = d[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(f"{path}{key}: expected {types}, got {type(value).__name__}")
    return value


def _optional(d: dict, key: str, types, default, path: str):
    if key not in d or d[key] is None:
        return default
    value = d[key]
    if not isinstance(value, types) or isinstance(value, bool):
        raise ConfigError(f"{path}{key}: expected {types}, got {type(value).__name__}")
    return value


def _check_unknown(d: dict, allowed: set[str], path: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(
            f"{path}{sorted(unknown)[0]}: unknown field (allowed: {sorted(allowed)})"
        )


def _sub_config(d: dict, key: str, cls, defaults, path: str):
    """Build a config dataclass from a sub-mapping, defaulting absent fields."""
    sub = _optional(d, key, dict, {}, path)
    base = defaults.to_dict()
    _check_unknown(sub, set(base), f"{path}{key}.")
    base.update(sub)
    try:
        return cls.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}{key}: {exc}") from exc


def experiment_config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("top level: expected a mapping")
    allowed = {
        "seed", "output_dir", "track", "evolution", "repetitions", "mutation",
        "ppo", "physics", "episode_seconds", "descriptor_window",
        "init_attempt_cap", "compare",
    }
    _check_unknown(d, allowed, "")

    seed = _require(d, "seed", int, "")
    output_dir = _require(d, "output_dir", str, "")

    track_cfg = _require(d, "track", dict, "")
    try:
        track = track_from_config(track_cfg)
    except BadParams as exc:
        raise ConfigError(f"track: {exc}") from exc

    evo = _optional(d, "evolution", dict, {}, "")
    _check_unknown(evo, {"mu", "lam", "generations"}, "evolution.")
    mu = _optional(evo, "mu", int, 12, "evolution.")
    lam = _optional(evo, "lam", int, 12, "evolution.")
    generations = _optional(evo, "generations", int, 40, "evolution.")
    if mu <= 0 or lam <= 0:
        raise ConfigError("evolution.mu: mu and lam must be positive")
    if generations < 0:
        raise ConfigError("evolution.generations: must be >= 0")

    mutation = _sub_config(d, "mutation", MutationConfig, MutationConfig(), "")
    ppo = _sub_config(d, "ppo", PPOConfig, PPOConfig(), "")
    physics = _sub_config(d, "physics", PhysicalConstants, PhysicalConstants(), "")

    compare = _optional(d, "compare", dict, {}, "")
    _check_unknown(compare, {"seeds"}, "compare.")

    return ExperimentConfig(
        seed=seed,
        output_dir=output_dir,
        track=track,
        mu=mu,
        lam=lam,
        generations=generations,
        repetitions=_optional(d, "repetitions", int, 1, ""),
        mutation=mutation,
        ppo=ppo,
        physics=physics,
        episode_seconds=_optional(d, "episode_seconds", (int, float), DEFAULT_EPISODE_SECONDS, ""),
        descriptor_window=_optional(d, "descriptor_window", int, DEFAULT_SMOOTHING_WINDOW, ""),
        init_attempt_cap=_optional(d, "init_attempt_cap", int, 10_000, ""),
        compare_seeds=_optional(compare, "seeds", int, 3, "compare."),
    )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON ({exc})") from exc
    if raw is None:
        raise ConfigError(f"{path}: file is empty")
    return experiment_config_from_dict(raw)
