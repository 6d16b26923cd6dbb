"""Actor-critic policy optimization with a clipped surrogate objective (PPO).

One learner run produces a flight controller for a single body on a single
track: 100 environment copies collect on-policy rollouts, generalized
advantage estimation scores them, and the policy is updated for several
epochs of shuffled mini-batches per round.  Per-episode total rewards are
kept as a trace for the learning-dynamics analysis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .constants import PhysicalConstants
from .morphology import Phenotype
from .tasks import DEFAULT_EPISODE_SECONDS, TaskEnv, Track

OBS_DIM = 16
ACT_DIM = 6
POLICY_SCHEMA = "policy-checkpoint/1"


class NonFiniteLoss(RuntimeError):
    """An update produced a NaN/inf loss; parameters were restored."""


@dataclass(frozen=True)
class PPOConfig:
    gamma: float = 0.999
    gae_lambda: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    n_steps: int = 1000          # per environment per update
    batch_size: int = 5000
    n_epochs: int = 10           # optimization epochs per update
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    n_envs: int = 100
    total_timesteps: int = 250_000_000

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.n_steps <= 0 or self.n_envs <= 0 or self.batch_size <= 0:
            raise ValueError("n_steps, n_envs and batch_size must be positive")
        if (self.n_steps * self.n_envs) % self.batch_size != 0:
            raise ValueError("batch_size must divide n_steps * n_envs")
        if self.total_timesteps < 0:
            raise ValueError("total_timesteps must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PPOConfig":
        return cls(**d)


def _mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for h in hidden:
        layers += [nn.Linear(prev, h), nn.ReLU()]
        prev = h
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


def squash_action(raw: np.ndarray) -> np.ndarray:
    """Affine clamp of raw actor output into the command box [0, 1]."""
    return np.clip((raw + 1.0) * 0.5, 0.0, 1.0)


class Policy(nn.Module):
    """Diagonal-Gaussian actor and a value critic over flight observations.

    Both heads are 3-layer (64, 64, 64) ReLU MLPs; the action log-std is a
    state-independent parameter initialized at zero.  Raw actor outputs map
    to motor commands through squash_action; log-probabilities always refer
    to the raw Gaussian, before the clamp.
    """

    def __init__(
        self,
        obs_dim: int = OBS_DIM,
        act_dim: int = ACT_DIM,
        hidden: tuple[int, ...] = (64, 64, 64),
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.actor = _mlp(obs_dim, self.hidden, act_dim)
        self.critic = _mlp(obs_dim, self.hidden, 1)
        self.log_std = nn.Parameter(torch.zeros(act_dim))
        self.to(dtype)
        self._dtype = dtype

    def dist(self, obs: torch.Tensor) -> torch.distributions.Normal:
        mean = self.actor(obs)
        std = torch.exp(self.log_std)
        return torch.distributions.Normal(mean, std.expand_as(mean))

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self.critic(obs).squeeze(-1)

    def evaluate(self, obs: torch.Tensor, raw_actions: torch.Tensor):
        """(log_prob, value, entropy) of stored raw actions, differentiable."""
        d = self.dist(obs)
        log_prob = d.log_prob(raw_actions).sum(-1)
        entropy = d.entropy().sum(-1)
        return log_prob, self.value(obs), entropy

    @torch.no_grad()
    def sample(self, obs: np.ndarray):
        """Batched rollout sampling: (raw, log_prob, value) as numpy arrays."""
        t = torch.as_tensor(np.asarray(obs), dtype=self._dtype)
        d = self.dist(t)
        raw = d.sample()
        log_prob = d.log_prob(raw).sum(-1)
        return raw.numpy(), log_prob.numpy(), self.value(t).numpy()

    @torch.no_grad()
    def act(self, obs: np.ndarray, deterministic: bool = False):
        """Single-observation action in [0, 1]^6 with its raw log-prob."""
        t = torch.as_tensor(np.asarray(obs), dtype=self._dtype).unsqueeze(0)
        d = self.dist(t)
        raw = d.mean if deterministic else d.sample()
        log_prob = float(d.log_prob(raw).sum(-1).item())
        return squash_action(raw.squeeze(0).numpy()), log_prob

    @torch.no_grad()
    def values_np(self, obs: np.ndarray) -> np.ndarray:
        t = torch.as_tensor(np.asarray(obs), dtype=self._dtype)
        return self.value(t).numpy()


# ---------------------------------------------------------------------------
# Rollout storage and advantage estimation


class RolloutBuffer:
    """Fixed-size on-policy store for (n_steps, n_envs) transitions.

    ``dones`` marks episode boundaries; ``bootstrap`` holds the value used
    past a boundary (the critic's estimate of the final observation at a
    time-limit truncation, zero at a true termination).
    """

    def __init__(self, n_steps: int, n_envs: int, obs_dim: int = OBS_DIM, act_dim: int = ACT_DIM):
        self.n_steps = n_steps
        self.n_envs = n_envs
        self.obs = np.zeros((n_steps, n_envs, obs_dim), dtype=np.float32)
        self.raw_actions = np.zeros((n_steps, n_envs, act_dim), dtype=np.float32)
        self.log_probs = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.values = np.zeros((n_steps, n_envs), dtype=np.float32)
        self.rewards = np.zeros((n_steps, n_envs), dtype=np.float64)
        self.dones = np.zeros((n_steps, n_envs), dtype=bool)
        self.bootstrap = np.zeros((n_steps, n_envs), dtype=np.float64)
        self.advantages = np.zeros((n_steps, n_envs), dtype=np.float64)
        self.returns = np.zeros((n_steps, n_envs), dtype=np.float64)
        self.pos = 0

    def add(self, obs, raw_actions, log_probs, values, rewards, dones, bootstrap):
        t = self.pos
        self.obs[t] = obs
        self.raw_actions[t] = raw_actions
        self.log_probs[t] = log_probs
        self.values[t] = values
        self.rewards[t] = rewards
        self.dones[t] = dones
        self.bootstrap[t] = bootstrap
        self.pos += 1

    @property
    def full(self) -> bool:
        return self.pos == self.n_steps

    def reset(self):
        self.pos = 0


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float, last_values: np.ndarray) -> None:
    """Generalized advantage estimation over the buffer, in place.

    Standard backward recursion: delta_t = r_t + gamma * V(s_{t+1}) - V(s_t)
    with the next value replaced by the stored bootstrap at episode
    boundaries, and A_t = delta_t + gamma * lam * A_{t+1} (reset across
    boundaries).  Returns are advantages + values.
    """
    T = buffer.pos
    values = buffer.values[:T].astype(np.float64)
    next_values = np.empty_like(values)
    next_values[:-1] = values[1:]
    next_values[-1] = np.asarray(last_values, dtype=np.float64)
    done = buffer.dones[:T]
    next_values[done] = buffer.bootstrap[:T][done]

    delta = buffer.rewards[:T] + gamma * next_values - values
    adv = np.zeros_like(delta)
    carry = np.zeros(buffer.n_envs)
    for t in range(T - 1, -1, -1):
        carry = delta[t] + gamma * lam * np.where(done[t], 0.0, carry)
        adv[t] = carry
    buffer.advantages[:T] = adv
    buffer.returns[:T] = adv + values


# ---------------------------------------------------------------------------
# Updates


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    max_grad_norm_post_clip: float


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance normalization over the whole update batch."""
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def ppo_loss(policy: Policy, batch: dict, cfg: PPOConfig):
    """Clipped-surrogate + value + entropy loss on one mini-batch.

    Returns (loss, diagnostics).  ``batch`` holds torch tensors: obs,
    raw_actions, old_log_probs, advantages, returns.
    """
    log_prob, value, entropy = policy.evaluate(batch["obs"], batch["raw_actions"])
    ratio = torch.exp(log_prob - batch["old_log_probs"])
    adv = batch["advantages"]
    surr = torch.min(ratio * adv, torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = torch.mean((value - batch["returns"]) ** 2)
    entropy_mean = entropy.mean()
    loss = policy_loss + cfg.vf_coef * value_loss - cfg.ent_coef * entropy_mean
    with torch.no_grad():
        clip_fraction = torch.mean((torch.abs(ratio - 1.0) > cfg.clip).float())
        log_ratio = log_prob - batch["old_log_probs"]
        approx_kl = torch.mean(torch.expm1(log_ratio) - log_ratio)
    diag = {
        "policy_loss": float(policy_loss.item()),
        "value_loss": float(value_loss.item()),
        "entropy": float(entropy_mean.item()),
        "clip_fraction": float(clip_fraction.item()),
        "approx_kl": float(approx_kl.item()),
    }
    return loss, diag


def _global_grad_norm(parameters) -> float:
    total = 0.0
    for p in parameters:
        if p.grad is not None:
            total += float(p.grad.detach().norm() ** 2)
    return math.sqrt(total)


def ppo_update(
    policy: Policy,
    optimizer: torch.optim.Optimizer,
    buffer: RolloutBuffer,
    cfg: PPOConfig,
    rng: np.random.Generator,
) -> UpdateStats:
    """One PPO update: n_epochs of shuffled mini-batches over the buffer.

    Advantages are normalized once over the whole batch.  A non-finite loss
    restores the pre-update parameters and raises NonFiniteLoss.
    """
    if not buffer.full:
        raise ValueError("rollout buffer is not full")
    n = buffer.n_steps * buffer.n_envs
    dtype = policy._dtype
    flat = {
        "obs": torch.as_tensor(buffer.obs.reshape(n, -1), dtype=dtype),
        "raw_actions": torch.as_tensor(buffer.raw_actions.reshape(n, -1), dtype=dtype),
        "old_log_probs": torch.as_tensor(buffer.log_probs.reshape(n), dtype=dtype),
        "advantages": torch.as_tensor(
            normalize_advantages(buffer.advantages.reshape(n)), dtype=dtype
        ),
        "returns": torch.as_tensor(buffer.returns.reshape(n), dtype=dtype),
    }
    snapshot = {k: v.detach().clone() for k, v in policy.state_dict().items()}
    opt_snapshot = optimizer.state_dict()

    diags = []
    max_post_clip = 0.0
    for _ in range(cfg.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(perm[start:start + cfg.batch_size])
            batch = {k: v[idx] for k, v in flat.items()}
            loss, diag = ppo_loss(policy, batch, cfg)
            if not torch.isfinite(loss):
                policy.load_state_dict(snapshot)
                optimizer.load_state_dict(opt_snapshot)
                raise NonFiniteLoss("non-finite loss; parameters restored")
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(policy.parameters(), cfg.max_grad_norm)
            max_post_clip = max(max_post_clip, _global_grad_norm(policy.parameters()))
            optimizer.step()
            diags.append(diag)

    return UpdateStats(
        policy_loss=float(np.mean([d["policy_loss"] for d in diags])),
        value_loss=float(np.mean([d["value_loss"] for d in diags])),
        entropy=float(np.mean([d["entropy"] for d in diags])),
        clip_fraction=float(np.mean([d["clip_fraction"] for d in diags])),
        approx_kl=float(np.mean([d["approx_kl"] for d in diags])),
        max_grad_norm_post_clip=max_post_clip,
    )


# ---------------------------------------------------------------------------
# Episodic reward trace


@dataclass
class RewardTrace:
    """Per-episode totals in completion order.

    ``episodes`` rows are (episode index, total episode reward, environment
    steps consumed when the episode ended); the step counts are strictly
    increasing.
    """

    episodes: np.ndarray  # (n, 3) float64

    def __len__(self) -> int:
        return len(self.episodes)

    def rewards(self) -> np.ndarray:
        return self.episodes[:, 1].copy() if len(self.episodes) else np.empty(0)

    def timesteps(self) -> np.ndarray:
        return self.episodes[:, 2].copy() if len(self.episodes) else np.empty(0)

    def save_csv(self, path) -> None:
        np.savetxt(
            path,
            self.episodes.reshape(-1, 3),
            delimiter=",",
            header="episode,reward,timestep",
            comments="",
        )

    @classmethod
    def load_csv(cls, path) -> "RewardTrace":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.size == 0:
            data = np.empty((0, 3))
        return cls(episodes=data)


@dataclass
class TrainResult:
    policy: Policy
    trace: RewardTrace
    total_steps: int
    updates: list[UpdateStats] = field(default_factory=list)


def train(
    ph: Phenotype,
    track: Track,
    cfg: PPOConfig,
    seed: int,
    phys: PhysicalConstants | None = None,
    episode_seconds: float = DEFAULT_EPISODE_SECONDS,
) -> TrainResult:
    """Train a controller for one body on one track.

    Runs cfg.n_envs environment copies, alternating rollout collection and
    updates until at least cfg.total_timesteps environment steps are
    consumed (rounded up to whole collection rounds; the exact count is in
    the result).  Fully reproducible from the seed.
    """
    phys = phys or PhysicalConstants()
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)

    policy = Policy()
    optimizer = torch.optim.Adam(policy.parameters(), lr=cfg.lr)
    envs = [TaskEnv(track, ph, phys, episode_seconds=episode_seconds) for _ in range(cfg.n_envs)]
    obs = np.stack([env.reset() for env in envs]).astype(np.float32)

    steps_per_round = cfg.n_steps * cfg.n_envs
    n_rounds = math.ceil(cfg.total_timesteps / steps_per_round) if cfg.total_timesteps else 0

    buffer = RolloutBuffer(cfg.n_steps, cfg.n_envs)
    episode_return = np.zeros(cfg.n_envs)
    episodes: list[tuple[int, float, int]] = []
    updates: list[UpdateStats] = []

    for rnd in range(n_rounds):
        buffer.reset()
        for t in range(cfg.n_steps):
            raw, log_prob, values = policy.sample(obs)
            actions = squash_action(raw)

            rewards = np.zeros(cfg.n_envs)
            dones = np.zeros(cfg.n_envs, dtype=bool)
            bootstrap = np.zeros(cfg.n_envs)
            new_obs = obs.copy()
            truncated_obs: list[tuple[int, np.ndarray]] = []
            for e, env in enumerate(envs):
                o2, r, done, info = env.step(actions[e])
                episode_return[e] += r
                rewards[e] = r
                dones[e] = done
                if done:
                    if not info["terminated"]:
                        truncated_obs.append((e, o2.astype(np.float32)))
                    global_step = (rnd * cfg.n_steps + t) * cfg.n_envs + e + 1
                    episodes.append((len(episodes), float(episode_return[e]), global_step))
                    episode_return[e] = 0.0
                    o2 = env.reset()
                new_obs[e] = o2
            if truncated_obs:
                vals = policy.values_np(np.stack([o for _, o in truncated_obs]))
                for (e, _), v in zip(truncated_obs, vals):
                    bootstrap[e] = float(v)

            buffer.add(obs, raw, log_prob, values, rewards, dones, bootstrap)
            obs = new_obs

        compute_gae(buffer, cfg.gamma, cfg.gae_lambda, policy.values_np(obs))
        updates.append(ppo_update(policy, optimizer, buffer, cfg, rng))

    trace = RewardTrace(episodes=np.array(episodes, dtype=np.float64).reshape(-1, 3))
    return TrainResult(
        policy=policy,
        trace=trace,
        total_steps=n_rounds * steps_per_round,
        updates=updates,
    )


# ---------------------------------------------------------------------------
# Checkpoints


def save_policy(path, policy: Policy, cfg: PPOConfig | None = None, metadata: dict | None = None) -> None:
    """Versioned checkpoint: parameters, architecture, config, RNG state."""
    torch.save(
        {
            "schema": POLICY_SCHEMA,
            "state_dict": policy.state_dict(),
            "obs_dim": policy.obs_dim,
            "act_dim": policy.act_dim,
            "hidden": list(policy.hidden),
            "config": cfg.to_dict() if cfg is not None else None,
            "torch_rng_state": torch.get_rng_state(),
            "metadata": metadata or {},
        },
        path,
    )


def load_policy(path) -> tuple[Policy, dict]:
    """Restore a checkpoint; returns (policy, full checkpoint dict)."""
    ckpt = torch.load(path, weights_only=False)
    if ckpt.get("schema") != POLICY_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema: {ckpt.get('schema')!r}")
    policy = Policy(obs_dim=ckpt["obs_dim"], act_dim=ckpt["act_dim"], hidden=tuple(ckpt["hidden"]))
    policy.load_state_dict(ckpt["state_dict"])
    return policy, ckpt
