"""Policy-gradient controller: MDP encoding and clipped-surrogate training.

The policy is a softmax network over the three battery actions
{idle, discharge a_max, charge a_max}; a separate network estimates the
state value.  Training alternates on-policy rollout collection (fixed-length
episodes with random start offsets into the training series) with clipped
surrogate updates; returns are undiscounted within episodes and advantages
use generalized advantage smoothing, standardized per batch.  Everything is
deterministic given the config seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import ExogenousSeries
from .env import BatteryParams, EnvState
from .errors import NumericError, ValidationError
from .nn import (
    AdamState,
    Mlp,
    adam_step,
    backward,
    backward_from_logits,
    forward,
    log_softmax,
)

# head order fixes the greedy tie-break: idle preferred, then discharge, then charge
ACTION_IDLE, ACTION_DISCHARGE, ACTION_CHARGE = 0, 1, 2
N_ACTIONS = 3
STATE_DIM = 6


@dataclass(frozen=True)
class NormStats:
    """Price/demand normalization, computed from the training split only."""

    price_mean: float
    price_sd: float
    demand_mean: float
    demand_sd: float

    def __post_init__(self) -> None:
        if self.price_sd <= 0 or self.demand_sd <= 0:
            raise ValidationError("normalization sd must be positive")

    @classmethod
    def from_series(cls, series: ExogenousSeries) -> "NormStats":
        # constant channels degrade to a pure shift (sd 1) instead of erroring
        price_sd = float(np.std(series.prices))
        demand_sd = float(np.std(series.demands))
        return cls(
            price_mean=float(np.mean(series.prices)),
            price_sd=price_sd if price_sd > 1e-12 else 1.0,
            demand_mean=float(np.mean(series.demands)),
            demand_sd=demand_sd if demand_sd > 1e-12 else 1.0,
        )


@dataclass(frozen=True)
class PpoConfig:
    """Training hyperparameters; the defaults are the ones benchmarked."""

    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 1.0  # electricity costs tomorrow matter as much as today
    lr: float = 3e-4
    rollout_steps: int = 2048
    minibatch: int = 64
    epochs_per_update: int = 10
    total_env_steps: int = 3_000_000
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    episode_length: int = 168
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        if not (0.0 < self.clip_eps < 1.0):
            raise ValidationError(f"clip_eps must be in (0, 1), got {self.clip_eps}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValidationError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.gamma != 1.0:
            raise ValidationError("gamma is fixed at 1.0 in this problem")
        if min(self.lr, self.rollout_steps, self.minibatch, self.epochs_per_update) <= 0:
            raise ValidationError("lr, rollout_steps, minibatch, epochs_per_update must be positive")
        if self.episode_length < 2:
            raise ValidationError(f"episode_length must be >= 2, got {self.episode_length}")


def encode_state(state: EnvState, stats: NormStats) -> np.ndarray:
    """Map an environment state to the 6-dim network input.

    [soc, normalized price, normalized demand, sin hour, cos hour, weekend]
    """
    angle = 2.0 * math.pi * state.hour / 24.0
    return np.array(
        [
            state.soc,
            (state.price - stats.price_mean) / stats.price_sd,
            (state.demand - stats.demand_mean) / stats.demand_sd,
            math.sin(angle),
            math.cos(angle),
            1.0 if state.is_weekend else 0.0,
        ]
    )


def make_policy_net(rng: np.random.Generator, hidden: tuple[int, ...] = (64, 64)) -> Mlp:
    return Mlp([STATE_DIM, *hidden, N_ACTIONS], head="softmax", rng=rng)


def make_value_net(rng: np.random.Generator, hidden: tuple[int, ...] = (64, 64)) -> Mlp:
    return Mlp([STATE_DIM, *hidden, 1], head="linear", rng=rng)


def action_value(index: int, a_max: float) -> float:
    """Map an action index to its SOC increment."""
    if index == ACTION_DISCHARGE:
        return -a_max
    if index == ACTION_CHARGE:
        return a_max
    return 0.0


@dataclass
class RolloutBatch:
    """On-policy experience plus derived learning targets."""

    states: np.ndarray  # (n, STATE_DIM)
    actions: np.ndarray  # (n,) int indices
    rewards: np.ndarray  # (n,)
    log_probs_old: np.ndarray  # (n,)
    values: np.ndarray  # (n,)
    episode_bounds: list[tuple[int, int]]  # [start, end) per episode
    returns: np.ndarray = field(default_factory=lambda: np.empty(0))
    advantages: np.ndarray = field(default_factory=lambda: np.empty(0))
    value_targets: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return len(self.rewards)


def _gae(
    rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float
) -> np.ndarray:
    """Generalized advantage recursion for one episode; terminal value is 0."""
    n = len(rewards)
    adv = np.empty(n)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        next_v = values[t + 1] if t + 1 < n else 0.0
        delta = rewards[t] + gamma * next_v - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv


def compute_returns_and_advantages(
    batch: RolloutBatch, config: PpoConfig, standardize: bool = True
) -> RolloutBatch:
    """Fill returns, advantages, and value-regression targets in place.

    Returns are plain undiscounted within-episode reward sums.  Advantages
    are lambda-smoothed; at lambda = 1 they are computed directly as
    returns minus values, which the recursion telescopes to.  Value targets
    are advantages plus values (the lambda-return).  Advantages are then
    standardized across the batch.
    """
    n = len(batch)
    returns = np.empty(n)
    advantages = np.empty(n)
    for start, end in batch.episode_bounds:
        r = batch.rewards[start:end]
        v = batch.values[start:end]
        returns[start:end] = np.cumsum(r[::-1])[::-1]
        if config.gae_lambda == 1.0:
            advantages[start:end] = returns[start:end] - v
        else:
            advantages[start:end] = _gae(r, v, config.gamma, config.gae_lambda)
    batch.returns = returns
    batch.value_targets = advantages + batch.values
    if standardize:
        sd = float(np.std(advantages))
        advantages = (advantages - float(np.mean(advantages))) / (sd + 1e-8)
    batch.advantages = advantages
    return batch


@dataclass
class UpdateDiagnostics:
    policy_loss: float
    value_loss: float
    approx_kl: float
    clip_frac: float
    entropy: float


def ppo_update(
    policy: Mlp,
    value: Mlp,
    batch: RolloutBatch,
    config: PpoConfig,
    policy_opt: AdamState,
    value_opt: AdamState,
    rng: np.random.Generator,
) -> UpdateDiagnostics:
    """One full pass of clipped-surrogate optimization over a batch.

    Maximizes E[min(ratio * A, clip(ratio, 1 +/- eps) * A)] over several
    epochs of shuffled minibatches; the value net regresses its targets
    with squared error.  Mean approximate KL and the clipped fraction are
    returned as trust-region diagnostics.
    """
    n = len(batch)
    if n == 0:
        raise ValidationError("empty batch")
    kls: list[float] = []
    clip_fracs: list[float] = []
    p_losses: list[float] = []
    v_losses: list[float] = []
    entropies: list[float] = []
    onehot = np.eye(N_ACTIONS)

    for _ in range(config.epochs_per_update):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = perm[start : start + config.minibatch]
            m = len(idx)
            states = batch.states[idx]
            acts = batch.actions[idx]
            adv = batch.advantages[idx]
            logp_old = batch.log_probs_old[idx]

            probs, tape = forward(policy, states)
            logp_all = log_softmax(tape.logits)
            logp = logp_all[np.arange(m), acts]
            ratio = np.exp(logp - logp_old)
            surr1 = ratio * adv
            surr2 = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
            policy_loss = -float(np.mean(np.minimum(surr1, surr2)))
            if not math.isfinite(policy_loss):
                raise NumericError(
                    f"non-finite policy loss (ratio range [{ratio.min()}, {ratio.max()}])"
                )

            # gradient flows only where the unclipped surrogate is active
            use_unclipped = surr1 <= surr2
            coeff = np.where(use_unclipped, ratio * adv, 0.0) / m
            dlogits = -coeff[:, None] * (onehot[acts] - probs)

            entropy = -np.sum(probs * logp_all, axis=1)
            entropies.append(float(np.mean(entropy)))
            if config.entropy_coef > 0.0:
                dlogits += (config.entropy_coef / m) * probs * (
                    logp_all + entropy[:, None]
                )

            grads = backward_from_logits(tape, dlogits)
            adam_step(policy, grads, policy_opt, config.lr)

            v_pred, v_tape = forward(value, states)
            v_pred = v_pred[:, 0]
            targets = batch.value_targets[idx]
            value_loss = config.value_coef * float(np.mean((v_pred - targets) ** 2))
            if not math.isfinite(value_loss):
                raise NumericError("non-finite value loss")
            dv = (2.0 * config.value_coef / m) * (v_pred - targets)
            v_grads = backward(v_tape, dv[:, None])
            adam_step(value, v_grads, value_opt, config.lr)

            kls.append(float(np.mean(logp_old - logp)))
            clip_fracs.append(float(np.mean(np.abs(ratio - 1.0) > config.clip_eps)))
            p_losses.append(policy_loss)
            v_losses.append(value_loss)

    return UpdateDiagnostics(
        policy_loss=float(np.mean(p_losses)),
        value_loss=float(np.mean(v_losses)),
        approx_kl=float(np.mean(kls)),
        clip_frac=float(np.mean(clip_fracs)),
        entropy=float(np.mean(entropies)),
    )


def _static_features(series: ExogenousSeries, stats: NormStats) -> np.ndarray:
    """Per-row state features that do not depend on SOC."""
    angle = 2.0 * np.pi * series.hours / 24.0
    return np.column_stack(
        [
            (series.prices - stats.price_mean) / stats.price_sd,
            (series.demands - stats.demand_mean) / stats.demand_sd,
            np.sin(angle),
            np.cos(angle),
            series.weekend_flags.astype(np.float64),
        ]
    )


def collect_rollout(
    policy: Mlp,
    value: Mlp,
    series: ExogenousSeries,
    params: BatteryParams,
    stats: NormStats,
    config: PpoConfig,
    rng: np.random.Generator,
    static_feats: Optional[np.ndarray] = None,
) -> tuple[RolloutBatch, list[float]]:
    """Collect whole episodes until at least ``rollout_steps`` transitions.

    Episodes are ``episode_length`` steps starting at a random offset into
    the series, with SOC reset to the lattice midpoint.  Returns the batch
    (without targets) and the total cost of each episode.
    """
    if static_feats is None:
        static_feats = _static_features(series, stats)
    ep_len = config.episode_length
    if len(series) < ep_len:
        raise ValidationError(
            f"series length {len(series)} shorter than episode_length {ep_len}"
        )
    n_target = config.rollout_steps
    cap = ((n_target + ep_len - 1) // ep_len) * ep_len
    states = np.empty((cap, STATE_DIM))
    actions = np.empty(cap, dtype=np.int64)
    rewards = np.empty(cap)
    log_probs = np.empty(cap)
    bounds: list[tuple[int, int]] = []
    episode_costs: list[float] = []

    prices = series.prices
    demands = series.demands
    e = params.capacity_e
    a_max = params.a_max
    soc_min, soc_max = params.soc_min, params.soc_max
    soc0 = params.default_soc0()

    pos = 0
    while pos < n_target:
        offset = int(rng.integers(0, len(series) - ep_len + 1))
        soc = soc0
        start = pos
        for i in range(ep_len):
            row = offset + i
            x = states[pos]
            x[0] = soc
            x[1:] = static_feats[row]
            probs, tape = forward(policy, x)
            u = rng.random()
            a_idx = int(np.searchsorted(np.cumsum(probs), u))
            if a_idx >= N_ACTIONS:  # cumulative rounding
                a_idx = N_ACTIONS - 1
            a = action_value(a_idx, a_max)
            eff = min(max(a, soc_min - soc), soc_max - soc)
            reward = -prices[row] * (demands[row] + eff * e)
            soc = min(max(soc + eff, soc_min), soc_max)
            actions[pos] = a_idx
            rewards[pos] = reward
            log_probs[pos] = math.log(probs[a_idx])
            pos += 1
        bounds.append((start, pos))
        episode_costs.append(float(-np.sum(rewards[start:pos])))

    states = states[:pos]
    values_pred, _ = forward(value, states)
    batch = RolloutBatch(
        states=states,
        actions=actions[:pos],
        rewards=rewards[:pos],
        log_probs_old=log_probs[:pos],
        values=values_pred[:, 0],
        episode_bounds=bounds,
    )
    return batch, episode_costs


@dataclass
class CurvePoint:
    iteration: int
    env_steps: int
    mean_episode_cost: float
    approx_kl: float
    clip_frac: float


@dataclass
class TrainResult:
    policy: Mlp
    value: Mlp
    stats: NormStats
    curve: list[CurvePoint]
    env_steps: int
    wall_seconds: float


def train(
    series: ExogenousSeries,
    params: BatteryParams,
    config: PpoConfig,
    stats: Optional[NormStats] = None,
) -> TrainResult:
    """Run the full training loop on a training series.

    Alternates rollout collection and clipped updates until
    ``total_env_steps`` environment transitions have been consumed.
    Deterministic for a fixed config seed.
    """
    t0 = time.perf_counter()
    if stats is None:
        stats = NormStats.from_series(series)
    rng = np.random.default_rng(config.seed)
    policy = make_policy_net(rng, config.hidden)
    value = make_value_net(rng, config.hidden)
    policy_opt = AdamState(policy)
    value_opt = AdamState(value)
    static_feats = _static_features(series, stats)

    curve: list[CurvePoint] = []
    env_steps = 0
    iteration = 0
    while env_steps < config.total_env_steps:
        batch, episode_costs = collect_rollout(
            policy, value, series, params, stats, config, rng, static_feats
        )
        env_steps += len(batch)
        compute_returns_and_advantages(batch, config)
        diag = ppo_update(policy, value, batch, config, policy_opt, value_opt, rng)
        iteration += 1
        curve.append(
            CurvePoint(
                iteration=iteration,
                env_steps=env_steps,
                mean_episode_cost=float(np.mean(episode_costs)),
                approx_kl=diag.approx_kl,
                clip_frac=diag.clip_frac,
            )
        )
    return TrainResult(
        policy=policy,
        value=value,
        stats=stats,
        curve=curve,
        env_steps=env_steps,
        wall_seconds=time.perf_counter() - t0,
    )


def act_greedy(policy: Mlp, state: EnvState, stats: NormStats, a_max: float) -> float:
    """Deterministic action: highest probability, ties to idle then discharge."""
    probs, _ = forward(policy, encode_state(state, stats))
    return action_value(int(np.argmax(probs)), a_max)


def act_sample(
    policy: Mlp, state: EnvState, stats: NormStats, a_max: float, rng: np.random.Generator
) -> float:
    """Stochastic action drawn from the policy distribution."""
    probs, _ = forward(policy, encode_state(state, stats))
    a_idx = int(np.searchsorted(np.cumsum(probs), rng.random()))
    return action_value(min(a_idx, N_ACTIONS - 1), a_max)


def greedy_policy(policy: Mlp, stats: NormStats, params: BatteryParams):
    """Bind a trained net into an env-compatible policy callable."""

    def _policy(state: EnvState) -> float:
        return act_greedy(policy, state, stats, params.a_max)

    return _policy


POLICY_SCHEMA_TAG = "bessbench-policy-v1"


def save_policy(result_policy: Mlp, stats: NormStats, a_max: float, path: str) -> None:
    """Checkpoint the policy net together with its normalization stats."""
    payload = {
        "schema": POLICY_SCHEMA_TAG,
        "a_max": a_max,
        "norm": {
            "price_mean": stats.price_mean,
            "price_sd": stats.price_sd,
            "demand_mean": stats.demand_mean,
            "demand_sd": stats.demand_sd,
        },
        "net": result_policy.to_dict(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)
        fh.write("\n")


def load_policy(path: str) -> tuple[Mlp, NormStats, float]:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema") != POLICY_SCHEMA_TAG:
        raise ValidationError(f"{path}: unknown policy schema {payload.get('schema')!r}")
    stats = NormStats(**payload["norm"])
    return Mlp.from_dict(payload["net"]), stats, float(payload["a_max"])
