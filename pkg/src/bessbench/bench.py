"""Controller comparison harness: the four-criteria benchmark.

Runs the policy-gradient controller (several training seeds), MPC with a
fitted forecaster, MPC with exact future values, the mean-price threshold
baseline, the no-battery reference, and the full-horizon ground truth on a
train/test pair, and reports per-controller cost, optimality gap, 95%
confidence intervals, decision latency, and training-data usage.  The
robustness variant evaluates the same trained controllers on a second,
demand-shifted test set.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import stats as sps

from . import ppo
from .data import ExogenousSeries
from .env import BatteryParams, EnvState, Rollout, no_bms_cost, rollout
from .errors import ValidationError
from .forecast import Forecaster, fit_forecaster, forecast_error
from .mpc import ground_truth, receding_horizon_run
from .nn import Mlp

RL, MPC, MPC_EXACT, BASELINE, GROUND_TRUTH, NO_BMS = (
    "rl",
    "mpc",
    "mpc_exact",
    "baseline",
    "ground_truth",
    "no_bms",
)
CONTROLLER_ORDER = (RL, MPC, MPC_EXACT, BASELINE, GROUND_TRUTH, NO_BMS)
_LABELS = {
    RL: "RL (policy gradient, greedy)",
    MPC: "MPC (fitted forecaster)",
    MPC_EXACT: "MPC (exact model)",
    BASELINE: "Baseline (price threshold)",
    GROUND_TRUTH: "Ground truth",
    NO_BMS: "No BMS",
}


@dataclass(frozen=True)
class BaselinePolicy:
    """Threshold rule: discharge above the training-mean price, else charge."""

    mean_train_price: float

    @classmethod
    def from_series(cls, train: ExogenousSeries) -> "BaselinePolicy":
        return cls(mean_train_price=float(np.mean(train.prices)))


def baseline_act(state: EnvState, policy: BaselinePolicy, params: BatteryParams) -> float:
    """Apply the threshold rule, guarded by the SOC bounds.

    A price exactly equal to the mean takes the charge branch.
    """
    if state.price > policy.mean_train_price:
        if state.soc > params.soc_min + 1e-12:
            return -params.a_max
        return 0.0
    if state.soc < params.soc_max - 1e-12:
        return params.a_max
    return 0.0


def optimality_gap(cost: float, gt_cost: float) -> float:
    """(cost - gt_cost) / gt_cost; requires a positive ground-truth cost."""
    if not gt_cost > 0:
        raise ValidationError(f"ground-truth cost must be positive, got {gt_cost}")
    return (cost - gt_cost) / gt_cost


def confidence_interval(values: list[float] | np.ndarray) -> tuple[float, float]:
    """Mean and 95% half-width using the t distribution (small-sample)."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        raise ValidationError(f"confidence interval needs n >= 2, got {n}")
    mean = float(np.mean(values))
    s = float(np.std(values, ddof=1))
    t_crit = float(sps.t.ppf(0.975, n - 1))
    return mean, t_crit * s / np.sqrt(n)


@dataclass
class ControllerResult:
    """One benchmark row."""

    name: str
    cost: float  # mean over seeds for stochastic controllers
    optimality_gap: float  # fraction
    ci_half_width: Optional[float] = None  # absent for deterministic controllers
    costs_per_seed: Optional[list[float]] = None
    testing_time_s: Optional[float] = None
    per_decision_median_s: Optional[float] = None
    train_samples: Optional[int] = None
    action_log: Optional[list[list[float]]] = None  # one sequence per seed/run

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "label": _LABELS.get(self.name, self.name),
            "cost": self.cost,
            "optimality_gap": self.optimality_gap,
            "optimality_gap_pct": round(100.0 * self.optimality_gap, 2),
        }
        if self.ci_half_width is not None:
            out["ci_half_width"] = self.ci_half_width
        if self.costs_per_seed is not None:
            out["costs_per_seed"] = self.costs_per_seed
        if self.testing_time_s is not None:
            out["testing_time_s"] = self.testing_time_s
        if self.per_decision_median_s is not None:
            out["per_decision_median_s"] = self.per_decision_median_s
        if self.train_samples is not None:
            out["train_samples"] = self.train_samples
        return out


@dataclass
class BenchConfig:
    """Everything a comparison run needs besides the data."""

    params: BatteryParams
    horizon: int = 24
    forecaster_kind: str = "ar_linear"
    ppo_config: ppo.PpoConfig = field(default_factory=ppo.PpoConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    soc0: Optional[float] = None  # default: lattice midpoint

    def start_soc(self) -> float:
        return self.params.default_soc0() if self.soc0 is None else self.soc0


@dataclass
class EvalReport:
    """Benchmark outcome on one test set."""

    controllers: dict[str, ControllerResult]
    gt_cost: float
    dataset: dict
    seeds: tuple[int, ...]

    def gap_pct(self, name: str) -> float:
        return 100.0 * self.controllers[name].optimality_gap

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "seeds": list(self.seeds),
            "gt_cost": self.gt_cost,
            "controllers": {
                name: self.controllers[name].to_dict()
                for name in CONTROLLER_ORDER
                if name in self.controllers
            },
        }

    def to_text(self) -> str:
        lines = [
            f"dataset: {self.dataset.get('name', '?')}  "
            f"(test rows: {self.dataset.get('n_test', '?')}, seeds: {list(self.seeds)})",
            f"{'controller':34s} {'cost ($)':>12s} {'ci95':>8s} {'gap':>8s} "
            f"{'t_test(s)':>10s} {'t_decide':>10s} {'data':>10s}",
        ]
        for name in CONTROLLER_ORDER:
            if name not in self.controllers:
                continue
            c = self.controllers[name]
            ci = f"±{c.ci_half_width:,.0f}" if c.ci_half_width is not None else "-"
            gap = "-" if name == GROUND_TRUTH else f"{100 * c.optimality_gap:.2f}%"
            t_test = f"{c.testing_time_s:.3f}" if c.testing_time_s is not None else "-"
            t_dec = (
                f"{1e6 * c.per_decision_median_s:.0f}us"
                if c.per_decision_median_s is not None
                else "-"
            )
            data = f"{c.train_samples:,}" if c.train_samples is not None else "-"
            lines.append(
                f"{_LABELS[name]:34s} {c.cost:12,.2f} {ci:>8s} {gap:>8s} "
                f"{t_test:>10s} {t_dec:>10s} {data:>10s}"
            )
        return "\n".join(lines)


@dataclass
class TrainedControllers:
    """Artifacts trained once on the training split, reusable across tests."""

    forecaster: Forecaster
    baseline: BaselinePolicy
    rl_runs: list[ppo.TrainResult]
    rl_env_steps: int


def train_controllers(
    train: ExogenousSeries, config: BenchConfig, progress: Optional[Callable[[str], None]] = None
) -> TrainedControllers:
    """Fit the forecaster and train one policy per seed on the training split."""
    say = progress or (lambda _msg: None)
    say(f"fitting {config.forecaster_kind} forecaster on {len(train)} rows")
    forecaster = fit_forecaster(train, config.forecaster_kind)
    baseline = BaselinePolicy.from_series(train)
    rl_runs: list[ppo.TrainResult] = []
    for seed in config.seeds:
        pc = _seeded(config.ppo_config, seed)
        say(f"training policy seed {seed} ({pc.total_env_steps} env steps)")
        rl_runs.append(ppo.train(train, config.params, pc))
    return TrainedControllers(
        forecaster=forecaster,
        baseline=baseline,
        rl_runs=rl_runs,
        rl_env_steps=config.ppo_config.total_env_steps,
    )


def _seeded(pc: ppo.PpoConfig, seed: int) -> ppo.PpoConfig:
    from dataclasses import replace

    return replace(pc, seed=seed)


def _timed_rollout(
    policy_fn: Callable[[EnvState], float],
    test: ExogenousSeries,
    params: BatteryParams,
    soc0: float,
) -> tuple[Rollout, float, float]:
    """Roll out a policy measuring total and per-decision wall time."""
    decision_times: list[float] = []

    def timed(state: EnvState) -> float:
        t0 = time.perf_counter()
        a = policy_fn(state)
        decision_times.append(time.perf_counter() - t0)
        return a

    t0 = time.perf_counter()
    ro = rollout(timed, test, params, soc0)
    total = time.perf_counter() - t0
    return ro, total, float(np.median(decision_times))


def evaluate_controllers(
    trained: TrainedControllers,
    train: ExogenousSeries,
    test: ExogenousSeries,
    config: BenchConfig,
    dataset_name: str = "synthetic",
) -> EvalReport:
    """Evaluate every controller on a test series against its ground truth."""
    params = config.params
    soc0 = config.start_soc()
    gt = ground_truth(test, params, soc0)
    if not gt.total_cost > 0:
        raise ValidationError(
            f"ground-truth cost {gt.total_cost} is not positive; optimality gaps undefined"
        )
    controllers: dict[str, ControllerResult] = {}

    # RL: greedy evaluation per seed; variation across seeds comes from training
    rl_costs: list[float] = []
    rl_logs: list[list[float]] = []
    rl_times: list[float] = []
    rl_dec_medians: list[float] = []
    for run in trained.rl_runs:
        ro, total_s, dec_median = _timed_rollout(
            ppo.greedy_policy(run.policy, run.stats, params), test, params, soc0
        )
        rl_costs.append(ro.total_cost)
        rl_logs.append(ro.actions)
        rl_times.append(total_s)
        rl_dec_medians.append(dec_median)
    if len(rl_costs) >= 2:
        rl_mean, rl_hw = confidence_interval(rl_costs)
    else:
        rl_mean, rl_hw = rl_costs[0], None
    controllers[RL] = ControllerResult(
        name=RL,
        cost=rl_mean,
        optimality_gap=optimality_gap(rl_mean, gt.total_cost),
        ci_half_width=rl_hw,
        costs_per_seed=rl_costs,
        testing_time_s=float(np.median(rl_times)),
        per_decision_median_s=float(np.median(rl_dec_medians)),
        train_samples=trained.rl_env_steps,
        action_log=rl_logs,
    )

    # MPC with the fitted forecaster
    mpc_run = receding_horizon_run(
        test, trained.forecaster, params, config.horizon, soc0, warmup=train
    )
    controllers[MPC] = ControllerResult(
        name=MPC,
        cost=mpc_run.total_cost,
        optimality_gap=optimality_gap(mpc_run.total_cost, gt.total_cost),
        testing_time_s=float(np.sum(mpc_run.decision_seconds)),
        per_decision_median_s=float(np.median(mpc_run.solve_seconds)),
        train_samples=len(train),
        action_log=[list(mpc_run.actions)],
    )

    # MPC with exact future values
    exact_run = receding_horizon_run(test, None, params, config.horizon, soc0)
    controllers[MPC_EXACT] = ControllerResult(
        name=MPC_EXACT,
        cost=exact_run.total_cost,
        optimality_gap=optimality_gap(exact_run.total_cost, gt.total_cost),
        testing_time_s=float(np.sum(exact_run.decision_seconds)),
        per_decision_median_s=float(np.median(exact_run.solve_seconds)),
        action_log=[list(exact_run.actions)],
    )

    # threshold baseline
    base_ro, base_total, base_median = _timed_rollout(
        lambda s: baseline_act(s, trained.baseline, params), test, params, soc0
    )
    controllers[BASELINE] = ControllerResult(
        name=BASELINE,
        cost=base_ro.total_cost,
        optimality_gap=optimality_gap(base_ro.total_cost, gt.total_cost),
        testing_time_s=base_total,
        per_decision_median_s=base_median,
        action_log=[base_ro.actions],
    )

    controllers[GROUND_TRUTH] = ControllerResult(
        name=GROUND_TRUTH,
        cost=gt.total_cost,
        optimality_gap=0.0,
        action_log=[list(gt.actions)],
    )
    nb = no_bms_cost(test)
    controllers[NO_BMS] = ControllerResult(
        name=NO_BMS,
        cost=nb,
        optimality_gap=optimality_gap(nb, gt.total_cost),
        action_log=[[0.0] * len(test)],
    )

    return EvalReport(
        controllers=controllers,
        gt_cost=gt.total_cost,
        dataset={
            "name": dataset_name,
            "n_train": len(train),
            "n_test": len(test),
            "test_start": str(test.timestamps[0]),
            "test_end": str(test.timestamps[-1]),
        },
        seeds=config.seeds,
    )


def run_comparison(
    train: ExogenousSeries,
    test: ExogenousSeries,
    config: BenchConfig,
    dataset_name: str = "synthetic",
    progress: Optional[Callable[[str], None]] = None,
) -> EvalReport:
    """Train on the train split, evaluate everything on the test split."""
    if test.timestamps[0] <= train.timestamps[-1]:
        raise ValidationError("test split must start after the train split ends")
    trained = train_controllers(train, config, progress)
    return evaluate_controllers(trained, train, test, config, dataset_name)


@dataclass
class RobustnessReport:
    """Paired evaluation on an unshifted and a demand-shifted test set."""

    unshifted: EvalReport
    shifted: EvalReport
    gap_delta_pct: dict[str, float]  # shifted minus unshifted gap, percentage points
    forecast_rmse_unshifted: dict[str, float]
    forecast_rmse_shifted: dict[str, float]

    def to_dict(self) -> dict:
        return {
            "unshifted": self.unshifted.to_dict(),
            "shifted": self.shifted.to_dict(),
            "gap_delta_pct": self.gap_delta_pct,
            "forecast_rmse_unshifted": self.forecast_rmse_unshifted,
            "forecast_rmse_shifted": self.forecast_rmse_shifted,
        }


def run_robustness(
    train: ExogenousSeries,
    test_unshifted: ExogenousSeries,
    test_shifted: ExogenousSeries,
    config: BenchConfig,
    horizon_for_rmse: Optional[int] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> RobustnessReport:
    """Evaluate the same trained controllers on both test sets.

    Controllers are trained once on the training split; the report pairs
    their performance on the original test distribution and on the shifted
    one, with per-controller gap deltas and forecaster error on both.
    """
    trained = train_controllers(train, config, progress)
    rep_u = evaluate_controllers(trained, train, test_unshifted, config, "unshifted")
    rep_s = evaluate_controllers(trained, train, test_shifted, config, "shifted")
    horizon = horizon_for_rmse if horizon_for_rmse is not None else config.horizon
    fe_u = forecast_error(trained.forecaster, test_unshifted, horizon, warmup=train)
    fe_s = forecast_error(trained.forecaster, test_shifted, horizon, warmup=train)
    deltas = {
        name: rep_s.gap_pct(name) - rep_u.gap_pct(name)
        for name in CONTROLLER_ORDER
        if name in rep_u.controllers and name != GROUND_TRUTH
    }
    return RobustnessReport(
        unshifted=rep_u,
        shifted=rep_s,
        gap_delta_pct=deltas,
        forecast_rmse_unshifted={"price": fe_u.price_rmse, "demand": fe_u.demand_rmse},
        forecast_rmse_shifted={"price": fe_s.price_rmse, "demand": fe_s.demand_rmse},
    )


def replay_policy(actions: list[float]) -> Callable[[EnvState], float]:
    """Policy that replays a stored action log (for re-simulation checks)."""
    def _policy(state: EnvState) -> float:
        return actions[state.t]

    return _policy
