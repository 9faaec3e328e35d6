"""Finite-horizon battery dispatch: exact solver, receding-horizon driver, ground truth.

The horizon problem minimizes  sum_k price_hat[k] * (E * a[k] + demand_hat[k])
over actions a[k] in [-a_max, a_max] subject to the SOC recursion and the
SOC limits.  Because the demand term is an additive constant and an optimal
vertex of the underlying LP moves the SOC by a full +/-a_max (or not at all)
whenever the start SOC and the limits sit on the a_max lattice, the problem
is solved exactly by a dynamic program over the lattice with the per-step
action set {-a_max, 0, +a_max}.  Ties are broken preferring idle, then
discharge, then charge, so plans are reproducible.

There is no terminal SOC constraint or salvage value, so plans tend to
drain the battery toward the end of their horizon; the receding-horizon
driver re-solves every step and applies only the first action, which keeps
that artifact confined to the true end of the series.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import ExogenousSeries
from .env import BatteryParams, state_at, step
from .errors import ValidationError
from .forecast import Forecaster, OracleForecaster, predict_horizon

_IDLE, _DISCHARGE, _CHARGE = 0, 1, 2


@dataclass(frozen=True)
class HorizonProblem:
    """One finite-horizon instance: forecasts, start SOC, battery limits."""

    prices_hat: np.ndarray  # length T+1
    demands_hat: np.ndarray  # length T+1
    soc0: float
    params: BatteryParams

    def __post_init__(self) -> None:
        p = np.asarray(self.prices_hat, dtype=np.float64)
        d = np.asarray(self.demands_hat, dtype=np.float64)
        object.__setattr__(self, "prices_hat", p)
        object.__setattr__(self, "demands_hat", d)
        if p.ndim != 1 or p.shape != d.shape or len(p) < 1:
            raise ValidationError("prices_hat and demands_hat must be equal-length 1-D arrays")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(d))):
            raise ValidationError("non-finite forecast entries")
        self.params.lattice_index(self.soc0)  # raises if off-lattice

    @property
    def horizon(self) -> int:
        return len(self.prices_hat) - 1


@dataclass(frozen=True)
class HorizonPlan:
    """Optimal action sequence with its predicted cost and SOC path."""

    actions: np.ndarray  # length T+1
    predicted_cost: float
    soc_path: np.ndarray  # length T+2, soc_path[0] = soc0


def solve_horizon(problem: HorizonProblem) -> HorizonPlan:
    """Globally minimize predicted cost over the SOC lattice.

    Backward dynamic program over lattice states; candidate actions are
    tried in tie-break order (idle, discharge, charge) and replaced only on
    strict improvement, so the returned plan is the tie-break-preferred
    minimizer.
    """
    params = problem.params
    prices = problem.prices_hat
    demands = problem.demands_hat
    n_steps = len(prices)
    a_max = params.a_max
    e = params.capacity_e

    if a_max == 0:
        actions = np.zeros(n_steps)
        soc_path = np.full(n_steps + 1, problem.soc0)
        cost = float(np.dot(prices, demands))
        return HorizonPlan(actions=actions, predicted_cost=cost, soc_path=soc_path)

    m = params.n_lattice_steps
    j0 = params.lattice_index(problem.soc0)

    # value[j] = minimal cost-to-go from lattice state j at the current stage
    value = np.zeros(m + 1)
    choice = np.empty((n_steps, m + 1), dtype=np.int8)
    for k in range(n_steps - 1, -1, -1):
        move_cost = prices[k] * e * a_max  # price of one lattice step of charge
        best = value.copy()
        act = np.full(m + 1, _IDLE, dtype=np.int8)
        # discharge: j -> j-1, earns -move_cost
        cand = value[:-1] - move_cost
        better = cand < best[1:]
        best[1:] = np.where(better, cand, best[1:])
        act[1:][better] = _DISCHARGE
        # charge: j -> j+1, pays +move_cost
        cand = value[1:] + move_cost
        better = cand < best[:-1]
        best[:-1] = np.where(better, cand, best[:-1])
        act[:-1][better] = _CHARGE
        value = best + prices[k] * demands[k]
        choice[k] = act

    actions = np.empty(n_steps)
    soc_path = np.empty(n_steps + 1)
    soc_path[0] = problem.soc0
    j = j0
    for k in range(n_steps):
        a_idx = choice[k, j]
        if a_idx == _DISCHARGE:
            a, j = -a_max, j - 1
        elif a_idx == _CHARGE:
            a, j = a_max, j + 1
        else:
            a = 0.0
        actions[k] = a
        soc_path[k + 1] = soc_path[k] + a

    cost = float(np.dot(prices, e * actions + demands))
    return HorizonPlan(actions=actions, predicted_cost=cost, soc_path=soc_path)


@dataclass
class RecedingHorizonResult:
    """Trace of a receding-horizon run on a series."""

    actions: np.ndarray  # effective action applied per step
    rewards: np.ndarray
    soc_path: np.ndarray  # length len(series)+1
    total_cost: float
    solve_seconds: np.ndarray  # per-decision solver wall time
    decision_seconds: np.ndarray  # per-decision forecast+solve wall time
    plans: list[tuple[int, HorizonPlan]] = field(default_factory=list)


def receding_horizon_run(
    series: ExogenousSeries,
    forecaster: Optional[Forecaster],
    params: BatteryParams,
    horizon: int,
    soc0: float,
    warmup: Optional[ExogenousSeries] = None,
    collect_plans: bool = False,
) -> RecedingHorizonResult:
    """Run MPC over a series, applying the first action of each solve.

    At each step t the stage-0 price/demand are the observed values and
    stages 1..T come from the forecaster; ``forecaster=None`` uses the true
    future values (the exact-model oracle).  ``warmup`` supplies history
    ahead of the series start so lag-based forecasters work from t=0.  The
    horizon is truncated near the end of the series.
    """
    if horizon < 1:
        raise ValidationError(f"horizon must be >= 1, got {horizon}")
    if len(series) <= horizon:
        raise ValidationError(
            f"series length {len(series)} must exceed the horizon {horizon}"
        )
    oracle = OracleForecaster(series) if forecaster is None else None

    n = len(series)
    actions = np.empty(n)
    rewards = np.empty(n)
    soc_path = np.empty(n + 1)
    solve_s = np.empty(n)
    decision_s = np.empty(n)
    plans: list[tuple[int, HorizonPlan]] = []

    state = state_at(series, 0, soc0)
    soc_path[0] = soc0
    for t in range(n):
        t_start = time.perf_counter()
        t_eff = min(horizon, n - 1 - t)
        if t_eff == 0:
            # final step: the whole (length-1) horizon is observed
            prices_hat = np.array([state.price])
            demands_hat = np.array([state.demand])
        else:
            source = oracle if oracle is not None else forecaster
            fh = predict_horizon(source, series, t, t_eff, warmup=warmup)
            prices_hat = fh.prices_hat.copy()
            demands_hat = fh.demands_hat.copy()
            prices_hat[0] = state.price  # stage 0 is observed, never forecast
            demands_hat[0] = state.demand

        t_solve = time.perf_counter()
        plan = solve_horizon(
            HorizonProblem(
                prices_hat=prices_hat,
                demands_hat=demands_hat,
                soc0=state.soc,
                params=params,
            )
        )
        t_end = time.perf_counter()
        solve_s[t] = t_end - t_solve
        decision_s[t] = t_end - t_start
        if collect_plans:
            plans.append((t, plan))

        outcome = step(state, float(plan.actions[0]), params, series)
        actions[t] = outcome.effective_a
        rewards[t] = outcome.reward
        soc_path[t + 1] = soc_path[t] + outcome.effective_a
        if outcome.next_state is None:
            break
        state = outcome.next_state

    return RecedingHorizonResult(
        actions=actions,
        rewards=rewards,
        soc_path=soc_path,
        total_cost=float(-np.sum(rewards)),
        solve_seconds=solve_s,
        decision_seconds=decision_s,
        plans=plans,
    )


@dataclass(frozen=True)
class GroundTruth:
    """Full-horizon optimum on true prices and demands."""

    total_cost: float
    actions: np.ndarray
    soc_path: np.ndarray


def ground_truth(series: ExogenousSeries, params: BatteryParams, soc0: float) -> GroundTruth:
    """Single solve over the whole series with true values.

    This is the optimality-gap denominator: no feasible controller can do
    better on the same series.
    """
    plan = solve_horizon(
        HorizonProblem(
            prices_hat=series.prices,
            demands_hat=series.demands,
            soc0=soc0,
            params=params,
        )
    )
    return GroundTruth(
        total_cost=plan.predicted_cost, actions=plan.actions, soc_path=plan.soc_path
    )
