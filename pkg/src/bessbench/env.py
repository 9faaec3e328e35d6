"""Deterministic battery-system simulator.

The system couples a load with hourly demand ``d_t`` (kWh per step), a
utility selling at price ``rho_t`` ($/kWh), and a battery of capacity ``E``
(kWh) whose state of charge moves on a fixed lattice.  Actions are SOC
fractions per step: the energy exchanged with the grid in one step is
``a * E`` kWh, positive when charging.  The per-step reward is the negative
electricity bill, ``-rho_t * (d_t + a_t * E)``; discharging beyond demand
exports at the same price.

All functions here are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .data import ExogenousSeries
from .errors import (
    InvalidActionError,
    LatticeAlignmentError,
    NumericError,
    SeriesExhaustedError,
    ValidationError,
)

_LATTICE_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class BatteryParams:
    """Battery nameplate data; governs feasibility everywhere.

    ``a_max`` is the maximum SOC fraction moved per step, so the maximum
    power is ``a_max * capacity_e / step_hours`` kW.  The SOC range must be
    an integer multiple of ``a_max`` so every reachable SOC sits on the
    lattice ``soc_min + k * a_max``; that alignment is what makes the exact
    lattice solver in :mod:`bessbench.mpc` optimal.  ``a_max = 0`` is the
    degenerate battery-disabled case.
    """

    capacity_e: float
    soc_min: float = 0.0
    soc_max: float = 1.0
    a_max: float = 0.1
    step_hours: float = 1.0

    def __post_init__(self) -> None:
        if not (self.capacity_e > 0):
            raise ValidationError(f"capacity_e must be positive, got {self.capacity_e}")
        if not (0.0 <= self.soc_min < self.soc_max <= 1.0):
            raise ValidationError(
                f"need 0 <= soc_min < soc_max <= 1, got [{self.soc_min}, {self.soc_max}]"
            )
        if self.a_max < 0 or self.a_max > self.soc_max - self.soc_min + _LATTICE_TOL:
            raise ValidationError(
                f"a_max must lie in [0, soc_max - soc_min], got {self.a_max}"
            )
        if self.step_hours <= 0:
            raise ValidationError(f"step_hours must be positive, got {self.step_hours}")
        if self.a_max > 0:
            span = (self.soc_max - self.soc_min) / self.a_max
            if abs(span - round(span)) > _LATTICE_TOL:
                raise ValidationError(
                    "soc_max - soc_min must be an integer multiple of a_max "
                    f"(got span {self.soc_max - self.soc_min} with a_max {self.a_max})"
                )

    @property
    def n_lattice_steps(self) -> int:
        """Number of a_max increments between soc_min and soc_max."""
        if self.a_max == 0:
            return 0
        return round((self.soc_max - self.soc_min) / self.a_max)

    def lattice_index(self, soc: float) -> int:
        """Map an SOC value to its lattice index, or raise if off-lattice."""
        if self.a_max == 0:
            return 0
        j = round((soc - self.soc_min) / self.a_max)
        if j < 0 or j > self.n_lattice_steps:
            raise LatticeAlignmentError(f"SOC {soc} outside [{self.soc_min}, {self.soc_max}]")
        if abs(self.soc_min + j * self.a_max - soc) > _LATTICE_TOL:
            raise LatticeAlignmentError(
                f"SOC {soc} is not on the lattice soc_min + k*a_max (a_max={self.a_max})"
            )
        return j

    def default_soc0(self) -> float:
        """Midpoint of the SOC range snapped to the lattice."""
        if self.a_max == 0:
            return 0.5 * (self.soc_min + self.soc_max)
        j = round((0.5 * (self.soc_max - self.soc_min)) / self.a_max)
        return self.soc_min + j * self.a_max


@dataclass(frozen=True, slots=True)
class EnvState:
    """MDP state: (SOC, price, demand, hour of day, weekend flag, step index)."""

    soc: float
    price: float
    demand: float
    hour: int
    is_weekend: bool
    t: int


@dataclass(frozen=True, slots=True)
class StepOutcome:
    """Result of one transition.

    ``effective_a`` is the action after clamping to the rate bound and to
    the SOC limits; the reward charges only the energy actually moved.
    ``next_state`` is None when the series has no row t+1 (episode end).
    ``grid_energy`` is kWh purchased; negative means export.
    """

    next_state: Optional[EnvState]
    reward: float
    effective_a: float
    grid_energy: float

    @property
    def done(self) -> bool:
        return self.next_state is None


Policy = Callable[[EnvState], float]


@dataclass(frozen=True, slots=True)
class TrajectoryStep:
    state: EnvState
    action: float
    effective_a: float
    reward: float
    grid_energy: float


@dataclass(frozen=True, slots=True)
class Rollout:
    """Episode record: one entry per series row, plus the final SOC."""

    steps: list[TrajectoryStep]
    final_soc: float

    @property
    def total_cost(self) -> float:
        return -sum(s.reward for s in self.steps)

    @property
    def actions(self) -> list[float]:
        return [s.effective_a for s in self.steps]


def state_at(series: ExogenousSeries, t: int, soc: float) -> EnvState:
    """Build the MDP state for series row ``t`` at the given SOC."""
    if t < 0 or t >= len(series):
        raise SeriesExhaustedError(f"step index {t} outside series of length {len(series)}")
    return EnvState(
        soc=soc,
        price=float(series.prices[t]),
        demand=float(series.demands[t]),
        hour=int(series.hours[t]),
        is_weekend=bool(series.weekend_flags[t]),
        t=t,
    )


def step(
    state: EnvState,
    action: float,
    params: BatteryParams,
    series: ExogenousSeries,
) -> StepOutcome:
    """Apply one action and advance the simulator.

    The requested action is clamped to the rate bound [-a_max, a_max] and
    to whatever keeps the SOC inside [soc_min, soc_max]; the clamped value
    is what moves energy and earns the reward.  Exogenous fields of the
    next state come from series row ``t + 1``; when that row does not
    exist the outcome is terminal (``next_state is None``).
    """
    if not (
        math.isfinite(state.soc)
        and math.isfinite(state.price)
        and math.isfinite(state.demand)
        and math.isfinite(action)
    ):
        raise NumericError("non-finite value in step inputs")
    if state.t >= len(series):
        raise SeriesExhaustedError(
            f"state.t={state.t} outside series of length {len(series)}"
        )

    lo = max(-params.a_max, params.soc_min - state.soc)
    hi = min(params.a_max, params.soc_max - state.soc)
    effective_a = min(max(action, lo), hi)

    next_soc = state.soc + effective_a
    # guard against 1-ulp drift from repeated float addition
    next_soc = min(max(next_soc, params.soc_min), params.soc_max)

    grid_energy = state.demand + effective_a * params.capacity_e
    reward = -state.price * grid_energy

    if state.t + 1 < len(series):
        next_state = state_at(series, state.t + 1, next_soc)
    else:
        next_state = None
    return StepOutcome(
        next_state=next_state,
        reward=reward,
        effective_a=effective_a,
        grid_energy=grid_energy,
    )


def rollout(
    policy: Policy,
    series: ExogenousSeries,
    params: BatteryParams,
    soc0: float,
) -> Rollout:
    """Run a policy over every row of the series.

    The policy is queried once per row; an action outside the rate bound
    raises :class:`InvalidActionError` rather than being clamped silently
    (SOC-limit clamping still applies, as in :func:`step`).
    """
    if len(series) == 0:
        raise ValidationError("series is empty")
    params.lattice_index(soc0)  # soc0 must sit on the lattice

    steps: list[TrajectoryStep] = []
    state = state_at(series, 0, soc0)
    soc = soc0
    while True:
        action = float(policy(state))
        if abs(action) > params.a_max + 1e-12:
            raise InvalidActionError(
                f"policy emitted a={action} with a_max={params.a_max} at t={state.t}"
            )
        outcome = step(state, action, params, series)
        steps.append(
            TrajectoryStep(
                state=state,
                action=action,
                effective_a=outcome.effective_a,
                reward=outcome.reward,
                grid_energy=outcome.grid_energy,
            )
        )
        soc = soc + outcome.effective_a
        soc = min(max(soc, params.soc_min), params.soc_max)
        if outcome.next_state is None:
            break
        state = outcome.next_state
    return Rollout(steps=steps, final_soc=soc)


def no_bms_cost(series: ExogenousSeries) -> float:
    """Total bill with the battery idle: sum of price * demand over the series."""
    if len(series) == 0:
        raise ValidationError("series is empty")
    return float(np.dot(series.prices, series.demands))
