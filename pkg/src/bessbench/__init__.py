"""Benchmark suite comparing receding-horizon MPC and PPO for battery arbitrage."""

from .data import (
    ExogenousSeries,
    GeneratorConfig,
    ShiftConfig,
    concat,
    generate,
    load_csv,
    make_series,
    split,
    write_csv,
)
from .env import (
    BatteryParams,
    EnvState,
    Rollout,
    StepOutcome,
    no_bms_cost,
    rollout,
    state_at,
    step,
)
from .forecast import (
    ArLinearForecaster,
    ForecastHorizon,
    Forecaster,
    OracleForecaster,
    SeasonalNaiveForecaster,
    fit_forecaster,
    forecast_error,
    load_forecaster,
    predict_horizon,
    save_forecaster,
)
from .mpc import (
    GroundTruth,
    HorizonPlan,
    HorizonProblem,
    ground_truth,
    receding_horizon_run,
    solve_horizon,
)

__version__ = "0.1.0"
