"""Distributed rainfall-runoff simulation and multi-turn calibration harness."""

__version__ = "0.1.0"

from .params import PARAM_BOUNDS, PARAM_NAMES, BoundsError, ParameterSet
from .raster import (
    BasinMask,
    Grid,
    delineate_basin,
    derive_channel_mask,
    flow_accumulation,
    load_ascii_grid,
    topological_order,
    write_ascii_grid,
)
from .control import SimulationConfig, parse_control_file, write_control_file
from .crest import (
    Basin,
    Baselines,
    ForcingSeries,
    Hydrograph,
    MassBalance,
    SIMULATION_GATE,
    apply_multipliers,
    simulate,
)
from .metrics import MetricPanel, kge_components, metric_panel, moriasi_band, nse
from .episode import Episode, EpisodeConfig, create_episode, replay_trajectory
from .rewards import RewardTrace, score_trajectory, terminal_reward, turn_reward
from .calibrators import (
    CalibrationRun,
    best_of_rounds,
    coordinate_refine,
    dds_calibrate,
    random_search,
)
from .bench import BenchReport, GaugeTask, make_task, run_benchmark, select_event_window
from .synth import SynthBundle, synth_basin
from .service import EpisodeService

__all__ = [
    "PARAM_BOUNDS", "PARAM_NAMES", "BoundsError", "ParameterSet",
    "BasinMask", "Grid", "delineate_basin", "derive_channel_mask",
    "flow_accumulation", "load_ascii_grid", "topological_order", "write_ascii_grid",
    "SimulationConfig", "parse_control_file", "write_control_file",
    "Basin", "Baselines", "ForcingSeries", "Hydrograph", "MassBalance",
    "SIMULATION_GATE", "apply_multipliers", "simulate",
    "MetricPanel", "kge_components", "metric_panel", "moriasi_band", "nse",
    "Episode", "EpisodeConfig", "create_episode", "replay_trajectory",
    "RewardTrace", "score_trajectory", "terminal_reward", "turn_reward",
    "CalibrationRun", "best_of_rounds", "coordinate_refine", "dds_calibrate",
    "random_search",
    "BenchReport", "GaugeTask", "make_task", "run_benchmark", "select_event_window",
    "SynthBundle", "synth_basin",
    "EpisodeService",
]
