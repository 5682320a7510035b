"""Multi-turn calibration episode: four tools, bounds, termination, trajectory.

An episode wraps one basin/window pair. The driving agent calls
``set_parameters`` / ``run_simulation`` / ``evaluate`` / ``parse_failure``;
every call (accepted or rejected) consumes a turn and lands in a replayable
trajectory. Termination: target attainment, five evaluations without
improvement, the turn cap, or the wall-clock budget, in that priority.
"""

from __future__ import annotations

import json
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rewards
from .control import (
    SimulationConfig,
    format_timestamp,
    parse_control_file,
    read_discharge_csv,
    write_control_file,
)
from .crest import Basin, ForcingSeries, Hydrograph, SimulationGate, simulate
from .metrics import MetricPanel, metric_panel, peak_and_lag, signatures, UndefinedMetricError
from .params import ParameterSet

RUNNING = "running"
TARGET_ATTAINED = "target_attained"
STALLED = "stalled"
TURN_CAP = "turn_cap"
WALL_CLOCK = "wall_clock"
CLOSED = "closed"

# Hydrograph-symptom rules, applied in order; the first match names the
# parameter group a diagnosis-driven calibrator should move next.
DIAGNOSIS_GROUPS = {
    "routing": ("alpha", "beta", "alpha0"),
    "volume": ("ke", "im"),
    "recession": ("fc", "under", "leaki"),
    "timing": ("alpha0", "alpha"),
    "partition": ("wm", "b", "im"),
}
PEAK_BALANCED_LO = 0.85
PEAK_BALANCED_HI = 1.15
VOLUME_BALANCED_LO = 0.9
VOLUME_BALANCED_HI = 1.1
RECESSION_STEEP_MARGIN = 0.02  # 1/h
LATE_PEAK_HOURS = 6.0


class ToolRejection(Exception):
    """A tool call the episode refused; logged, turn consumed, state unchanged."""

    def __init__(self, code: str, reason: str):
        self.code = code
        self.reason = reason
        super().__init__(reason)


class EpisodeClosedError(Exception):
    """The episode is terminated or closed; the call was not recorded."""


@dataclass
class EpisodeConfig:
    """Episode knobs; targets and defaults follow the training environment."""

    control_path: str | Path = ""
    target_nse: float | None = None     # default: the control file's target
    max_turns: int = 50
    no_improve_rounds: int = 5
    wall_clock_budget_s: float | None = None
    improvement_epsilon: float = 1e-4
    allow_fixed_override: bool = False
    workdir: str | Path | None = None

    def __post_init__(self):
        if self.max_turns < 1:
            raise ValueError("max_turns must be >= 1")
        if self.no_improve_rounds < 1:
            raise ValueError("no_improve_rounds must be >= 1")


@dataclass
class ToolEvent:
    """One tool call: arguments, outcome, and reward-relevant readings."""

    turn: int
    tool: str
    args: dict
    ok: bool
    reason: str | None
    nse: float | None
    best_nse: float | None
    dt_ms: float
    delta_nse: float | None = None

    def to_json_obj(self) -> dict:
        out = {"turn": self.turn, "tool": self.tool, "args": self.args, "ok": self.ok}
        if self.reason is not None:
            out["reason"] = self.reason
        if self.nse is not None:
            out["nse"] = self.nse
        if self.best_nse is not None:
            out["best_nse"] = self.best_nse
        out["dt_ms"] = self.dt_ms
        return out


def diagnose(panel: MetricPanel) -> dict:
    """Rule-based reading of a metric panel into a parameter-group action."""
    peak = panel.peak_ratio
    vol = panel.volume_ratio
    lag = panel.lag_hours
    r_sim = panel.recession_slope_sim
    r_obs = panel.recession_slope_obs

    header = ""
    if panel.nse is not None:
        parts = [f"NSE {panel.nse:.4f}"]
        if panel.kge_r is not None:
            parts.append(f"correlation {panel.kge_r:.3f}")
        if panel.kge is not None:
            parts.append(f"KGE {panel.kge:.4f}")
        if peak is not None:
            parts.append(f"peak ratio {peak:.3f}")
        if lag is not None:
            parts.append(f"lag {lag:+.0f} h")
        header = "Latest simulation: " + ", ".join(parts) + ". "

    if peak is not None and vol is not None and peak < PEAK_BALANCED_LO \
            and VOLUME_BALANCED_LO <= vol <= VOLUME_BALANCED_HI:
        group = "routing"
        text = (
            f"Peak under-prediction (peak ratio {peak:.2f}) with a balanced volume "
            f"ratio ({vol:.2f}) points to routing velocity: raise conveyance via "
            "alpha, beta, or alpha0 before touching soil storage (wm, b, im)."
        )
    elif vol is not None and vol > VOLUME_BALANCED_HI and peak is not None \
            and PEAK_BALANCED_LO <= peak <= PEAK_BALANCED_HI:
        group = "volume"
        text = (
            f"Volume surplus (volume ratio {vol:.2f}) with a balanced peak points to "
            "an evapotranspiration or impervious-fraction issue: adjust ke or im."
        )
    elif r_sim is not None and r_obs is not None \
            and r_sim < r_obs - RECESSION_STEEP_MARGIN:
        group = "recession"
        text = (
            f"Simulated recession is too steep ({r_sim:.3f} vs {r_obs:.3f} 1/h "
            "observed): slow the subsurface response via fc, under, or leaki."
        )
    elif lag is not None and lag > LATE_PEAK_HOURS:
        group = "timing"
        text = (
            f"Simulated peak arrives {lag:.0f} h late: speed up hillslope and "
            "channel celerity via alpha0 or alpha."
        )
    elif vol is not None and vol < VOLUME_BALANCED_LO:
        group = "partition"
        text = (
            f"Volume deficit (volume ratio {vol:.2f}): the rainfall-to-runoff "
            "partition under-produces; move wm, b, or im."
        )
    elif peak is not None and peak > PEAK_BALANCED_HI:
        group = "partition"
        text = (
            f"Peak over-prediction (peak ratio {peak:.2f}): damp the runoff "
            "partition via wm, b, or im."
        )
    else:
        group = "partition"
        text = (
            "Metrics are internally consistent; remaining error is diffuse. "
            "Marginal gains are likeliest in the rainfall-to-runoff partition "
            "(wm, b, im)."
        )
    return {"group": group, "parameters": list(DIAGNOSIS_GROUPS[group]),
            "text": header + text}


class Episode:
    """One serial calibration session over a fixed basin and window."""

    def __init__(self, cfg: EpisodeConfig):
        self.cfg = cfg
        self.control = parse_control_file(cfg.control_path)
        self.target_nse = (
            cfg.target_nse if cfg.target_nse is not None else self.control.target_nse
        )
        self.gauge_id = self.control.gauge_id
        self.basin = Basin.from_config(self.control)
        self.forcing = ForcingSeries.from_csv(
            self.control.resolve(self.control.precip_csv),
            self.control.resolve(self.control.pet_csv),
        )
        stamps, values = read_discharge_csv(self.control.resolve(self.control.obs_csv))
        obs_by_time = dict(zip(stamps, values))
        self.window = (self.control.window_start, self.control.window_end)
        start_idx = self.forcing.index_of(self.window[0])
        end_idx = self.forcing.index_of(self.window[1])
        self.window_timestamps = self.forcing.timestamps[start_idx:end_idx + 1]
        missing = [t for t in self.window_timestamps if t not in obs_by_time]
        if missing:
            raise ValueError(
                f"observations missing for {len(missing)} window hours, first "
                f"{format_timestamp(missing[0])}"
            )
        self.q_obs = np.asarray(
            [obs_by_time[t] for t in self.window_timestamps], dtype=np.float64
        )
        self.warmup_steps = int(self.control.warmup_hours)
        if self.warmup_steps >= len(self.window_timestamps) - 1:
            raise ValueError("warmup consumes the whole window")

        workdir = Path(cfg.workdir) if cfg.workdir else Path(
            tempfile.mkdtemp(prefix="hydrocal-episode-")
        )
        workdir.mkdir(parents=True, exist_ok=True)
        self.control_copy = workdir / "control.txt"
        self._write_control_copy(self.control.params)

        self.status = RUNNING
        self._closed = False
        self.turn_index = 0
        self.params: ParameterSet | None = None
        self.best_nse = float("-inf")
        self.best_params: ParameterSet | None = None
        self.last_hydrograph: Hydrograph | None = None
        self._last_sim_params: ParameterSet | None = None
        self._last_panel: MetricPanel | None = None
        self.consecutive_no_improve = 0
        self.counts = {"n_set": 0, "n_sim": 0, "n_eval": 0, "n_improve": 0,
                       "n_parse_fail": 0}
        self.trajectory: list[ToolEvent] = []
        self._turn_rewards: list[tuple[int, float, str]] = []
        self._started = time.monotonic()
        self._gate: SimulationGate | None = None

    # -- plumbing ------------------------------------------------------------

    def _write_control_copy(self, params: ParameterSet) -> None:
        # the working copy resolves data files on its own, so paths are absolutized
        cfg = replace(
            self.control,
            params=params,
            dem=str(self.control.resolve(self.control.dem)),
            flowdir=str(self.control.resolve(self.control.flowdir)),
            mask=str(self.control.resolve(self.control.mask)),
            obs_csv=str(self.control.resolve(self.control.obs_csv)),
            precip_csv=str(self.control.resolve(self.control.precip_csv)),
            pet_csv=str(self.control.resolve(self.control.pet_csv)),
            baselines={
                k: (v if isinstance(v, float) else str(self.control.resolve(v)))
                for k, v in self.control.baselines.items()
            },
        )
        write_control_file(cfg, self.control_copy)

    def _guard_running(self) -> None:
        if self._closed:
            raise EpisodeClosedError("session is closed")
        if self.status == RUNNING and self.cfg.wall_clock_budget_s is not None \
                and time.monotonic() - self._started > self.cfg.wall_clock_budget_s:
            self.status = WALL_CLOCK
        if self.status != RUNNING:
            raise EpisodeClosedError(f"episode is {self.status}")

    def _record(self, event: ToolEvent) -> None:
        self.trajectory.append(event)
        value = rewards.turn_reward(event)
        self._turn_rewards.append((event.turn, value, event.tool if event.ok
                                   else f"rejected {event.tool}"))
        self._apply_termination()

    def _apply_termination(self) -> None:
        verdict = check_termination(self)
        if verdict != RUNNING:
            self.status = verdict

    def _begin_call(self) -> tuple[int, float]:
        self._guard_running()
        self.turn_index += 1
        return self.turn_index, time.perf_counter()

    def _eval_slice(self, series: np.ndarray) -> np.ndarray:
        return series[self.warmup_steps:]

    # -- the four tools --------------------------------------------------------

    def set_parameters(self, values: dict) -> dict:
        """Replace the 13 multipliers; rejection lists every violating key."""
        turn, t0 = self._begin_call()
        args = {k: values.get(k) for k in values}
        try:
            try:
                candidate = ParameterSet.from_dict(values)
            except KeyError as e:
                raise ToolRejection("bounds_violation", str(e)) from None
            bad = candidate.violations(self.cfg.allow_fixed_override)
            if bad:
                raise ToolRejection(
                    "bounds_violation",
                    "; ".join(v.describe() for v in bad),
                )
        except ToolRejection as rej:
            self._record(ToolEvent(turn, "set_parameters", args, False, rej.reason,
                                   None, None, _ms(t0)))
            raise
        self.params = candidate
        self._write_control_copy(candidate)
        self.counts["n_set"] += 1
        self._record(ToolEvent(turn, "set_parameters", candidate.to_dict(), True,
                               None, None, None, _ms(t0)))
        return {"accepted": True, "params": candidate.to_dict()}

    def run_simulation(self) -> dict:
        """Simulate the window with the current multipliers; returns the full
        hourly series plus hydrologic-fit signatures and a reading of them."""
        turn, t0 = self._begin_call()
        if self.params is None:
            rej = ToolRejection("no_simulation", "no parameters set")
            self._record(ToolEvent(turn, "run_simulation", {}, False, rej.reason,
                                   None, None, _ms(t0)))
            raise rej
        hydro = simulate(
            self.basin, self.forcing, self.params, window=self.window,
            dt_hours=self.control.timestep_hours, gate=self._gate,
        )
        hydro.q_obs = self.q_obs
        self.last_hydrograph = hydro
        self._last_sim_params = self.params
        self._last_panel = None
        self.counts["n_sim"] += 1

        obs = self._eval_slice(self.q_obs)
        sim = self._eval_slice(hydro.q_sim)
        ratio, err, lag = peak_and_lag(obs, sim)
        try:
            sig = signatures(obs, sim)
        except UndefinedMetricError:
            sig = {}
        summary = {
            "peak_ratio": None if np.isnan(ratio) else ratio,
            "peak_error_cms": err,
            "lag_hours": lag,
            **sig,
        }
        panel = metric_panel(obs, sim)
        reading = diagnose(panel)
        payload = {
            "timestamps": [format_timestamp(t) for t in hydro.timestamps],
            "q_sim": [float(v) for v in hydro.q_sim],
            "q_obs": [float(v) for v in self.q_obs],
            "signatures": summary,
            "mass_balance": hydro.ledger.to_dict(),
            "text": reading["text"],
        }
        self._record(ToolEvent(turn, "run_simulation", {}, True, None, None,
                               None, _ms(t0)))
        return payload

    def evaluate(self) -> dict:
        """Score the latest simulation; updates the running best and the
        stall counter, then applies the termination rules."""
        turn, t0 = self._begin_call()
        if self.last_hydrograph is None:
            rej = ToolRejection("no_simulation", "no simulation to evaluate")
            self._record(ToolEvent(turn, "evaluate", {}, False, rej.reason,
                                   None, None, _ms(t0)))
            raise rej
        panel = metric_panel(
            self._eval_slice(self.q_obs),
            self._eval_slice(self.last_hydrograph.q_sim),
        )
        if panel.nse is None:
            rej = ToolRejection("no_simulation", "NSE undefined on this window")
            self._record(ToolEvent(turn, "evaluate", {}, False, rej.reason,
                                   None, None, _ms(t0)))
            raise rej
        self._last_panel = panel
        value = panel.nse
        improved = value > self.best_nse + self.cfg.improvement_epsilon
        if improved:
            delta = rewards.improvement_delta(self.best_nse, value)
            self.best_nse = value
            self.best_params = self._last_sim_params
            self.counts["n_improve"] += 1
            self.consecutive_no_improve = 0
        else:
            delta = 0.0
            self.consecutive_no_improve += 1
        self.counts["n_eval"] += 1
        self._record(ToolEvent(turn, "evaluate", {}, True, None, value,
                               self.best_nse, _ms(t0), delta_nse=delta))
        return {
            "metrics": panel.to_dict(),
            "nse": value,
            "improved": improved,
            "best_nse": self.best_nse,
            "target_attained": self.best_nse >= self.target_nse,
            "status": self.status,
        }

    def parse_failure(self) -> dict:
        """Diagnose the mismatch between simulated and observed flow and name
        the parameter group behind it. The invocation itself is penalized."""
        turn, t0 = self._begin_call()
        self.counts["n_parse_fail"] += 1
        if self.last_hydrograph is None:
            payload = {"text": "No simulation to diagnose yet: set parameters and "
                               "run a simulation first.",
                       "group": None, "parameters": []}
        else:
            panel = self._last_panel or metric_panel(
                self._eval_slice(self.q_obs),
                self._eval_slice(self.last_hydrograph.q_sim),
            )
            payload = diagnose(panel)
        self._record(ToolEvent(turn, "parse_failure", {}, True, None, None,
                               None, _ms(t0)))
        return payload

    # -- bookkeeping ------------------------------------------------------------

    def close(self) -> dict:
        if self._closed:
            raise EpisodeClosedError("session already closed")
        self._closed = True
        if self.status == RUNNING:
            self.status = CLOSED
        return {"closed": True, "status": self.status}

    def status_payload(self) -> dict:
        return {
            "status": self.status,
            "gauge_id": self.gauge_id,
            "target_nse": self.target_nse,
            "turn_index": self.turn_index,
            "best_nse": None if self.best_nse == float("-inf") else self.best_nse,
            "counts": dict(self.counts),
            "consecutive_no_improve": self.consecutive_no_improve,
        }

    def reward_trace(self) -> rewards.RewardTrace:
        """Reward accumulated live; equals re-scoring the exported trajectory."""
        trace = rewards.RewardTrace()
        trace.per_turn = list(self._turn_rewards)
        best = None if self.best_nse == float("-inf") else self.best_nse
        trace.terminal, trace.components = rewards.terminal_reward(
            best, self.target_nse, self.counts["n_eval"], self.counts["n_improve"],
            empty=self.counts["n_eval"] == 0,
        )
        trace.total = sum(v for _, v, _ in trace.per_turn) + trace.terminal
        return trace

    def export_trajectory(self, path: str | Path | None = None) -> str:
        """Serialize the trajectory as JSONL with a trailing reward summary."""
        lines = [json.dumps(ev.to_json_obj(), sort_keys=True) for ev in self.trajectory]
        trace = self.reward_trace()
        summary = {
            **trace.components,
            "terminal": trace.terminal,
            "total": trace.total,
            "tau": self.target_nse,
            "best_nse": None if self.best_nse == float("-inf") else self.best_nse,
            "n_eval": self.counts["n_eval"],
            "n_improve": self.counts["n_improve"],
            "status": self.status,
        }
        lines.append(json.dumps(summary, sort_keys=True))
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def create_episode(cfg: EpisodeConfig) -> Episode:
    return Episode(cfg)


def check_termination(ep: Episode) -> str:
    """First satisfied rule wins: target, stall, turn cap, wall clock."""
    if ep.status not in (RUNNING,):
        return ep.status
    if ep.best_nse >= ep.target_nse:
        return TARGET_ATTAINED
    if ep.consecutive_no_improve >= ep.cfg.no_improve_rounds:
        return STALLED
    if ep.turn_index >= ep.cfg.max_turns:
        return TURN_CAP
    if ep.cfg.wall_clock_budget_s is not None \
            and time.monotonic() - ep._started > ep.cfg.wall_clock_budget_s:
        return WALL_CLOCK
    return RUNNING


def load_trajectory(path: str | Path) -> tuple[list[dict], dict | None]:
    """Read a trajectory file back into event dicts plus the trailing summary."""
    events = []
    summary = None
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "tool" in obj:
            events.append(obj)
        else:
            summary = obj
    return events, summary


def replay_trajectory(cfg: EpisodeConfig, events: list) -> Episode:
    """Re-drive a fresh episode from recorded events.

    The simulator is deterministic, so replaying the recorded tool calls
    reproduces the recorded best NSE bit-exactly.
    """
    ep = Episode(cfg)
    for ev in events:
        if ep.status != RUNNING:
            break
        tool = ev["tool"] if isinstance(ev, dict) else ev.tool
        args = ev.get("args", {}) if isinstance(ev, dict) else ev.args
        try:
            if tool == "set_parameters":
                ep.set_parameters(dict(args))
            elif tool == "run_simulation":
                ep.run_simulation()
            elif tool == "evaluate":
                ep.evaluate()
            elif tool == "parse_failure":
                ep.parse_failure()
            else:
                raise ValueError(f"unknown tool {tool!r} in trajectory")
        except ToolRejection:
            continue
    return ep
