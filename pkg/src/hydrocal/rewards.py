"""Per-turn shaping and terminal reward over calibration trajectories.

The simulator is the verifier: every number here derives from tool outcomes
and skill metrics, never from a learned model. Scoring a recorded trajectory
reproduces the reward accumulated live during the episode bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SET_PARAMETERS_REWARD = 0.02
RUN_SIMULATION_REWARD = 0.05
PARSE_FAILURE_REWARD = -0.5
TARGET_BONUS = 0.5
EVAL_COUNT_COEF = 0.02
IMPROVE_BONUS_COEF = 0.10
EMPTY_PENALTY = -1.0
CLIP_LO, CLIP_HI = -1.0, 1.0


@dataclass
class RewardTrace:
    """Decomposed episode reward: shaping stream plus terminal score."""

    per_turn: list = field(default_factory=list)  # (turn, value, cause)
    terminal: float = 0.0
    total: float = 0.0
    components: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "per_turn": [list(item) for item in self.per_turn],
            "terminal": self.terminal,
            "total": self.total,
            "components": dict(self.components),
        }


def improvement_delta(old_best: float, new_best: float) -> float:
    """Shaping credit for a best-NSE transition.

    The running best is non-decreasing, so the credit is never negative.
    The first finite best is measured against a zero baseline; progress that
    stays below zero shapes nothing per turn (it still earns the terminal
    improvement bonus).
    """
    floor = old_best if old_best > 0.0 else 0.0
    delta = new_best - floor
    return delta if delta > 0.0 else 0.0


def turn_reward(event) -> float:
    """Reward for one tool event.

    Valid set_parameters +0.02; valid run_simulation +0.05; valid evaluate
    earns its best-NSE delta; a parse_failure invocation and any rejected
    call cost -0.5.
    """
    tool = event["tool"] if isinstance(event, dict) else event.tool
    ok = event["ok"] if isinstance(event, dict) else event.ok
    if not ok or tool == "parse_failure":
        return PARSE_FAILURE_REWARD
    if tool == "set_parameters":
        return SET_PARAMETERS_REWARD
    if tool == "run_simulation":
        return RUN_SIMULATION_REWARD
    if tool == "evaluate":
        if isinstance(event, dict):
            delta = event.get("delta_nse")
        else:
            delta = event.delta_nse
        return float(delta) if delta else 0.0
    raise ValueError(f"unknown tool {tool!r}")


def terminal_reward(best_nse: float | None, target: float,
                    n_eval: int, n_improve: int,
                    empty: bool | None = None) -> tuple[float, dict]:
    """Terminal score and its components.

    clip(best, -1, 1) + 0.5 if best > target + 0.02 * n_eval
    + 0.10 * max(0, n_improve - 1) - 1.0 if the episode is empty.
    An empty episode contributes the clip floor with zeroed counts, -2 total.
    """
    if n_eval < 0 or n_improve < 0:
        raise ValueError("counts must be non-negative")
    if empty is None:
        empty = n_eval == 0
    if empty:
        best_nse, n_eval, n_improve = CLIP_LO, 0, 0
    if best_nse is None:
        raise ValueError("best_nse required for a non-empty episode")
    clipped = min(max(best_nse, CLIP_LO), CLIP_HI)
    components = {
        "clipped_nse": clipped,
        "target_bonus": TARGET_BONUS if best_nse > target else 0.0,
        "eval_count_term": EVAL_COUNT_COEF * n_eval,
        "improve_bonus": IMPROVE_BONUS_COEF * max(0, n_improve - 1),
        "empty_penalty": EMPTY_PENALTY if empty else 0.0,
    }
    return sum(components.values()), components


def _normalize(events) -> list[dict]:
    """Events as dicts with delta_nse filled from the best-NSE progression."""
    out = []
    best = None
    last_turn = None
    for ev in events:
        if not isinstance(ev, dict):
            ev = {
                "turn": ev.turn, "tool": ev.tool, "ok": ev.ok,
                "nse": ev.nse, "best_nse": ev.best_nse,
                "delta_nse": ev.delta_nse,
            }
        else:
            ev = dict(ev)
        turn = ev.get("turn")
        if last_turn is not None and turn is not None and turn <= last_turn:
            raise ValueError("trajectory turns must be strictly increasing")
        last_turn = turn
        if ev["tool"] == "evaluate" and ev["ok"] and ev.get("delta_nse") is None:
            new_best = ev.get("best_nse")
            if new_best is None:
                raise ValueError("evaluate event lacks best_nse")
            if best is None or new_best > best:
                ev["delta_nse"] = improvement_delta(
                    best if best is not None else float("-inf"), new_best
                )
            else:
                ev["delta_nse"] = 0.0
        if ev["tool"] == "evaluate" and ev["ok"]:
            best = ev.get("best_nse", best)
        out.append(ev)
    return out


def score_trajectory(events, target: float) -> RewardTrace:
    """Score a recorded trajectory: shaping per event plus the terminal term.

    Accepts in-memory ToolEvents or the JSONL dict form. n_improve counts the
    evaluations that moved the running best.
    """
    events = _normalize(events)
    trace = RewardTrace()
    best = None
    n_eval = 0
    n_improve = 0
    running = 0.0
    for ev in events:
        value = turn_reward(ev)
        running += value
        trace.per_turn.append((ev.get("turn"), value, _cause(ev)))
        if ev["tool"] == "evaluate" and ev["ok"]:
            n_eval += 1
            new_best = ev.get("best_nse")
            if new_best is not None and (best is None or new_best > best):
                n_improve += 1
                best = new_best
    trace.terminal, trace.components = terminal_reward(best, target, n_eval, n_improve)
    trace.total = running + trace.terminal
    return trace


def _cause(ev: dict) -> str:
    if not ev["ok"]:
        return f"rejected {ev['tool']}"
    return ev["tool"]
