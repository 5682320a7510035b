"""Reference derivative-free agents that drive calibration episodes.

Three agents share one sweep protocol (set -> simulate -> evaluate):

* ``random_search`` — uniform sampling inside the documented bounds,
* ``dds`` — greedy single-solution search whose perturbed-dimension count
  shrinks with the remaining budget, with reflection at the bounds,
* ``coordinate_refine`` — a scripted diagnostician: after each evaluation it
  asks the episode's failure-analysis tool which parameter group to move and
  line-searches one member of that group.

All agents sample strictly inside the bounds, so a rejected ``set_parameters``
is structurally impossible, and all are deterministic under their seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .episode import Episode, RUNNING
from .metrics import moriasi_band
from .params import CALIBRATED_NAMES, FIXED_PARAMS, PARAM_BOUNDS

AGENT_NAMES = ("random_search", "dds", "coordinate_refine")

REFINE_STEPS = (0.5, 0.8, 1.25, 2.0)

_LOWS = np.array([PARAM_BOUNDS[n][0] for n in CALIBRATED_NAMES])
_HIGHS = np.array([PARAM_BOUNDS[n][1] for n in CALIBRATED_NAMES])


@dataclass
class CalibrationRun:
    """Outcome of one agent on one episode."""

    agent: str
    gauge: str
    seed: int
    rounds_used: int
    best_nse_curve: list
    n_sims: int
    best_params: dict | None
    band: str

    def to_dict(self) -> dict:
        return {
            "agent": self.agent,
            "gauge": self.gauge,
            "seed": self.seed,
            "rounds_used": self.rounds_used,
            "best_nse_curve": list(self.best_nse_curve),
            "n_sims": self.n_sims,
            "best_params": self.best_params,
            "band": self.band,
        }


def _vector_to_values(x: np.ndarray) -> dict:
    values = {n: float(v) for n, v in zip(CALIBRATED_NAMES, x)}
    values.update(FIXED_PARAMS)
    return values


def _sweep(env: Episode, values: dict) -> float | None:
    """One full set/simulate/evaluate cycle; None if the episode ended."""
    if env.status != RUNNING:
        return None
    env.set_parameters(values)
    if env.status != RUNNING:
        return None
    env.run_simulation()
    if env.status != RUNNING:
        return None
    return env.evaluate()["nse"]


def _random_sweeps(env: Episode, budget: int, rng: np.random.Generator):
    for _ in range(budget):
        x = rng.uniform(_LOWS, _HIGHS)
        if _sweep(env, _vector_to_values(x)) is None:
            return
        yield


def _reflect(value: float, low: float, high: float) -> float:
    """Fold a perturbed value back inside [low, high]; overshoot snaps to the bound."""
    if value < low:
        value = low + (low - value)
        if value > high:
            value = low
    elif value > high:
        value = high - (value - high)
        if value < low:
            value = high
    return value


def _dds_sweeps(env: Episode, budget: int, r: float, rng: np.random.Generator):
    if budget < 2:
        raise ValueError("dds needs a budget of at least 2")
    d = len(CALIBRATED_NAMES)
    x = np.ones(d)
    best = _sweep(env, _vector_to_values(x))
    if best is None:
        return
    yield
    for i in range(1, budget):
        p_include = 1.0 - math.log(i) / math.log(budget)
        include = rng.random(d) < p_include
        if not include.any():
            include[int(rng.integers(d))] = True
        candidate = x.copy()
        for j in np.nonzero(include)[0]:
            step = rng.normal(0.0, r * (_HIGHS[j] - _LOWS[j]))
            candidate[j] = _reflect(candidate[j] + step, _LOWS[j], _HIGHS[j])
        score = _sweep(env, _vector_to_values(candidate))
        if score is None:
            return
        if best is None or score > best:
            best = score
            x = candidate
        yield


def _refine_sweeps(env: Episode, budget: int, rng: np.random.Generator):
    if budget < 13:
        raise ValueError("coordinate_refine needs a budget of at least 13")
    current = {n: 1.0 for n in CALIBRATED_NAMES}
    best = _sweep(env, {**current, **FIXED_PARAMS})
    if best is None:
        return
    yield
    used = 1
    while used < budget and env.status == RUNNING:
        reading = env.parse_failure()
        if env.status != RUNNING:
            return
        group = [p for p in reading.get("parameters", []) if p in CALIBRATED_NAMES]
        if not group:
            group = ["wm", "b", "im"]
        name = group[int(rng.integers(len(group)))]
        low, high = PARAM_BOUNDS[name]
        base = current[name]
        best_value = None
        tried = 0
        for mult in REFINE_STEPS:
            if used >= budget or env.status != RUNNING:
                break
            value = min(max(base * mult, low), high)
            if value == base:
                continue
            score = _sweep(env, {**current, name: value, **FIXED_PARAMS})
            if score is None:
                return
            used += 1
            tried += 1
            yield
            if best is None or score > best:
                best = score
                best_value = value
        if best_value is not None:
            current[name] = best_value
        elif tried == 0:
            # parameter pinned against both bounds; nudge toward the middle
            current[name] = low + 0.5 * (high - low)


def _make_sweeps(agent: str, env: Episode, budget: int, seed: int, r: float):
    rng = np.random.default_rng(seed)
    if agent == "random_search":
        return _random_sweeps(env, budget, rng)
    if agent == "dds":
        return _dds_sweeps(env, budget, r, rng)
    if agent == "coordinate_refine":
        return _refine_sweeps(env, budget, rng)
    raise ValueError(f"unknown agent {agent!r}; choose from {AGENT_NAMES}")


def _drive(env: Episode, agent: str, sweeps_gen, rounds: int, sweeps: int,
           seed: int) -> CalibrationRun:
    curve = []
    rounds_used = 0
    for _ in range(rounds):
        consumed = 0
        while consumed < sweeps:
            try:
                next(sweeps_gen)
            except StopIteration:
                break
            consumed += 1
        if consumed > 0:
            curve.append(env.best_nse)
            rounds_used += 1
        if consumed < sweeps:
            break
    best = env.best_nse
    return CalibrationRun(
        agent=agent,
        gauge=env.gauge_id,
        seed=seed,
        rounds_used=rounds_used,
        best_nse_curve=curve,
        n_sims=env.counts["n_sim"],
        best_params=env.best_params.to_dict() if env.best_params else None,
        band=moriasi_band(best) if best != float("-inf") else "unsatisfactory",
    )


def random_search(env: Episode, budget: int, seed: int = 0) -> CalibrationRun:
    """Uniform sampling of the bounded box, one evaluation per sample."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    gen = _make_sweeps("random_search", env, budget, seed, 0.2)
    return _drive(env, "random_search", gen, budget, 1, seed)


def dds_calibrate(env: Episode, budget: int, r: float = 0.2, seed: int = 0) -> CalibrationRun:
    """Dynamically dimensioned search from the all-ones multiplier start."""
    gen = _make_sweeps("dds", env, budget, seed, r)
    return _drive(env, "dds", gen, budget, 1, seed)


def coordinate_refine(env: Episode, budget: int, seed: int = 0) -> CalibrationRun:
    """Diagnosis-guided line search over the parameter group named by the
    episode's failure-analysis tool."""
    gen = _make_sweeps("coordinate_refine", env, budget, seed, 0.2)
    return _drive(env, "coordinate_refine", gen, budget, 1, seed)


def best_of_rounds(env_factory, agent: str, rounds: int = 20, sweeps: int = 10,
                   seed: int = 0, r: float = 0.2) -> CalibrationRun:
    """Budgeted benchmark protocol: rounds x sweeps simulations, running-best
    NSE recorded after each round, early stop when the episode terminates."""
    if rounds < 1 or sweeps < 1:
        raise ValueError("rounds and sweeps must be >= 1")
    env = env_factory()
    gen = _make_sweeps(agent, env, rounds * sweeps, seed, r)
    return _drive(env, agent, gen, rounds, sweeps, seed)
