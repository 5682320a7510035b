"""Seeded synthetic basins: cone DEM, D8 network, storm forcing, twin observations.

The generator guarantees a fully connected, acyclic network draining to one
corner outlet: elevation grows with distance from the outlet and the noise
amplitude stays below the ring gradient, so steepest descent always steps
toward the outlet. Observations come from simulating the hidden "true"
multipliers, which makes twin experiments exact at ``noise_frac=0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .control import (
    SimulationConfig,
    write_control_file,
    write_discharge_csv,
    write_forcing_csv,
)
from .crest import Basin, ForcingSeries, simulate
from .params import CALIBRATED_NAMES, FIXED_PARAMS, PARAM_BOUNDS, ParameterSet
from .raster import (
    D8_OFFSETS,
    DEFAULT_NODATA,
    BasinMask,
    Grid,
    delineate_basin,
    write_ascii_grid,
)

SCENARIOS = ("default", "wet", "flashy")

FORCING_DAYS = 60
WINDOW_START = datetime(2020, 6, 1, 0)
PET_MM_PER_HOUR = 0.15

_SLOPE_PER_CELL = 2.0   # m of elevation per cell of distance from the outlet
_NOISE_AMPLITUDE = 0.3  # m; must stay below the worst-case ring gradient


@dataclass
class SynthBundle:
    """Everything a synthetic gauge task needs, written under one directory."""

    directory: Path
    control_path: Path
    dem: Grid
    flowdir: Grid
    mask: BasinMask
    true_params: ParameterSet
    forcing: ForcingSeries
    q_obs: np.ndarray
    seed: int

    @property
    def gauge_id(self) -> str:
        return f"synth-{self.seed:04d}"


def _cone_dem(n: int, cell_size_m: float, rng: np.random.Generator) -> Grid:
    outlet_r, outlet_c = n - 1, 0
    rows, cols = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    dist = np.sqrt((rows - outlet_r) ** 2.0 + (cols - outlet_c) ** 2.0)
    noise = _NOISE_AMPLITUDE * rng.uniform(-1.0, 1.0, size=(n, n))
    noise[outlet_r, outlet_c] = -_NOISE_AMPLITUDE  # keep the outlet the global low
    z = _SLOPE_PER_CELL * dist + noise
    return Grid(
        n_rows=n, n_cols=n, cell_size_m=cell_size_m,
        x_origin=0.0, y_origin=0.0, nodata=DEFAULT_NODATA, values=z,
    )


def _steepest_descent(dem: Grid, outlet: tuple[int, int]) -> Grid:
    """D8 directions by maximum drop over distance, ties to the lowest code."""
    n_rows, n_cols = dem.n_rows, dem.n_cols
    z = dem.values
    fd = np.full((n_rows, n_cols), dem.nodata)
    for r in range(n_rows):
        for c in range(n_cols):
            best_code, best_slope = 0, 0.0
            for code in sorted(D8_OFFSETS):
                dr, dc = D8_OFFSETS[code]
                r2, c2 = r + dr, c + dc
                if not dem.in_bounds(r2, c2):
                    continue
                dist = np.hypot(dr, dc)
                slope = (z[r, c] - z[r2, c2]) / dist
                if slope > best_slope:
                    best_code, best_slope = code, slope
            if best_code:
                fd[r, c] = best_code
    # the outlet drains off-grid toward the nearest corner edge
    fd[outlet[0], outlet[1]] = 8  # SW
    return dem.like(fd)


def _true_parameters(rng: np.random.Generator) -> ParameterSet:
    """True multipliers drawn uniformly from the middle half of each range."""
    values = {}
    for name in CALIBRATED_NAMES:
        low, high = PARAM_BOUNDS[name]
        span = high - low
        values[name] = rng.uniform(low + 0.25 * span, low + 0.75 * span)
    values.update(FIXED_PARAMS)
    return ParameterSet.from_dict(values)


def _storm_forcing(rng: np.random.Generator, scenario: str) -> ForcingSeries:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    n_steps = FORCING_DAYS * 24
    precip = np.zeros(n_steps)
    n_storms = {"default": 8, "wet": 14, "flashy": 6}[scenario]
    max_duration = {"default": 30, "wet": 36, "flashy": 12}[scenario]
    peak_scale = {"default": 6.0, "wet": 6.0, "flashy": 14.0}[scenario]
    for _ in range(n_storms):
        duration = int(rng.integers(6, max_duration + 1))
        start = int(rng.integers(0, n_steps - duration))
        peak = peak_scale * float(rng.uniform(0.4, 1.6))
        # triangular pulse rising to the peak at mid-storm
        shape = 1.0 - np.abs(np.linspace(-1.0, 1.0, duration))
        precip[start:start + duration] += peak * shape
    timestamps = [WINDOW_START + timedelta(hours=h) for h in range(n_steps)]
    pet = np.full(n_steps, PET_MM_PER_HOUR)
    return ForcingSeries(timestamps=timestamps, precip=precip, pet=pet)


def synth_basin(out_dir: str | Path, seed: int, n: int = 16,
                scenario: str = "default", noise_frac: float = 0.0,
                cell_size_m: float = 100.0,
                target_nse: float = 0.8075) -> SynthBundle:
    """Generate a complete gauge task under ``out_dir``; seeded and byte-stable."""
    if n < 4:
        raise ValueError("basin size must be at least 4 cells per side")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    outlet = (n - 1, 0)
    dem = _cone_dem(n, cell_size_m, rng)
    fd = _steepest_descent(dem, outlet)
    mask = delineate_basin(fd, *outlet)
    if int(np.count_nonzero(mask.member())) != n * n:
        raise RuntimeError("synthetic basin failed to drain fully to the outlet")

    true_params = _true_parameters(rng)
    forcing = _storm_forcing(rng, scenario)

    write_ascii_grid(dem, out_dir / "dem.asc")
    write_ascii_grid(fd, out_dir / "flowdir.asc")
    write_ascii_grid(mask.grid, out_dir / "mask.asc")
    write_forcing_csv(out_dir / "precip.csv", "precip", forcing.timestamps, forcing.precip)
    write_forcing_csv(out_dir / "pet.csv", "pet", forcing.timestamps, forcing.pet)

    basin = Basin.from_grids(dem, fd, mask)
    truth = simulate(basin, forcing, true_params)
    q_obs = truth.q_sim.copy()
    if noise_frac > 0.0:
        sigma = noise_frac * float(np.mean(q_obs))
        q_obs = np.clip(q_obs + rng.normal(0.0, sigma, size=q_obs.shape), 0.0, None)
    write_discharge_csv(out_dir / "obs.csv", forcing.timestamps, q_obs)

    gauge_id = f"synth-{seed:04d}"
    cfg = SimulationConfig(
        timestep_hours=1.0,
        warmup_hours=0.0,
        dem="dem.asc",
        flowdir="flowdir.asc",
        mask="mask.asc",
        baselines={},
        params=ParameterSet(),
        gauge_id=gauge_id,
        outlet_row=outlet[0],
        outlet_col=outlet[1],
        obs_csv="obs.csv",
        target_nse=target_nse,
        precip_csv="precip.csv",
        pet_csv="pet.csv",
        window_start=forcing.timestamps[0],
        window_end=forcing.timestamps[-1],
        base_dir=out_dir,
    )
    control_path = out_dir / "control.txt"
    write_control_file(cfg, control_path)
    (out_dir / "truth.json").write_text(
        _truth_json(true_params, seed, n, scenario, noise_frac)
    )
    return SynthBundle(
        directory=out_dir,
        control_path=control_path,
        dem=dem,
        flowdir=fd,
        mask=mask,
        true_params=true_params,
        forcing=forcing,
        q_obs=q_obs,
        seed=seed,
    )


def _truth_json(params: ParameterSet, seed: int, n: int, scenario: str,
                noise_frac: float) -> str:
    import json

    return json.dumps(
        {
            "seed": seed,
            "n": n,
            "scenario": scenario,
            "noise_frac": noise_frac,
            "true_params": params.to_dict(),
        },
        sort_keys=True,
        indent=2,
    ) + "\n"
