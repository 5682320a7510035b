"""Grid-based water-balance and routing engine.

Per cell and per hourly step the model

1. splits precipitation into an impervious fraction and a soil-bound rest,
2. partitions the soil-bound rest into infiltration and saturation excess
   through a variable infiltration curve (capacity ``wm``, shape ``b``),
3. withdraws evapotranspiration limited by soil wetness,
4. passes the conductivity-limited share of the excess through an interflow
   reservoir with deep leakage, and
5. routes surface water down the D8 network with a nonlinear-storage law
   ``O = min(S, c * S**beta)``, channel and overland cells carrying
   different conveyance coefficients.

All depths are mm over the cell; discharge converts to m^3/s at the outlet.
The engine books an exact mass-balance ledger and is bit-deterministic.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np
from numba import njit

from .control import SimulationConfig, read_forcing_csv
from .params import ParameterSet
from .raster import BasinMask, Grid, derive_channel_mask, flow_accumulation, load_ascii_grid, topological_order

# Synthetic-basin scalar baselines, used whenever no raster or override is supplied.
DEFAULT_BASELINES = {
    "wm": 100.0,    # soil-water capacity, mm
    "b": 1.0,       # infiltration-curve exponent
    "im": 0.05,     # impervious fraction
    "ksat": 5.0,    # saturated conductivity, mm/h
    "drain": 0.3,   # interflow drain fraction, 1/h
    "leaki": 0.05,  # deep leakage, 1/h
    "alpha": 0.8,   # channel conveyance
    "beta": 0.8,    # routing exponent
    "alpha0": 0.3,  # overland conveyance
}


@dataclass
class Baselines:
    """Per-field baseline values: a uniform scalar or a raster Grid."""

    wm: float | Grid = DEFAULT_BASELINES["wm"]
    b: float | Grid = DEFAULT_BASELINES["b"]
    im: float | Grid = DEFAULT_BASELINES["im"]
    ksat: float | Grid = DEFAULT_BASELINES["ksat"]
    drain: float | Grid = DEFAULT_BASELINES["drain"]
    leaki: float | Grid = DEFAULT_BASELINES["leaki"]
    alpha: float | Grid = DEFAULT_BASELINES["alpha"]
    beta: float | Grid = DEFAULT_BASELINES["beta"]
    alpha0: float | Grid = DEFAULT_BASELINES["alpha0"]

    @classmethod
    def from_mapping(cls, mapping: dict, base_dir: Path | None = None) -> "Baselines":
        """Build from a control-file [Grids] mapping of scalars or raster paths."""
        kwargs = {}
        for key, value in mapping.items():
            if key not in DEFAULT_BASELINES:
                raise KeyError(f"unknown baseline field {key!r}")
            if isinstance(value, (int, float)):
                kwargs[key] = float(value)
            else:
                path = Path(value)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                kwargs[key] = load_ascii_grid(path)
        return cls(**kwargs)


@dataclass
class EffectiveParams:
    """Baseline fields after multiplier application, per-step where rated.

    Fields are uniform scalars or grid-shaped arrays, matching the baselines
    they came from. Rates are folded with the timestep: ``ksat_step`` is mm
    per step, ``leak_step`` and ``drain_step`` are fractions per step clamped
    into [0, 1].
    """

    wm: float | np.ndarray
    b: float | np.ndarray
    im: float | np.ndarray
    ke: float
    ksat_step: float | np.ndarray
    leak_step: float | np.ndarray
    drain_step: float | np.ndarray
    alpha: float | np.ndarray
    beta: float | np.ndarray
    alpha0: float | np.ndarray
    iwu_pct: float
    isu_mm: float
    dt_hours: float

    def is_uniform(self) -> bool:
        return not any(
            isinstance(v, np.ndarray)
            for v in (self.wm, self.b, self.im, self.ksat_step, self.leak_step,
                      self.drain_step, self.alpha, self.beta, self.alpha0)
        )


@dataclass
class CellState:
    """Water stores of one cell: soil, interflow reservoir, surface."""

    w_soil: float
    s_interflow: float
    s_surface: float


@dataclass
class CellFluxes:
    """Per-step vertical fluxes of one cell, mm."""

    impervious: float
    overland: float
    to_interflow: float
    et: float


@dataclass
class MassBalance:
    """Episode ledger, all terms in mm over the basin."""

    precip_in: float
    et_out: float
    deep_loss: float
    boundary_out: float
    outlet_total: float
    storage_delta: float

    def residual(self) -> float:
        return self.precip_in - (
            self.et_out + self.deep_loss + self.boundary_out
            + self.outlet_total + self.storage_delta
        )

    def relative_closure_error(self) -> float:
        return abs(self.residual()) / max(self.precip_in, 1.0)

    def to_dict(self) -> dict:
        return {
            "precip_in": self.precip_in,
            "et_out": self.et_out,
            "deep_loss": self.deep_loss,
            "boundary_out": self.boundary_out,
            "outlet_total": self.outlet_total,
            "storage_delta": self.storage_delta,
        }


@dataclass
class Hydrograph:
    """Simulated (and optionally observed) hourly discharge at the outlet."""

    timestamps: list[datetime]
    q_sim: np.ndarray          # m^3/s
    q_obs: np.ndarray | None
    ledger: MassBalance


@dataclass
class ForcingSeries:
    """Hourly precipitation and PET depths driving the simulation.

    ``precip`` is (n,) for uniform depth per step or (n, n_rows, n_cols) for
    per-step rasters; ``pet`` is always uniform (n,). Negative or non-finite
    forcing is rejected at construction, never clamped.
    """

    timestamps: list[datetime]
    precip: np.ndarray
    pet: np.ndarray

    def __post_init__(self):
        self.precip = np.asarray(self.precip, dtype=np.float64)
        self.pet = np.asarray(self.pet, dtype=np.float64)
        n = len(self.timestamps)
        if self.precip.shape[0] != n or self.pet.shape != (n,):
            raise ValueError("forcing arrays do not match the timestamp count")
        if not (np.isfinite(self.precip).all() and np.isfinite(self.pet).all()):
            raise ValueError("non-finite forcing value")
        if (self.precip < 0).any() or (self.pet < 0).any():
            raise ValueError("negative forcing value")
        if n >= 2:
            step = self.timestamps[1] - self.timestamps[0]
            if step <= timedelta(0):
                raise ValueError("timestamps must be strictly increasing")
            for a, b in zip(self.timestamps, self.timestamps[1:]):
                if b - a != step:
                    raise ValueError("timestamps must advance at a fixed step")

    @classmethod
    def from_csv(cls, precip_path, pet_path) -> "ForcingSeries":
        t_p, precip = read_forcing_csv(precip_path, "precip")
        t_e, pet = read_forcing_csv(pet_path, "pet")
        if t_p != t_e:
            raise ValueError("precipitation and PET timestamps differ")
        return cls(timestamps=t_p, precip=precip, pet=pet)

    def index_of(self, t: datetime) -> int:
        try:
            return self.timestamps.index(t)
        except ValueError:
            raise ValueError(f"{t} outside the forcing span") from None


class SimulationGate:
    """Process-wide admission gate bounding concurrent simulations.

    Protects CPU/IO when many sessions simulate at once; the high-water mark
    is tracked so tests can assert the bound was honored.
    """

    def __init__(self, width: int = 32):
        if width < 1:
            raise ValueError("gate width must be >= 1")
        self._width = width
        self._sem = threading.BoundedSemaphore(width)
        self._lock = threading.Lock()
        self._active = 0
        self._high_water = 0

    @property
    def width(self) -> int:
        return self._width

    @property
    def high_water(self) -> int:
        with self._lock:
            return self._high_water

    def reset_high_water(self) -> None:
        with self._lock:
            self._high_water = 0

    def configure(self, width: int) -> None:
        with self._lock:
            if self._active:
                raise RuntimeError("cannot resize the gate while simulations run")
            if width < 1:
                raise ValueError("gate width must be >= 1")
            self._width = width
            self._sem = threading.BoundedSemaphore(width)
            self._high_water = 0

    @contextmanager
    def admit(self):
        self._sem.acquire()
        with self._lock:
            self._active += 1
            self._high_water = max(self._high_water, self._active)
        try:
            yield
        finally:
            with self._lock:
                self._active -= 1
            self._sem.release()


SIMULATION_GATE = SimulationGate(32)


# ---------------------------------------------------------------------------
# numba kernels: one code path shared by the unit-level operations and the
# fused simulation loop, so their arithmetic cannot drift apart.

@njit(cache=True, nogil=True)
def _water_balance_cell(w, p, pet, wm, b, im, ke, ksat_step):
    r_imp = im * p
    p_s = p - r_imp
    if p_s > 0.0:
        one_b = 1.0 + b
        i_max = wm * one_b
        rel = 1.0 - w / wm
        if rel < 0.0:
            rel = 0.0
        i_cur = i_max * (1.0 - rel ** (1.0 / one_b))
        if i_cur + p_s < i_max:
            r = p_s - (wm - w) + wm * (1.0 - (i_cur + p_s) / i_max) ** one_b
        else:
            r = p_s - (wm - w)
        if r < 0.0:
            r = 0.0
        elif r > p_s:
            r = p_s
    else:
        r = 0.0
    w = w + (p_s - r)
    if w > wm:
        # rounding guard: keep W <= WM, return the excess to runoff
        r += w - wm
        w = wm
    et_pot = ke * pet * (w / wm)
    et = w if et_pot > w else et_pot
    w -= et
    r_if = r if r < ksat_step else ksat_step
    r_ov = r - r_if
    return w, r_imp, r_ov, r_if, et


@njit(cache=True, nogil=True)
def _interflow_cell(s_int, inflow, leak_step, drain_step):
    total = s_int + inflow
    leaked = leak_step * total
    if leaked > total:
        leaked = total
    remaining = total - leaked
    drained = drain_step * remaining
    if drained > remaining:
        drained = remaining
    return remaining - drained, drained, leaked


@njit(cache=True, nogil=True)
def _simulate_loop(precip, pet, wm, b, im, ke, ksat_step, leak_step, drain_step,
                   convey, beta_exp, ds, w, s_int, s_surf, q_out_cell):
    n_steps = precip.shape[0]
    m = wm.shape[0]
    outflow = np.empty(m)
    precip_sum = 0.0
    et_sum = 0.0
    leak_sum = 0.0
    boundary_sum = 0.0
    for t in range(n_steps):
        for i in range(m):
            p = precip[t, i]
            wn, r_imp, r_ov, r_if, et = _water_balance_cell(
                w[i], p, pet[t], wm[i], b[i], im[i], ke, ksat_step[i]
            )
            w[i] = wn
            sn, drained, leaked = _interflow_cell(
                s_int[i], r_if, leak_step[i], drain_step[i]
            )
            s_int[i] = sn
            s_surf[i] += r_imp + r_ov + drained
            precip_sum += p
            et_sum += et
            leak_sum += leaked
        # routing is simultaneous: outflows are computed from start-of-step
        # storage, then delivered, so a pulse travels one cell per step
        for i in range(m):
            s = s_surf[i]
            o = convey[i] * s ** beta_exp[i]
            if o > s:
                o = s
            outflow[i] = o
            s_surf[i] = s - o
        q_t = 0.0
        for i in range(m):
            j = ds[i]
            if j >= 0:
                s_surf[j] += outflow[i]
            elif j == -1:
                q_t += outflow[i]
            else:
                boundary_sum += outflow[i]
        q_out_cell[t] = q_t
    return precip_sum, et_sum, leak_sum, boundary_sum


# ---------------------------------------------------------------------------
# public operations


def apply_multipliers(baselines: Baselines, p: ParameterSet, dt_hours: float = 1.0) -> EffectiveParams:
    """Scale every baseline field by its multiplier.

    Rates fold in the timestep; ``leak_step`` and ``drain_step`` clamp into
    [0, 1] and the impervious fraction into [0, 1].
    """

    def mul(base, factor):
        if isinstance(base, Grid):
            return base.values * factor
        return base * factor

    def clamp01(x):
        return np.clip(x, 0.0, 1.0) if isinstance(x, np.ndarray) else min(max(x, 0.0), 1.0)

    return EffectiveParams(
        wm=mul(baselines.wm, p.wm),
        b=mul(baselines.b, p.b),
        im=clamp01(mul(baselines.im, p.im)),
        ke=p.ke,
        ksat_step=mul(baselines.ksat, p.fc) * dt_hours,
        leak_step=clamp01(mul(baselines.leaki, p.leaki) * dt_hours),
        drain_step=clamp01(mul(baselines.drain, p.under) * dt_hours),
        alpha=mul(baselines.alpha, p.alpha),
        beta=mul(baselines.beta, p.beta),
        alpha0=mul(baselines.alpha0, p.alpha0),
        iwu_pct=p.iwu,
        isu_mm=p.isu,
        dt_hours=dt_hours,
    )


def cell_water_balance(state: CellState, precip_mm: float, pet_mm: float,
                       eff: EffectiveParams) -> tuple[CellState, CellFluxes]:
    """One vertical water-balance step for a single cell.

    Requires uniform (scalar-field) effective parameters. The exact per-cell
    balance ``P = impervious + overland + to_interflow + ET + dW`` holds to
    machine precision.
    """
    if not eff.is_uniform():
        raise ValueError("cell_water_balance needs uniform effective parameters")
    w, r_imp, r_ov, r_if, et = _water_balance_cell(
        state.w_soil, precip_mm, pet_mm,
        eff.wm, eff.b, eff.im, eff.ke, eff.ksat_step,
    )
    new = CellState(w_soil=w, s_interflow=state.s_interflow, s_surface=state.s_surface)
    return new, CellFluxes(impervious=r_imp, overland=r_ov, to_interflow=r_if, et=et)


def interflow_step(state: CellState, inflow_mm: float,
                   eff: EffectiveParams) -> tuple[CellState, float, float]:
    """Leak-then-drain update of the interflow store.

    Returns (new state, drained mm delivered to the surface store, leaked mm
    lost to deep groundwater).
    """
    if not eff.is_uniform():
        raise ValueError("interflow_step needs uniform effective parameters")
    s_new, drained, leaked = _interflow_cell(
        state.s_interflow, inflow_mm, eff.leak_step, eff.drain_step
    )
    new = CellState(w_soil=state.w_soil, s_interflow=s_new, s_surface=state.s_surface)
    return new, drained, leaked


def route_step(s_surf: np.ndarray, conveyance: np.ndarray, beta_exp: np.ndarray,
               ds_index: np.ndarray) -> tuple[np.ndarray, float, float]:
    """One simultaneous routing step over cells in topological order.

    Outflows never exceed storage and total water is conserved. Returns
    (new storages, outlet discharge in mm over the basin, boundary outflow
    in cell-mm booked off-domain).
    """
    s = np.array(s_surf, dtype=np.float64)
    m = s.shape[0]
    convey = np.broadcast_to(np.asarray(conveyance, dtype=np.float64), (m,))
    bexp = np.broadcast_to(np.asarray(beta_exp, dtype=np.float64), (m,))
    out = np.minimum(s, convey * s ** bexp)
    s = s - out
    outlet = 0.0
    boundary = 0.0
    for i in range(m):
        j = int(ds_index[i])
        if j >= 0:
            s[j] += out[i]
        elif j == -1:
            outlet += out[i]
        else:
            boundary += out[i]
    return s, outlet / m, boundary


@dataclass
class Basin:
    """Static description of the simulation domain.

    Cells are kept in topological order; ``ds_index`` maps each cell to the
    position of its downstream neighbor, with -1 for the gauge outlet and -2
    for water leaving the domain elsewhere.
    """

    dem: Grid
    fd: Grid
    mask: BasinMask
    baselines: Baselines
    acc: Grid
    cells: np.ndarray      # (m, 2) row/col in topological order
    ds_index: np.ndarray   # (m,)

    @classmethod
    def from_grids(cls, dem: Grid, fd: Grid, mask: BasinMask,
                   baselines: Baselines | None = None) -> "Basin":
        if not (dem.same_shape(fd) and dem.same_shape(mask.grid)):
            raise ValueError("grid shape mismatch between dem, flowdir, and mask")
        order = topological_order(fd, mask)
        cells = np.asarray(order, dtype=np.int64)
        nc = fd.n_cols
        pos = {r * nc + c: k for k, (r, c) in enumerate(order)}
        member = mask.member()
        outlet_flat = mask.outlet_row * nc + mask.outlet_col
        from .raster import _downstream_index  # shared derivation

        flat_ds = _downstream_index(fd)
        ds = np.empty(len(order), dtype=np.int64)
        for k, (r, c) in enumerate(order):
            flat = r * nc + c
            if flat == outlet_flat:
                ds[k] = -1
                continue
            j = flat_ds[flat]
            if j >= 0 and member.reshape(-1)[j] and j in pos:
                ds[k] = pos[j]
            else:
                ds[k] = -2
        acc = flow_accumulation(fd)
        return cls(
            dem=dem, fd=fd, mask=mask,
            baselines=baselines or Baselines(),
            acc=acc, cells=cells, ds_index=ds,
        )

    @classmethod
    def from_config(cls, cfg: SimulationConfig) -> "Basin":
        dem = load_ascii_grid(cfg.resolve(cfg.dem))
        fd = load_ascii_grid(cfg.resolve(cfg.flowdir))
        mask_grid = load_ascii_grid(cfg.resolve(cfg.mask))
        mask = BasinMask(grid=mask_grid, outlet_row=cfg.outlet_row, outlet_col=cfg.outlet_col)
        baselines = Baselines.from_mapping(cfg.baselines, base_dir=cfg.base_dir)
        return cls.from_grids(dem, fd, mask, baselines)

    @property
    def n_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def area_km2(self) -> float:
        return self.mask.area_km2

    def cell_values(self, field: float | np.ndarray) -> np.ndarray:
        """Expand a uniform scalar or grid-shaped field to the cell vector."""
        if isinstance(field, np.ndarray):
            return np.ascontiguousarray(field[self.cells[:, 0], self.cells[:, 1]])
        return np.full(self.n_cells, float(field))

    def channel_cells(self, th: float) -> np.ndarray:
        channel = derive_channel_mask(self.acc, int(th))
        return self.cell_values(channel.values) == 1.0


def simulate(basin: Basin, forcing: ForcingSeries, p: ParameterSet,
             window: tuple[datetime, datetime] | None = None,
             dt_hours: float = 1.0,
             gate: SimulationGate | None = None) -> Hydrograph:
    """Run the water balance and routing over a window of the forcing.

    Deterministic: identical inputs give bit-identical output. Concurrent
    callers share the process-wide admission gate.
    """
    bad = p.violations(allow_fixed_override=True)
    if bad:
        from .params import BoundsError

        raise BoundsError(bad)
    if p.th < 1:
        raise ValueError("th must be >= 1")
    if p.isu < 0:
        raise ValueError("isu must be >= 0")

    if window is None:
        start_idx, end_idx = 0, len(forcing.timestamps) - 1
    else:
        start_idx = forcing.index_of(window[0])
        end_idx = forcing.index_of(window[1])
        if end_idx < start_idx:
            raise ValueError("window end precedes start")
    n_steps = end_idx - start_idx + 1
    timestamps = forcing.timestamps[start_idx:end_idx + 1]

    m = basin.n_cells
    eff = apply_multipliers(basin.baselines, p, dt_hours=dt_hours)
    wm = basin.cell_values(eff.wm)
    if (wm <= 0).any():
        raise ValueError("effective soil capacity must be positive")
    b = basin.cell_values(eff.b)
    im = basin.cell_values(eff.im)
    ksat_step = basin.cell_values(eff.ksat_step)
    leak_step = basin.cell_values(eff.leak_step)
    drain_step = basin.cell_values(eff.drain_step)
    channel = basin.channel_cells(p.th)
    convey = np.where(channel, basin.cell_values(eff.alpha), basin.cell_values(eff.alpha0))
    beta_exp = basin.cell_values(eff.beta)

    if forcing.precip.ndim == 1:
        precip_cells = np.ascontiguousarray(
            np.broadcast_to(forcing.precip[start_idx:end_idx + 1, None], (n_steps, m))
        )
    else:
        rasters = forcing.precip[start_idx:end_idx + 1]
        if rasters.shape[1:] != (basin.fd.n_rows, basin.fd.n_cols):
            raise ValueError("grid shape mismatch between forcing rasters and basin")
        precip_cells = np.ascontiguousarray(
            rasters[:, basin.cells[:, 0], basin.cells[:, 1]]
        )
    pet = np.ascontiguousarray(forcing.pet[start_idx:end_idx + 1])

    w = (eff.iwu_pct / 100.0) * wm
    s_int = np.full(m, eff.isu_mm)
    s_surf = np.zeros(m)
    storage_before = float(w.sum() + s_int.sum() + s_surf.sum())

    q_out_cell = np.zeros(n_steps)
    active_gate = SIMULATION_GATE if gate is None else gate
    with active_gate.admit():
        precip_sum, et_sum, leak_sum, boundary_sum = _simulate_loop(
            precip_cells, pet, wm, b, im, eff.ke, ksat_step, leak_step,
            drain_step, convey, beta_exp, basin.ds_index, w, s_int, s_surf,
            q_out_cell,
        )

    storage_after = float(w.sum() + s_int.sum() + s_surf.sum())
    ledger = MassBalance(
        precip_in=precip_sum / m,
        et_out=et_sum / m,
        deep_loss=leak_sum / m,
        boundary_out=boundary_sum / m,
        outlet_total=float(q_out_cell.sum()) / m,
        storage_delta=(storage_after - storage_before) / m,
    )
    dt_seconds = dt_hours * 3600.0
    q_cms = (q_out_cell / m) * basin.area_km2 * 1000.0 / dt_seconds

    if not np.isfinite(q_cms).all() or not all(
        np.isfinite(v) for v in ledger.to_dict().values()
    ):
        raise RuntimeError("internal fault: non-finite value in simulation output")
    return Hydrograph(timestamps=timestamps, q_sim=q_cms, q_obs=None, ledger=ledger)
