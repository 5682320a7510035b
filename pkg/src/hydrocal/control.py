"""Control-file grammar and the CSV formats for forcing and gauge observations.

The control file is line-oriented with ``[Section]`` headers and ``key = value``
pairs; ``#`` lines are comments. Section and key order on write is canonical,
so parse -> write is an identity on conforming files. Values are validated at
parse time (syntactic ranges, parameter bounds) with line numbers in errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .params import PARAM_BOUNDS, PARAM_NAMES, FIXED_PARAMS, ParameterSet

TIME_FORMAT = "%Y-%m-%dT%H"

DISCHARGE_HEADER = "timestamp,discharge_cms"
PRECIP_HEADER = "timestamp,precip_mmhr"
PET_HEADER = "timestamp,pet_mmhr"

# Baseline fields that may carry a raster path or a uniform scalar in [Grids].
BASELINE_KEYS = ("wm", "b", "im", "ksat", "drain", "leaki", "alpha", "beta", "alpha0")

_REQUIRED = {
    "Basic": ("timestep_hours", "warmup_hours"),
    "Grids": ("dem", "flowdir", "mask"),
    "CrestParams": PARAM_NAMES,
    "Gauge": ("id", "outlet_row", "outlet_col", "obs_csv", "target_nse"),
    "Forcing": ("precip_csv", "pet_csv"),
    "Window": ("start", "end"),
}
_OPTIONAL = {
    "Basic": (),
    "Grids": BASELINE_KEYS,
    "CrestParams": (),
    "Gauge": (),
    "Forcing": (),
    "Window": (),
}
_SECTION_ORDER = ("Basic", "Grids", "CrestParams", "Gauge", "Forcing", "Window")


class ControlFileError(ValueError):
    """Malformed control file; message carries the offending line number(s)."""


def parse_timestamp(text: str) -> datetime:
    """Strict ``YYYY-MM-DDTHH`` hour stamp, UTC by convention."""
    try:
        return datetime.strptime(text, TIME_FORMAT)
    except ValueError:
        raise ValueError(f"bad timestamp {text!r}, expected YYYY-MM-DDTHH") from None


def format_timestamp(t: datetime) -> str:
    return t.strftime(TIME_FORMAT)


@dataclass
class SimulationConfig:
    """Parsed control file: grids, parameters, gauge, forcing, and window."""

    timestep_hours: float
    warmup_hours: float
    dem: str
    flowdir: str
    mask: str
    baselines: dict = field(default_factory=dict)  # key -> path str or float
    params: ParameterSet = field(default_factory=ParameterSet)
    gauge_id: str = ""
    outlet_row: int = 0
    outlet_col: int = 0
    obs_csv: str = ""
    target_nse: float = 0.8075
    precip_csv: str = ""
    pet_csv: str = ""
    window_start: datetime = datetime(2000, 1, 1)
    window_end: datetime = datetime(2000, 1, 2)
    base_dir: Path = field(default_factory=Path)

    def resolve(self, name: str) -> Path:
        """Resolve a file reference relative to the control file location."""
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def window_hours(self) -> int:
        """Number of hourly steps in the window, both endpoints included."""
        span = self.window_end - self.window_start
        return int(span.total_seconds() // 3600) + 1


def _parse_float(value: str, lineno: int, key: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ControlFileError(
            f"line {lineno}: non-numeric value for {key}: {value!r}"
        ) from None


def _parse_int(value: str, lineno: int, key: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ControlFileError(
            f"line {lineno}: non-integer value for {key}: {value!r}"
        ) from None


def parse_control_file(path: str | Path) -> SimulationConfig:
    path = Path(path)
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1]
            if name not in _REQUIRED:
                raise ControlFileError(f"line {lineno}: unknown section [{name}]")
            if name in sections:
                raise ControlFileError(f"line {lineno}: duplicate section [{name}]")
            sections[name] = {}
            current = name
            continue
        if current is None:
            raise ControlFileError(f"line {lineno}: key outside any section")
        if "=" not in line:
            raise ControlFileError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        allowed = _REQUIRED[current] + _OPTIONAL[current]
        if key not in allowed:
            raise ControlFileError(
                f"line {lineno}: unknown key {key!r} in section [{current}]"
            )
        if key in sections[current]:
            first = sections[current][key][1]
            raise ControlFileError(
                f"line {lineno}: duplicate key {key!r} in [{current}] "
                f"(first at line {first})"
            )
        sections[current][key] = (value, lineno)

    for name in _SECTION_ORDER:
        if name not in sections:
            raise ControlFileError(f"missing section [{name}]")
        for key in _REQUIRED[name]:
            if key not in sections[name]:
                raise ControlFileError(f"missing key {key!r} in section [{name}]")

    def take(section: str, key: str) -> tuple[str, int]:
        return sections[section][key]

    value, lineno = take("Basic", "timestep_hours")
    timestep = _parse_float(value, lineno, "timestep_hours")
    if timestep <= 0:
        raise ControlFileError(f"line {lineno}: timestep_hours must be positive")
    value, lineno = take("Basic", "warmup_hours")
    warmup = _parse_float(value, lineno, "warmup_hours")
    if warmup < 0:
        raise ControlFileError(f"line {lineno}: warmup_hours must be >= 0")

    baselines: dict[str, str | float] = {}
    for key in BASELINE_KEYS:
        if key in sections["Grids"]:
            value, lineno = sections["Grids"][key]
            try:
                baselines[key] = float(value)
            except ValueError:
                baselines[key] = value

    raw_params = {}
    for key in PARAM_NAMES:
        value, lineno = take("CrestParams", key)
        raw_params[key] = _parse_float(value, lineno, key)
        if key in PARAM_BOUNDS:
            low, high = PARAM_BOUNDS[key]
            if not (low <= raw_params[key] <= high):
                raise ControlFileError(
                    f"line {lineno}: {key}={value} outside [{low:g}, {high:g}]"
                )
        else:
            pinned = FIXED_PARAMS[key]
            if raw_params[key] != pinned:
                raise ControlFileError(
                    f"line {lineno}: {key}={value} must equal the fixed value {pinned:g}"
                )

    value, lineno = take("Gauge", "outlet_row")
    outlet_row = _parse_int(value, lineno, "outlet_row")
    value, lineno = take("Gauge", "outlet_col")
    outlet_col = _parse_int(value, lineno, "outlet_col")
    if outlet_row < 0 or outlet_col < 0:
        raise ControlFileError(f"line {lineno}: outlet indices must be >= 0")
    value, lineno = take("Gauge", "target_nse")
    target = _parse_float(value, lineno, "target_nse")

    value, lineno = take("Window", "start")
    try:
        start = parse_timestamp(value)
    except ValueError as e:
        raise ControlFileError(f"line {lineno}: {e}") from None
    value, lineno = take("Window", "end")
    try:
        end = parse_timestamp(value)
    except ValueError as e:
        raise ControlFileError(f"line {lineno}: {e}") from None
    if end < start:
        raise ControlFileError(f"line {lineno}: window end precedes start")

    return SimulationConfig(
        timestep_hours=timestep,
        warmup_hours=warmup,
        dem=take("Grids", "dem")[0],
        flowdir=take("Grids", "flowdir")[0],
        mask=take("Grids", "mask")[0],
        baselines=baselines,
        params=ParameterSet.from_dict(raw_params),
        gauge_id=take("Gauge", "id")[0],
        outlet_row=outlet_row,
        outlet_col=outlet_col,
        obs_csv=take("Gauge", "obs_csv")[0],
        target_nse=target,
        precip_csv=take("Forcing", "precip_csv")[0],
        pet_csv=take("Forcing", "pet_csv")[0],
        window_start=start,
        window_end=end,
        base_dir=path.parent,
    )


def write_control_file(cfg: SimulationConfig, path: str | Path) -> None:
    """Emit the canonical form: fixed section and key order, ``key = value``."""
    lines = ["[Basic]"]
    lines.append(f"timestep_hours = {cfg.timestep_hours!r}")
    lines.append(f"warmup_hours = {cfg.warmup_hours!r}")
    lines.append("")
    lines.append("[Grids]")
    lines.append(f"dem = {cfg.dem}")
    lines.append(f"flowdir = {cfg.flowdir}")
    lines.append(f"mask = {cfg.mask}")
    for key in BASELINE_KEYS:
        if key in cfg.baselines:
            value = cfg.baselines[key]
            text = repr(value) if isinstance(value, float) else str(value)
            lines.append(f"{key} = {text}")
    lines.append("")
    lines.append("[CrestParams]")
    for key in PARAM_NAMES:
        lines.append(f"{key} = {getattr(cfg.params, key)!r}")
    lines.append("")
    lines.append("[Gauge]")
    lines.append(f"id = {cfg.gauge_id}")
    lines.append(f"outlet_row = {cfg.outlet_row}")
    lines.append(f"outlet_col = {cfg.outlet_col}")
    lines.append(f"obs_csv = {cfg.obs_csv}")
    lines.append(f"target_nse = {cfg.target_nse!r}")
    lines.append("")
    lines.append("[Forcing]")
    lines.append(f"precip_csv = {cfg.precip_csv}")
    lines.append(f"pet_csv = {cfg.pet_csv}")
    lines.append("")
    lines.append("[Window]")
    lines.append(f"start = {format_timestamp(cfg.window_start)}")
    lines.append(f"end = {format_timestamp(cfg.window_end)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_timeseries(path: Path, header: str, allow_negative: bool) -> tuple[list[datetime], np.ndarray]:
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != header:
        found = lines[0].strip() if lines else "<empty file>"
        raise ValueError(f"{path}: expected header {header!r}, found {found!r}")
    stamps: list[datetime] = []
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}: line {lineno}: expected 2 columns")
        stamps.append(parse_timestamp(parts[0].strip()))
        try:
            v = float(parts[1])
        except ValueError:
            raise ValueError(
                f"{path}: line {lineno}: non-numeric value {parts[1]!r}"
            ) from None
        if not np.isfinite(v):
            raise ValueError(f"{path}: line {lineno}: non-finite value")
        if not allow_negative and v < 0:
            raise ValueError(f"{path}: line {lineno}: negative value {v!r}")
        values.append(v)
    if len(stamps) >= 2:
        step = stamps[1] - stamps[0]
        if step <= timedelta(0):
            raise ValueError(f"{path}: timestamps must be strictly increasing")
        for a, b in zip(stamps, stamps[1:]):
            if b - a != step:
                raise ValueError(f"{path}: irregular timestep near {format_timestamp(b)}")
    return stamps, np.asarray(values, dtype=np.float64)


def read_discharge_csv(path: str | Path) -> tuple[list[datetime], np.ndarray]:
    return _read_timeseries(Path(path), DISCHARGE_HEADER, allow_negative=True)


def read_forcing_csv(path: str | Path, kind: str) -> tuple[list[datetime], np.ndarray]:
    header = PRECIP_HEADER if kind == "precip" else PET_HEADER
    return _read_timeseries(Path(path), header, allow_negative=False)


def _write_timeseries(path: Path, header: str, stamps, values) -> None:
    lines = [header]
    for t, v in zip(stamps, values):
        lines.append(f"{format_timestamp(t)},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")


def write_discharge_csv(path: str | Path, stamps, values) -> None:
    _write_timeseries(Path(path), DISCHARGE_HEADER, stamps, values)


def write_forcing_csv(path: str | Path, kind: str, stamps, values) -> None:
    header = PRECIP_HEADER if kind == "precip" else PET_HEADER
    _write_timeseries(Path(path), header, stamps, values)
