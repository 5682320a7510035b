"""The 13 scalar calibration multipliers, their physical bounds, and interaction groups.

Multipliers scale spatially distributed baseline parameter fields, preserving
the spatial pattern while shifting magnitudes. Eleven are calibrated; ``th``
and ``isu`` are state parameters held at fixed values unless a run explicitly
opts out of that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

PARAM_NAMES = (
    "wm", "b", "im", "ke", "fc", "under", "leaki",
    "alpha", "beta", "alpha0", "iwu", "th", "isu",
)

# Inclusive physical ranges for the calibrated multipliers.
PARAM_BOUNDS = {
    "wm": (0.1, 10.0),       # soil-water capacity
    "b": (1e-6, 3.0),        # infiltration-curve shape exponent
    "im": (0.0, 1.0),        # impervious-area fraction
    "ke": (0.8, 1.2),        # PET forcing multiplier
    "fc": (0.1, 2.0),        # saturated hydraulic conductivity
    "under": (0.1, 10.0),    # interflow drain-rate scale
    "leaki": (0.1, 10.0),    # interflow-to-groundwater leakage
    "alpha": (0.1, 3.0),     # channel kinematic-wave coefficient
    "beta": (0.1, 3.0),      # kinematic-wave exponent
    "alpha0": (0.0, 3.0),    # overland routing coefficient
    "iwu": (0.1, 100.0),     # initial soil water, percent of capacity
}

# State parameters pinned by convention; overriding requires explicit opt-in.
FIXED_PARAMS = {"th": 10.0, "isu": 0.0}

CALIBRATED_NAMES = tuple(n for n in PARAM_NAMES if n in PARAM_BOUNDS)

# Interaction groups: which knobs move together for a given hydrograph symptom.
PARAM_GROUPS = {
    "runoff_partition": ("wm", "b", "im"),
    "recession": ("fc", "under", "leaki"),
    "routing": ("alpha", "beta", "alpha0"),
    "water_balance": ("ke", "iwu"),
}


@dataclass(frozen=True)
class BoundsViolation:
    """One parameter outside its admissible range."""

    name: str
    value: float
    low: float
    high: float

    def describe(self) -> str:
        return f"{self.name}={self.value:g} outside [{self.low:g}, {self.high:g}]"


class BoundsError(ValueError):
    """Raised when a parameter set violates one or more bounds."""

    def __init__(self, violations: list[BoundsViolation]):
        self.violations = violations
        super().__init__("; ".join(v.describe() for v in violations))


@dataclass(frozen=True)
class ParameterSet:
    """The 13 scalar multipliers that form the calibration decision variable."""

    wm: float = 1.0
    b: float = 1.0
    im: float = 1.0
    ke: float = 1.0
    fc: float = 1.0
    under: float = 1.0
    leaki: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    alpha0: float = 1.0
    iwu: float = 1.0
    th: float = 10.0
    isu: float = 0.0

    @classmethod
    def from_dict(cls, values: dict) -> "ParameterSet":
        """Build from a mapping holding exactly the 13 parameter names."""
        missing = [n for n in PARAM_NAMES if n not in values]
        extra = [k for k in values if k not in PARAM_NAMES]
        if missing or extra:
            parts = []
            if missing:
                parts.append("missing keys: " + ", ".join(missing))
            if extra:
                parts.append("unknown keys: " + ", ".join(sorted(extra)))
            raise KeyError("; ".join(parts))
        return cls(**{n: float(values[n]) for n in PARAM_NAMES})

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def violations(self, allow_fixed_override: bool = False) -> list[BoundsViolation]:
        """All bound violations, in canonical parameter order.

        Non-finite values violate by definition. With the default convention
        the fixed pair must equal its pinned values exactly.
        """
        out = []
        for name in CALIBRATED_NAMES:
            value = getattr(self, name)
            low, high = PARAM_BOUNDS[name]
            if not math.isfinite(value) or value < low or value > high:
                out.append(BoundsViolation(name, value, low, high))
        for name, pinned in FIXED_PARAMS.items():
            value = getattr(self, name)
            if allow_fixed_override:
                if not math.isfinite(value):
                    out.append(BoundsViolation(name, value, pinned, pinned))
            elif value != pinned:
                out.append(BoundsViolation(name, value, pinned, pinned))
        return out

    def validate(self, allow_fixed_override: bool = False) -> None:
        bad = self.violations(allow_fixed_override)
        if bad:
            raise BoundsError(bad)
