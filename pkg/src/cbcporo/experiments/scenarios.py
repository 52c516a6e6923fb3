"""Physical scenario presets and the decade envelopes of their dimensionless groups."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any

from cbcporo.core.errors import ConfigError
from cbcporo.core.system import NondimGroups, nondimensional_groups, physical_from_material

MATERIAL_KEYS = ("permeability", "alpha", "c0", "young", "poisson", "lp")
SCALE_KEYS = ("L", "tau", "p0", "d0")
GROUPS = NondimGroups._fields
FLUID_VISCOSITY = 1e-3

Range = tuple[float, float]


@dataclass(frozen=True)
class Scenario:
    """Material ranges (SI) and characteristic scales of one application."""

    name: str
    materials: dict[str, Range]
    scales: dict[str, float]
    tabulated: dict[str, Range] = field(default_factory=dict)
    fluid_viscosity: float = FLUID_VISCOSITY

    def __post_init__(self) -> None:
        missing = [k for k in MATERIAL_KEYS if k not in self.materials]
        missing += [k for k in SCALE_KEYS if k not in self.scales]
        if missing:
            raise ConfigError(f"scenario '{self.name}' is missing: {', '.join(missing)}")
        for key, (lo, hi) in self.materials.items():
            if lo > hi:
                raise ConfigError(f"scenario '{self.name}': {key} range is reversed ({lo} > {hi})")

    @classmethod
    def from_dict(cls, name: str, data: dict[str, Any]) -> Scenario:
        def as_range(v: Any) -> Range:
            if isinstance(v, (int, float)):
                return (float(v), float(v))
            lo, hi = v
            return (float(lo), float(hi))

        try:
            return cls(
                name=name,
                materials={k: as_range(data[k]) for k in MATERIAL_KEYS if k in data},
                scales={k: float(data[k]) for k in SCALE_KEYS if k in data},
                tabulated={k: as_range(v) for k, v in data.get("tabulated", {}).items()},
                fluid_viscosity=float(data.get("fluid_viscosity", FLUID_VISCOSITY)),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"scenario '{name}': {e}") from e

    def corners(self) -> list[NondimGroups]:
        """Groups at every corner of the material box."""
        keys = list(MATERIAL_KEYS)
        out = []
        for values in itertools.product(*(sorted(set(self.materials[k])) for k in keys)):
            m = dict(zip(keys, values))
            phys = physical_from_material(
                m["young"], m["poisson"], m["alpha"], m["c0"], m["lp"],
                permeability=m["permeability"], fluid_viscosity=self.fluid_viscosity,
                **self.scales,
            )
            out.append(nondimensional_groups(phys))
        return out


def decade_floor(v: float) -> float:
    return 10.0 ** math.floor(math.log10(v) + 1e-9)


def decade_ceil(v: float) -> float:
    return 10.0 ** math.ceil(math.log10(v) - 1e-9)


@dataclass(frozen=True)
class GroupEnvelope:
    group: str
    low: float
    high: float

    @property
    def decades(self) -> Range:
        return (decade_floor(self.low), decade_ceil(self.high))

    def matches(self, tabulated: Range | None) -> bool | None:
        if tabulated is None:
            return None
        lo, hi = self.decades
        return math.isclose(lo, tabulated[0], rel_tol=1e-6) and math.isclose(hi, tabulated[1], rel_tol=1e-6)


def envelopes(scenario: Scenario) -> list[GroupEnvelope]:
    """Min/max of every group over the corners, plus the effective rescaled L_p = Da * Cp."""
    corners = scenario.corners()
    out = []
    for g in GROUPS:
        vals = [getattr(c, g) for c in corners]
        out.append(GroupEnvelope(g, min(vals), max(vals)))
    lp = [c.Da * c.Cp for c in corners]
    out.append(GroupEnvelope("DaCp", min(lp), max(lp)))
    return out


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESETS: dict[str, Scenario] = {
    "cellular_swelling": Scenario(
        name="cellular_swelling",
        materials={
            "permeability": (1e-16, 1e-14),
            "alpha": (1.0, 1.0),
            "c0": (1e-8, 1e-5),
            "young": (500.0, 1500.0),
            "poisson": (0.17, 0.48),
            "lp": (1e-14, 1e-11),
        },
        scales={"L": 20e-6, "tau": 0.1, "p0": 10.0, "d0": 1e-7},
        tabulated={"Da": (1e-2, 1e2), "S": (1e-5, 1.0), "BW": (1.0, 10.0), "E": (10.0, 1e4), "Cp": (1e-8, 1e-2)},
    ),
    "tissue_engineering": Scenario(
        name="tissue_engineering",
        materials={
            "permeability": (1e-18, 1e-18),
            "alpha": (1.0, 1.0),
            "c0": (1e-6, 1e-4),
            "young": (5e4, 5e4),
            "poisson": (0.38, 0.38),
            "lp": (1e-16, 1e-12),
        },
        scales={"L": 5e-3, "tau": 3600.0, "p0": 10.0, "d0": 1e-4},
        tabulated={"Da": (1e-7, 1e-6), "S": (1e-6, 1e-3), "BW": (1e-2, 1e-1), "E": (10.0, 1e2), "Cp": (1e-4, 10.0)},
    ),
    "aquifer": Scenario(
        name="aquifer",
        materials={
            "permeability": (1e-16, 1e-9),
            "alpha": (0.6, 1.0),
            "c0": (1e-11, 1e-9),
            "young": (1e9, 1e10),
            "poisson": (0.15, 0.35),
            "lp": (1e-16, 1e-14),
        },
        scales={"L": 500.0, "tau": 86400.0, "p0": 1e6, "d0": 1.0},
        tabulated={"Da": (1e-7, 1e3), "S": (1e-3, 10.0), "BW": (1e-2, 10.0), "E": (10.0, 1e5), "Cp": (1e-9, 1e2)},
    ),
    # mu = 1/2 and lambda = 1 from E_Y = 4/3, nu = 1/3; kappa = 1
    "unit": Scenario(
        name="unit",
        materials={
            "permeability": (1e-3, 1e-3),
            "alpha": (1.0, 1.0),
            "c0": (1.0, 1.0),
            "young": (4.0 / 3.0, 4.0 / 3.0),
            "poisson": (1.0 / 3.0, 1.0 / 3.0),
            "lp": (1.0, 1.0),
        },
        scales={"L": 1.0, "tau": 1.0, "p0": 1.0, "d0": 1.0},
        tabulated={g: (1.0, 1.0) for g in GROUPS},
    ),
}


def resolve_scenarios(names: tuple[str, ...] | list[str], custom: dict[str, dict[str, Any]] | None = None) -> list[Scenario]:
    """Presets by name, then user-defined scenarios in config order."""
    custom = custom or {}
    out = []
    for name in names:
        if name in custom:
            continue
        if name not in PRESETS:
            raise ConfigError(f"unknown scenario '{name}'. Presets: {', '.join(PRESETS)}")
        out.append(PRESETS[name])
    out.extend(Scenario.from_dict(name, data) for name, data in custom.items())
    return out
