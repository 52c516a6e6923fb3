"""Experiment configuration: JSON documents merged over defaults, validated into ExperimentConfig."""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any

from cbcporo.core.assembly import Params
from cbcporo.core.errors import ConfigError
from cbcporo.core.mesh import BoundaryConfig, BCRegime
from cbcporo.core.precond import AmgOptions, PrecondKind, SolveMode

logger = logging.getLogger(__name__)

GRID_KEYS = ("alpha", "kappa", "lambda", "lp", "c0")

DEFAULT_CONFIG: dict[str, Any] = {
    "version": "0.1.0",
    "mesh": {
        "sizes": [8, 32],
        "interface_x": 0.5,
    },
    "boundary": {
        "regime": "mixed",
        "displacement_dirichlet": None,
        "fluid_dirichlet": [],
    },
    "params": {
        "alpha": [1e-2, 1.0, 1e2],
        "kappa": [1e-7, 1e-3, 1.0, 1e3],
        "lambda": [10.0, 1e3, 1e5],
        "lp": [1e-9, 1e-5, 1e-2],
        "c0": [1e-6],
    },
    "physical": {
        "young": 1000.0,
        "poisson": 0.4,
        "alpha": 1.0,
        "kappa": 1e-13,
        "c0": 1e-6,
        "lp": 1e-12,
        "tau": 0.1,
        "L": 20e-6,
        "p0": 1000.0,
        "osmotic_peak": 1000.0,
        "osmotic_width": 0.1,
    },
    "solver": {
        "preconditioner": "robust",
        "mode": "exact",
        "tol": 1e-10,
        "max_it": 250,
    },
    "amg": {
        "theta": 0.7,
        "nu": 1,
        "theta_elasticity": 0.5,
        "nu_elasticity": 3,
        "nu_p0": 5,
        "cycles_p0": 2,
        "max_coarse": 64,
    },
    "qblock": {
        "theta": [0.7],
    },
    "nondim": {
        "presets": ["cellular_swelling", "tissue_engineering", "aquifer", "unit"],
    },
    "output": {
        "path": None,
        "format": "csv",
        "fields_path": None,
    },
    "run": {
        "threads": 1,
    },
}

SECTIONS = tuple(k for k, v in DEFAULT_CONFIG.items() if isinstance(v, dict))


class Experiment(str, Enum):
    CONVERGENCE = "convergence"
    SWEEP = "sweep"
    NAIVE_SWEEP = "naive_sweep"
    QBLOCK_COND = "qblock_cond"
    NONDIM = "nondim"
    SWELLING_DEMO = "swelling_demo"

    @classmethod
    def parse(cls, name: str | Experiment) -> Experiment:
        try:
            return cls(str(getattr(name, "value", name)).replace("-", "_"))
        except ValueError:
            raise ConfigError(
                f"unknown experiment '{name}'. Must be one of: {', '.join(e.value for e in cls)}"
            ) from None


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"
    MARKDOWN = "md"


# Overrides applied between DEFAULT_CONFIG and the user's file
EXPERIMENT_DEFAULTS: dict[Experiment, dict[str, dict[str, Any]]] = {
    Experiment.CONVERGENCE: {
        "mesh": {"sizes": [8, 16, 32, 64]},
        "params": {"alpha": [1.0], "kappa": [1.0], "lambda": [1.0], "lp": [1.0], "c0": [1.0]},
        "solver": {"tol": 1e-12},
    },
    Experiment.NAIVE_SWEEP: {
        "mesh": {"sizes": [16]},
        "params": {"alpha": [1.0], "kappa": [1e-7], "lambda": [1.0], "lp": [1e-9, 1e-5, 1e-2, 1e2], "c0": [1e-6]},
        "solver": {"preconditioner": "naive_single"},
    },
    Experiment.QBLOCK_COND: {
        "mesh": {"sizes": [32]},
        # lambda x kappa with an impermeable membrane, then lp x kappa at lambda = 1
        "params": {
            "alpha": [1.0], "kappa": [1e-7, 1.0, 1e3], "lambda": [1.0], "lp": [0.0], "c0": [1e-6],
            "sets": [
                {"lambda": [1.0, 1e5], "lp": [0.0]},
                {"lambda": [1.0], "lp": [1e-9, 1e-2, 1e2]},
            ],
        },
        "solver": {"mode": "amg"},
    },
    Experiment.SWELLING_DEMO: {
        "mesh": {"sizes": [32]},
        "boundary": {"regime": "full_dirichlet"},
        "solver": {"preconditioner": "dirichlet_p0", "tol": 1e-8},
    },
}


def utc_timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H-%M-%S-%fZ")


def load_json(path: Path) -> dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        return {}
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e


def save_json(path: Path, data: dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = {**base}
    for section in SECTIONS:
        default_val = base.get(section, {})
        cfg_val = override.get(section, {})
        if not isinstance(cfg_val, dict):
            raise ConfigError(f"section '{section}' must be an object, got {type(cfg_val).__name__}")
        merged[section] = {**default_val, **cfg_val}
    unknown = set(override) - set(DEFAULT_CONFIG)
    if unknown:
        logger.warning(f"ignoring unknown config sections: {', '.join(sorted(unknown))}")
    return merged


def load_config(path: Path | None = None, experiment: Experiment | str | None = None) -> dict[str, Any]:
    """Defaults, then the experiment's overrides, then the user's file."""
    merged = {k: (dict(v) if isinstance(v, dict) else v) for k, v in DEFAULT_CONFIG.items()}
    if experiment is not None:
        merged = _merge(merged, EXPERIMENT_DEFAULTS.get(Experiment.parse(experiment), {}))
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        user = load_json(Path(path))
        merged = _merge(merged, user)
        # a user grid replaces inherited parameter sets unless it brings its own
        params = user.get("params")
        if isinstance(params, dict) and "sets" not in params and set(params) & set(GRID_KEYS):
            merged["params"].pop("sets", None)
    return merged


# ---------------------------------------------------------------------------
# Validated configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    experiment: Experiment
    sizes: tuple[int, ...]
    boundary: BoundaryConfig
    grid: dict[str, tuple[float, ...]]
    grid_sets: tuple[dict[str, tuple[float, ...]], ...] = ()
    preconditioner: PrecondKind = PrecondKind.ROBUST
    mode: SolveMode = SolveMode.EXACT
    tol: float = 1e-10
    max_it: int = 250
    amg: AmgOptions = field(default_factory=AmgOptions)
    interface_x: float = 0.5
    qblock_theta: tuple[float, ...] = (0.7,)
    presets: tuple[str, ...] = ()
    scenarios: dict[str, dict[str, Any]] = field(default_factory=dict)
    physical: dict[str, float] = field(default_factory=dict)
    output_path: Path | None = None
    output_format: OutputFormat = OutputFormat.CSV
    fields_path: Path | None = None
    threads: int = 1

    def __post_init__(self) -> None:
        if not self.sizes:
            raise ConfigError("mesh sizes must not be empty")
        for n in self.sizes:
            if isinstance(n, bool) or not isinstance(n, int) or n < 1:
                raise ConfigError(f"mesh sizes must be positive integers, got {n!r}")
        for key in GRID_KEYS:
            if not self.grid.get(key):
                raise ConfigError(f"parameter grid '{key}' must not be empty")
        for i, override in enumerate(self.grid_sets):
            unknown = set(override) - set(GRID_KEYS)
            if unknown:
                raise ConfigError(f"params.sets[{i}]: unknown parameters {', '.join(sorted(unknown))}")
            for key, values in override.items():
                if not values:
                    raise ConfigError(f"params.sets[{i}].{key} must not be empty")
        if not self.qblock_theta:
            raise ConfigError("qblock theta grid must not be empty")
        if not 0.0 < self.tol < 1.0:
            raise ConfigError(f"tol must lie in (0, 1), got {self.tol}")
        if self.max_it < 1:
            raise ConfigError(f"max_it must be at least 1, got {self.max_it}")
        if self.threads < 1:
            raise ConfigError(f"threads must be at least 1, got {self.threads}")

    @property
    def regime(self) -> BCRegime | None:
        return self.boundary.regime

    def param_grid(self) -> list[Params]:
        """Cartesian product of the grid in (alpha, kappa, lambda, lp, c0) order.

        With ``grid_sets`` each set overrides some keys of the grid and the
        products are concatenated in set order, without repeats.
        """
        seen: set[tuple[float, ...]] = set()
        out = []
        for override in self.grid_sets or ({},):
            grid = {**self.grid, **override}
            for combo in itertools.product(*(grid[k] for k in GRID_KEYS)):
                if combo in seen:
                    continue
                seen.add(combo)
                a, k, lam, lp, c0 = combo
                out.append(Params(lam=lam, alpha=a, kappa=k, c0=c0, lp=lp))
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "experiment": self.experiment.value,
            "sizes": list(self.sizes),
            "regime": self.regime.value if self.regime else None,
            "displacement_dirichlet": list(self.boundary.displacement_dirichlet),
            "fluid_dirichlet": list(self.boundary.fluid_dirichlet),
            "grid": {k: list(v) for k, v in self.grid.items()},
            "grid_sets": [{k: list(v) for k, v in s.items()} for s in self.grid_sets],
            "preconditioner": self.preconditioner.value,
            "mode": self.mode.value,
            "tol": self.tol,
            "max_it": self.max_it,
            "amg": asdict(self.amg),
            "threads": self.threads,
        }


def _enum(cls: type[Enum], value: Any, what: str) -> Any:
    try:
        return cls(value)
    except ValueError:
        raise ConfigError(
            f"unknown {what} '{value}'. Must be one of: {', '.join(str(e.value) for e in cls)}"
        ) from None


def _floats(values: Any, what: str) -> tuple[float, ...]:
    if isinstance(values, (int, float)) and not isinstance(values, bool):
        values = [values]
    try:
        return tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number or a list of numbers, got {values!r}") from None


def _grid_sets(raw: Any) -> tuple[dict[str, tuple[float, ...]], ...]:
    if not raw:
        return ()
    if not isinstance(raw, list) or not all(isinstance(s, dict) for s in raw):
        raise ConfigError("params.sets must be a list of objects")
    return tuple(
        {k: _floats(v, f"params.sets[{i}].{k}") for k, v in s.items()} for i, s in enumerate(raw)
    )


def _boundary(section: dict[str, Any]) -> BoundaryConfig:
    fluid = tuple(section.get("fluid_dirichlet") or ())
    disp = section.get("displacement_dirichlet")
    if disp:
        return BoundaryConfig(displacement_dirichlet=tuple(disp), fluid_dirichlet=fluid)
    base = BoundaryConfig.from_regime(_enum(BCRegime, section.get("regime", "mixed"), "boundary regime"))
    return BoundaryConfig(displacement_dirichlet=base.displacement_dirichlet, fluid_dirichlet=fluid)


def experiment_config(
    experiment: Experiment | str,
    config: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Validate a merged config dict into an ``ExperimentConfig``.

    ``overrides`` holds flat CLI values (mode, theta, tol, max_it, threads,
    out, format); ``None`` entries are ignored.
    """
    experiment = Experiment.parse(experiment)
    cfg = config if config is not None else load_config(None, experiment)
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}

    solver = {**cfg["solver"]}
    amg = {**cfg["amg"]}
    output = {**cfg["output"]}
    for key in ("mode", "tol", "max_it", "preconditioner"):
        if key in ov:
            solver[key] = ov[key]
    if "theta" in ov:
        amg["theta"] = ov["theta"]
    if "out" in ov:
        output["path"] = ov["out"]
    if "format" in ov:
        output["format"] = ov["format"]
    threads = ov.get("threads", cfg["run"].get("threads", 1))

    unknown_amg = set(amg) - set(AmgOptions.__dataclass_fields__)
    if unknown_amg:
        raise ConfigError(f"unknown amg options: {', '.join(sorted(unknown_amg))}")
    try:
        amg_options = AmgOptions(**amg)
    except TypeError as e:
        raise ConfigError(f"invalid amg options: {e}") from e
    if not 0.0 <= amg_options.theta <= 1.0:
        raise ConfigError(f"theta must lie in [0, 1], got {amg_options.theta}")

    qblock_theta = _floats(cfg["qblock"].get("theta", [amg_options.theta]), "qblock.theta")
    if "theta" in ov:
        qblock_theta = (float(ov["theta"]),)

    return ExperimentConfig(
        experiment=experiment,
        sizes=tuple(cfg["mesh"]["sizes"]),
        boundary=_boundary(cfg["boundary"]),
        grid={k: _floats(cfg["params"].get(k, ()), f"params.{k}") for k in GRID_KEYS},
        grid_sets=_grid_sets(cfg["params"].get("sets")),
        preconditioner=_enum(PrecondKind, solver["preconditioner"], "preconditioner"),
        mode=_enum(SolveMode, solver["mode"], "solve mode"),
        tol=float(solver["tol"]),
        max_it=int(solver["max_it"]),
        amg=amg_options,
        interface_x=float(cfg["mesh"]["interface_x"]),
        qblock_theta=qblock_theta,
        presets=tuple(cfg["nondim"].get("presets", ())),
        scenarios=dict(cfg["nondim"].get("scenarios") or {}),
        physical={k: float(v) for k, v in cfg["physical"].items()},
        output_path=Path(output["path"]) if output.get("path") else None,
        output_format=_enum(OutputFormat, output.get("format", "csv"), "output format"),
        fields_path=Path(output["fields_path"]) if output.get("fields_path") else None,
        threads=int(threads),
    )
