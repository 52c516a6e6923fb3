"""Experiment runner: one handler per study, each returning a ResultTable.

Handlers are looked up by name in ``HANDLERS``. Solver failures inside a
sweep cell are recorded in the row and counted in ``meta["failures"]``;
they never abort the remaining cells.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable

import numpy as np

from cbcporo.core.amg import amg_setup
from cbcporo.core.assembly import Params, assemble_loads
from cbcporo.core.config import Experiment, ExperimentConfig, experiment_config, load_config
from cbcporo.core.discretization import build_spaces, edge_quadrature, error_norms, h1_norm
from cbcporo.core.errors import CbcPoroError
from cbcporo.core.krylov import factorize_spd, minres, pcg_condition_estimate
from cbcporo.core.mesh import build_box_mesh, mark_boundaries
from cbcporo.core.precond import (
    BlockInverse,
    PrecondKind,
    SolveMode,
    build_preconditioner,
    elasticity_inverse,
    robust_pressure_matrix,
)
from cbcporo.core.report import ResultTable, write_vertex_fields
from cbcporo.core.system import (
    BlockOperator,
    SystemParts,
    assemble_parts,
    backward_euler_source,
    manufactured_body_force,
    manufactured_fluid_source,
    manufactured_problem,
    nondimensional_groups,
    physical_from_material,
    rescale_nondimensional,
)
from cbcporo.experiments.scenarios import envelopes, resolve_scenarios

logger = logging.getLogger(__name__)

PARAM_COLUMNS = ["alpha", "kappa", "lambda", "lp", "c0"]
QBLOCK_SEED = 20240
QBLOCK_COND_WARN = 10.0


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _param_cells(p: Params) -> dict[str, float]:
    return {k: v for k, v in p.as_dict().items() if k in PARAM_COLUMNS}


def mesh_parts(cfg: ExperimentConfig, n: int, params: Params) -> SystemParts:
    mesh = mark_boundaries(build_box_mesh(n, cfg.interface_x), cfg.boundary)
    return assemble_parts(mesh, build_spaces(mesh), params)


def _osmotic_wave(x, y):
    return 1.0 + np.sin(2.0 * np.pi * x) * np.sin(2.0 * np.pi * y)


def sweep_system(parts: SystemParts) -> tuple[BlockOperator, np.ndarray]:
    """Manufactured forcing with a varying osmotic pressure, homogeneous boundary data."""
    p = parts.params
    loads = assemble_loads(
        manufactured_body_force(p.alpha), manufactured_fluid_source(p), _osmotic_wave, parts.spaces, p
    )
    return parts.operator(loads.concat())


def solve_minres(
    parts: SystemParts,
    op: BlockOperator,
    rhs: np.ndarray,
    kind: PrecondKind,
    cfg: ExperimentConfig,
    elasticity: BlockInverse | None = None,
):
    P = build_preconditioner(kind, parts, parts.params, cfg.mode, cfg.amg, elasticity)
    return minres(op.as_linear_operator(), P.as_linear_operator(), rhs, tol=cfg.tol, maxit=cfg.max_it)


def _map(fn: Callable, items: list, threads: int) -> list:
    """Ordered map, optionally over a thread pool."""
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _eoc(prev: tuple[int, float] | None, n: int, err: float) -> float | None:
    if prev is None or not prev[1] or not err:
        return None
    n_prev, e_prev = prev
    return math.log(e_prev / err) / math.log(n / n_prev)


# ---------------------------------------------------------------------------
# Convergence
# ---------------------------------------------------------------------------

CONVERGENCE_COLUMNS = [
    *PARAM_COLUMNS, "n", "h", "iterations", "converged",
    "err_d_h1", "eoc_d_h1", "err_pF_h1", "eoc_pF_h1", "err_pT_l2", "eoc_pT_l2",
]


def _manufactured_errors(problem, x: np.ndarray) -> dict[str, float]:
    parts = problem.parts
    spaces = parts.spaces
    sol = parts.partition.split(x)
    exact = problem.exact

    l2, semi = error_norms(spaces.V, sol.d, exact.d)
    err_d = h1_norm(l2, semi)

    nTi, nFi = spaces.QT_intra.ndofs, spaces.QF_intra.ndofs
    pF_sq = pT_sq = 0.0
    for QT, QF, pT, pF in (
        (spaces.QT_intra, spaces.QF_intra, sol.pT[:nTi], sol.pF[:nFi]),
        (spaces.QT_extra, spaces.QF_extra, sol.pT[nTi:], sol.pF[nFi:]),
    ):
        l2, semi = error_norms(QF, pF, exact.pF[QF.subdomain])
        pF_sq += l2**2 + semi**2
        l2, _ = error_norms(QT, pT, exact.pT[QT.subdomain])
        pT_sq += l2**2
    return {"err_d_h1": err_d, "err_pF_h1": math.sqrt(pF_sq), "err_pT_l2": math.sqrt(pT_sq)}


def run_convergence(cfg: ExperimentConfig) -> ResultTable:
    """Manufactured-solution errors and estimated orders under uniform refinement."""
    table = ResultTable(cfg.experiment.value, list(CONVERGENCE_COLUMNS))
    failures = 0
    for params in cfg.param_grid():
        prev: dict[str, tuple[int, float] | None] = {"d_h1": None, "pF_h1": None, "pT_l2": None}
        for n in sorted(cfg.sizes):
            problem = manufactured_problem(params, n, cfg.interface_x)
            P = build_preconditioner(cfg.preconditioner, problem.parts, params, cfg.mode, cfg.amg)
            x, rep = minres(
                problem.operator.as_linear_operator(), P.as_linear_operator(), problem.rhs,
                tol=cfg.tol, maxit=cfg.max_it,
            )
            row: dict[str, Any] = {**_param_cells(params), "n": n, "h": 1.0 / n,
                                   "iterations": rep.iterations, "converged": rep.converged}
            if not rep.converged:
                failures += 1
                logger.warning(
                    f"convergence n={n}: minres stopped at {rep.iterations} iterations "
                    f"(rel. residual {rep.relative_residual:.2e}); row has no errors"
                )
                table.add_row(**row)
                continue

            errors = _manufactured_errors(problem, x)
            for key in ("d_h1", "pF_h1", "pT_l2"):
                err = errors[f"err_{key}"]
                row[f"err_{key}"] = err
                row[f"eoc_{key}"] = _eoc(prev[key], n, err)
                prev[key] = (n, err)
            logger.info(
                f"convergence n={n}: d {errors['err_d_h1']:.3e}, pF {errors['err_pF_h1']:.3e}, "
                f"pT {errors['err_pT_l2']:.3e} ({rep.iterations} its)"
            )
            table.add_row(**row)
    table.meta.update(failures=failures, config=cfg.to_dict())
    return table


# ---------------------------------------------------------------------------
# Iteration-count sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = [*PARAM_COLUMNS, "n", "iterations", "converged", "relative_residual", "error"]


def _prepare_meshes(cfg: ExperimentConfig, kinds: tuple[PrecondKind, ...]) -> dict[int, tuple[SystemParts, BlockInverse]]:
    """Parameter-free parts and the shared elasticity inverse per mesh size."""
    first = cfg.param_grid()[0]
    prepared = {}
    for n in cfg.sizes:
        parts = mesh_parts(cfg, n, first)
        prepared[n] = (parts, elasticity_inverse(parts, cfg.mode, cfg.amg))
        logger.debug(f"mesh n={n} ready for {', '.join(k.value for k in kinds)}")
    return prepared


def _sweep_cell(
    params: Params, n: int, kind: PrecondKind, prepared: dict, cfg: ExperimentConfig
) -> dict[str, Any]:
    base, E = prepared[n]
    parts = base.with_params(params)
    try:
        _, rep = solve_minres(parts, *sweep_system(parts), kind, cfg, elasticity=E)
    except CbcPoroError as e:
        logger.warning(f"{kind.value} n={n} {params.as_dict()}: {e}")
        return {"iterations": None, "converged": False, "relative_residual": None, "error": str(e)}
    return {
        "iterations": rep.iterations,
        "converged": rep.converged,
        "relative_residual": rep.relative_residual,
        "error": "",
    }


def run_sweep(cfg: ExperimentConfig) -> ResultTable:
    """One preconditioned MinRes solve per (parameters, mesh size) cell."""
    table = ResultTable(cfg.experiment.value, list(SWEEP_COLUMNS))
    prepared = _prepare_meshes(cfg, (cfg.preconditioner,))
    cells = [(p, n) for p in cfg.param_grid() for n in cfg.sizes]
    logger.info(f"sweep: {len(cells)} cells, {cfg.preconditioner.value}/{cfg.mode.value}, {cfg.threads} thread(s)")

    results = _map(lambda c: _sweep_cell(c[0], c[1], cfg.preconditioner, prepared, cfg), cells, cfg.threads)
    for (params, n), res in zip(cells, results):
        table.add_row(**_param_cells(params), n=n, **res)

    failures = sum(1 for r in results if not r["converged"])
    its = [r["iterations"] for r in results if r["iterations"] is not None]
    table.meta.update(
        failures=failures,
        min_iterations=min(its) if its else None,
        max_iterations=max(its) if its else None,
        config=cfg.to_dict(),
    )
    return table


NAIVE_COLUMNS = [*PARAM_COLUMNS, "n", "iterations_naive", "converged_naive", "iterations_robust", "converged_robust"]


def run_naive_sweep(cfg: ExperimentConfig) -> ResultTable:
    """The configured (naive) preconditioner paired with the robust one on each cell.

    Only robust failures count toward ``meta["failures"]``; cap hits of the
    naive preconditioner are the expected outcome and are counted separately.
    """
    table = ResultTable(cfg.experiment.value, list(NAIVE_COLUMNS))
    naive = cfg.preconditioner
    prepared = _prepare_meshes(cfg, (naive, PrecondKind.ROBUST))
    cells = [(p, n) for p in cfg.param_grid() for n in cfg.sizes]

    def run(cell):
        params, n = cell
        return (
            _sweep_cell(params, n, naive, prepared, cfg),
            _sweep_cell(params, n, PrecondKind.ROBUST, prepared, cfg),
        )

    cap_hits = failures = 0
    for (params, n), (a, b) in zip(cells, _map(run, cells, cfg.threads)):
        cap_hits += not a["converged"]
        failures += not b["converged"]
        table.add_row(
            **_param_cells(params), n=n,
            iterations_naive=a["iterations"], converged_naive=a["converged"],
            iterations_robust=b["iterations"], converged_robust=b["converged"],
        )
    table.meta.update(failures=failures, cap_hits=cap_hits, max_it=cfg.max_it, config=cfg.to_dict())
    return table


# ---------------------------------------------------------------------------
# Pressure-block condition numbers
# ---------------------------------------------------------------------------

QBLOCK_COLUMNS = [*PARAM_COLUMNS, "theta", "n", "cond_estimate", "cg_iterations", "converged", "levels", "operator_complexity"]


def run_qblock_cond(cfg: ExperimentConfig) -> ResultTable:
    """PCG condition estimates of the pressure Riesz block under its AMG (or exact) inverse."""
    table = ResultTable(cfg.experiment.value, list(QBLOCK_COLUMNS))
    failures = 0
    ill_conditioned = []
    for n in cfg.sizes:
        base = mesh_parts(cfg, n, cfg.param_grid()[0])
        rng = np.random.default_rng(QBLOCK_SEED + n)
        b = rng.standard_normal(base.spaces.nT + base.spaces.nF)
        for params in cfg.param_grid():
            Q = robust_pressure_matrix(base, params)
            for theta in cfg.qblock_theta:
                row: dict[str, Any] = {**_param_cells(params), "theta": theta, "n": n}
                if cfg.mode is SolveMode.AMG:
                    h = amg_setup(Q, theta=theta, nu=cfg.amg.nu, max_coarse=cfg.amg.max_coarse, block="pressure")
                    B = h.as_linear_operator()
                    row.update(levels=h.num_levels, operator_complexity=h.operator_complexity())
                else:
                    B = factorize_spd(Q, block="pressure").as_linear_operator()
                    row.update(levels=1, operator_complexity=1.0)
                _, rep = pcg_condition_estimate(Q, B, b, tol=cfg.tol, maxit=cfg.max_it)
                failures += not rep.converged
                row.update(cond_estimate=rep.cond_estimate, cg_iterations=rep.iterations, converged=rep.converged)
                logger.info(
                    f"qblock n={n} lambda={params.lam:g} kappa={params.kappa:g} lp={params.lp:g} "
                    f"theta={theta}: cond {rep.cond_estimate:.3g} ({rep.iterations} its)"
                )
                if rep.cond_estimate > QBLOCK_COND_WARN:
                    ill_conditioned.append(len(table.rows))
                    logger.warning(
                        f"qblock n={n} {params.as_dict()} theta={theta}: condition estimate "
                        f"{rep.cond_estimate:.3g} exceeds {QBLOCK_COND_WARN:g}"
                    )
                table.add_row(**row)
    table.meta.update(
        failures=failures,
        ill_conditioned=ill_conditioned,
        cond_warn=QBLOCK_COND_WARN,
        seed=QBLOCK_SEED,
        config=cfg.to_dict(),
    )
    return table


# ---------------------------------------------------------------------------
# Dimensionless groups
# ---------------------------------------------------------------------------

NONDIM_COLUMNS = ["scenario", "group", "min", "max", "decade_min", "decade_max", "table_min", "table_max", "matches"]


def run_nondim(cfg: ExperimentConfig) -> ResultTable:
    """Decade envelopes of Da, S, BW, E, Cp (and Da*Cp) per scenario, flagged against the tabulated ranges."""
    table = ResultTable(cfg.experiment.value, list(NONDIM_COLUMNS))
    mismatches = []
    for scenario in resolve_scenarios(cfg.presets, cfg.scenarios):
        for env in envelopes(scenario):
            tab = scenario.tabulated.get(env.group)
            match = env.matches(tab)
            if match is False:
                mismatches.append(f"{scenario.name}.{env.group}")
            lo, hi = env.decades
            table.add_row(
                scenario=scenario.name, group=env.group, min=env.low, max=env.high,
                decade_min=lo, decade_max=hi,
                table_min=tab[0] if tab else None, table_max=tab[1] if tab else None,
                matches=match,
            )
    if mismatches:
        logger.info(f"groups differing from the tabulated decades: {', '.join(mismatches)}")
    table.meta.update(failures=0, mismatches=mismatches)
    return table


# ---------------------------------------------------------------------------
# Swelling demo
# ---------------------------------------------------------------------------

SWELLING_COLUMNS = ["quantity", "value"]


def _gaussian_osmotic(peak: float, width: float, center=(0.5, 0.5)):
    def p_osm(x, y):
        r2 = (x - center[0]) ** 2 + (y - center[1]) ** 2
        return -peak * np.exp(-r2 / (2.0 * width**2))
    return p_osm


def membrane_flux(parts: SystemParts, pF: np.ndarray, p_osm: Callable) -> float:
    """Integral over the membrane of |L_p ([p_F] + p_osm)|."""
    spaces = parts.spaces
    mesh = parts.mesh
    eids, ab, _ = mesh.interface_geometry()
    if len(eids) == 0:
        return 0.0
    nFi = spaces.QF_intra.ndofs
    jump_nodes = pF[spaces.QF_intra.vertex_dofs[ab]] - pF[nFi + spaces.QF_extra.vertex_dofs[ab]]
    s, w = edge_quadrature(4)
    pa, pb = mesh.vertices[ab[:, 0]], mesh.vertices[ab[:, 1]]
    pts = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
    jump = jump_nodes[:, :1] * (1.0 - s) + jump_nodes[:, 1:] * s
    density = np.abs(parts.params.lp * (jump + p_osm(pts[..., 0], pts[..., 1])))
    return float(np.sum(density @ w * mesh.edge_lengths(eids)))


def vertex_field_rows(parts: SystemParts, x: np.ndarray) -> list[list[Any]]:
    """One row per (vertex, subdomain): interface vertices appear once per side."""
    spaces = parts.spaces
    sol = parts.partition.split(x)
    mesh = parts.mesh
    nTi, nFi = spaces.QT_intra.ndofs, spaces.QF_intra.ndofs
    rows = []
    for QT, QF, t0, f0 in (
        (spaces.QT_intra, spaces.QF_intra, 0, 0),
        (spaces.QT_extra, spaces.QF_extra, nTi, nFi),
    ):
        verts = np.flatnonzero(QF.vertex_dofs >= 0)
        for v in verts:
            rows.append([
                int(v), float(mesh.vertices[v, 0]), float(mesh.vertices[v, 1]), QF.subdomain.name.lower(),
                float(sol.pF[f0 + QF.vertex_dofs[v]]), float(sol.pT[t0 + QT.vertex_dofs[v]]),
                float(sol.d[2 * v]), float(sol.d[2 * v + 1]),
            ])
    return rows


FIELD_COLUMNS = ["vertex", "x", "y", "subdomain", "p_F", "p_T", "d_x", "d_y"]


def run_swelling_demo(cfg: ExperimentConfig) -> ResultTable:
    """One implicit Euler step of osmotically driven cell swelling from rest."""
    ph = cfg.physical
    physical = physical_from_material(
        ph["young"], ph["poisson"], ph["alpha"], ph["c0"], ph["lp"],
        kappa=ph["kappa"], tau=ph["tau"], L=ph["L"], p0=ph["p0"],
    )
    groups = nondimensional_groups(physical)
    params = rescale_nondimensional(groups)
    n = cfg.sizes[0]
    if len(cfg.sizes) > 1:
        logger.debug(f"swelling demo uses the first mesh size only (n={n})")

    parts = mesh_parts(cfg, n, params)
    p_osm = _gaussian_osmotic(ph["osmotic_peak"] / ph["p0"], ph["osmotic_width"])
    loads = assemble_loads(None, None, p_osm, parts.spaces, params)
    fluid = loads.pF + backward_euler_source(None, parts, physical)
    op, rhs = parts.operator(np.concatenate([loads.d, loads.pT, fluid]))
    x, rep = solve_minres(parts, op, rhs, cfg.preconditioner, cfg)

    sol = parts.partition.split(x)
    nFi = parts.spaces.QF_intra.ndofs
    disp = np.hypot(sol.d[0::2], sol.d[1::2])
    stats = {
        "pF_min_intra": float(sol.pF[:nFi].min()),
        "pF_max_intra": float(sol.pF[:nFi].max()),
        "pF_min_extra": float(sol.pF[nFi:].min()),
        "pF_max_extra": float(sol.pF[nFi:].max()),
        "disp_max": float(disp.max()),
        "membrane_flux": membrane_flux(parts, sol.pF, p_osm),
        "iterations": rep.iterations,
    }
    table = ResultTable(cfg.experiment.value, list(SWELLING_COLUMNS))
    for key, value in stats.items():
        table.add_row(quantity=key, value=value)

    fields_path = cfg.fields_path
    if fields_path is None and cfg.output_path is not None:
        fields_path = cfg.output_path.with_name(f"{cfg.output_path.stem}_fields.csv")
    if fields_path is not None:
        write_vertex_fields(fields_path, FIELD_COLUMNS, vertex_field_rows(parts, x))
        logger.info(f"vertex fields written to {fields_path}")

    table.meta.update(
        failures=0 if rep.converged else 1,
        converged=rep.converged,
        n=n,
        groups=groups._asdict(),
        params=params.as_dict(),
        scales={"p0": physical.p0, "d0": physical.d0, "L": physical.L, "tau": physical.tau},
        fields_path=str(fields_path) if fields_path else None,
    )
    return table


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

HANDLERS: dict[Experiment, Callable[[ExperimentConfig], ResultTable]] = {
    Experiment.CONVERGENCE: run_convergence,
    Experiment.SWEEP: run_sweep,
    Experiment.NAIVE_SWEEP: run_naive_sweep,
    Experiment.QBLOCK_COND: run_qblock_cond,
    Experiment.NONDIM: run_nondim,
    Experiment.SWELLING_DEMO: run_swelling_demo,
}


def run_experiment(
    experiment: Experiment | str,
    config_path: Path | None = None,
    overrides: dict[str, Any] | None = None,
) -> ResultTable:
    """Load, validate and run one experiment."""
    experiment = Experiment.parse(experiment)
    cfg = experiment_config(experiment, load_config(config_path, experiment), overrides)
    return HANDLERS[experiment](cfg)
