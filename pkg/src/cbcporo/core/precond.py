"""Block-diagonal preconditioners built from the fitted-norm Riesz maps."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cbcporo.core.amg import amg_setup
from cbcporo.core.assembly import Params
from cbcporo.core.errors import NotSPDError, SmwBreakdownError
from cbcporo.core.krylov import factorize_spd
from cbcporo.core.mesh import BCRegime
from cbcporo.core.system import SystemParts

logger = logging.getLogger(__name__)

SMW_TOL = 1e-12


class PrecondKind(str, Enum):
    ROBUST = "robust"
    DIAG = "diag"
    DIRICHLET_P0 = "dirichlet_p0"
    DIAG_P0 = "diag_p0"
    NAIVE_SINGLE = "naive_single"


class SolveMode(str, Enum):
    EXACT = "exact"
    AMG = "amg"


@dataclass(frozen=True)
class AmgOptions:
    """AMG settings per block family."""

    theta: float = 0.7
    nu: int = 1
    theta_elasticity: float = 0.5
    nu_elasticity: int = 3
    nu_p0: int = 5
    cycles_p0: int = 2
    max_coarse: int = 64


@dataclass(frozen=True, eq=False)
class SmwData:
    """Rank-one correction data for (A - y y^T)^-1."""

    y: np.ndarray
    ainv_y: np.ndarray
    denominator: float


@dataclass(frozen=True, eq=False)
class BlockInverse:
    name: str
    matrix: sp.csr_matrix
    apply: Callable[[np.ndarray], np.ndarray]
    info: dict


@dataclass(frozen=True, eq=False)
class Preconditioner:
    """Block-diagonal operator diag(B_1, ..., B_k) over consecutive DOF ranges."""

    kind: PrecondKind
    mode: SolveMode
    blocks: tuple[BlockInverse, ...]
    smw: SmwData | None = None

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(b.matrix.shape[0] for b in self.blocks)

    @property
    def shape(self) -> tuple[int, int]:
        n = sum(self.sizes)
        return (n, n)

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x, dtype=float)
        start = 0
        for blk in self.blocks:
            stop = start + blk.matrix.shape[0]
            out[start:stop] = blk.apply(x[start:stop])
            start = stop
        return out

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.apply, rmatvec=self.apply, dtype=float)

    def summary(self) -> dict:
        return {
            "kind": self.kind.value,
            "mode": self.mode.value,
            "blocks": [{"name": b.name, "size": b.matrix.shape[0], **b.info} for b in self.blocks],
            "smw_denominator": None if self.smw is None else self.smw.denominator,
        }


# ---------------------------------------------------------------------------
# Block inverses
# ---------------------------------------------------------------------------

def block_inverse(
    matrix: sp.spmatrix,
    name: str,
    mode: SolveMode,
    theta: float = 0.7,
    nu: int = 1,
    cycles: int = 1,
    max_coarse: int = 64,
) -> BlockInverse:
    """Exact factorization or AMG approximation of one SPD block."""
    matrix = sp.csr_matrix(matrix)
    try:
        if SolveMode(mode) is SolveMode.EXACT:
            factor = factorize_spd(matrix, block=name)
            return BlockInverse(name, matrix, factor.solve, {"factor_nnz": factor.nnz})
        h = amg_setup(matrix, theta=theta, nu=nu, cycles=cycles, max_coarse=max_coarse, block=name)
        return BlockInverse(name, matrix, h.apply, h.summary())
    except NotSPDError as e:
        raise e.with_block(name) from e


def elasticity_inverse(parts: SystemParts, mode: SolveMode, amg: AmgOptions | None = None) -> BlockInverse:
    """Displacement block; parameter-free, so one build serves a whole sweep."""
    amg = amg or AmgOptions()
    return block_inverse(
        parts.constrained_elasticity(), "elasticity", mode,
        theta=amg.theta_elasticity, nu=amg.nu_elasticity, max_coarse=amg.max_coarse,
    )


def smw_inverse(base: BlockInverse, y: np.ndarray) -> tuple[BlockInverse, SmwData]:
    """Apply (A - y y^T)^-1 through the Sherman-Morrison formula.

    A^-1 y is computed once here; each application costs one A^-1 solve.
    """
    ainv_y = base.apply(y)
    denom = 1.0 - float(y @ ainv_y)
    if abs(denom) < SMW_TOL:
        raise SmwBreakdownError(denom)
    if denom < 1e-8:
        logger.warning(f"SMW denominator close to breakdown: {denom:.3e}")
    data = SmwData(y=y, ainv_y=ainv_y, denominator=denom)

    def apply(b: np.ndarray) -> np.ndarray:
        ainv_b = base.apply(b)
        return ainv_b + ainv_y * (float(y @ ainv_b) / denom)

    info = {**base.info, "smw_denominator": denom}
    # matrix holds A; the represented operator is A - y y^T
    return BlockInverse(f"{base.name}+smw", base.matrix, apply, info), data


# ---------------------------------------------------------------------------
# Norm matrices
# ---------------------------------------------------------------------------

def robust_pressure_matrix(parts: SystemParts, params: Params) -> sp.csr_matrix:
    """Coupled (p_T, p_F) Riesz matrix of the fitted norm."""
    inv_lam = 1.0 / params.lam
    a = params.alpha * inv_lam
    QT = (inv_lam + 1.0) * parts.M_T
    QTF = -a * parts.M_TF
    QF = (params.alpha**2 * inv_lam + params.c0) * parts.M_F + params.kappa * parts.K + params.lp * parts.T
    Q = sp.bmat([[QT, QTF], [QTF.T, QF]], format="csr")
    return parts.constrained_pressure_block(Q, coupled=True)


def _fluid(parts: SystemParts, mass_weight: float, params: Params, interface: bool = True) -> sp.csr_matrix:
    F = mass_weight * parts.M_F + params.kappa * parts.K
    if interface:
        F = F + params.lp * parts.T
    return parts.constrained_pressure_block(F, coupled=False)


def mean_vector(parts: SystemParts) -> np.ndarray:
    """m / sqrt(|Omega|) with m_i the integral of the i-th total-pressure basis function."""
    return parts.m_T / np.sqrt(parts.area)


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def _assemble(
    kind: PrecondKind, mode: SolveMode, blocks: list[BlockInverse], smw: SmwData | None = None
) -> Preconditioner:
    P = Preconditioner(kind=kind, mode=SolveMode(mode), blocks=tuple(blocks), smw=smw)
    logger.debug(f"preconditioner {P.kind.value}/{P.mode.value}: blocks {P.sizes}")
    return P


def build_robust(
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    params = params or parts.params
    amg = amg or AmgOptions()
    E = elasticity or elasticity_inverse(parts, mode, amg)
    Q = block_inverse(
        robust_pressure_matrix(parts, params), "pressure", mode,
        theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse,
    )
    return _assemble(PrecondKind.ROBUST, mode, [E, Q])


def build_diag(
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    params = params or parts.params
    amg = amg or AmgOptions()
    E = elasticity or elasticity_inverse(parts, mode, amg)
    T = block_inverse(parts.M_T, "total_pressure", mode, theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse)
    F = block_inverse(
        _fluid(parts, params.c0, params), "fluid_pressure", mode,
        theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse,
    )
    return _assemble(PrecondKind.DIAG, mode, [E, T, F])


def _warn_unless_full_dirichlet(parts: SystemParts, kind: PrecondKind) -> None:
    bc = parts.mesh.boundary
    if bc is None or bc.regime is not BCRegime.FULL_DIRICHLET:
        logger.warning(f"{kind.value} preconditioner is meant for full displacement Dirichlet conditions")


def build_dirichlet_p0(
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    params = params or parts.params
    amg = amg or AmgOptions()
    _warn_unless_full_dirichlet(parts, PrecondKind.DIRICHLET_P0)
    E = elasticity or elasticity_inverse(parts, mode, amg)
    base = block_inverse(
        robust_pressure_matrix(parts, params), "pressure", mode,
        theta=amg.theta, nu=amg.nu_p0, cycles=amg.cycles_p0, max_coarse=amg.max_coarse,
    )
    y = np.concatenate([mean_vector(parts), np.zeros(parts.spaces.nF)])
    Q, smw = smw_inverse(base, y)
    return _assemble(PrecondKind.DIRICHLET_P0, mode, [E, Q], smw)


def build_diag_p0(
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    params = params or parts.params
    amg = amg or AmgOptions()
    _warn_unless_full_dirichlet(parts, PrecondKind.DIAG_P0)
    E = elasticity or elasticity_inverse(parts, mode, amg)
    base = block_inverse(
        (1.0 / params.lam + 1.0) * parts.M_T, "total_pressure", mode,
        theta=amg.theta, nu=amg.nu_p0, cycles=amg.cycles_p0, max_coarse=amg.max_coarse,
    )
    T, smw = smw_inverse(base, mean_vector(parts))
    F = block_inverse(
        _fluid(parts, params.alpha**2 / params.lam, params), "fluid_pressure", mode,
        theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse,
    )
    return _assemble(PrecondKind.DIAG_P0, mode, [E, T, F], smw)


def build_naive_single(
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    params = params or parts.params
    amg = amg or AmgOptions()
    E = elasticity or elasticity_inverse(parts, mode, amg)
    T = block_inverse(parts.M_T, "total_pressure", mode, theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse)
    F = block_inverse(
        _fluid(parts, params.alpha**2 / params.lam, params, interface=False), "fluid_pressure", mode,
        theta=amg.theta, nu=amg.nu, max_coarse=amg.max_coarse,
    )
    return _assemble(PrecondKind.NAIVE_SINGLE, mode, [E, T, F])


BUILDERS = {
    PrecondKind.ROBUST: build_robust,
    PrecondKind.DIAG: build_diag,
    PrecondKind.DIRICHLET_P0: build_dirichlet_p0,
    PrecondKind.DIAG_P0: build_diag_p0,
    PrecondKind.NAIVE_SINGLE: build_naive_single,
}


def build_preconditioner(
    kind: PrecondKind | str,
    parts: SystemParts,
    params: Params | None = None,
    mode: SolveMode | str = SolveMode.EXACT,
    amg: AmgOptions | None = None,
    elasticity: BlockInverse | None = None,
) -> Preconditioner:
    return BUILDERS[PrecondKind(kind)](parts, params, SolveMode(mode), amg, elasticity)
