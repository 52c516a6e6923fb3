"""Unknown-based classical (Ruge-Stueben) AMG used as an inexact block inverse."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from pyamg.classical.interpolate import direct_interpolation
from pyamg.classical.split import RS
from pyamg.relaxation.relaxation import gauss_seidel
from pyamg.strength import classical_strength_of_connection

from cbcporo.core.errors import NotSPDError
from cbcporo.core.krylov import Factor, factorize_spd

logger = logging.getLogger(__name__)

MAX_COARSE = 64
MAX_LEVELS = 25
COARSE_SHIFT = 1e-14


@dataclass(frozen=True, eq=False)
class AmgLevel:
    A: sp.csr_matrix
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    splitting: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class AmgHierarchy:
    levels: tuple[AmgLevel, ...]
    theta: float
    nu: int
    coarse_factor: Factor
    cycles: int = 1
    coarse_shift: float = 0.0
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.levels[0].A.shape

    def operator_complexity(self) -> float:
        return sum(lvl.A.nnz for lvl in self.levels) / max(self.levels[0].A.nnz, 1)

    def grid_complexity(self) -> float:
        return sum(lvl.A.shape[0] for lvl in self.levels) / self.levels[0].A.shape[0]

    def summary(self) -> dict[str, Any]:
        return {
            "levels": [{"size": int(lvl.A.shape[0]), "nnz": int(lvl.A.nnz)} for lvl in self.levels],
            "num_levels": self.num_levels,
            "operator_complexity": self.operator_complexity(),
            "grid_complexity": self.grid_complexity(),
            "theta": self.theta,
            "nu": self.nu,
            "cycles": self.cycles,
            "coarse_shift": self.coarse_shift,
            **self.meta,
        }

    def apply(self, r: np.ndarray) -> np.ndarray:
        return amg_apply(self, r)

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.apply, rmatvec=self.apply, dtype=float)


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------

def _strength(A: sp.csr_matrix, theta: float) -> sp.csr_matrix:
    C = classical_strength_of_connection(A, theta=theta, norm="min")
    C = (C - sp.diags(C.diagonal())).tocsr()
    C.eliminate_zeros()
    return C


def _coarse_factor(A: sp.csr_matrix, block: str | None) -> tuple[Factor, float]:
    try:
        return factorize_spd(A, block=block), 0.0
    except NotSPDError:
        shift = COARSE_SHIFT * float(np.max(np.abs(A.diagonal())))
        logger.warning(f"AMG coarse level ({A.shape[0]} dofs) singular; shifting diagonal by {shift:.3e}")
        return factorize_spd(A + shift * sp.identity(A.shape[0], format="csr"), block=block), shift


def amg_setup(
    A: sp.spmatrix,
    theta: float = 0.25,
    nu: int = 1,
    cycles: int = 1,
    max_coarse: int = MAX_COARSE,
    max_levels: int = MAX_LEVELS,
    block: str | None = None,
) -> AmgHierarchy:
    """Ruge-Stueben hierarchy with direct interpolation and Galerkin coarse operators."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    A = sp.csr_matrix(A, dtype=float)
    A.sort_indices()

    levels: list[AmgLevel] = []
    stop_reason = "max_levels"
    while len(levels) < max_levels - 1:
        if A.shape[0] <= max_coarse:
            stop_reason = "max_coarse"
            break
        C = _strength(A, theta)
        if C.nnz == 0:
            stop_reason = "no_strong_connections"
            break
        splitting = RS(C, second_pass=False)
        num_c = int(np.sum(splitting))
        if num_c == 0 or num_c == len(splitting):
            stop_reason = "degenerate_splitting"
            break
        P = direct_interpolation(A, C, splitting).tocsr()
        R = P.T.tocsr()
        levels.append(AmgLevel(A=A, P=P, R=R, splitting=splitting.astype(bool)))
        A = (R @ A @ P).tocsr()
        A = 0.5 * (A + A.T)
        A = A.tocsr()
        A.sort_indices()

    levels.append(AmgLevel(A=A))
    factor, shift = _coarse_factor(A, block)
    h = AmgHierarchy(
        levels=tuple(levels),
        theta=theta,
        nu=nu,
        coarse_factor=factor,
        cycles=cycles,
        coarse_shift=shift,
        meta={"stop_reason": stop_reason},
    )
    logger.debug(
        f"AMG{f' ({block})' if block else ''}: {h.num_levels} levels "
        f"{[lvl.A.shape[0] for lvl in h.levels]}, op. complexity {h.operator_complexity():.2f}"
    )
    return h


# ---------------------------------------------------------------------------
# Cycling
# ---------------------------------------------------------------------------

def _cycle(h: AmgHierarchy, lvl: int, b: np.ndarray) -> np.ndarray:
    if lvl == h.num_levels - 1:
        return h.coarse_factor.solve(b)
    level = h.levels[lvl]
    x = np.zeros_like(b)
    gauss_seidel(level.A, x, b, iterations=h.nu, sweep="forward")
    r = b - level.A @ x
    x += level.P @ _cycle(h, lvl + 1, level.R @ r)
    gauss_seidel(level.A, x, b, iterations=h.nu, sweep="backward")
    return x


def vcycle(h: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    """One symmetric V(nu, nu) cycle from a zero initial guess."""
    return _cycle(h, 0, np.ascontiguousarray(r, dtype=float))


def amg_apply(h: AmgHierarchy, r: np.ndarray) -> np.ndarray:
    """``h.cycles`` V-cycles as a stationary iteration from zero.

    Each further cycle keeps the application symmetric (two cycles give
    2V - VAV).
    """
    r = np.ascontiguousarray(r, dtype=float)
    x = vcycle(h, r)
    A = h.levels[0].A
    for _ in range(h.cycles - 1):
        x = x + vcycle(h, r - A @ x)
    return x
