"""SPD factorization, preconditioned MinRes and PCG with a Lanczos condition estimate."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Any, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cbcporo.core.errors import NotSPDError

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAXIT = 250
PIVOT_RTOL = 16 * np.finfo(float).eps

OperatorLike = Union[spla.LinearOperator, sp.spmatrix, np.ndarray]


@dataclass(frozen=True)
class KrylovReport:
    method: str
    iterations: int
    converged: bool
    residual_history: tuple[float, ...]
    cond_estimate: float | None = None

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["residual_history"] = list(self.residual_history)
        return data

    @property
    def relative_residual(self) -> float:
        first = self.residual_history[0]
        return self.residual_history[-1] / first if first > 0 else 0.0


def as_operator(A: OperatorLike | None, n: int | None = None) -> spla.LinearOperator:
    if A is None:
        return spla.LinearOperator((n, n), matvec=lambda x: x, dtype=float)
    return spla.aslinearoperator(A)


# ---------------------------------------------------------------------------
# Factorization
# ---------------------------------------------------------------------------

class Factor:
    """Sparse symmetric factorization with ``solve(b)``."""

    def __init__(self, lu: spla.SuperLU, n: int):
        self._lu = lu
        self.n = n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def nnz(self) -> int:
        return int(self._lu.L.nnz + self._lu.U.nnz)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self._lu.solve(np.asarray(b, dtype=float))

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.solve, rmatvec=self.solve, dtype=float)


def factorize_spd(A: sp.spmatrix, block: str | None = None) -> Factor:
    """Fill-reducing symmetric factorization of an SPD matrix.

    Pivoting is restricted to the diagonal so the U diagonal carries the
    LDL^T pivots; a non-positive one raises ``NotSPDError`` with its
    index in the original ordering.
    """
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    try:
        lu = spla.splu(
            A,
            permc_spec="MMD_AT_PLUS_A",
            diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError as e:
        logger.debug(f"factorization failed: {e}")
        raise NotSPDError(-1, block=block) from e

    pivots = lu.U.diagonal()
    # pivots at rounding level of a zero pivot count as non-positive
    floor = PIVOT_RTOL * float(np.max(np.abs(A.diagonal()), initial=0.0))
    bad = np.flatnonzero(~(pivots > floor))
    if len(bad):
        k = int(bad[0])
        original = int(np.flatnonzero(lu.perm_c == k)[0])
        raise NotSPDError(original, block=block, value=float(pivots[k]))
    logger.debug(f"factorized {n}x{n} SPD matrix{f' ({block})' if block else ''}: {lu.L.nnz + lu.U.nnz} nnz")
    return Factor(lu, n)


# ---------------------------------------------------------------------------
# MinRes
# ---------------------------------------------------------------------------

def minres(
    A: OperatorLike,
    B: OperatorLike | None,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: int = DEFAULT_MAXIT,
) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned MinRes from a zero initial guess.

    Stops when the preconditioned residual norm sqrt(r^T B r) has dropped
    by ``tol`` relative to the initial one. A vanishing Lanczos coefficient
    means the Krylov space is invariant and is counted as convergence.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    A = as_operator(A)
    B = as_operator(B, n)

    x = np.zeros(n)
    v_old = np.zeros(n)
    v = b.copy()
    z = B.matvec(v)
    gamma = float(np.sqrt(max(z @ v, 0.0)))
    history = [gamma]
    if gamma == 0.0:
        return x, KrylovReport("minres", 0, True, tuple(history))

    gamma1 = gamma
    gamma_old = 1.0
    eta = gamma
    s_old = s = 0.0
    c_old = c = 1.0
    w_old = np.zeros(n)
    w = np.zeros(n)
    converged = False
    iterations = 0

    for j in range(1, maxit + 1):
        iterations = j
        z = z / gamma
        Az = A.matvec(z)
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = B.matvec(v_new)
        zv = float(z_new @ v_new)
        if zv < 0.0:
            if zv < -1e-12 * gamma1**2:
                logger.warning(f"minres: preconditioner not positive definite (z.v = {zv:.3e})")
            zv = 0.0
        gamma_new = float(np.sqrt(zv))

        a0 = c * delta - c_old * s * gamma
        a1 = float(np.hypot(a0, gamma_new))
        if a1 == 0.0:
            logger.warning(f"minres: singular tridiagonal at iteration {j}")
            break
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_new = a0 / a1
        s_new = gamma_new / a1

        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + (c_new * eta) * w_new
        eta = -s_new * eta
        history.append(abs(eta))

        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new
        w_old, w = w, w_new
        c_old, c = c, c_new
        s_old, s = s, s_new

        if abs(eta) <= tol * gamma1 or gamma_new == 0.0:
            converged = True
            break

    if not converged:
        logger.warning(f"minres: no convergence after {maxit} iterations (rel. residual {abs(eta) / gamma1:.3e})")
    return x, KrylovReport("minres", iterations, converged, tuple(history))


# ---------------------------------------------------------------------------
# PCG with Lanczos estimate
# ---------------------------------------------------------------------------

def lanczos_condition(alphas: list[float], betas: list[float]) -> float:
    """Spectral condition number of the CG Lanczos tridiagonal matrix."""
    m = len(alphas)
    if m == 0:
        return 1.0
    a = np.asarray(alphas)
    bt = np.asarray(betas[: m - 1])
    diag = 1.0 / a
    diag[1:] += bt / a[:-1]
    off = np.sqrt(bt) / a[:-1]
    eig = scipy.linalg.eigvalsh_tridiagonal(diag, off) if m > 1 else diag
    lo, hi = float(np.min(eig)), float(np.max(eig))
    return hi / lo if lo > 0 else float("inf")


def pcg_condition_estimate(
    A: OperatorLike,
    B: OperatorLike | None,
    b: np.ndarray,
    tol: float = DEFAULT_TOL,
    maxit: int = DEFAULT_MAXIT,
) -> tuple[np.ndarray, KrylovReport]:
    """Preconditioned CG; the report carries the condition number of B A."""
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    A = as_operator(A)
    B = as_operator(B, n)

    x = np.zeros(n)
    r = b.copy()
    z = B.matvec(r)
    rz = float(r @ z)
    history = [float(np.sqrt(max(rz, 0.0)))]
    if rz <= 0.0:
        return x, KrylovReport("pcg", 0, rz == 0.0, tuple(history), cond_estimate=1.0)

    rz0 = rz
    p = z.copy()
    alphas: list[float] = []
    betas: list[float] = []
    converged = False

    for _ in range(maxit):
        Ap = A.matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            logger.warning(f"pcg: operator not positive definite (p.Ap = {pAp:.3e})")
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = B.matvec(r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        history.append(float(np.sqrt(max(rz_new, 0.0))))
        rz = rz_new
        if np.sqrt(max(rz, 0.0) / rz0) <= tol:
            converged = True
            break
        p = z + beta * p

    if not converged:
        logger.warning(f"pcg: no convergence after {len(alphas)} iterations")
    cond = lanczos_condition(alphas, betas)
    return x, KrylovReport("pcg", len(alphas), converged, tuple(history), cond_estimate=cond)
