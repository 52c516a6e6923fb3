"""Tests for cbcporo.core.precond."""

import logging

import numpy as np
import pytest
import scipy.sparse as sp

from cbcporo.core.assembly import Params
from cbcporo.core.discretization import build_spaces
from cbcporo.core.errors import NotSPDError, SmwBreakdownError
from cbcporo.core.krylov import minres
from cbcporo.core.mesh import BoundaryConfig, build_box_mesh, mark_boundaries
from cbcporo.core.precond import (
    PrecondKind,
    SolveMode,
    block_inverse,
    build_preconditioner,
    mean_vector,
    robust_pressure_matrix,
    smw_inverse,
)
from cbcporo.core.system import assemble_parts

UNIT = Params(lam=1.0, alpha=1.0, kappa=1.0, c0=1.0, lp=1.0)
P0_KINDS = {PrecondKind.DIRICHLET_P0, PrecondKind.DIAG_P0}


def make_parts(n: int, bc: BoundaryConfig, params: Params = UNIT):
    mesh = mark_boundaries(build_box_mesh(n), bc)
    return assemble_parts(mesh, build_spaces(mesh), params)


def dense(P) -> np.ndarray:
    return np.column_stack([P.apply(e) for e in np.eye(P.shape[0])])


class TestBlockInverse:
    @pytest.mark.parametrize("mode", list(SolveMode))
    def test_small_block_is_exact(self, mode):
        A = sp.diags([-np.ones(9), 4 * np.ones(10), -np.ones(9)], [-1, 0, 1], format="csr")
        inv = block_inverse(A, "test", mode)
        b = np.arange(10.0)
        assert np.allclose(A @ inv.apply(b), b)

    def test_not_spd_names_the_block(self):
        parts = make_parts(2, BoundaryConfig.mixed(), Params(lam=1.0, alpha=1.0, kappa=1.0, c0=0.0, lp=1.0))
        with pytest.raises(NotSPDError, match="fluid_pressure"):
            build_preconditioner(PrecondKind.DIAG, parts)


class TestShermanMorrison:
    def test_breakdown(self):
        base = block_inverse(sp.identity(3, format="csr"), "identity", SolveMode.EXACT)
        with pytest.raises(SmwBreakdownError):
            smw_inverse(base, np.array([1.0, 0.0, 0.0]))

    @pytest.mark.parametrize("n", [2, 4])
    def test_matches_dense_inverse(self, n):
        parts = make_parts(n, BoundaryConfig.full_dirichlet())
        Q = robust_pressure_matrix(parts, UNIT)
        y = np.concatenate([mean_vector(parts), np.zeros(parts.spaces.nF)])
        inv, data = smw_inverse(block_inverse(Q, "pressure", SolveMode.EXACT), y)
        target = Q.toarray() - np.outer(y, y)
        rng = np.random.default_rng(n)
        for _ in range(20):
            b = rng.standard_normal(Q.shape[0])
            expected = np.linalg.solve(target, b)
            assert np.linalg.norm(inv.apply(b) - expected) <= 1e-10 * np.linalg.norm(expected)
        assert 0.0 < data.denominator < 1.0
        assert inv.matrix is not None and inv.matrix.shape == Q.shape

    def test_mean_vector_has_unit_mass_norm(self):
        parts = make_parts(4, BoundaryConfig.full_dirichlet())
        y = mean_vector(parts)
        assert parts.area == pytest.approx(1.0)
        assert y @ np.linalg.solve(parts.M_T.toarray(), y) == pytest.approx(1.0)


class TestBuilders:
    @pytest.mark.parametrize("mode", list(SolveMode))
    @pytest.mark.parametrize("kind", list(PrecondKind))
    def test_symmetric_positive_definite(self, kind, mode):
        bc = BoundaryConfig.full_dirichlet() if kind in P0_KINDS else BoundaryConfig.mixed()
        parts = make_parts(2, bc)
        P = build_preconditioner(kind, parts, mode=mode)
        assert P.shape == (parts.partition.total,) * 2
        M = dense(P)
        assert np.abs(M - M.T).max() <= 1e-10 * np.abs(M).max()
        assert np.linalg.eigvalsh(0.5 * (M + M.T)).min() > 0.0

    def test_block_layout(self):
        parts = make_parts(2, BoundaryConfig.mixed())
        nd, nT, nF = parts.partition.sizes
        assert build_preconditioner("robust", parts).sizes == (nd, nT + nF)
        assert build_preconditioner("diag", parts).sizes == (nd, nT, nF)

    def test_p0_warns_outside_full_dirichlet(self, caplog):
        parts = make_parts(2, BoundaryConfig.mixed())
        with caplog.at_level(logging.WARNING, logger="cbcporo.core.precond"):
            build_preconditioner(PrecondKind.DIAG_P0, parts)
        assert "full displacement Dirichlet" in caplog.text

    def test_p0_quiet_under_full_dirichlet(self, caplog):
        parts = make_parts(2, BoundaryConfig.full_dirichlet())
        with caplog.at_level(logging.WARNING, logger="cbcporo.core.precond"):
            P = build_preconditioner(PrecondKind.DIRICHLET_P0, parts)
        assert "full displacement Dirichlet" not in caplog.text
        assert P.smw is not None

    def test_summary(self):
        parts = make_parts(2, BoundaryConfig.full_dirichlet())
        summary = build_preconditioner(PrecondKind.DIAG_P0, parts).summary()
        assert summary["kind"] == "diag_p0"
        assert summary["mode"] == "exact"
        assert [b["name"] for b in summary["blocks"]] == ["elasticity", "total_pressure+smw", "fluid_pressure"]
        assert summary["smw_denominator"] > 0.0

    def test_shared_elasticity_block(self):
        parts = make_parts(2, BoundaryConfig.mixed())
        first = build_preconditioner(PrecondKind.ROBUST, parts)
        second = build_preconditioner(PrecondKind.DIAG, parts, elasticity=first.blocks[0])
        assert second.blocks[0] is first.blocks[0]


class TestRobustness:
    @pytest.mark.parametrize(
        "params",
        [
            UNIT,
            Params(lam=1e3, alpha=1.0, kappa=1e-7, c0=1e-6, lp=1e-5),
            Params(lam=1e5, alpha=1e-2, kappa=1e3, c0=1e-6, lp=1e-9),
        ],
    )
    def test_iterations_bounded(self, params):
        parts = make_parts(8, BoundaryConfig.mixed(), params)
        op, _ = parts.operator()
        rhs = np.random.default_rng(3).standard_normal(op.shape[0])
        rhs[parts.disp_bc] = 0.0
        P = build_preconditioner(PrecondKind.ROBUST, parts)
        _, report = minres(op.as_linear_operator(), P.as_linear_operator(), rhs, tol=1e-8)
        assert report.converged
        assert report.iterations <= 80
