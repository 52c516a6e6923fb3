"""Tests for cbcporo.core.krylov."""

import numpy as np
import pytest
import scipy.sparse as sp

from cbcporo.core.errors import NotSPDError
from cbcporo.core.krylov import (
    KrylovReport,
    factorize_spd,
    lanczos_condition,
    minres,
    pcg_condition_estimate,
)


def laplace_1d(n: int) -> sp.csr_matrix:
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def indefinite(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eig = np.concatenate([np.linspace(1.0, 5.0, n // 2), -np.linspace(1.0, 3.0, n - n // 2)])
    return Q @ np.diag(eig) @ Q.T


class TestFactorizeSpd:
    def test_solves(self):
        A = laplace_1d(30)
        b = np.arange(30.0)
        factor = factorize_spd(A)
        assert np.allclose(A @ factor.solve(b), b)
        assert factor.shape == (30, 30)
        assert factor.nnz > 0

    def test_reports_negative_pivot(self):
        with pytest.raises(NotSPDError) as exc:
            factorize_spd(sp.diags([1.0, -1.0, 2.0]), block="test")
        assert exc.value.pivot == 1
        assert exc.value.block == "test"
        assert "not SPD in block 'test'" in str(exc.value)

    def test_singular(self):
        A = laplace_1d(10).tolil()
        A[0, 0] = 1.0
        A[9, 9] = 1.0
        with pytest.raises(NotSPDError):
            factorize_spd(A.tocsr())


class TestMinres:
    def test_spd(self):
        A = laplace_1d(50)
        b = np.ones(50)
        x, report = minres(A, None, b, tol=1e-12, maxit=200)
        assert report.converged
        assert np.linalg.norm(b - A @ x) < 1e-8 * np.linalg.norm(b)

    def test_indefinite(self):
        A = indefinite(40)
        b = np.random.default_rng(1).standard_normal(40)
        x, report = minres(A, None, b, tol=1e-12)
        assert report.converged
        assert np.allclose(A @ x, b, atol=1e-9)

    def test_matching_preconditioner_converges_at_once(self):
        d = np.concatenate([np.linspace(1.0, 10.0, 10), -np.linspace(1.0, 5.0, 10)])
        D = np.diag(d)
        _, plain = minres(D, None, np.ones(20), tol=1e-10)
        _, report = minres(D, np.diag(1.0 / np.abs(d)), np.ones(20), tol=1e-10)
        assert report.converged
        assert report.iterations <= 2
        assert plain.iterations > report.iterations

    def test_residual_history_monotone(self):
        _, report = minres(indefinite(30, seed=2), None, np.ones(30), tol=1e-12)
        hist = np.array(report.residual_history)
        assert np.all(np.diff(hist) <= 1e-12 * hist[0])
        assert report.relative_residual <= 1e-12

    def test_zero_rhs(self):
        x, report = minres(laplace_1d(5), None, np.zeros(5))
        assert report.iterations == 0
        assert report.converged
        assert np.all(x == 0.0)

    def test_iteration_cap(self):
        _, report = minres(laplace_1d(100), None, np.ones(100), tol=1e-14, maxit=3)
        assert report.iterations == 3
        assert not report.converged


class TestPcgConditionEstimate:
    def test_unpreconditioned_diagonal(self):
        A = sp.diags(np.arange(1.0, 101.0))
        _, report = pcg_condition_estimate(A, None, np.ones(100), tol=1e-10, maxit=200)
        assert report.converged
        assert report.cond_estimate == pytest.approx(100.0, rel=1e-2)

    def test_jacobi_is_exact_on_diagonal(self):
        d = np.arange(1.0, 101.0)
        _, report = pcg_condition_estimate(sp.diags(d), sp.diags(1.0 / d), np.ones(100))
        assert report.iterations == 1
        assert report.cond_estimate == pytest.approx(1.0)

    def test_agrees_with_minres_on_spd_block(self):
        A = (laplace_1d(60) + sp.diags(np.linspace(0.1, 2.0, 60))).tocsr()
        jacobi = sp.diags(1.0 / A.diagonal())
        b = np.random.default_rng(3).standard_normal(60)
        x_cg, cg = pcg_condition_estimate(A, jacobi, b, tol=1e-12, maxit=200)
        x_mr, mr = minres(A, jacobi, b, tol=1e-12, maxit=200)
        assert cg.converged and mr.converged
        assert np.linalg.norm(x_cg - x_mr) <= 1e-8 * np.linalg.norm(x_cg)

    def test_lanczos_empty(self):
        assert lanczos_condition([], []) == 1.0

    def test_report_to_dict(self):
        report = KrylovReport("pcg", 2, True, (1.0, 0.5), cond_estimate=3.0)
        data = report.to_dict()
        assert data["residual_history"] == [1.0, 0.5]
        assert data["cond_estimate"] == 3.0
        assert report.relative_residual == 0.5
