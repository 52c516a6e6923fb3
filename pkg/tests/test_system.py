"""Tests for cbcporo.core.system."""

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cbcporo.core.assembly import Params, assemble_loads
from cbcporo.core.discretization import build_spaces, error_norms, h1_norm
from cbcporo.core.errors import ConfigError
from cbcporo.core.krylov import minres
from cbcporo.core.mesh import BoundaryConfig, Subdomain, build_box_mesh, mark_boundaries
from cbcporo.core.system import (
    BlockOperator,
    DofPartition,
    PhysicalParams,
    assemble_parts,
    backward_euler_source,
    build_system,
    lame_from_young,
    manufactured_body_force,
    manufactured_fluid_source,
    manufactured_problem,
    nondimensional_groups,
    physical_from_material,
    rescale,
    rescale_nondimensional,
    solve_direct,
)

UNIT = Params(lam=1.0, alpha=1.0, kappa=1.0, c0=1.0, lp=1.0)


@pytest.fixture
def parts():
    mesh = mark_boundaries(build_box_mesh(4), BoundaryConfig.mixed())
    return assemble_parts(mesh, build_spaces(mesh), UNIT)


class TestScaling:
    def test_lame_from_young(self):
        mu, lam = lame_from_young(2.5, 0.25)
        assert mu == pytest.approx(1.0)
        assert lam == pytest.approx(1.0)

    def test_rescale_divides_by_two_mu(self):
        p = PhysicalParams(mu=2.0, lam=8.0, alpha=4.0, kappa=1.0, c0=2.0, lp=3.0, tau=2.0)
        scaled = rescale(p)
        assert scaled.lam == pytest.approx(2.0)
        assert scaled.alpha == pytest.approx(1.0)
        assert scaled.kappa == pytest.approx(0.5)
        assert scaled.c0 == pytest.approx(0.5)
        assert scaled.lp == pytest.approx(1.5)

    def test_unit_scales_give_unit_groups(self):
        p = PhysicalParams(mu=0.5, lam=1.0, alpha=1.0, kappa=1.0, c0=1.0, lp=1.0)
        groups = nondimensional_groups(p)
        assert all(v == pytest.approx(1.0) for v in groups)
        params = rescale_nondimensional(groups)
        assert params.as_dict() == pytest.approx(
            {"lambda": 1.0, "alpha": 1.0, "kappa": 1.0, "c0": 1.0, "lp": 1.0}
        )

    def test_displacement_scale_default(self):
        p = physical_from_material(2.5, 0.25, alpha=1.0, c0=0.0, lp=1.0, kappa=1.0, L=2.0, p0=3.0)
        assert p.d0 == pytest.approx(3.0)

    def test_permeability_over_viscosity(self):
        p = physical_from_material(2.5, 0.25, alpha=1.0, c0=0.0, lp=1.0, permeability=1e-15)
        assert p.kappa == pytest.approx(1e-12)

    def test_exactly_one_conductivity(self):
        with pytest.raises(ConfigError, match="exactly one"):
            physical_from_material(1.0, 0.3, alpha=1.0, c0=0.0, lp=1.0)
        with pytest.raises(ConfigError):
            physical_from_material(1.0, 0.3, alpha=1.0, c0=0.0, lp=1.0, kappa=1.0, permeability=1.0)

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError, match="mu"):
            PhysicalParams(mu=0.0, lam=1.0, alpha=1.0, kappa=1.0, c0=0.0, lp=1.0)


class TestBlockOperator:
    def test_partition(self):
        part = DofPartition(4, 2, 3)
        assert part.sizes == (4, 2, 3)
        assert part.offsets == (0, 4, 6, 9)
        assert part.total == 9
        blocks = part.split(np.arange(9.0))
        assert list(blocks.pT) == [4.0, 5.0]

    def test_shape_mismatch(self):
        part = DofPartition(2, 1, 1)
        with pytest.raises(ConfigError, match="block"):
            BlockOperator(((sp.identity(3, format="csr"), None, None), (None,) * 3, (None,) * 3), part)

    def test_matvec_matches_assembled(self, parts):
        op, _ = parts.operator()
        x = np.random.default_rng(0).standard_normal(op.shape[0])
        assert np.allclose(op.matvec(x), op.to_csr() @ x, atol=1e-12)


class TestSystem:
    def test_operator_symmetric(self, parts):
        A = parts.operator()[0].to_csr()
        assert abs(A - A.T).max() < 1e-12

    def test_build_system_partition(self):
        mesh = build_box_mesh(4)
        op, part = build_system(mesh, build_spaces(mesh), UNIT, bc=BoundaryConfig.full_dirichlet())
        spaces = build_spaces(mesh)
        assert part == DofPartition(spaces.V.ndofs, spaces.nT, spaces.nF)
        assert op.shape == (part.total, part.total)

    def test_unmarked_mesh(self):
        mesh = build_box_mesh(2)
        with pytest.raises(ConfigError, match="mark_boundaries"):
            assemble_parts(mesh, build_spaces(mesh), UNIT)

    def test_with_params_reuses_matrices(self, parts):
        other = parts.with_params(Params(lam=10.0, alpha=0.5, kappa=1e-3, c0=0.0, lp=1e-5))
        assert other.E is parts.E
        assert other.params.lam == 10.0

    def test_dirichlet_rows(self, parts):
        op, _ = parts.operator()
        E = op.block(0, 0).toarray()
        k = parts.disp_bc[0]
        expected = np.zeros(E.shape[0])
        expected[k] = 1.0
        assert np.array_equal(E[k], expected)
        assert op.block(1, 0).toarray()[:, k].max() == 0.0

    def test_decoupled_limit(self, parts):
        op, _ = parts.with_params(Params(lam=1.0, alpha=0.0, kappa=1.0, c0=1.0, lp=0.0)).operator()
        assert op.block(1, 2).count_nonzero() == 0
        assert op.block(2, 1).count_nonzero() == 0
        A33 = op.block(2, 2).tocsr()
        ni = parts.spaces.QF_intra.ndofs
        assert A33[:ni, ni:].count_nonzero() == 0
        assert A33[ni:, :ni].count_nonzero() == 0

    def test_minres_matches_direct(self, parts):
        from cbcporo.core.precond import PrecondKind, SolveMode, build_preconditioner

        op, _ = parts.operator()
        rhs = np.random.default_rng(1).standard_normal(op.shape[0])
        rhs[parts.disp_bc] = 0.0
        rhs[op.partition.offsets[2] + parts.fluid_bc] = 0.0
        P = build_preconditioner(PrecondKind.ROBUST, parts, mode=SolveMode.EXACT)
        x, report = minres(op.as_linear_operator(), P.as_linear_operator(), rhs, tol=1e-12)
        assert report.converged
        direct = solve_direct(op, rhs)
        assert np.linalg.norm(x - direct) <= 1e-8 * np.linalg.norm(direct)


class TestBackwardEuler:
    def test_history_terms(self, parts):
        phys = PhysicalParams(mu=0.5, lam=1.0, alpha=2.0, kappa=1.0, c0=3.0, lp=1.0)
        scaled = rescale(phys)
        prev = np.random.default_rng(2).standard_normal(parts.partition.total)
        blocks = parts.partition.split(prev)
        out = backward_euler_source(prev, parts, phys)
        expected = -scaled.c0 * (parts.M_F @ blocks.pF) + scaled.alpha * (parts.B_F @ blocks.d)
        assert np.allclose(out, expected)

    def test_source_scaled_by_time_step(self, parts):
        phys = PhysicalParams(mu=1.0, lam=1.0, alpha=1.0, kappa=1.0, c0=0.0, lp=1.0, tau=4.0)
        g = {Subdomain.INTRA: lambda x, y: np.ones_like(x), Subdomain.EXTRA: lambda x, y: np.zeros_like(x)}
        out = backward_euler_source(None, parts, phys, g_phys=g)
        ni = parts.spaces.QF_intra.ndofs
        assert out[:ni].sum() == pytest.approx(-2.0 * 0.5)
        assert np.all(out[ni:] == 0.0)

    def test_nothing_to_add(self, parts):
        phys = PhysicalParams(mu=1.0, lam=1.0, alpha=1.0, kappa=1.0, c0=0.0, lp=1.0)
        assert np.all(backward_euler_source(None, parts, phys) == 0.0)

    def test_steady_state_is_a_fixed_point(self):
        phys = PhysicalParams(mu=0.5, lam=1.0, alpha=1.0, kappa=1.0, c0=0.5, lp=1.0)
        scaled = rescale(phys)
        bc = BoundaryConfig(displacement_dirichlet=("left",), fluid_dirichlet=("left", "right"))
        mesh = mark_boundaries(build_box_mesh(4), bc)
        parts = assemble_parts(mesh, build_spaces(mesh), scaled)
        loads = assemble_loads(
            manufactured_body_force(scaled.alpha), manufactured_fluid_source(scaled), None, parts.spaces, scaled
        )
        op, rhs = parts.operator(loads.concat())

        # equilibrium: the history terms of the state cancel its own storage terms
        nd, nT, nF = parts.partition.sizes
        history = sp.hstack(
            [scaled.alpha * parts.B_F, sp.csr_matrix((nF, nT)), -scaled.c0 * parts.M_F], format="lil"
        )
        history[parts.fluid_bc, :] = 0.0
        H = sp.vstack([sp.csr_matrix((nd + nT, parts.partition.total)), history.tocsr()], format="csr")
        steady = spla.spsolve((op.to_csr() - H).tocsc(), rhs)

        fluid = loads.pF + backward_euler_source(steady, parts, phys)
        op, rhs = parts.operator(np.concatenate([loads.d, loads.pT, fluid]))
        x = solve_direct(op, rhs)
        assert np.linalg.norm(x - steady) <= 1e-8 * np.linalg.norm(steady)


class TestManufactured:
    def test_rhs_consistent_with_boundary_data(self):
        problem = manufactured_problem(UNIT, 4)
        parts = problem.parts
        o = problem.partition.offsets
        assert np.all(np.isfinite(problem.rhs))
        assert len(parts.fluid_bc) > 0
        # boundary rows carry the exact values
        x = solve_direct(problem.operator, problem.rhs)
        assert np.allclose(x[parts.disp_bc], problem.rhs[parts.disp_bc])
        assert np.allclose(x[o[2] + parts.fluid_bc], problem.rhs[o[2] + parts.fluid_bc])

    def test_errors_decrease_under_refinement(self):
        errors = []
        for n in (8, 16):
            problem = manufactured_problem(UNIT, n)
            x = solve_direct(problem.operator, problem.rhs)
            blocks = problem.partition.split(x)
            V = problem.parts.spaces.V
            errors.append(h1_norm(*error_norms(V, blocks.d, problem.exact.d)))
        assert errors[0] / errors[1] > 2.5

    def test_fluid_pressure_jumps_across_membrane(self):
        problem = manufactured_problem(UNIT, 8)
        x = solve_direct(problem.operator, problem.rhs)
        spaces = problem.parts.spaces
        pF = problem.partition.split(x).pF
        ni = spaces.QF_intra.ndofs
        shared = (spaces.QF_intra.vertex_dofs >= 0) & (spaces.QF_extra.vertex_dofs >= 0)
        jump = pF[ni + spaces.QF_extra.vertex_dofs[shared]] - pF[spaces.QF_intra.vertex_dofs[shared]]
        assert np.allclose(jump, 1.0, atol=0.1)
