"""Block system of the two-domain Biot problem: rescaling, assembly, manufactured data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from cbcporo.core.assembly import (
    BlockVector,
    Params,
    SourceField,
    assemble_div_coupling,
    assemble_elasticity,
    assemble_interface_jump,
    assemble_interface_traction,
    assemble_loads,
    assemble_mass,
    assemble_pressure_stiffness,
    boundary_dofs,
    constrain,
)
from cbcporo.core.discretization import AnalyticField, Spaces, build_spaces
from cbcporo.core.errors import ConfigError
from cbcporo.core.mesh import SEGMENTS, BoundaryConfig, FacetTag, Mesh, Subdomain, build_box_mesh, mark_boundaries

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Physical parameters and scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PhysicalParams:
    """Material parameters in SI units plus characteristic scales."""

    mu: float
    lam: float
    alpha: float
    kappa: float
    c0: float
    lp: float
    tau: float = 1.0
    L: float = 1.0
    p0: float = 1.0
    d0: float = 1.0

    def __post_init__(self) -> None:
        for name in ("mu", "lam", "alpha", "kappa", "lp", "tau", "L", "p0", "d0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.c0 >= 0:
            raise ConfigError(f"c0 must be non-negative, got {self.c0}")


class NondimGroups(NamedTuple):
    Da: float
    S: float
    BW: float
    E: float
    Cp: float


def lame_from_young(young: float, poisson: float) -> tuple[float, float]:
    """(mu, lambda) from Young's modulus and Poisson's ratio."""
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


def physical_from_material(
    young: float,
    poisson: float,
    alpha: float,
    c0: float,
    lp: float,
    *,
    kappa: float | None = None,
    permeability: float | None = None,
    fluid_viscosity: float = 1e-3,
    tau: float = 1.0,
    L: float = 1.0,
    p0: float = 1.0,
    d0: float | None = None,
) -> PhysicalParams:
    """Build ``PhysicalParams`` from engineering inputs.

    Give either the hydraulic conductivity ``kappa`` or the intrinsic
    ``permeability`` (kappa = K / mu_f). Without ``d0`` the displacement
    scale balances solid stress against fluid pressure, d0 = alpha p0 L / 2 mu.
    """
    if (kappa is None) == (permeability is None):
        raise ConfigError("give exactly one of kappa and permeability")
    if kappa is None:
        kappa = permeability / fluid_viscosity
    mu, lam = lame_from_young(young, poisson)
    if d0 is None:
        d0 = alpha * p0 * L / (2.0 * mu)
    return PhysicalParams(mu=mu, lam=lam, alpha=alpha, kappa=kappa, c0=c0, lp=lp, tau=tau, L=L, p0=p0, d0=d0)


def rescale(p: PhysicalParams) -> Params:
    two_mu = 2.0 * p.mu
    return Params(
        lam=p.lam / two_mu,
        alpha=p.alpha / two_mu,
        kappa=p.kappa * p.tau / two_mu,
        c0=p.c0 / two_mu,
        lp=p.lp * p.tau / two_mu,
    )


def nondimensional_groups(p: PhysicalParams) -> NondimGroups:
    two_mu = 2.0 * p.mu
    return NondimGroups(
        Da=p.kappa * p.p0**2 * p.tau / (two_mu * p.d0**2),
        S=p.c0 * p.p0**2 * p.L**2 / (two_mu * p.d0**2),
        BW=p.alpha * p.p0 * p.L / (two_mu * p.d0),
        E=p.lam / two_mu,
        Cp=p.L * p.lp / p.kappa,
    )


def rescale_nondimensional(groups: NondimGroups) -> Params:
    """Unit-scaled parameters: kappa=Da, c0=S, alpha=BW, lambda=E, L_p=Cp*Da."""
    return Params(lam=groups.E, alpha=groups.BW, kappa=groups.Da, c0=groups.S, lp=groups.Cp * groups.Da)


# ---------------------------------------------------------------------------
# Block operator
# ---------------------------------------------------------------------------

class DofPartition(NamedTuple):
    nd: int
    nT: int
    nF: int

    @property
    def sizes(self) -> tuple[int, int, int]:
        return (self.nd, self.nT, self.nF)

    @property
    def offsets(self) -> tuple[int, int, int, int]:
        return (0, self.nd, self.nd + self.nT, self.nd + self.nT + self.nF)

    @property
    def total(self) -> int:
        return self.nd + self.nT + self.nF

    def split(self, x: np.ndarray) -> BlockVector:
        o = self.offsets
        return BlockVector(x[o[0]:o[1]], x[o[1]:o[2]], x[o[2]:o[3]])


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """3x3 block operator over (d, p_T, p_F); ``None`` marks a zero block."""

    blocks: tuple[tuple[sp.csr_matrix | None, ...], ...]
    partition: DofPartition

    def __post_init__(self) -> None:
        sizes = self.partition.sizes
        for i in range(3):
            for j in range(3):
                blk = self.blocks[i][j]
                if blk is not None and blk.shape != (sizes[i], sizes[j]):
                    raise ConfigError(
                        f"block ({i + 1},{j + 1}) has shape {blk.shape}, expected {(sizes[i], sizes[j])}"
                    )

    def block(self, i: int, j: int) -> sp.csr_matrix | None:
        return self.blocks[i][j]

    def to_csr(self) -> sp.csr_matrix:
        sizes = self.partition.sizes
        grid = [
            [self.blocks[i][j] if self.blocks[i][j] is not None else sp.csr_matrix((sizes[i], sizes[j]))
             for j in range(3)]
            for i in range(3)
        ]
        A = sp.bmat(grid, format="csr")
        A.sort_indices()
        return A

    @property
    def shape(self) -> tuple[int, int]:
        n = self.partition.total
        return (n, n)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        parts = self.partition.split(x)
        out = [np.zeros(s) for s in self.partition.sizes]
        for i in range(3):
            for j in range(3):
                blk = self.blocks[i][j]
                if blk is not None:
                    out[i] += blk @ parts[j]
        return np.concatenate(out)

    def as_linear_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.matvec, rmatvec=self.matvec, dtype=float)


# ---------------------------------------------------------------------------
# System parts
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SystemParts:
    """Parameter-free matrices of one mesh and the parameters that weight them.

    Pressure blocks are ordered (intra, extra). ``K`` is the fluid stiffness
    with kappa = 1 and ``T`` the membrane jump form with L_p = 1, so that
    ``with_params`` re-weights without reassembly.
    """

    mesh: Mesh
    spaces: Spaces
    params: Params
    E: sp.csr_matrix
    B: sp.csr_matrix
    M_T: sp.csr_matrix
    M_TF: sp.csr_matrix
    M_F: sp.csr_matrix
    K: sp.csr_matrix
    T: sp.csr_matrix
    B_F: sp.csr_matrix
    m_T: np.ndarray
    disp_bc: np.ndarray
    fluid_bc: np.ndarray
    area: float = 1.0

    @property
    def partition(self) -> DofPartition:
        return DofPartition(self.spaces.V.ndofs, self.spaces.nT, self.spaces.nF)

    def with_params(self, params: Params) -> SystemParts:
        return replace(self, params=params)

    # -- blocks before boundary elimination --------------------------------

    def raw_blocks(self) -> tuple[tuple[sp.csr_matrix | None, ...], ...]:
        p = self.params
        inv_lam = 1.0 / p.lam
        A22 = -inv_lam * self.M_T
        A23 = (p.alpha * inv_lam) * self.M_TF
        A33 = -(p.alpha**2 * inv_lam + p.c0) * self.M_F - p.kappa * self.K - p.lp * self.T
        A12 = self.B.T.tocsr()
        return (
            (self.E, A12, None),
            (self.B, A22.tocsr(), A23.tocsr()),
            (None, A23.T.tocsr(), A33.tocsr()),
        )

    def operator(
        self,
        rhs: np.ndarray | None = None,
        d_values: np.ndarray | None = None,
        pF_values: np.ndarray | None = None,
    ) -> tuple[BlockOperator, np.ndarray | None]:
        """Dirichlet-eliminated operator and (optionally) right-hand side.

        ``d_values``/``pF_values`` are full-length coefficient vectors whose
        entries on the constrained DOFs give the boundary data.
        """
        part = self.partition
        raw = self.raw_blocks()
        fixed = (self.disp_bc, np.zeros(0, dtype=np.int64), self.fluid_bc)

        if rhs is not None:
            x_bc = np.zeros(part.total)
            o = part.offsets
            if d_values is not None:
                x_bc[self.disp_bc] = d_values[self.disp_bc]
            if pF_values is not None:
                x_bc[o[2] + self.fluid_bc] = pF_values[self.fluid_bc]
            rhs = np.array(rhs, dtype=float) - BlockOperator(raw, part).matvec(x_bc)
            rhs[self.disp_bc] = x_bc[self.disp_bc]
            rhs[o[2] + self.fluid_bc] = x_bc[o[2] + self.fluid_bc]

        blocks = []
        for i in range(3):
            row = []
            for j in range(3):
                blk = raw[i][j]
                if blk is not None and (len(fixed[i]) or len(fixed[j])):
                    blk = constrain(blk, fixed[i], fixed[j], unit_diagonal=(i == j))
                row.append(blk)
            blocks.append(tuple(row))
        return BlockOperator(tuple(blocks), part), rhs

    def constrained_pressure_block(self, matrix: sp.spmatrix, coupled: bool) -> sp.csr_matrix:
        """Impose the fluid Dirichlet DOFs on a preconditioner pressure block."""
        if not len(self.fluid_bc):
            return sp.csr_matrix(matrix)
        shift = self.spaces.nT if coupled else 0
        return constrain(matrix, self.fluid_bc + shift)

    def constrained_elasticity(self) -> sp.csr_matrix:
        return constrain(self.E, self.disp_bc)


def assemble_parts(mesh: Mesh, spaces: Spaces, params: Params) -> SystemParts:
    """Assemble every parameter-free matrix of the block system once."""
    if mesh.boundary is None:
        raise ConfigError("mesh has no boundary marking; call mark_boundaries first")
    V, QTi, QTe, QFi, QFe = spaces

    E = assemble_elasticity(V)
    B = sp.vstack([assemble_div_coupling(V, QTi), assemble_div_coupling(V, QTe)], format="csr")
    B_F = sp.vstack([assemble_div_coupling(V, QFi), assemble_div_coupling(V, QFe)], format="csr")
    M_T = sp.block_diag([assemble_mass(QTi, QTi), assemble_mass(QTe, QTe)], format="csr")
    M_TF = sp.block_diag([assemble_mass(QTi, QFi), assemble_mass(QTe, QFe)], format="csr")
    M_F = sp.block_diag([assemble_mass(QFi, QFi), assemble_mass(QFe, QFe)], format="csr")
    K = sp.block_diag([assemble_pressure_stiffness(QFi), assemble_pressure_stiffness(QFe)], format="csr")
    T = assemble_interface_jump(QFi, QFe)

    disp_bc = boundary_dofs(V, FacetTag.GAMMA_D)
    fluid_bc = np.concatenate([
        boundary_dofs(QFi, FacetTag.GAMMA_P),
        boundary_dofs(QFe, FacetTag.GAMMA_P) + QFi.ndofs,
    ])
    m_T = np.asarray(M_T.sum(axis=1)).ravel()

    parts = SystemParts(
        mesh=mesh, spaces=spaces, params=params,
        E=E, B=B, M_T=M_T, M_TF=M_TF, M_F=M_F, K=K, T=T, B_F=B_F,
        m_T=m_T, disp_bc=disp_bc, fluid_bc=fluid_bc,
        area=float(mesh.cell_areas().sum()),
    )
    logger.debug(
        f"assembled parts: nd={V.ndofs} nT={spaces.nT} nF={spaces.nF}, "
        f"{len(disp_bc)} displacement and {len(fluid_bc)} fluid Dirichlet dofs"
    )
    return parts


def build_system(
    mesh: Mesh, spaces: Spaces, params: Params, bc: BoundaryConfig | None = None
) -> tuple[BlockOperator, DofPartition]:
    """Dirichlet-eliminated block operator with homogeneous boundary data."""
    if bc is not None and mesh.boundary != bc:
        mesh = mark_boundaries(mesh, bc)
        spaces = build_spaces(mesh)
    parts = assemble_parts(mesh, spaces, params)
    op, _ = parts.operator()
    return op, op.partition


def solve_direct(op: BlockOperator, rhs: np.ndarray) -> np.ndarray:
    """Monolithic sparse LU solve."""
    return spla.spsolve(op.to_csr().tocsc(), rhs)


# ---------------------------------------------------------------------------
# Backward Euler
# ---------------------------------------------------------------------------

def backward_euler_source(
    prev_state: np.ndarray | None,
    parts: SystemParts,
    physical: PhysicalParams,
    g_phys: SourceField = None,
) -> np.ndarray:
    """Fluid right-hand side of one implicit Euler step.

    Collects the scaled physical source and the storage and divergence
    history terms of the previous state, in the sign of the assembled
    third block row.
    """
    scaled = rescale(physical)
    spaces = parts.spaces
    rhs = np.zeros(spaces.nF)
    if g_phys is not None:
        loads = assemble_loads(None, g_phys, None, spaces, scaled)
        rhs -= (physical.tau / (2.0 * physical.mu)) * loads.pF
    if prev_state is not None:
        prev = parts.partition.split(np.asarray(prev_state, dtype=float))
        rhs -= scaled.c0 * (parts.M_F @ prev.pF)
        rhs += scaled.alpha * (parts.B_F @ prev.d)
    return rhs


# ---------------------------------------------------------------------------
# Manufactured solution
# ---------------------------------------------------------------------------

TWO_PI = 2.0 * np.pi
KY = 3.4 * np.pi


def _d_exact(x, y):
    return np.stack([
        TWO_PI * np.sin(TWO_PI * x) * np.cos(TWO_PI * y),
        -TWO_PI * np.cos(TWO_PI * x) * np.sin(TWO_PI * y),
    ], axis=-1)


def _d_grad(x, y):
    c = TWO_PI**2
    g = np.empty(np.shape(x) + (2, 2))
    g[..., 0, 0] = c * np.cos(TWO_PI * x) * np.cos(TWO_PI * y)
    g[..., 0, 1] = -c * np.sin(TWO_PI * x) * np.sin(TWO_PI * y)
    g[..., 1, 0] = c * np.sin(TWO_PI * x) * np.sin(TWO_PI * y)
    g[..., 1, 1] = -c * np.cos(TWO_PI * x) * np.cos(TWO_PI * y)
    return g


def _pi_exact(x, y):
    return np.sin(np.pi * x) * np.cos(KY * y)


def _pi_grad(x, y):
    return np.stack([
        np.pi * np.cos(np.pi * x) * np.cos(KY * y),
        -KY * np.sin(np.pi * x) * np.sin(KY * y),
    ], axis=-1)


def _laplace_pi(x, y):
    return -(np.pi**2 + KY**2) * _pi_exact(x, y)


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact fields: d, and p_F / p_T on each side of the membrane."""

    d: AnalyticField
    pF: dict[Subdomain, AnalyticField]
    pT: dict[Subdomain, AnalyticField]


def manufactured_solution(alpha: float) -> ManufacturedSolution:
    def shifted(c: float, scale: float) -> AnalyticField:
        return AnalyticField(
            value=lambda x, y: scale * (c + _pi_exact(x, y)),
            grad=lambda x, y: scale * _pi_grad(x, y),
        )

    return ManufacturedSolution(
        d=AnalyticField(_d_exact, _d_grad),
        pF={Subdomain.INTRA: shifted(0.0, 1.0), Subdomain.EXTRA: shifted(1.0, 1.0)},
        pT={Subdomain.INTRA: shifted(0.0, alpha), Subdomain.EXTRA: shifted(1.0, alpha)},
    )


def manufactured_body_force(alpha: float) -> Callable:
    """f = -div eps(d) + grad p_T; div d = 0 so -div eps(d) = 4 pi^2 d."""
    return lambda x, y: TWO_PI**2 * _d_exact(x, y) + alpha * _pi_grad(x, y)


def manufactured_fluid_source(params: Params) -> dict[Subdomain, Callable]:
    """g per side in the sign of the third block row."""
    def g(shift: float):
        return lambda x, y: -params.c0 * (shift + _pi_exact(x, y)) + params.kappa * _laplace_pi(x, y)

    return {Subdomain.INTRA: g(0.0), Subdomain.EXTRA: g(1.0)}


def manufactured_traction_jump(alpha: float) -> Callable:
    """(sigma_i - sigma_e) n = (p_T,e - p_T,i) n = alpha n on the membrane."""
    return lambda x, y, n: alpha * n


@dataclass(frozen=True, eq=False)
class ManufacturedProblem:
    parts: SystemParts
    operator: BlockOperator
    rhs: np.ndarray
    exact: ManufacturedSolution

    @property
    def partition(self) -> DofPartition:
        return self.operator.partition


def manufactured_problem(params: Params, n: int, interface_x: float = 0.5) -> ManufacturedProblem:
    """Manufactured problem on the unit square with exact Dirichlet data on all of the boundary.

    p_osm = 1 makes the membrane condition hold exactly, since the exact
    fluid pressure jumps by -1 and has zero normal flux on the interface.
    """
    bc = BoundaryConfig(displacement_dirichlet=SEGMENTS, fluid_dirichlet=SEGMENTS)
    mesh = mark_boundaries(build_box_mesh(n, interface_x), bc)
    spaces = build_spaces(mesh)
    parts = assemble_parts(mesh, spaces, params)
    exact = manufactured_solution(params.alpha)

    loads = assemble_loads(
        manufactured_body_force(params.alpha),
        manufactured_fluid_source(params),
        lambda x, y: np.ones_like(x),
        spaces,
        params,
    )
    d_rhs = loads.d + assemble_interface_traction(manufactured_traction_jump(params.alpha), spaces.V)
    rhs = np.concatenate([d_rhs, loads.pT, loads.pF])

    V = spaces.V
    node_xy = V.node_coords()
    d_values = _d_exact(node_xy[:, 0], node_xy[:, 1]).reshape(-1)
    pF_values = np.concatenate([
        exact.pF[Q.subdomain].value(Q.coords[:, 0], Q.coords[:, 1])
        for Q in (spaces.QF_intra, spaces.QF_extra)
    ])
    op, rhs = parts.operator(rhs, d_values=d_values, pF_values=pF_values)
    logger.debug(f"manufactured problem n={n}: {op.partition.total} unknowns")
    return ManufacturedProblem(parts=parts, operator=op, rhs=rhs, exact=exact)
