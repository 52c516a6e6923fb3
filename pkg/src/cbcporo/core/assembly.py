"""Bilinear and linear forms of the cell-by-cell Biot problem, assembled to CSR."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from cbcporo.core.discretization import (
    FieldFn,
    Space,
    Spaces,
    cell_geometry,
    edge_quadrature,
    eval_basis,
    quadrature,
)
from cbcporo.core.errors import BoundaryConfigError, ConfigError, SubdomainMismatchError
from cbcporo.core.mesh import FacetTag, Subdomain

logger = logging.getLogger(__name__)

FORM_ORDER = 4
LOAD_ORDER = 6
EDGE_POINTS = 4

# g may differ per side (e.g. when the exact fluid pressure jumps across the membrane).
SourceField = Union[FieldFn, Mapping[Subdomain, FieldFn], None]
BoundaryValues = Union[None, float, FieldFn, np.ndarray]


@dataclass(frozen=True)
class Params:
    """Rescaled material parameters.

    lambda and kappa must be positive. alpha, c0 and lp may be 0: alpha = 0
    decouples the fluid from the solid, lp = 0 makes the membrane
    impermeable and c0 = 0 drops fluid storage.
    """

    lam: float
    alpha: float
    kappa: float
    c0: float
    lp: float

    def __post_init__(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if not self.kappa > 0:
            raise ConfigError(f"kappa must be positive, got {self.kappa}")
        for name in ("alpha", "c0", "lp"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")

    def as_dict(self) -> dict[str, float]:
        return {"lambda": self.lam, "alpha": self.alpha, "kappa": self.kappa, "c0": self.c0, "lp": self.lp}


class BlockVector(NamedTuple):
    d: np.ndarray
    pT: np.ndarray
    pF: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.d, self.pT, self.pF])


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def to_csr(rows: np.ndarray, cols: np.ndarray, vals: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    """COO triplets to canonical CSR (duplicates summed, columns sorted)."""
    A = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def symmetrize(A: sp.spmatrix) -> sp.csr_matrix:
    S = (0.5 * (A + A.T)).tocsr()
    S.sort_indices()
    return S


def _scatter(local: np.ndarray, row_map: np.ndarray, col_map: np.ndarray, shape: tuple[int, int]) -> sp.csr_matrix:
    rows = np.broadcast_to(row_map[:, :, None], local.shape)
    cols = np.broadcast_to(col_map[:, None, :], local.shape)
    return to_csr(rows, cols, local, shape)


def _scalar_basis(space: Space, order: int):
    quad = quadrature(order)
    geo = cell_geometry(space.mesh, space.cells)
    phi, dphi = eval_basis(space.degree, quad.points)
    weights = np.abs(geo.det)[:, None] * quad.weights[None, :]
    return quad, geo, phi, geo.physical_gradients(dphi), weights


def _require_same_cells(a: Space, b: Space) -> None:
    if a.subdomain != b.subdomain or a.degree != b.degree or not np.array_equal(a.cells, b.cells):
        raise SubdomainMismatchError(
            f"spaces '{a.label}' and '{b.label}' do not share a subdomain and degree"
        )


def _per_subdomain(g: SourceField, subdomain: Subdomain | None) -> FieldFn | None:
    if g is None or callable(g):
        return g
    return g.get(subdomain)


# ---------------------------------------------------------------------------
# Bilinear forms
# ---------------------------------------------------------------------------

def assemble_elasticity(V: Space) -> sp.csr_matrix:
    """(eps(u), eps(v)) on the vector P2 space."""
    _, _, _, G, W = _scalar_basis(V, FORM_ORDER)
    S = np.einsum("cqad,cqbd,cq->cab", G, G, W)
    T = np.einsum("cqaj,cqbi,cq->caibj", G, G, W)
    K = 0.5 * (np.einsum("cab,ij->caibj", S, np.eye(2)) + T)
    nc, nb = S.shape[0], S.shape[1]
    K = K.reshape(nc, 2 * nb, 2 * nb)
    K = 0.5 * (K + np.transpose(K, (0, 2, 1)))
    return symmetrize(_scatter(K, V.dof_map, V.dof_map, (V.ndofs, V.ndofs)))


def assemble_div_coupling(V: Space, Q: Space) -> sp.csr_matrix:
    """B[q, v] = -(div phi_v, psi_q) over the cells of ``Q``."""
    quad = quadrature(FORM_ORDER)
    geo = cell_geometry(V.mesh, Q.cells)
    _, dphi = eval_basis(2, quad.points)
    psi, _ = eval_basis(1, quad.points)
    G = geo.physical_gradients(dphi)
    W = np.abs(geo.det)[:, None] * quad.weights[None, :]
    local = -np.einsum("qm,cqai,cq->cmai", psi, G, W)
    local = local.reshape(len(Q.cells), psi.shape[1], -1)
    return _scatter(local, Q.dof_map, V.dof_map[Q.cells], (Q.ndofs, V.ndofs))


def assemble_mass(Qa: Space, Qb: Space, weight: float = 1.0) -> sp.csr_matrix:
    """weight * (psi_b, psi_a) for two scalar spaces on the same subdomain."""
    _require_same_cells(Qa, Qb)
    _, _, phi, _, W = _scalar_basis(Qa, FORM_ORDER)
    local = weight * np.einsum("qa,qb,cq->cab", phi, phi, W)
    local = 0.5 * (local + np.transpose(local, (0, 2, 1)))
    A = _scatter(local, Qa.dof_map, Qb.dof_map, (Qa.ndofs, Qb.ndofs))
    return symmetrize(A) if Qa.ndofs == Qb.ndofs else A


def assemble_pressure_stiffness(QF: Space, kappa: float = 1.0) -> sp.csr_matrix:
    """kappa * (grad p, grad q) on one subdomain."""
    _, _, _, G, W = _scalar_basis(QF, FORM_ORDER)
    local = kappa * np.einsum("cqad,cqbd,cq->cab", G, G, W)
    local = 0.5 * (local + np.transpose(local, (0, 2, 1)))
    return symmetrize(_scatter(local, QF.dof_map, QF.dof_map, (QF.ndofs, QF.ndofs)))


def _interface_trace_dofs(QF_intra: Space, QF_extra: Space):
    mesh = QF_intra.mesh
    eids, ab, normals = mesh.interface_geometry()
    di = QF_intra.vertex_dofs[ab]
    de = QF_extra.vertex_dofs[ab] + QF_intra.ndofs
    return eids, ab, normals, di, de


def assemble_interface_jump(QF_intra: Space, QF_extra: Space, lp: float = 1.0) -> sp.csr_matrix:
    """lp * ([p], [q])_Gamma over the concatenated (intra, extra) fluid DOFs."""
    if QF_intra.subdomain is not Subdomain.INTRA or QF_extra.subdomain is not Subdomain.EXTRA:
        raise SubdomainMismatchError("interface jump needs (INTRA, EXTRA) fluid spaces in that order")
    n = QF_intra.ndofs + QF_extra.ndofs
    eids, ab, _, di, de = _interface_trace_dofs(QF_intra, QF_extra)
    if len(eids) == 0:
        return sp.csr_matrix((n, n))

    s, w = edge_quadrature(2)
    trace = np.column_stack([1.0 - s, s])
    m1 = np.einsum("q,qa,qb->ab", w, trace, trace)
    length = QF_intra.mesh.edge_lengths(eids)
    block = np.block([[m1, -m1], [-m1, m1]])
    local = lp * length[:, None, None] * block[None]
    dofs = np.hstack([di, de])
    return symmetrize(_scatter(local, dofs, dofs, (n, n)))


# ---------------------------------------------------------------------------
# Linear forms
# ---------------------------------------------------------------------------

def _vector_load(V: Space, f: FieldFn) -> np.ndarray:
    quad, geo, phi, _, W = _scalar_basis(V, LOAD_ORDER)
    pts = geo.map_points(quad.ref_points)
    fv = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    local = np.einsum("qa,cqi,cq->cai", phi, fv, W).reshape(len(V.cells), -1)
    return np.bincount(V.dof_map.ravel(), weights=local.ravel(), minlength=V.ndofs)


def _scalar_load(Q: Space, g: FieldFn) -> np.ndarray:
    quad, geo, phi, _, W = _scalar_basis(Q, LOAD_ORDER)
    pts = geo.map_points(quad.ref_points)
    gv = np.broadcast_to(np.asarray(g(pts[..., 0], pts[..., 1]), dtype=float), W.shape)
    local = np.einsum("qa,cq,cq->ca", phi, gv, W)
    return np.bincount(Q.dof_map.ravel(), weights=local.ravel(), minlength=Q.ndofs)


def _interface_points(mesh, ab: np.ndarray):
    s, w = edge_quadrature(EDGE_POINTS)
    pa = mesh.vertices[ab[:, 0]]
    pb = mesh.vertices[ab[:, 1]]
    pts = pa[:, None, :] + s[None, :, None] * (pb - pa)[:, None, :]
    length = np.linalg.norm(pb - pa, axis=1)
    return s, w, pts, length


def assemble_osmotic_load(QF_intra: Space, QF_extra: Space, p_osm: FieldFn, lp: float) -> np.ndarray:
    """lp * (p_osm, [q])_Gamma with [q] = q_i - q_e."""
    n = QF_intra.ndofs + QF_extra.ndofs
    eids, ab, _, di, de = _interface_trace_dofs(QF_intra, QF_extra)
    out = np.zeros(n)
    if len(eids) == 0:
        return out
    s, w, pts, length = _interface_points(QF_intra.mesh, ab)
    pv = np.broadcast_to(np.asarray(p_osm(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    trace = np.column_stack([1.0 - s, s])
    local = lp * np.einsum("q,eq,qa,e->ea", w, pv, trace, length)
    np.add.at(out, di, local)
    np.add.at(out, de, -local)
    return out


def assemble_loads(
    f: FieldFn | None,
    g: SourceField,
    p_osm: FieldFn | None,
    spaces: Spaces,
    params: Params,
) -> BlockVector:
    """Right-hand side blocks ((f, v), 0, (g, q_F) + L_p (p_osm, [q_F])_Gamma)."""
    V = spaces.V
    d = _vector_load(V, f) if f is not None else np.zeros(V.ndofs)
    pT = np.zeros(spaces.nT)
    parts = []
    for Q in (spaces.QF_intra, spaces.QF_extra):
        gq = _per_subdomain(g, Q.subdomain)
        parts.append(_scalar_load(Q, gq) if gq is not None else np.zeros(Q.ndofs))
    pF = np.concatenate(parts)
    if p_osm is not None and params.lp > 0:
        pF += assemble_osmotic_load(spaces.QF_intra, spaces.QF_extra, p_osm, params.lp)
    return BlockVector(d, pT, pF)


def assemble_interface_traction(
    stress_jump: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    V: Space,
) -> np.ndarray:
    """(s, v)_Gamma for a prescribed traction jump s on the membrane.

    ``stress_jump(x, y, normal)`` receives the intra-to-extra unit normal
    at each point and returns an array of shape ``x.shape + (2,)``.
    """
    mesh = V.mesh
    out = np.zeros(V.ndofs)
    eids, ab, normals = mesh.interface_geometry()
    if len(eids) == 0:
        return out
    s, w, pts, length = _interface_points(mesh, ab)
    nrm = np.broadcast_to(normals[:, None, :], pts.shape)
    sv = np.asarray(stress_jump(pts[..., 0], pts[..., 1], nrm), dtype=float)
    trace = np.column_stack([(1 - s) * (1 - 2 * s), s * (2 * s - 1), 4 * s * (1 - s)])
    local = np.einsum("q,eqi,qa,e->eai", w, sv, trace, length)
    nodes = np.column_stack([ab, mesh.num_vertices + eids])
    np.add.at(out, 2 * nodes, local[:, :, 0])
    np.add.at(out, 2 * nodes + 1, local[:, :, 1])
    return out


# ---------------------------------------------------------------------------
# Dirichlet conditions
# ---------------------------------------------------------------------------

def boundary_dofs(space: Space, tag: FacetTag) -> np.ndarray:
    """Sorted DOFs of ``space`` lying on edges tagged ``tag``."""
    mesh = space.mesh
    edges = mesh.tagged_edges(tag)
    if len(edges) == 0:
        return np.zeros(0, dtype=np.int64)
    verts = np.unique(mesh.edges[edges])
    if space.is_vector:
        nodes = np.concatenate([verts, mesh.num_vertices + edges])
        return np.sort(np.concatenate([2 * nodes, 2 * nodes + 1]))
    dofs = space.vertex_dofs[verts]
    return np.sort(dofs[dofs >= 0])


def _boundary_vector(space: Space, dofs: np.ndarray, values: BoundaryValues) -> np.ndarray:
    if values is None:
        return np.zeros(len(dofs))
    if callable(values):
        if space.is_vector:
            full = np.asarray(values(space.coords[0::2, 0], space.coords[0::2, 1]), dtype=float).reshape(-1)
            return full[dofs]
        xy = space.coords[dofs]
        return np.broadcast_to(np.asarray(values(xy[:, 0], xy[:, 1]), dtype=float), (len(dofs),)).copy()
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(len(dofs), float(arr))
    return arr[dofs] if arr.shape[0] == space.ndofs else arr


def constrain(A: sp.spmatrix, rows: np.ndarray, cols: np.ndarray | None = None, unit_diagonal: bool = True) -> sp.csr_matrix:
    """Zero the given rows and columns; optionally put 1 on the constrained diagonal.

    ``cols`` defaults to ``rows``; pass a different set for off-diagonal
    blocks of a block system.
    """
    cols = rows if cols is None else cols
    nr, nc = A.shape
    keep_r = np.ones(nr)
    keep_r[rows] = 0.0
    keep_c = np.ones(nc)
    keep_c[cols] = 0.0
    out = sp.diags(keep_r) @ A @ sp.diags(keep_c)
    if unit_diagonal and nr == nc and len(rows):
        out = out + sp.diags(1.0 - keep_r)
    out = out.tocsr()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def eliminate_dofs(
    A: sp.spmatrix, rhs: np.ndarray | None, dofs: np.ndarray, values: np.ndarray
) -> tuple[sp.csr_matrix, np.ndarray | None]:
    """Symmetric elimination of fixed DOFs with unit diagonal."""
    if rhs is not None:
        x_bc = np.zeros(A.shape[1])
        x_bc[dofs] = values
        rhs = rhs - A @ x_bc
        rhs[dofs] = values
    return constrain(A, dofs), rhs


def apply_dirichlet(
    matrix: sp.spmatrix,
    rhs: np.ndarray | None,
    space: Space,
    tag: FacetTag,
    values: BoundaryValues = None,
    offset: int = 0,
    required: bool = True,
) -> tuple[sp.csr_matrix, np.ndarray | None]:
    """Impose ``values`` on the DOFs of ``space`` on ``tag`` edges.

    ``offset`` places the space inside a larger monolithic system.
    """
    dofs = boundary_dofs(space, tag)
    if len(dofs) == 0:
        if required:
            raise BoundaryConfigError(f"no facets tagged {FacetTag(tag).name} for space '{space.label}'")
        return sp.csr_matrix(matrix), rhs
    vals = _boundary_vector(space, dofs, values)
    return eliminate_dofs(matrix, None if rhs is None else np.array(rhs, dtype=float), dofs + offset, vals)


def export_matrix(A: sp.spmatrix, path: Path, comment: str = "") -> Path:
    """Matrix Market dump for cross-checking with external tools."""
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
    logger.info(f"Wrote {A.shape[0]}x{A.shape[1]} matrix ({A.nnz} nnz) to {path}")
    return path
