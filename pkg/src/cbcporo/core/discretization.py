"""Reference elements, quadrature, DOF maps and error norms for P2/P1 Taylor-Hood spaces."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, NamedTuple

import numpy as np

from cbcporo.core.errors import UnsupportedDegreeError
from cbcporo.core.mesh import Mesh, Subdomain

logger = logging.getLogger(__name__)

# A field is evaluated at arrays of x and y coordinates of any common shape.
FieldFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_REF_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class SpaceKind(IntEnum):
    VECTOR_P2_GLOBAL = 0
    SCALAR_P1_SUBDOMAIN = 1


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Quadrature:
    """Barycentric points and weights on the reference triangle (area 1/2)."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def ref_points(self) -> np.ndarray:
        return self.points[:, 1:]


def _orbit3(a: float) -> list[tuple[float, float, float]]:
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)]


def _orbit6(a: float, b: float) -> list[tuple[float, float, float]]:
    c = 1.0 - a - b
    return [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]


def _rule(groups: list[tuple[float, list[tuple[float, float, float]]]], order: int) -> Quadrature:
    pts: list[tuple[float, float, float]] = []
    wts: list[float] = []
    for w, orbit in groups:
        pts += orbit
        wts += [0.5 * w] * len(orbit)
    return Quadrature(points=np.array(pts), weights=np.array(wts), order=order)


_RULES = {
    1: _rule([(1.0, [(1 / 3, 1 / 3, 1 / 3)])], 1),
    2: _rule([(1 / 3, _orbit3(1 / 6))], 2),
    4: _rule([
        (0.223381589678011, _orbit3(0.445948490915965)),
        (0.109951743655322, _orbit3(0.091576213509771)),
    ], 4),
    6: _rule([
        (0.116786275726379, _orbit3(0.249286745170910)),
        (0.050844906370207, _orbit3(0.063089014491502)),
        (0.082851075618374, _orbit6(0.053145049844817, 0.310352451033784)),
    ], 6),
}


def quadrature(order: int) -> Quadrature:
    """Smallest tabulated symmetric rule exact to at least ``order``."""
    for k in sorted(_RULES):
        if k >= order:
            return _RULES[k]
    raise UnsupportedDegreeError(f"no triangle quadrature of order {order}")


def edge_quadrature(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points on [0, 1] with weights summing to 1."""
    s, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (s + 1.0), 0.5 * w


# ---------------------------------------------------------------------------
# Basis functions
# ---------------------------------------------------------------------------

def eval_basis(degree: int, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lagrange basis values and reference gradients at barycentric points.

    P2 ordering: vertex functions 0-2, then the edge function opposite
    vertex 0, 1, 2. Returns ``(values (nq, nb), grads (nq, nb, 2))``; a
    single point drops the leading axis.
    """
    bary = np.asarray(bary, dtype=float)
    single = bary.ndim == 1
    lam = np.atleast_2d(bary)
    nq = lam.shape[0]

    if degree == 1:
        values = lam.copy()
        grads = np.broadcast_to(_REF_GRAD, (nq, 3, 2)).copy()
    elif degree == 2:
        values = np.empty((nq, 6))
        grads = np.empty((nq, 6, 2))
        for i in range(3):
            values[:, i] = lam[:, i] * (2.0 * lam[:, i] - 1.0)
            grads[:, i] = (4.0 * lam[:, i] - 1.0)[:, None] * _REF_GRAD[i]
        for k in range(3):
            a, b = (k + 1) % 3, (k + 2) % 3
            values[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
            grads[:, 3 + k] = 4.0 * (lam[:, b, None] * _REF_GRAD[a] + lam[:, a, None] * _REF_GRAD[b])
    else:
        raise UnsupportedDegreeError(f"only P1 and P2 Lagrange elements are available, got degree {degree}")

    if single:
        return values[0], grads[0]
    return values, grads


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CellGeometry:
    origin: np.ndarray
    jac: np.ndarray
    det: np.ndarray
    inv_t: np.ndarray

    def map_points(self, ref: np.ndarray) -> np.ndarray:
        """(nc, nq, 2) physical coordinates of reference points (nq, 2)."""
        return self.origin[:, None, :] + np.einsum("cij,qj->cqi", self.jac, ref)

    def physical_gradients(self, ref_grads: np.ndarray) -> np.ndarray:
        """(nc, nq, nb, 2) from reference gradients (nq, nb, 2)."""
        return np.einsum("cij,qbj->cqbi", self.inv_t, ref_grads)


def cell_geometry(mesh: Mesh, cells: np.ndarray) -> CellGeometry:
    p = mesh.vertices[mesh.cells[cells]]
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inv = np.empty_like(jac)
    inv[:, 0, 0] = jac[:, 1, 1]
    inv[:, 0, 1] = -jac[:, 0, 1]
    inv[:, 1, 0] = -jac[:, 1, 0]
    inv[:, 1, 1] = jac[:, 0, 0]
    inv /= det[:, None, None]
    return CellGeometry(origin=p[:, 0], jac=jac, det=det, inv_t=np.transpose(inv, (0, 2, 1)))


# ---------------------------------------------------------------------------
# Spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Space:
    """Finite element space on a set of mesh cells.

    ``dof_map[c, a]`` is the global DOF of local basis ``a`` on the
    ``c``-th cell of ``cells``. Vector P2 DOFs are interleaved,
    ``2 * node + component``; nodes are mesh vertices followed by edges.
    ``vertex_dofs`` maps mesh vertices to scalar P1 DOFs (``-1`` outside).
    """

    kind: SpaceKind
    subdomain: Subdomain | None
    mesh: Mesh
    cells: np.ndarray
    dof_map: np.ndarray
    coords: np.ndarray
    ndofs: int
    label: str = ""
    vertex_dofs: np.ndarray | None = None

    @property
    def degree(self) -> int:
        return 2 if self.kind is SpaceKind.VECTOR_P2_GLOBAL else 1

    @property
    def is_vector(self) -> bool:
        return self.kind is SpaceKind.VECTOR_P2_GLOBAL

    def node_coords(self) -> np.ndarray:
        return self.coords[0::2] if self.is_vector else self.coords


class Spaces(NamedTuple):
    V: Space
    QT_intra: Space
    QT_extra: Space
    QF_intra: Space
    QF_extra: Space

    @property
    def nT(self) -> int:
        return self.QT_intra.ndofs + self.QT_extra.ndofs

    @property
    def nF(self) -> int:
        return self.QF_intra.ndofs + self.QF_extra.ndofs


def _vector_p2_space(mesh: Mesh) -> Space:
    nv = mesh.num_vertices
    nodes = np.hstack([mesh.cells, nv + mesh.cell_edges])
    dof_map = np.empty((mesh.num_cells, 12), dtype=np.int64)
    dof_map[:, 0::2] = 2 * nodes
    dof_map[:, 1::2] = 2 * nodes + 1
    midpoints = mesh.vertices[mesh.edges].mean(axis=1)
    node_xy = np.vstack([mesh.vertices, midpoints])
    return Space(
        kind=SpaceKind.VECTOR_P2_GLOBAL,
        subdomain=None,
        mesh=mesh,
        cells=np.arange(mesh.num_cells),
        dof_map=dof_map,
        coords=np.repeat(node_xy, 2, axis=0),
        ndofs=2 * len(node_xy),
        label="V",
    )


def _scalar_p1_space(mesh: Mesh, subdomain: Subdomain, label: str) -> Space:
    cells = mesh.subdomain_cells(subdomain)
    verts = np.unique(mesh.cells[cells])
    vertex_dofs = np.full(mesh.num_vertices, -1, dtype=np.int64)
    vertex_dofs[verts] = np.arange(len(verts))
    return Space(
        kind=SpaceKind.SCALAR_P1_SUBDOMAIN,
        subdomain=subdomain,
        mesh=mesh,
        cells=cells,
        dof_map=vertex_dofs[mesh.cells[cells]],
        coords=mesh.vertices[verts],
        ndofs=len(verts),
        label=label,
        vertex_dofs=vertex_dofs,
    )


def build_spaces(mesh: Mesh, s: int = 2) -> Spaces:
    """Vector P2 displacement plus per-subdomain P1 total and fluid pressures."""
    if s != 2:
        raise UnsupportedDegreeError(f"only Taylor-Hood P2/P1 (s=2) is supported, got s={s}")
    spaces = Spaces(
        V=_vector_p2_space(mesh),
        QT_intra=_scalar_p1_space(mesh, Subdomain.INTRA, "QT_intra"),
        QT_extra=_scalar_p1_space(mesh, Subdomain.EXTRA, "QT_extra"),
        QF_intra=_scalar_p1_space(mesh, Subdomain.INTRA, "QF_intra"),
        QF_extra=_scalar_p1_space(mesh, Subdomain.EXTRA, "QF_extra"),
    )
    logger.debug(f"spaces: V={spaces.V.ndofs}, QT={spaces.nT}, QF={spaces.nF} dofs")
    return spaces


# ---------------------------------------------------------------------------
# Interpolation and error norms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field with its gradient.

    Scalar fields return values of shape ``x.shape`` and gradients of shape
    ``x.shape + (2,)``; vector fields add one more trailing axis of 2 to
    both (gradient indexed ``[..., component, direction]``).
    """

    value: FieldFn
    grad: FieldFn


def interpolate(space: Space, fn: FieldFn) -> np.ndarray:
    """Nodal interpolant coefficients of ``fn`` in ``space``."""
    xy = space.node_coords()
    values = np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float)
    return values.reshape(-1) if space.is_vector else np.broadcast_to(values, (space.ndofs,)).copy()


def evaluate(space: Space, coeffs: np.ndarray, quad: Quadrature) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Discrete field at quadrature points of every cell in ``space``.

    Returns ``(points (nc, nq, 2), values, gradients, weights (nc, nq))``.
    """
    geo = cell_geometry(space.mesh, space.cells)
    phi, dphi = eval_basis(space.degree, quad.points)
    grads = geo.physical_gradients(dphi)
    local = np.asarray(coeffs)[space.dof_map]
    if space.is_vector:
        local = local.reshape(len(space.cells), -1, 2)
        values = np.einsum("qa,cai->cqi", phi, local)
        gradients = np.einsum("cqad,cai->cqid", grads, local)
    else:
        values = np.einsum("qa,ca->cq", phi, local)
        gradients = np.einsum("cqad,ca->cqd", grads, local)
    points = geo.map_points(quad.ref_points)
    weights = np.abs(geo.det)[:, None] * quad.weights[None, :]
    return points, values, gradients, weights


def error_norms(space: Space, coeffs: np.ndarray, exact: AnalyticField, order: int = 6) -> tuple[float, float]:
    """L2 error and H1 seminorm error of ``coeffs`` against ``exact``."""
    quad = quadrature(order)
    points, uh, duh, w = evaluate(space, coeffs, quad)
    x, y = points[..., 0], points[..., 1]
    diff = np.asarray(exact.value(x, y)) - uh
    gdiff = np.asarray(exact.grad(x, y)) - duh
    axes = tuple(range(2, diff.ndim))
    gaxes = tuple(range(2, gdiff.ndim))
    l2 = float(np.sqrt(np.sum(w * np.sum(diff**2, axis=axes))))
    semi = float(np.sqrt(np.sum(w * np.sum(gdiff**2, axis=gaxes))))
    return l2, semi


def h1_norm(l2: float, semi: float) -> float:
    return float(np.hypot(l2, semi))
