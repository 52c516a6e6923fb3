"""Structured two-domain triangulations of the unit square."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from cbcporo.core.errors import BoundaryConfigError, MeshError

logger = logging.getLogger(__name__)

SEGMENTS = ("left", "right", "bottom", "top")

_COORD_TOL = 1e-12


class Subdomain(IntEnum):
    EXTRA = 0
    INTRA = 1


class FacetTag(IntEnum):
    NONE = 0
    GAMMA_D = 1
    GAMMA_T = 2
    GAMMA_P = 3
    GAMMA_F = 4
    INTERFACE = 5


class BCRegime(str, Enum):
    MIXED = "mixed"
    FULL_DIRICHLET = "full_dirichlet"


@dataclass(frozen=True)
class BoundaryConfig:
    """Partition of the outer boundary into named unit-square segments.

    Segments not listed as displacement Dirichlet are traction (Gamma_t);
    segments not listed as fluid Dirichlet are no-flow (Gamma_f).
    """

    displacement_dirichlet: tuple[str, ...]
    fluid_dirichlet: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in (*self.displacement_dirichlet, *self.fluid_dirichlet):
            if name not in SEGMENTS:
                raise BoundaryConfigError(
                    f"unknown boundary segment '{name}'. Must be one of: {', '.join(SEGMENTS)}"
                )

    @classmethod
    def mixed(cls) -> BoundaryConfig:
        return cls(displacement_dirichlet=("left",))

    @classmethod
    def full_dirichlet(cls) -> BoundaryConfig:
        return cls(displacement_dirichlet=SEGMENTS)

    @classmethod
    def from_regime(cls, regime: BCRegime | str) -> BoundaryConfig:
        regime = BCRegime(regime)
        if regime is BCRegime.FULL_DIRICHLET:
            return cls.full_dirichlet()
        return cls.mixed()

    @property
    def regime(self) -> BCRegime | None:
        if set(self.displacement_dirichlet) == set(SEGMENTS):
            return BCRegime.FULL_DIRICHLET
        if self.displacement_dirichlet:
            return BCRegime.MIXED
        return None


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable triangulation with subdomain, facet and interface tags.

    Edge ``cell_edges[c, k]`` is the edge opposite local vertex ``k``.
    ``edge_cells`` holds the one or two incident cells (``-1`` marks the
    missing neighbour of a boundary edge). ``facet_tag`` carries the
    displacement partition, ``fluid_tag`` the fluid partition; both are
    ``INTERFACE`` on membrane edges. ``interface_cell`` is the INTRA-side
    cell of each interface edge, fixing the normal from intra to extra.
    """

    n: int
    interface_x: float
    vertices: np.ndarray
    cells: np.ndarray
    cell_subdomain: np.ndarray
    edges: np.ndarray
    cell_edges: np.ndarray
    edge_cells: np.ndarray
    facet_tag: np.ndarray
    fluid_tag: np.ndarray
    interface_cell: np.ndarray
    boundary: BoundaryConfig | None = field(default=None)

    def __post_init__(self) -> None:
        for name in (
            "vertices", "cells", "cell_subdomain", "edges", "cell_edges",
            "edge_cells", "facet_tag", "fluid_tag", "interface_cell",
        ):
            _readonly(getattr(self, name))

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_cells[:, 1] < 0)

    @property
    def interface_edges(self) -> np.ndarray:
        return np.flatnonzero(self.facet_tag == FacetTag.INTERFACE)

    def subdomain_cells(self, subdomain: Subdomain) -> np.ndarray:
        return np.flatnonzero(self.cell_subdomain == subdomain)

    def cell_areas(self) -> np.ndarray:
        p = self.vertices[self.cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self, edges: np.ndarray | None = None) -> np.ndarray:
        idx = self.edges if edges is None else self.edges[edges]
        return np.linalg.norm(self.vertices[idx[:, 1]] - self.vertices[idx[:, 0]], axis=1)

    def tagged_edges(self, tag: FacetTag) -> np.ndarray:
        """Edges carrying ``tag`` in the partition that tag belongs to."""
        tag = FacetTag(tag)
        if tag in (FacetTag.GAMMA_P, FacetTag.GAMMA_F):
            return np.flatnonzero(self.fluid_tag == tag)
        return np.flatnonzero(self.facet_tag == tag)

    def interface_geometry(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Oriented interface edges.

        Returns ``(edge ids, (ne, 2) vertex pairs in the INTRA cell's
        counterclockwise order, (ne, 2) unit normals from intra to extra)``.
        """
        eids = self.interface_edges
        cells = self.interface_cell[eids]
        local = np.argmax(self.cell_edges[cells] == eids[:, None], axis=1)
        a = self.cells[cells, (local + 1) % 3]
        b = self.cells[cells, (local + 2) % 3]
        t = self.vertices[b] - self.vertices[a]
        length = np.linalg.norm(t, axis=1)
        normals = np.column_stack([t[:, 1], -t[:, 0]]) / length[:, None]
        return eids, np.column_stack([a, b]), normals


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def build_box_mesh(n: int, interface_x: float = 0.5) -> Mesh:
    """Right-diagonal triangulation of the unit square with a vertical membrane.

    EXTRA is the part left of ``interface_x``, INTRA the part right of it.
    Vertex ``(i, j)`` has index ``j * (n + 1) + i``.
    """
    if int(n) != n or n < 1:
        raise MeshError(f"n must be a positive integer, got {n}")
    n = int(n)
    if not 0.0 < interface_x < 1.0:
        raise MeshError(f"interface_x must lie in (0, 1), got {interface_x}")
    k = interface_x * n
    if abs(k - round(k)) > 1e-9:
        raise MeshError(
            f"interface_x={interface_x} is not on a grid line for n={n} "
            f"(interface_x * n = {k:g} is not an integer)"
        )

    xs = np.arange(n + 1, dtype=float) / n
    xs[int(round(k))] = interface_x
    ys = np.arange(n + 1, dtype=float) / n
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.column_stack([gx.ravel(), gy.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (j * (n + 1) + i).ravel()
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([v00, v10, v11])
    cells[1::2] = np.column_stack([v00, v11, v01])

    centroid_x = vertices[cells, 0].mean(axis=1)
    cell_subdomain = np.where(centroid_x < interface_x, Subdomain.EXTRA, Subdomain.INTRA).astype(np.int8)

    edges, cell_edges, edge_cells = _build_edges(cells)

    interior = edge_cells[:, 1] >= 0
    sd = np.full(edge_cells.shape, -1, dtype=np.int64)
    sd[:, 0] = cell_subdomain[edge_cells[:, 0]]
    sd[interior, 1] = cell_subdomain[edge_cells[interior, 1]]
    on_interface = interior & (sd[:, 0] != sd[:, 1])

    facet_tag = np.full(len(edges), FacetTag.NONE, dtype=np.int8)
    facet_tag[on_interface] = FacetTag.INTERFACE
    fluid_tag = facet_tag.copy()

    interface_cell = np.full(len(edges), -1, dtype=np.int64)
    first_intra = sd[:, 0] == Subdomain.INTRA
    interface_cell[on_interface & first_intra] = edge_cells[on_interface & first_intra, 0]
    interface_cell[on_interface & ~first_intra] = edge_cells[on_interface & ~first_intra, 1]

    mesh = Mesh(
        n=n,
        interface_x=float(interface_x),
        vertices=vertices,
        cells=cells,
        cell_subdomain=cell_subdomain,
        edges=edges,
        cell_edges=cell_edges,
        edge_cells=edge_cells,
        facet_tag=facet_tag,
        fluid_tag=fluid_tag,
        interface_cell=interface_cell,
    )
    logger.debug(
        f"box mesh n={n}: {mesh.num_vertices} vertices, {mesh.num_cells} cells, "
        f"{len(mesh.interface_edges)} interface edges"
    )
    return mesh


def _build_edges(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nc = cells.shape[0]
    local = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    cell_edges = inverse.reshape(nc, 3)

    owner = np.repeat(np.arange(nc), 3)
    order = np.argsort(inverse, kind="stable")
    sorted_inv = inverse[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = sorted_inv[1:] != sorted_inv[:-1]
    edge_cells = np.full((len(edges), 2), -1, dtype=np.int64)
    edge_cells[sorted_inv[first], 0] = owner[order[first]]
    edge_cells[sorted_inv[~first], 1] = owner[order[~first]]
    return edges, cell_edges, edge_cells


def _segment_mask(mesh: Mesh, name: str) -> np.ndarray:
    p = mesh.vertices[mesh.edges]
    axis, value = {
        "left": (0, 0.0),
        "right": (0, 1.0),
        "bottom": (1, 0.0),
        "top": (1, 1.0),
    }[name]
    return np.all(np.abs(p[:, :, axis] - value) < _COORD_TOL, axis=1)


def mark_boundaries(mesh: Mesh, bc: BoundaryConfig) -> Mesh:
    """Tag every boundary edge with one displacement and one fluid tag."""
    if not bc.displacement_dirichlet:
        raise BoundaryConfigError("Gamma_d is empty: a displacement Dirichlet segment is required")

    on_boundary = mesh.edge_cells[:, 1] < 0
    disp = np.zeros(mesh.num_edges, dtype=bool)
    for name in bc.displacement_dirichlet:
        disp |= _segment_mask(mesh, name)
    disp &= on_boundary
    if not disp.any():
        raise BoundaryConfigError("Gamma_d selects no boundary facets")

    fluid = np.zeros(mesh.num_edges, dtype=bool)
    for name in bc.fluid_dirichlet:
        fluid |= _segment_mask(mesh, name)
    fluid &= on_boundary

    facet_tag = np.array(mesh.facet_tag)
    facet_tag[on_boundary] = FacetTag.GAMMA_T
    facet_tag[disp] = FacetTag.GAMMA_D

    fluid_tag = np.array(mesh.fluid_tag)
    fluid_tag[on_boundary] = FacetTag.GAMMA_F
    fluid_tag[fluid] = FacetTag.GAMMA_P

    logger.debug(
        f"marked boundary: {int(disp.sum())} Gamma_d, {int((on_boundary & ~disp).sum())} Gamma_t, "
        f"{int(fluid.sum())} Gamma_p, {int((on_boundary & ~fluid).sum())} Gamma_f"
    )
    return replace(mesh, facet_tag=facet_tag, fluid_tag=fluid_tag, boundary=bc)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def mesh_to_text(mesh: Mesh) -> str:
    """Plain-text dump: vertex list, cell list, tagged facets."""
    lines = [
        "# cbcporo mesh v1",
        f"n {mesh.n} interface_x {mesh.interface_x:.17g}",
        f"vertices {mesh.num_vertices}",
    ]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.num_cells}")
    lines += [
        f"{a} {b} {c} {Subdomain(s).name}"
        for (a, b, c), s in zip(mesh.cells, mesh.cell_subdomain)
    ]
    tagged = np.flatnonzero((mesh.facet_tag != FacetTag.NONE) | (mesh.fluid_tag != FacetTag.NONE))
    lines.append(f"facets {len(tagged)}")
    for e in tagged:
        a, b = mesh.edges[e]
        lines.append(
            f"{a} {b} {FacetTag(mesh.facet_tag[e]).name} "
            f"{FacetTag(mesh.fluid_tag[e]).name} {mesh.interface_cell[e]}"
        )
    return "\n".join(lines) + "\n"


def export_mesh(mesh: Mesh, path: Path) -> Path:
    path = Path(path)
    path.write_text(mesh_to_text(mesh), encoding="utf-8")
    logger.info(f"Wrote mesh to {path}")
    return path
