"""Tests for cbcporo.core.mesh."""

from pathlib import Path

import numpy as np
import pytest

from cbcporo.core.errors import BoundaryConfigError, MeshError
from cbcporo.core.mesh import (
    BCRegime,
    BoundaryConfig,
    FacetTag,
    Subdomain,
    build_box_mesh,
    export_mesh,
    mark_boundaries,
    mesh_to_text,
)


@pytest.fixture
def mesh():
    return build_box_mesh(4)


class TestBuildBoxMesh:
    def test_counts(self, mesh):
        assert mesh.num_vertices == 25
        assert mesh.num_cells == 32
        assert mesh.num_edges == 3 * 16 + 2 * 4
        assert len(mesh.boundary_edges) == 16

    def test_cells_counterclockwise_and_cover_unit_square(self, mesh):
        areas = mesh.cell_areas()
        assert np.all(areas > 0)
        assert areas.sum() == pytest.approx(1.0)

    def test_subdomains_split_at_interface(self, mesh):
        intra = mesh.subdomain_cells(Subdomain.INTRA)
        extra = mesh.subdomain_cells(Subdomain.EXTRA)
        assert len(intra) == len(extra) == 16
        assert np.all(mesh.vertices[mesh.cells[intra], 0] >= 0.5)
        assert np.all(mesh.vertices[mesh.cells[extra], 0] <= 0.5)

    def test_interface_edges_lie_on_membrane(self, mesh):
        edges = mesh.interface_edges
        assert len(edges) == 4
        assert np.allclose(mesh.vertices[mesh.edges[edges], 0], 0.5)
        assert np.allclose(mesh.edge_lengths(edges), 0.25)

    def test_off_center_interface(self):
        mesh = build_box_mesh(4, interface_x=0.25)
        assert len(mesh.subdomain_cells(Subdomain.EXTRA)) == 8
        assert len(mesh.subdomain_cells(Subdomain.INTRA)) == 24

    def test_every_cell_edge_references_its_cell(self, mesh):
        for c in range(mesh.num_cells):
            for e in mesh.cell_edges[c]:
                assert c in mesh.edge_cells[e]

    def test_arrays_read_only(self, mesh):
        with pytest.raises(ValueError):
            mesh.vertices[0, 0] = 1.0

    @pytest.mark.parametrize("n", [0, -2, 2.5])
    def test_rejects_bad_size(self, n):
        with pytest.raises(MeshError):
            build_box_mesh(n)

    def test_rejects_interface_off_grid(self):
        with pytest.raises(MeshError, match="grid line"):
            build_box_mesh(3, interface_x=0.5)

    def test_rejects_interface_outside_square(self):
        with pytest.raises(MeshError):
            build_box_mesh(4, interface_x=1.0)


class TestInterfaceGeometry:
    def test_normals_point_from_intra_to_extra(self, mesh):
        eids, ab, normals = mesh.interface_geometry()
        assert len(eids) == 4
        assert np.allclose(normals, [[-1.0, 0.0]] * 4)

    def test_pairs_belong_to_intra_cell(self, mesh):
        eids, ab, _ = mesh.interface_geometry()
        for e, (a, b) in zip(eids, ab):
            cell = mesh.interface_cell[e]
            assert mesh.cell_subdomain[cell] == Subdomain.INTRA
            assert {a, b} <= set(mesh.cells[cell])


class TestBoundaryConfig:
    def test_regimes(self):
        assert BoundaryConfig.mixed().regime is BCRegime.MIXED
        assert BoundaryConfig.full_dirichlet().regime is BCRegime.FULL_DIRICHLET
        assert BoundaryConfig.from_regime("full_dirichlet") == BoundaryConfig.full_dirichlet()

    def test_unknown_segment(self):
        with pytest.raises(BoundaryConfigError, match="unknown boundary segment"):
            BoundaryConfig(displacement_dirichlet=("north",))


class TestMarkBoundaries:
    def test_mixed(self, mesh):
        marked = mark_boundaries(mesh, BoundaryConfig.mixed())
        assert len(marked.tagged_edges(FacetTag.GAMMA_D)) == 4
        assert len(marked.tagged_edges(FacetTag.GAMMA_T)) == 12
        assert len(marked.tagged_edges(FacetTag.GAMMA_F)) == 16
        assert len(marked.tagged_edges(FacetTag.GAMMA_P)) == 0
        assert np.allclose(marked.vertices[marked.edges[marked.tagged_edges(FacetTag.GAMMA_D)], 0], 0.0)

    def test_full_dirichlet(self, mesh):
        marked = mark_boundaries(mesh, BoundaryConfig.full_dirichlet())
        assert len(marked.tagged_edges(FacetTag.GAMMA_D)) == 16
        assert len(marked.tagged_edges(FacetTag.GAMMA_T)) == 0

    def test_fluid_dirichlet_segments(self, mesh):
        bc = BoundaryConfig(displacement_dirichlet=("left",), fluid_dirichlet=("top", "bottom"))
        marked = mark_boundaries(mesh, bc)
        assert len(marked.tagged_edges(FacetTag.GAMMA_P)) == 8
        assert len(marked.tagged_edges(FacetTag.GAMMA_F)) == 8

    def test_keeps_interface_and_original(self, mesh):
        marked = mark_boundaries(mesh, BoundaryConfig.mixed())
        assert len(marked.tagged_edges(FacetTag.INTERFACE)) == 4
        assert marked.boundary == BoundaryConfig.mixed()
        assert mesh.boundary is None
        assert np.all(mesh.facet_tag[mesh.boundary_edges] == FacetTag.NONE)

    def test_empty_displacement_dirichlet(self, mesh):
        with pytest.raises(BoundaryConfigError, match="Gamma_d is empty"):
            mark_boundaries(mesh, BoundaryConfig(displacement_dirichlet=()))


class TestExport:
    def test_text_layout(self, mesh):
        marked = mark_boundaries(mesh, BoundaryConfig.mixed())
        lines = mesh_to_text(marked).splitlines()

        assert lines[0] == "# cbcporo mesh v1"
        assert lines[1].startswith("n 4 interface_x 0.5")
        assert lines[2] == "vertices 25"
        assert lines[3 + 25] == "cells 32"
        assert lines[4 + 25 + 32] == "facets 20"
        assert lines[4 + 25].split()[-1] in ("EXTRA", "INTRA")

    def test_export_mesh(self, mesh, tmp_path: Path):
        path = export_mesh(mark_boundaries(mesh, BoundaryConfig.mixed()), tmp_path / "mesh.txt")
        text = path.read_text()
        assert "GAMMA_D" in text
        assert "INTERFACE" in text
