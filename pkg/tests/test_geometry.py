import math

import numpy as np
import pytest

from parasys.errors import ValidationError
from parasys.geometry import (Mesh2D, ahlfors_ratio, build_mesh, check_geometry, density_ratio,
                              l_shape, slit_square, unit_square)

from conftest import ALL_SIDES


def _topological_boundary(mesh):
    count = {}
    for tri in mesh.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            count[key] = count.get(key, 0) + 1
    return {e for e, c in count.items() if c == 1}


def test_smallest_square():
    mesh = build_mesh(unit_square(), 0.5, [ALL_SIDES])
    assert mesh.num_triangles == 8
    assert len(mesh.boundary_edges) == 8
    assert mesh.dirichlet_parts[0] == frozenset(range(8))
    assert np.all(mesh.signed_areas() > 0)
    assert mesh.area() == pytest.approx(1.0, abs=1e-14)


def test_l_shape_bottom_dirichlet():
    mesh = build_mesh(l_shape(), 0.25, [("bottom",)])
    assert mesh.area() == pytest.approx(3.0, abs=1e-13)
    ys = [mesh.vertices[list(mesh.boundary_edges[k])][:, 1] for k in mesh.dirichlet_parts[0]]
    assert ys and np.allclose(ys, 0.0)
    total = sum(np.linalg.norm(np.subtract(*mesh.vertices[list(mesh.boundary_edges[k])]))
                for k in mesh.dirichlet_parts[0])
    assert total == pytest.approx(2.0)


def test_two_components_different_constraints():
    mesh = build_mesh(unit_square(), 0.25, [("left",), ()])
    assert len(mesh.dirichlet_nodes(0)) == 5
    assert len(mesh.dirichlet_nodes(1)) == 0


@pytest.mark.parametrize("domain,h", [(unit_square(), 0.25), (l_shape(), 0.5), (slit_square(), 0.125)])
def test_boundary_edges_cover_topological_boundary(domain, h):
    mesh = build_mesh(domain, h)
    edges = {(min(a, b), max(a, b)) for a, b in mesh.boundary_edges}
    assert edges == _topological_boundary(mesh)


def test_slit_duplicates_nodes_and_labels_sides():
    mesh = build_mesh(slit_square(), 0.125, [("slit+",)])
    labels = set(mesh.boundary_labels)
    assert {"slit+", "slit-"} <= labels
    # the slit is a crack: 4 slit edges per side at h = 1/8
    assert sum(lab == "slit+" for lab in mesh.boundary_labels) == 4
    assert sum(lab == "slit-" for lab in mesh.boundary_labels) == 4
    assert mesh.area() == pytest.approx(1.0)


def test_json_roundtrip():
    mesh = build_mesh(l_shape(), 0.5, [("bottom", "left"), ()])
    back = Mesh2D.from_json(mesh.to_json())
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert back.dirichlet_parts == mesh.dirichlet_parts


def test_rejects_unknown_label_and_bad_h():
    with pytest.raises(ValidationError):
        build_mesh(unit_square(), 0.25, [("nowhere",)])
    with pytest.raises(ValidationError):
        build_mesh(unit_square(), 0.0)


def test_ahlfors_ratio_straight_boundary():
    mesh = build_mesh(unit_square(), 0.125, [ALL_SIDES])
    assert ahlfors_ratio(mesh, 0, (0.5, 0.0), 0.1) == pytest.approx(2.0, abs=1e-12)


def test_density_ratios():
    mesh = build_mesh(unit_square(), 0.25)
    assert density_ratio(mesh, (0.5, 0.5), 0.1) == pytest.approx(math.pi, rel=1e-5)
    assert density_ratio(mesh, (0.0, 0.0), 0.1) == pytest.approx(math.pi / 4, rel=1e-5)


def test_check_geometry_report():
    mesh = build_mesh(unit_square(), 0.125, [ALL_SIDES])
    rep = check_geometry(mesh, [0.05, 0.1], samples=16)
    assert rep.ahlfors_ratio_min[0] >= 1.0 - 1e-12
    assert rep.density_ratio_min >= math.pi / 4 - 1e-4
    assert not rep.warnings
    assert any("bi-Lipschitz" in c for c in rep.caveats)
