import math

import numpy as np
import pytest

from ksblowup.errors import ValidationError
from ksblowup.geometry import DomainSpec, RefinementPlan, generate_mesh, locate, read_mesh, write_mesh


def test_disk_mesh_area_and_perimeter(disk):
    mesh = generate_mesh(disk)
    assert abs(mesh.area - math.pi) / math.pi < 0.01
    assert abs(mesh.boundary_length - 2 * math.pi) / (2 * math.pi) < 0.01


def test_square_mesh_area_is_exact(square):
    assert generate_mesh(square).area == pytest.approx(1.0, abs=1e-12)


def test_square_boundary_parametrization(square):
    pts, tangents, normals = square.boundary_point(np.array([0.5, 1.5, 2.5]))
    assert np.allclose(pts, [[0.5, 0.0], [1.0, 0.5], [0.5, 1.0]])
    assert np.allclose(normals, [[0, -1], [1, 0], [0, 1]])
    assert np.allclose(np.sum(tangents * normals, axis=1), 0)


def test_disk_boundary_parametrization(disk):
    pts, _, normals = disk.boundary_point(np.array([0.0, math.pi / 2]))
    assert np.allclose(pts, [[1, 0], [0, 1]])
    assert np.allclose(normals, pts)
    assert disk.boundary_arclength(np.array([0.0, 1.0])) == pytest.approx(math.pi / 2)


def test_signed_distance_sign(disk):
    d = disk.signed_distance(np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]]))
    assert d[0] == pytest.approx(-1.0) and d[1] == pytest.approx(1.0) and abs(d[2]) < 1e-12


def test_locate_vertex_centroid_and_outside(square):
    mesh = generate_mesh(square)
    t, lam = locate(mesh, mesh.nodes[:1])
    assert lam.max() == pytest.approx(1.0)
    centroid = mesh.centroids[7]
    t, lam = locate(mesh, centroid[None, :])
    assert t[0] == 7 and np.allclose(lam, 1 / 3)
    with pytest.raises(ValidationError):
        locate(mesh, [[2.0, 2.0]])


def test_refinement_plan_is_honoured(square):
    plan = RefinementPlan.build(np.array([[0.5, 0.5]]), np.array([0.05]), np.array([0.005]))
    mesh = generate_mesh(square, plan)
    assert mesh.local_h([0.5, 0.5]) < 0.01
    assert mesh.local_h([0.9, 0.1]) > 0.03
    assert mesh.area == pytest.approx(1.0, abs=1e-12)


def test_mesh_round_trip(tmp_path, square):
    mesh = generate_mesh(DomainSpec.rectangle(1.0, 1.0, target_h=0.2))
    path = tmp_path / "mesh.txt"
    write_mesh(path, mesh)
    back = read_mesh(path)
    assert np.allclose(back.nodes, mesh.nodes) and np.array_equal(back.triangles, mesh.triangles)


def test_invalid_domains():
    with pytest.raises(ValidationError):
        DomainSpec.annulus(1.0, 0.5).validate()
    with pytest.raises(ValidationError):
        DomainSpec.rectangle(-1.0, 1.0).validate()
