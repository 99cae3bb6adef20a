import math

import numpy as np
import pytest

from ksblowup.fem import Field
from ksblowup.reduction import (LinearizedOperator, expansion_constant, istar, istar_load, kernel_basis,
                                random_test_fields, solve_phi_fixed_point)


@pytest.fixture(scope="module")
def basis(centre_state):
    return kernel_basis(centre_state)


def test_istar_of_constant_vanishes(square_op):
    u = istar(square_op, lambda p: np.full(len(p), 3.0))
    assert np.abs(u.values).max() < 1e-10


def test_istar_defining_identity(square_op):
    op = square_op
    x, y = op.mesh.nodes.T
    f = np.sin(3 * x) * np.cos(2 * y)
    u = istar(op, Field(op.mesh, f))
    v = x * y - op.mean(x * y)
    assert op.energy(u.values, v) == pytest.approx(float(v @ (op.mass @ f)), rel=1e-10)
    assert abs(op.mean(u)) < 1e-12


def test_projected_bubble_solves_its_load(centre_state):
    pu = istar_load(centre_state.op, centre_state.pu_loads[0])
    assert np.allclose(pu.values, centre_state.PU[0].values, atol=1e-10)


def test_projection_is_idempotent_and_orthogonal(centre_state, basis):
    op = centre_state.op
    v = random_test_fields(op, 1, seed=3)[:, 0]
    p = basis.project_perp(v)
    assert np.allclose(basis.project_perp(p), p, atol=1e-10 * np.abs(v).max())
    assert np.abs(basis.AZ.T @ p).max() < 1e-8 * math.sqrt(op.energy(v))
    assert op.energy(v) == pytest.approx(op.energy(p) + op.energy(v - p), rel=1e-10)


def test_linearized_operator_is_linear(centre_state, basis):
    lin = LinearizedOperator(centre_state, basis, centre_state.nonlinearity_qp())
    a, b = random_test_fields(centre_state.op, 2, seed=5).T
    assert np.abs(lin.apply(np.zeros_like(a))).max() == 0.0
    assert np.allclose(lin.apply(2 * a - b), 2 * lin.apply(a) - lin.apply(b), atol=1e-10)


def test_linearized_solve_inverts_apply(centre_state, basis):
    lin = LinearizedOperator(centre_state, basis, centre_state.nonlinearity_qp())
    target = basis.project_perp(random_test_fields(centre_state.op, 1, seed=7)[:, 0])
    x, _ = lin.solve(lin.apply(target))
    assert math.sqrt(centre_state.op.energy(x - target)) < 1e-5 * math.sqrt(centre_state.op.energy(target))


def test_fixed_point_is_small_and_orthogonal(centre_state, basis):
    res = solve_phi_fixed_point(centre_state, basis)
    assert res.phi_norm < 0.05
    assert res.contraction_estimate < 0.5
    phi = getattr(res.phi, "values", res.phi)
    assert np.abs(basis.AZ.T @ phi).max() < 1e-8 * math.sqrt(centre_state.op.energy(phi)) + 1e-12


def test_expansion_constant_is_linear_in_m():
    assert expansion_constant(2) == pytest.approx(2 * expansion_constant(1))
