import math

import numpy as np
import pytest

from ksblowup.errors import ValidationError
from ksblowup.fem import Field, assemble, inner, integrate, l2_error, solve_zero_mean
from ksblowup.geometry import DomainSpec, generate_mesh


def test_constants_in_stiffness_kernel(square_op):
    ones = np.ones(square_op.mesh.n_nodes)
    assert np.abs(square_op.stiffness @ ones).max() < 1e-10
    assert square_op.volume == pytest.approx(1.0, abs=1e-12)


def test_linear_function_energy(square_op):
    x = square_op.mesh.nodes[:, 0]
    assert float(x @ (square_op.stiffness @ x)) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("beta", [0.0, 1.0])
def test_cosine_neumann_oracle(square, beta):
    op = assemble(generate_mesh(square), beta)
    k2 = math.pi**2 + beta
    u = solve_zero_mean(op, lambda p: k2 * np.cos(math.pi * p[:, 0]))
    err = l2_error(op.mesh, u.values, lambda p: np.cos(math.pi * p[:, 0]))
    assert err < 5e-3
    assert abs(op.mean(u)) < 1e-12


def test_energy_inner_product_of_cosine(square_op_beta):
    mesh = square_op_beta.mesh
    u = Field(mesh, np.cos(math.pi * mesh.nodes[:, 0]))
    assert inner(square_op_beta, u, u) == pytest.approx(math.pi**2 / 2 + 0.5, rel=2e-2)


def test_incompatible_data_rejected_at_beta_zero(square_op):
    with pytest.raises(ValidationError):
        solve_zero_mean(square_op, lambda p: np.ones(len(p)))
    u = solve_zero_mean(square_op, lambda p: np.ones(len(p)), subtract_mean=True)
    assert np.abs(u.values).max() < 1e-10


def test_integrals_on_the_disk(disk):
    mesh = generate_mesh(disk)
    assert integrate(mesh, lambda p: np.ones(len(p))) == pytest.approx(mesh.area, rel=1e-12)
    log_integral = integrate(mesh, lambda p: -np.log(np.hypot(p[:, 0], p[:, 1])), singular_center=[0.0, 0.0])
    assert log_integral == pytest.approx(math.pi / 2, rel=1e-3)


def test_negative_beta_rejected(square):
    with pytest.raises(ValidationError):
        assemble(generate_mesh(DomainSpec.rectangle(target_h=0.2)), -1.0)
