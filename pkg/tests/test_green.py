import math

import numpy as np
import pytest

from ksblowup.fem import assemble
from ksblowup.geometry import DomainSpec, generate_mesh
from ksblowup.green import (concentration_mass, disk_oracle_grad_x, disk_oracle_green, disk_oracle_robin,
                            disk_oracle_robin_gradient, gamma_part, green_eval, green_plan, regular_part)


def _disk_green(xi, beta=0.0, r0=0.25, target_h=0.05):
    domain = DomainSpec.unit_disk(target_h=target_h)
    op = assemble(generate_mesh(domain, green_plan(domain, np.array([xi]), [r0], 16)), beta)
    return regular_part(op, xi, r0)


def test_concentration_masses():
    assert concentration_mass(False) == pytest.approx(8 * math.pi)
    assert concentration_mass(True) == pytest.approx(4 * math.pi)


def test_gamma_part_values():
    rho = 8 * math.pi
    f = gamma_part([0.0, 0.0], 1.0, rho)
    got = f(np.array([[0.5, 0.0], [3.0, 0.0], [0.0, 1.5]]))
    assert got[0] == pytest.approx((4 / rho) * math.log(2))
    assert got[1] == 0.0
    # inside the cutoff transition the value lies between the full log and zero
    assert (4 / rho) * math.log(1 / 1.5) < got[2] < 0


def test_oracle_has_zero_normal_derivative():
    xi = np.array([0.3, 0.2])
    ang = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    x = np.column_stack([np.cos(ang), np.sin(ang)])
    radial = np.sum(disk_oracle_grad_x(xi, x) * x, axis=1)
    assert np.abs(radial).max() < 1e-12


def test_oracle_robin_is_the_diagonal_limit():
    xi = np.array([0.3, 0.2])
    x = xi + 1e-7 * np.array([[1.0, 0.0]])
    regular = disk_oracle_green(xi, x)[0] + math.log(1e-7) / (2 * math.pi)
    assert regular == pytest.approx(disk_oracle_robin(xi), abs=1e-6)
    assert disk_oracle_robin([0.0, 0.0]) == pytest.approx(-3 / (8 * math.pi))


def test_oracle_robin_gradient_matches_difference():
    xi, h = np.array([0.3, 0.0]), 1e-6
    fd = (disk_oracle_robin(xi + [h, 0]) - disk_oracle_robin(xi - [h, 0])) / (2 * h)
    assert disk_oracle_robin_gradient(xi)[0] == pytest.approx(fd, rel=1e-6)


def test_fem_green_matches_disk_oracle():
    xi = np.array([0.3, 0.2])
    g = _disk_green(xi)
    assert g.robin == pytest.approx(disk_oracle_robin(xi), abs=2e-3)
    x = np.array([[-0.5, 0.1], [0.0, -0.7], [0.6, 0.6]])
    assert np.allclose(green_eval(g, x), disk_oracle_green(xi, x), atol=2e-3)


def test_centre_robin_gradient_vanishes():
    g = _disk_green(np.array([0.0, 0.0]))
    assert np.linalg.norm(g.grad_H_at_source) < 1e-3


def test_small_beta_is_continuous():
    xi = np.array([0.3, 0.2])
    g0, g1 = _disk_green(xi, 0.0), _disk_green(xi, 1e-6)
    x = np.array([[-0.5, 0.1], [0.0, -0.7]])
    assert np.allclose(green_eval(g0, x), green_eval(g1, x), atol=1e-4)


def test_oracle_gradient_matches_difference():
    xi, x, h = np.array([0.3, 0.0]), np.array([-0.2, 0.4]), 1e-6
    fd = [(disk_oracle_green(xi, x + e)[0] - disk_oracle_green(xi, x - e)[0]) / (2 * h)
          for e in (np.array([h, 0.0]), np.array([0.0, h]))]
    assert np.allclose(disk_oracle_grad_x(xi, x), fd, rtol=1e-6)
