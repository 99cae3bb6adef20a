import dataclasses
import math
from types import SimpleNamespace

import numpy as np
import pytest

from ksblowup.ansatz import Bubble, bubble_mass, d_constants, scaling_tau
from ksblowup.cutoff import cutoff, cutoff_derivatives
from ksblowup.errors import ValidationError


def test_cutoff_values_and_smoothness():
    assert np.allclose(cutoff([0.0, 1.0, 1.5, 2.0, 3.0]), [1, 1, 0.5, 0, 0])
    t = np.linspace(1.05, 1.95, 7)
    h = 1e-6
    _, d1, _ = cutoff_derivatives(t)
    assert np.allclose(d1, (cutoff(t + h) - cutoff(t - h)) / (2 * h), atol=1e-6)
    _, d1_edge, d2_edge = cutoff_derivatives([1.0, 2.0])
    assert np.allclose(d1_edge, 0) and np.allclose(d2_edge, 0)


def test_dilation_constants():
    d0, d1 = d_constants()
    assert d0 == pytest.approx(math.pi / 6, rel=1e-10)
    assert d1 == pytest.approx(math.pi / 6, rel=1e-10)


def test_bubble_masses():
    assert bubble_mass() == pytest.approx(8 * math.pi)
    assert bubble_mass(half=True) == pytest.approx(4 * math.pi)
    assert bubble_mass(0.1, r_max=1.0) == pytest.approx(8 * math.pi / 1.01)


def _green(robin, rho=8 * math.pi):
    return SimpleNamespace(source=np.array([0.5, 0.5]), rho=rho, robin=robin)


@pytest.mark.parametrize("v, robin, tau", [
    (8.0, 0.0, 1.0),
    (8.0 * math.e, 0.0, math.sqrt(math.e)),
    (8.0, 1 / (8 * math.pi), math.sqrt(math.e)),
])
def test_scaling_for_a_single_point(v, robin, tau):
    V = lambda p: np.full(len(np.atleast_2d(p)), v)  # noqa: E731
    assert scaling_tau([_green(robin)], V, 0) == pytest.approx(tau, rel=1e-12)


def test_nonpositive_weight_rejected():
    with pytest.raises(ValidationError):
        scaling_tau([_green(0.0)], lambda p: np.zeros(1), 0)


def _log_bubble(b, pts):
    return math.log(8 * b.tau**2) + b.profile(pts)


def test_derivative_functions_are_parameter_derivatives():
    b = Bubble(np.array([0.5, 0.5]), 1.2, 0.01, 8 * math.pi, 0.25)
    pts = np.array([[0.52, 0.49], [0.6, 0.55], [0.45, 0.5]])
    h = 1e-6
    fd_tau = (_log_bubble(dataclasses.replace(b, tau=b.tau + h), pts)
              - _log_bubble(dataclasses.replace(b, tau=b.tau - h), pts)) / (2 * h)
    assert np.allclose(b.psi(0, pts), fd_tau, rtol=1e-6)
    for j, e in ((1, [h, 0.0]), (2, [0.0, h])):
        e = np.array(e)
        fd = (_log_bubble(dataclasses.replace(b, center=b.center + e), pts)
              - _log_bubble(dataclasses.replace(b, center=b.center - e), pts)) / (2 * h)
        assert np.allclose(b.psi(j, pts), fd, rtol=1e-5)
    with pytest.raises(ValidationError):
        b.psi(3, pts)


def test_wide_bubble_rejected():
    with pytest.raises(ValidationError):
        Bubble(np.zeros(2), 1.0, 0.1, 8 * math.pi, 0.2)


def test_projections_have_zero_mean(centre_state):
    op = centre_state.op
    for f in [*centre_state.PU, *centre_state.PPsi.values()]:
        assert abs(op.mean(f)) < 1e-10
    assert centre_state.mass_number == 2
    assert centre_state.kernel_keys == [(0, 1), (0, 2)]


def test_source_total_close_to_concentration_mass(centre_state):
    assert centre_state.rhs_totals[0] == pytest.approx(8 * math.pi, rel=0.01)
