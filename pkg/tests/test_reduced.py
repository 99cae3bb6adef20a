import math
from types import SimpleNamespace

import numpy as np
import pytest

from ksblowup.errors import ValidationError
from ksblowup.expr import parse_expression
from ksblowup.geometry import DomainSpec
from ksblowup.green import disk_oracle_robin_gradient
from ksblowup.reduced import (Configuration, boundary_divergence_probe, corner_distance, model_for,
                              reduced_functional)

DISK = DomainSpec.unit_disk(target_h=0.05)


def _const(v):
    return lambda p: np.full(len(np.atleast_2d(p)), v)


def test_single_interior_point_formula():
    rho, robin = 8 * math.pi, 0.03
    cfg = Configuration(np.array([[0.1, 0.0]]), [], 0.1)
    g = SimpleNamespace(source=np.array([0.1, 0.0]), rho=rho, robin=robin)
    assert reduced_functional(cfg, [g], _const(2.0)) == pytest.approx(rho**2 * robin + 2 * rho * math.log(2.0))


def test_single_boundary_point_formula():
    rho, robin = 4 * math.pi, -0.2
    cfg = Configuration(np.zeros((0, 2)), [0.0], 0.1)
    g = SimpleNamespace(source=np.array([1.0, 0.0]), rho=rho, robin=robin)
    assert reduced_functional(cfg, [g], _const(3.0)) == pytest.approx(rho**2 * robin + 2 * rho * math.log(3.0))


def test_green_count_must_match():
    cfg = Configuration(np.array([[0.1, 0.0], [-0.3, 0.0]]), [], 0.1)
    g = SimpleNamespace(source=np.array([0.1, 0.0]), rho=8 * math.pi, robin=0.0)
    with pytest.raises(ValidationError):
        reduced_functional(cfg, [g], _const(1.0))


@pytest.fixture(scope="module")
def two_points():
    cfg = Configuration(np.array([[0.3, 0.2], [-0.2, -0.35]]), [], 0.1)
    return cfg, model_for(DISK, cfg, _const(1.0), resolution=12)


def test_weight_scaling_shifts_by_constant(two_points):
    cfg, model = two_points
    base = model.value(cfg)
    model.V = _const(5.0)
    shifted = model.value(cfg)
    model.V = _const(1.0)
    assert shifted - base == pytest.approx(2 * math.log(5.0) * 16 * math.pi, rel=1e-12)


def test_relabelling_is_bitwise_invariant(two_points):
    cfg, model = two_points
    swapped = Configuration(cfg.interior[::-1], [], cfg.delta)
    assert model.value(cfg) == model.value(swapped)


def test_gradient_includes_log_weight():
    cfg = Configuration(np.array([[0.3, 0.0]]), [], 0.1)
    V = parse_expression("exp(x1)")
    grad = model_for(DISK, cfg, V, resolution=12).gradient(cfg)
    rho = 8 * math.pi
    expected = rho**2 * disk_oracle_robin_gradient([0.3, 0.0]) + 2 * rho * np.array([1.0, 0.0])
    assert np.allclose(grad, expected, rtol=0.05, atol=0.5)


def test_interior_point_running_into_the_boundary_diverges():
    path = lambda t: Configuration(np.array([[1.0 - t, 0.0]]), [], 0.01)  # noqa: E731
    report = boundary_divergence_probe(path, [0.3, 0.2, 0.1], DISK, _const(1.0))
    assert report.status == "diverging"
    assert report.slope > 0
    vanishing = boundary_divergence_probe(path, [0.3, 0.2], DISK, _const(1.0), weight_vanishes=True)
    assert vanishing.status == "indeterminate"


def test_corner_distance():
    square = DomainSpec.rectangle()
    d = corner_distance(square, np.array([[0.5, 0.0], [0.1, 0.0]]))
    assert np.allclose(d, [0.5, 0.1])
    assert np.isinf(corner_distance(DISK, np.array([[1.0, 0.0]]))).all()
    cfg = Configuration(np.zeros((0, 2)), [0.05], 0.01)
    assert any("corner" in v for v in cfg.violations(square))
