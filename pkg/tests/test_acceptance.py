"""Acceptance battery: one test per criterion, each printing a PASS/FAIL line.

The sweep-based criteria (5, 8, 9, 10) share one epsilon sweep of a single
interior bubble at the centre of the unit square. Criterion 10 also runs a
boundary bubble at the midpoint of the lower edge.
"""
import os

import pytest

from ksblowup import checks
from ksblowup.config import RunConfig
from ksblowup.verify import sweep

RESULTS: dict[int, object] = {}
JOBS = max(1, min(4, os.cpu_count() or 1))

BOUNDARY_CONFIG = {"domain": {"shape": "rectangle", "width": 1.0, "height": 1.0}, "k": 0, "l": 1,
                   "boundary_s": [0.5]}


@pytest.fixture(scope="module")
def primary_report():
    return sweep(RunConfig.from_dict(checks.PRIMARY_CONFIG), jobs=JOBS)


@pytest.fixture(scope="module")
def boundary_report():
    return sweep(RunConfig.from_dict(BOUNDARY_CONFIG), jobs=JOBS)


def _record(row):
    RESULTS[row.id] = row
    line = f"criterion {row.id:2d} {'PASS' if row.passed else 'FAIL'}  {row.name}: {row.value} ({row.threshold})"
    print(line)
    assert row.passed, f"{line} {row.detail}"


def _sweep_row(report, cid):
    return next(r for r in report.criteria if r.id == cid)


def test_criterion_01_fem_oracle():
    _record(checks._guard(checks.check_fem_oracle, 1))


def test_criterion_02_green_function():
    _record(checks._guard(checks.check_green, 2))


def test_criterion_03_robin_boundary_divergence():
    _record(checks._guard(checks.check_robin_divergence, 3))


def test_criterion_04_constants():
    _record(checks._guard(checks.check_constants, 4))


def test_criterion_05_bubble_projections(primary_report):
    _record(_sweep_row(primary_report, 5))


def test_criterion_06_masses():
    _record(checks._guard(checks.check_masses, 6))


def test_criterion_07_energy_expansion(primary_report):
    _record(checks._guard(lambda: checks.check_energy(primary_report), 7))


def test_criterion_08_fixed_point(primary_report):
    _record(_sweep_row(primary_report, 8))


def test_criterion_09_invertibility(primary_report):
    _record(_sweep_row(primary_report, 9))


def test_criterion_10_concentration(primary_report, boundary_report):
    interior, boundary = _sweep_row(primary_report, 10), _sweep_row(boundary_report, 10)
    row = checks.CriterionRow(10, interior.name, interior.passed and boundary.passed,
                              f"interior {interior.value}; boundary {boundary.value}", interior.threshold,
                              f"interior: {interior.detail}; boundary: {boundary.detail}")
    _record(row)


def test_criterion_11_reduced_functional():
    _record(checks._guard(checks.check_reduced, 11))


def test_criterion_12_singular_weight():
    _record(checks._guard(checks.check_singular, 12))


def test_criterion_13_determinism():
    _record(checks._guard(lambda: checks.check_determinism(JOBS), 13))
