import math

import numpy as np
import pytest

from ksblowup.config import RunConfig
from ksblowup.errors import ValidationError
from ksblowup.reduction import LinearizedOperator, kernel_basis
from ksblowup.verify import (CriterionRow, _clean, criteria_csv, rate_fit, spectral_probe, sweep)

EPS = np.array([0.1, 0.07, 0.05, 0.035])


def test_pure_power_slope():
    fit = rate_fit(EPS, 3.0 * EPS**2)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.fit_residual < 1e-12
    assert not fit.no_decay


def test_log_corrected_slope():
    fit = rate_fit(EPS, EPS * np.abs(np.log(EPS)), log_correction=True)
    assert fit.slope == pytest.approx(1.0, abs=1e-6)
    plain = rate_fit(EPS, EPS * np.abs(np.log(EPS)))
    assert plain.slope < 0.95


def test_constant_residual_flags_no_decay():
    assert rate_fit(EPS, np.full(4, 0.3)).no_decay


def test_nonpositive_residuals_are_excluded():
    fit = rate_fit(EPS, [0.01, 0.0, 0.0025, 0.001225])
    assert fit.excluded == [0.07] and fit.n == 3
    with pytest.raises(ValidationError):
        rate_fit(EPS, [1.0, 0.0, -1.0, 2.0])


def test_empty_schedule_rejected():
    with pytest.raises(ValidationError, match="empty schedule"):
        sweep(RunConfig(epsilons=[]))


def test_probe_of_identity_gives_one(centre_state):
    basis = kernel_basis(centre_state)
    lin = LinearizedOperator(centre_state, basis, np.zeros_like(centre_state.nonlinearity_qp()))
    assert spectral_probe(centre_state, basis, dim=8, operator=lin) == pytest.approx(1.0, abs=1e-8)


def test_probe_dimension_checked(centre_state):
    with pytest.raises(ValidationError):
        spectral_probe(centre_state, dim=0)


def test_report_rows_are_rounded():
    rows = [CriterionRow(5, "x", True, 1.23456789012345, 2.0, "d"), CriterionRow(6, "y", False, math.nan, 1.0, "")]
    text = criteria_csv(rows)
    assert text.splitlines()[0].startswith("criterion")
    assert len(text.splitlines()) == 3
    assert _clean(math.nan) is None
    assert _clean(1.23456789012345) == 1.23456789
