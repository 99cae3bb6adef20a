import sys

import numpy as np
import pytest

from ksblowup.ansatz import build_ansatz, unit_weight
from ksblowup.fem import assemble
from ksblowup.geometry import DomainSpec, generate_mesh


@pytest.fixture(scope="session")
def square():
    return DomainSpec.rectangle(1.0, 1.0, target_h=0.05)


@pytest.fixture(scope="session")
def disk():
    return DomainSpec.unit_disk(target_h=0.05)


@pytest.fixture(scope="session")
def square_op(square):
    return assemble(generate_mesh(square), 0.0)


@pytest.fixture(scope="session")
def square_op_beta(square):
    return assemble(generate_mesh(square), 1.0)


@pytest.fixture(scope="session")
def centre_state(square):
    """One interior bubble at the middle of the unit square, eps = 0.1."""
    return build_ansatz(square, np.array([[0.5, 0.5]]), 0.1, unit_weight)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    RESULTS = getattr(module, "RESULTS", None)
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(RESULTS):
        row = RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:2d} {'PASS' if row.passed else 'FAIL'}  {row.name}: "
                                    f"{row.value}  [{row.threshold}]")
