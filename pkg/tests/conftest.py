import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from msmissing.data import PanelDataset

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def panel(V, L1, L2, A, Y):
    """Dataset from nested lists; ``None`` marks a missing cell."""

    def arr(x):
        return np.array([[np.nan if v is None else v for v in row] for row in x], dtype=float)

    V = np.asarray(V, dtype=float)
    Y = np.array([np.nan if v is None else v for v in Y], dtype=float)
    return PanelDataset.from_arrays(V=V, L1=arr(L1), L2=arr(L2), A=arr(A), Y=Y)


@pytest.fixture
def tiny_panel():
    return panel(
        V=[0.1, -0.3],
        L1=[[1, 0, 1], [0, 0, 1]],
        L2=[[0.5, 1.5, 2.0], [-1.0, 0.2, 0.4]],
        A=[[0, 1, 1], [0, 0, 0]],
        Y=[3.5, 1.25],
    )


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
