import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stereomamba._accel import HAS_NUMBA, backend, set_backend

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = ["numba", "numpy"] if HAS_NUMBA else ["numpy"]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=BACKENDS)
def kernel_backend(request):
    """Run the test once per kernel backend, restoring the previous one afterwards."""
    prev = backend()
    set_backend(request.param)
    yield request.param
    set_backend(prev)


_VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict(n, ok, detail)`` prints and records one acceptance line, then asserts ``ok``."""
    def record(n, ok, detail):
        line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        _VERDICTS.append((n, line))
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
