import numpy as np
import pytest

from novalley import _backend


@pytest.fixture(params=_backend.available())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def record():
    """Log one acceptance line: ``record(n, ok, detail)``."""
    def _record(n, ok, detail=""):
        ACCEPTANCE.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())
        print(ACCEPTANCE[-1])
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
