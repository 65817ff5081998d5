import random
import sys
from pathlib import Path

import pytest

from graphguard import _kernels, _pure

FIXTURES = Path(__file__).parent / "fixtures"

try:
    from graphguard import _speedups
except ImportError:  # extension not built
    _speedups = None

BACKENDS = {"python": _pure}
if _speedups is not None:
    BACKENDS["cython"] = _speedups


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available byte-scanning backend."""
    module = BACKENDS[request.param]
    monkeypatch.setattr(_kernels, "split_message", module.split_message)
    monkeypatch.setattr(_kernels, "scan_parameters", module.scan_parameters)
    return request.param


@pytest.fixture
def fixtures():
    return FIXTURES


@pytest.fixture
def rng():
    return random.Random(20240501)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
