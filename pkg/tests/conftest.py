import math

import numpy as np
import pytest

from mfgcap.model import InversePrice, LinearPrice, ModelParams


def params_33(T=5.0, **kw):
    """Desk-scale parameter set: X0 = 30 GW, alpha = 1400 $/kW, 1/beta = 5."""
    base = dict(r=0.1, delta=math.log(2) / 10, T=T, h=3000.0, alpha=1.4e6, beta=0.2,
                c=15.0, N=10.0, X0=30000.0)
    base.update(kw)
    return ModelParams(**base)


def params_432(T=1.0, **kw):
    """Small set used to compare the two heterogeneous methods (X0 = 0.1 MW total)."""
    base = dict(r=0.05, delta=math.log(2) / 10, T=T, h=1.0, alpha=0.1, beta=0.1,
                c=1.0, N=10.0, X0=0.1)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture
def p33():
    return params_33()


@pytest.fixture
def lin33():
    return LinearPrice(500.0, 0.01)


@pytest.fixture
def inv33():
    return InversePrice(6.5e6)


@pytest.fixture
def p432():
    return params_432()


@pytest.fixture
def lin432():
    return LinearPrice(2.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (bool(ok), detail)
        return bool(ok)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
