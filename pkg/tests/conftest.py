import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thermomech.mesh import build_box_mesh, uniform_refine

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture
def cube():
    """6-tet unit cube."""
    return build_box_mesh(1, 1, 1)


@pytest.fixture
def cube48():
    return build_box_mesh(2, 2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def refine(mesh, k):
    for _ in range(k):
        mesh = uniform_refine(mesh)
    return mesh


_ACCEPTANCE = pytest.StashKey()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the flag."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
