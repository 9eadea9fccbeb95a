import functools

import numpy as np
import pytest

from intcones import shapes
from intcones.mesh import Mesh

# criterion id -> list of (test passed, detail) from tests marked criterion(k)
CRITERIA: dict[int, list[tuple[bool, str]]] = {}


@functools.lru_cache(maxsize=None)
def mesh_cache(name: str, *args) -> Mesh:
    return getattr(shapes, name)(*args)


@pytest.fixture
def tetra():
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]])
    return Mesh(v, f)


@pytest.fixture
def cube():
    return mesh_cache("cube")


@pytest.fixture
def disk():
    return mesh_cache("flat_disk")


@pytest.fixture
def sphere642():
    return mesh_cache("icosphere", 3)


@pytest.fixture
def flat_torus8():
    return mesh_cache("flat_torus", 8)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number k")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    failed_setup = rep.when == "setup" and not rep.passed
    if rep.when == "call" or failed_setup:
        details = [str(v) for k, v in item.user_properties if k == "detail"]
        text = "; ".join(details) if rep.passed else f"{item.name} failed"
        CRITERIA.setdefault(mark.args[0], []).append((rep.passed, text))


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(CRITERIA):
        results = CRITERIA[k]
        ok = all(p for p, _ in results)
        detail = " | ".join(d for _, d in results if d)
        tr.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
