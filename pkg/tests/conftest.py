import functools
import time

import pytest

from pobstacle import fem
from pobstacle.mesh import Domain
from pobstacle.obstacle import Obstacle
from pobstacle.profile import ProfileParams, build_profile, u_eval

SESSION_START = time.perf_counter()
SUITE_BUDGET_S = 15 * 60

# acceptance criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@functools.lru_cache(maxsize=None)
def cached_profile(p, k=1, n_grid=4097):
    return build_profile(ProfileParams(p, k, n_grid))


@functools.lru_cache(maxsize=None)
def cached_solve(p, h, tol=1e-6):
    """Disk solve with obstacle -|x|^2 and boundary data from the k=1 profile."""
    prof = cached_profile(p)
    spec = fem.ProblemSpec(p, Obstacle.quadratic(0.0, 1.0), lambda X: u_eval(prof, X),
                           Domain.disk(1.0))
    return spec, fem.solve(spec, fem.SolverConfig(tol=tol), h=h)


@pytest.fixture(scope="session")
def profile():
    return cached_profile


@pytest.fixture(scope="session")
def discrete():
    return cached_solve


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    elapsed = time.perf_counter() - SESSION_START
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    tr.write_line(f"suite runtime {elapsed:.1f} s (budget {SUITE_BUDGET_S} s): "
                  f"{'PASS' if elapsed < SUITE_BUDGET_S else 'FAIL'}")


def pytest_sessionfinish(session, exitstatus):
    if ACCEPTANCE and time.perf_counter() - SESSION_START >= SUITE_BUDGET_S:
        session.exitstatus = 1
