import os

# the runtime criterion is stated for a single core
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import time  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402
from hypothesis import HealthCheck, settings  # noqa: E402

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []
ORDER_CAP = 64
SUITE_LIMIT = 600.0


def random_hermitian(rng, n):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2


def random_matrix(rng, n, m=None):
    return rng.normal(size=(n, m or n)) + 1j * rng.normal(size=(n, m or n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config._iogames_t0 = time.perf_counter()


@pytest.hookimpl(tryfirst=True)
def pytest_sessionfinish(session, exitstatus):
    if not ACCEPTANCE_LINES:
        return
    wall = time.perf_counter() - session.config._iogames_t0
    ok = wall < SUITE_LIMIT
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] criterion 7 (wall time): "
                            f"session took {wall:.0f} s (limit {SUITE_LIMIT:.0f} s)")
    if not ok and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
