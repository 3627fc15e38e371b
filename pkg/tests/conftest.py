import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "igasolid", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("igasolid")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_deformation(rng, n=1, jrange=(0.5, 2.0)):
    """Random deformation gradients with ``det F`` drawn from ``jrange``."""
    F = np.eye(3) + 0.3 * rng.standard_normal((n, 3, 3))
    J = np.linalg.det(F)
    while np.any(J <= 0.05):
        bad = J <= 0.05
        F[bad] = np.eye(3) + 0.3 * rng.standard_normal((int(bad.sum()), 3, 3))
        J = np.linalg.det(F)
    target = rng.uniform(*jrange, size=n)
    return F * np.cbrt(target / J)[:, None, None]


def random_rotation(rng):
    Q, R = np.linalg.qr(rng.standard_normal((3, 3)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] *= -1
    return Q


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Recorder for one acceptance criterion; an unrecorded criterion is reported as failed."""
    k = request.node.get_closest_marker("criterion").args[0]

    def record(ok: bool, detail: str) -> bool:
        ACCEPTANCE[k] = (bool(ok), detail)
        return bool(ok)
    yield record
    if k not in ACCEPTANCE:
        ACCEPTANCE[k] = (False, "did not complete")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")
    config.addinivalue_line("markers", "acceptance: long end-to-end acceptance run")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
