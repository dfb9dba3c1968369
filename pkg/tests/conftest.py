import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class ConstantModel:
    """eps_theta that ignores its inputs."""

    def __init__(self, value, data_dim=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.data_dim = data_dim if data_dim is not None else self.value.shape[-1]
        self.n_queries = 0

    def __call__(self, xt, t, cond=None):
        self.n_queries += 1
        xt = np.asarray(xt, dtype=np.float64)
        return np.broadcast_to(self.value, xt.shape).copy()


class LinearModel:
    """eps_theta(x, t) = x @ A + t * b, smooth but not constant across steps."""

    def __init__(self, A, b):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.data_dim = self.A.shape[0]
        self.n_queries = 0

    def __call__(self, xt, t, cond=None):
        self.n_queries += 1
        xt = np.asarray(xt, dtype=np.float64)
        return xt @ self.A + float(t) * self.b


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_c" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("result", "")
        status = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE[report.nodeid.split("::")[-1]] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[name]
        label = name[len("test_"):]
        terminalreporter.write_line(f"{status} {label}: {detail}")
