import numpy as np
import pytest

from dtrsim.core import Env, EnvSpec
from dtrsim.envs import ENVIRONMENTS, make_env


class ConstantEnv(Env):
    """Deterministic toy: reward is always ``reward``; episode lasts ``length`` steps."""

    default_params = np.zeros(0)

    def __init__(self, reward=0.0, length=5, n_actions=2):
        super().__init__()
        self.reward = reward
        self.spec = EnvSpec("ConstantEnv", 1, n_actions, length, 1.0, ("x",), (0.0,), (1.0,),
                            state_names=("x",), action_names=("a",))
        self._x = np.zeros(1)
        self.params = self.default_params

    @property
    def state(self):
        return self._x

    def observe(self):
        return self._x.copy()

    def action_map(self, index):
        return np.array([float(index)])

    def _reset_state(self):
        self._x = np.zeros(1)

    def _advance(self, raw):
        self._x = np.array([min(1.0, self._x[0] + 0.1)])
        return self.reward, False


@pytest.fixture
def constant_env():
    return ConstantEnv()


@pytest.fixture(params=sorted(ENVIRONMENTS))
def any_env(request):
    return make_env(request.param)


# ------------------------------------------------------------ acceptance summary
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None or (report.when != "call" and report.passed):
        return
    n, title = marker
    ok = report.passed and not hasattr(report, "wasxfail")
    prev = _CRITERIA.get(n, (title, True, False))
    _CRITERIA[n] = (title, prev[1] and ok, prev[2] or hasattr(report, "wasxfail"))


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = tuple(m.args)
    return report


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, known = _CRITERIA[n]
        status = "PASS" if ok else ("FAIL (expected failure)" if known else "FAIL")
        terminalreporter.write_line(f"criterion {n:2d} {status}  {title}")
