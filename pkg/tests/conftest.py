import numpy as np
import pytest

from ddsmc.data import ExcitationSpec, collect
from ddsmc.plants import DisturbanceSpec, make_cart_spring, make_pendulum
from ddsmc.smc import SmcParams
from ddsmc.synthesis import SynthesisConfig, solve

N_DEFAULT = np.array([[1.0, 1.0]])

# lines printed by the acceptance module, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pendulum():
    return make_pendulum()


@pytest.fixture(scope="session")
def cart():
    return make_cart_spring()


@pytest.fixture(scope="session")
def pend_exc():
    return ExcitationSpec(T=30, input_range=(-0.5, 0.5), seed=0)


@pytest.fixture(scope="session")
def pend_dist():
    return DisturbanceSpec(delta=0.01, seed=0)


@pytest.fixture(scope="session")
def pend_data(pendulum, pend_dist, pend_exc):
    return collect(pendulum, pend_dist, pend_exc)


@pytest.fixture(scope="session")
def syn_cfg():
    return SynthesisConfig(N=N_DEFAULT)


@pytest.fixture(scope="session")
def pend_result(pendulum, pend_data, syn_cfg):
    res = solve(pend_data, pendulum.B, pendulum.D, syn_cfg)
    assert res.feasible, res.message
    return res


@pytest.fixture(scope="session")
def smc_params():
    return SmcParams(N=N_DEFAULT, q=0.1, sigma=0.1, rho=[0.5])
