import numpy as np
import pytest

from backdoor_diffusion.net import DenoiserNet


def constant_eps_net(x_dim, cond_dim, value, embed_dim=4):
    """Affine net whose output is ``value`` for every input (zero weights, bias = value)."""
    net = DenoiserNet(x_dim, cond_dim, embed_dim, hidden=())
    p = np.zeros(net.n_params)
    p[-x_dim:] = value
    net.params[:] = p
    return net


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
