import numpy as np
import pytest

from nntc.oracle import SeparationRequest
from nntc.tensor import ObservationSet, Shape


def random_request(rng, dims, lam=None, K=2.0, Phi=1.0, full=False):
    """Random separation instance on a random subset of the indices of ``dims``."""
    shape = Shape(tuple(dims))
    idx = shape.all_indices()
    if not full:
        keep = rng.random(len(idx)) < 0.7
        keep[rng.integers(len(idx))] = True
        idx = idx[keep]
    obs = ObservationSet(shape, idx, np.zeros(len(idx)))
    lam = float(rng.choice([0.5, 1.0, 2.0])) if lam is None else lam
    c = rng.normal(size=obs.u)
    psi = rng.uniform(0, lam, size=obs.u)
    return SeparationRequest.from_obs(obs, c, psi, lam, K, Phi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
