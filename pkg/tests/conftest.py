import numpy as np
import pytest

from wpmec.model import EhParams, SystemParams, UserParams


@pytest.fixture
def table_iv():
    """System constants from the standard simulation setup."""
    def make(K=1, P_th=0.025, **kw):
        return SystemParams(K=K, P_th=P_th, **kw)
    return make


@pytest.fixture
def default_users():
    """Two-user reference scenario used across the suite."""
    return [UserParams(h=1.0, g=8e-7, R_min=1e4),
            UserParams(h=0.8, g=2.4e-6, R_min=1e4)]


@pytest.fixture
def single_user():
    return UserParams(h=0.8, g=2e-6, R_min=1e4)


def random_instance(rng, K=None, R_min=1e4):
    """Seeded random instance with ascending uplink gains."""
    if K is None:
        K = int(rng.integers(1, 5))
    users = sorted(
        [UserParams(h=float(rng.uniform(0.4, 1.5)),
                    g=float(10 ** rng.uniform(-6.5, -5.0)), R_min=R_min)
         for _ in range(K)], key=lambda u: u.g)
    sysp = SystemParams(K=K, P_th=float(rng.uniform(0.01, 0.04)))
    return users, sysp
