import numpy as np
import pytest

from delaymdp.model import DelayDistribution, PrimalMdp, make_delay


def random_primal(rng: np.random.Generator, n_s: int, n_a: int,
                  cost_scale: float = 10.0) -> PrimalMdp:
    """Random instance with strictly positive rows, so the one-epoch
    unichain entrance condition holds for any witness state."""
    P = rng.dirichlet(np.ones(n_s), size=(n_a, n_s)) + 0.02
    P /= P.sum(axis=2, keepdims=True)
    C = rng.random((n_s, n_a)) * cost_scale
    return PrimalMdp(P, C)


def random_delay(rng: np.random.Generator, max_atoms: int = 3,
                 y_cap: int = 6) -> DelayDistribution:
    k = int(rng.integers(1, max_atoms + 1))
    support = sorted(rng.choice(np.arange(1, y_cap + 1), size=k, replace=False))
    probs = rng.dirichlet(np.ones(k))
    return make_delay("explicit", support=support, probs=probs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
