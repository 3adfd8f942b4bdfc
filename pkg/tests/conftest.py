import numpy as np
import pytest

from bsnmani.model import Dataset, Hyperparams, ModelState
from bsnmani.numerics import devecl, polar_expand


def random_instance(seed, N=6, q=2, M=4, r=2, noise=0.3):
    """Networks from a random low-rank model plus outcomes; returns (data, state)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((N, q))
    u = polar_expand(x)
    lam = rng.exponential(1.0, size=(M, q)) + 0.5
    P = N * (N - 1) // 2
    Y = (u[None] * lam[:, None, :]) @ u.T
    idx = np.arange(N)
    Y[:, idx, idx] = 0.0
    E = devecl(noise * rng.standard_normal((M, P)), N)
    Y = Y + E
    Z = rng.standard_normal((M, r))
    beta = rng.standard_normal(q)
    alpha = rng.standard_normal(r)
    C = lam @ beta + Z @ alpha + 0.5 * rng.standard_normal(M)
    data = Dataset(Y, C, Z)
    state = ModelState(x=x, lambdas=lam, sigma_sq=noise ** 2 + 0.05, beta=beta, alpha=alpha,
                       tau_sq=0.4, tau_lambda_sq=1.3, tau_beta_sq=0.8, tau_alpha_sq=1.7)
    return data, state


@pytest.fixture
def hyper():
    return Hyperparams()


@pytest.fixture
def instance():
    return random_instance(0)
