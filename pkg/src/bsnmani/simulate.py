"""Synthetic datasets with block subnetworks and SNR-calibrated noise."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import Dataset
from .numerics import ConfigurationError, devecl, exponential, make_rng, vecl

# generator streams, one per random component so that changing one SNR
# leaves every other draw untouched
LAMBDA_STREAM, NOISE_STREAM, COVARIATE_STREAM, OUTCOME_STREAM, EDGE_VAR_STREAM = 10, 11, 12, 13, 14


def default_beta(q):
    return np.array([(1.0 if l % 2 == 0 else -1.0) * 0.5 ** (l // 2) for l in range(q)])


def default_alpha(r):
    return np.array([0.5 if k % 2 == 0 else -0.5 for k in range(r)])


@dataclass
class SimConfig:
    n_nodes: int = 30
    rank: int = 3
    n_subjects: int = 390
    snr_y: float = 0.5
    snr_c: float = 3.0
    lambda_rate: float = 1.0
    beta_true: Optional[Sequence[float]] = None
    alpha_true: Optional[Sequence[float]] = None
    n_continuous: int = 1
    n_binary: int = 1
    block_sizes: Optional[Sequence[int]] = None
    heteroscedastic: bool = False
    dispersion: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.rank < 1 or self.rank > self.n_nodes:
            raise ConfigurationError("need 1 <= rank <= n_nodes")
        if self.n_subjects < 1:
            raise ConfigurationError("n_subjects must be >= 1")
        if not (self.snr_y > 0 and self.snr_c > 0):
            raise ConfigurationError("SNR values must be positive (math.inf for noise-free)")
        if not self.lambda_rate > 0:
            raise ConfigurationError("lambda_rate must be positive")
        if self.n_continuous < 0 or self.n_binary < 0:
            raise ConfigurationError("covariate counts must be non-negative")
        if self.heteroscedastic and not self.dispersion > 0:
            raise ConfigurationError("dispersion must be positive")
        r = self.n_continuous + self.n_binary
        self.beta_true = np.asarray(default_beta(self.rank) if self.beta_true is None else self.beta_true, dtype=float)
        self.alpha_true = np.asarray(default_alpha(r) if self.alpha_true is None else self.alpha_true, dtype=float)
        if self.beta_true.shape != (self.rank,):
            raise ConfigurationError(f"beta_true needs {self.rank} entries")
        if self.alpha_true.shape != (r,):
            raise ConfigurationError(f"alpha_true needs {r} entries")
        if self.block_sizes is None:
            self.block_sizes = [self.n_nodes // self.rank] * self.rank
        self.block_sizes = [int(b) for b in self.block_sizes]


@dataclass
class GroundTruth:
    u_true: np.ndarray
    lambdas_true: np.ndarray
    sigma_sq_true: float
    beta_true: np.ndarray
    alpha_true: np.ndarray
    tau_sq_true: float
    edge_variances: Optional[np.ndarray] = field(default=None)

    @property
    def d_true(self):
        return np.concatenate([self.beta_true, self.alpha_true])


def make_block_u(n, q, block_sizes, starts=None):
    """Columns are normalized indicators of disjoint node blocks.

    Blocks are laid out consecutively from node 0 unless ``starts`` is given.
    """
    if len(block_sizes) != q:
        raise ConfigurationError(f"need {q} block sizes, got {len(block_sizes)}")
    if starts is None:
        starts = np.concatenate([[0], np.cumsum(block_sizes)[:-1]]).astype(int)
    used = np.zeros(n, dtype=bool)
    u = np.zeros((n, q))
    for l, (s, b) in enumerate(zip(starts, block_sizes)):
        if b < 1 or s < 0 or s + b > n:
            raise ConfigurationError(f"block {l} ({s}:{s + b}) does not fit in {n} nodes")
        if used[s:s + b].any():
            raise ConfigurationError(f"block {l} overlaps an earlier block")
        used[s:s + b] = True
        u[s:s + b, l] = 1.0 / math.sqrt(b)
    return u


def generate(config):
    """Simulate ``(Dataset, GroundTruth)``.

    Network SNR is the pooled variance of every strict-lower mean-model entry
    over all subjects divided by the noise variance; clinical SNR is the
    variance of the outcome means divided by the outcome noise variance.
    """
    M, N, q = config.n_subjects, config.n_nodes, config.rank
    u = make_block_u(N, q, config.block_sizes)
    lam = exponential(make_rng(config.seed, LAMBDA_STREAM), config.lambda_rate, size=(M, q))
    mean_vecl = vecl((u[None] * lam[:, None, :]) @ u.T)
    v = float(np.var(mean_vecl))
    if v <= 0:
        raise ConfigurationError("mean-model variance is zero; SNR undefined")

    sigma_sq = 0.0 if math.isinf(config.snr_y) else v / config.snr_y
    P = mean_vecl.shape[1]
    edge_var = None
    if config.heteroscedastic and sigma_sq > 0:
        # scaled inverse gamma with mean one and coefficient of variation = dispersion
        a = 2.0 + 1.0 / config.dispersion ** 2
        w = (a - 1.0) / make_rng(config.seed, EDGE_VAR_STREAM).gamma(a, 1.0, size=P)
        edge_var = sigma_sq * w
        scale = np.sqrt(edge_var)[None, :]
    else:
        scale = math.sqrt(sigma_sq)
    noise = make_rng(config.seed, NOISE_STREAM).standard_normal((M, P)) * scale
    Y = devecl(mean_vecl + noise, N)

    cov_rng = make_rng(config.seed, COVARIATE_STREAM)
    Z = np.hstack([cov_rng.standard_normal((M, config.n_continuous)),
                   cov_rng.binomial(1, 0.5, size=(M, config.n_binary)).astype(float)])
    means = lam @ config.beta_true + Z @ config.alpha_true
    tau_sq = 0.0 if math.isinf(config.snr_c) else float(np.var(means)) / config.snr_c
    C = means + math.sqrt(tau_sq) * make_rng(config.seed, OUTCOME_STREAM).standard_normal(M)

    truth = GroundTruth(u, lam, sigma_sq, config.beta_true.copy(), config.alpha_true.copy(),
                        tau_sq, edge_var)
    return Dataset(Y, C, Z), truth


def split(data, n_train):
    """Deterministic train/test split: first ``n_train`` subjects train."""
    if not 0 < n_train < data.M:
        raise ConfigurationError(f"n_train must lie in (0, {data.M})")
    idx = np.arange(data.M)
    return data.subset(idx[:n_train]), data.subset(idx[n_train:])
