"""Joint MALA-within-Gibbs sampler and posterior draw containers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .gibbs import SIGMA_SQ_FLOOR, gibbs_sweep
from .mala import MalaConfig, MalaKernel
from .model import Hyperparams, ModelState, TraceTarget, log_joint, network_residual_ss, projected_diag
from .numerics import ConfigurationError, NumericalError, make_rng

log = logging.getLogger(__name__)

SCALAR_FIELDS = ("sigma_sq", "tau_sq", "tau_lambda_sq", "tau_beta_sq", "tau_alpha_sq")

# RNG stream ids within one chain
GIBBS_STREAM, MALA_STREAM, STAGE2_STREAM, IMH_STREAM = 0, 1, 2, 3


class InvariantViolation(NumericalError):
    pass


@dataclass
class SamplerConfig:
    iters: int = 5000
    burn_in: int = 2500
    thin: int = 1
    seed: int = 0
    q: int = 3
    mala: MalaConfig = field(default_factory=MalaConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    adapt_after_burnin: bool = False
    stage2_sweeps: int = 5
    sparse_level: int = 6
    hermite_nodes: int = 32

    def __post_init__(self):
        if self.q < 1:
            raise ConfigurationError("q must be >= 1")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")
        if not 0 <= self.burn_in < self.iters:
            raise ConfigurationError("need 0 <= burn_in < iters")
        if self.stage2_sweeps < 1:
            raise ConfigurationError("stage2_sweeps must be >= 1")

    @property
    def n_draws(self):
        return (self.iters - self.burn_in) // self.thin

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws plus per-iteration traces."""

    u: np.ndarray            # (D, N, q)
    lambdas: np.ndarray      # (D, M, q)
    beta: np.ndarray         # (D, q)
    alpha: np.ndarray        # (D, r)
    sigma_sq: np.ndarray     # (D,)
    tau_sq: np.ndarray
    tau_lambda_sq: np.ndarray
    tau_beta_sq: np.ndarray
    tau_alpha_sq: np.ndarray
    iterations: np.ndarray   # (D,) 1-based iteration index of each draw
    step_size: np.ndarray = field(default_factory=lambda: np.zeros(0))   # (K,)
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    log_joint: np.ndarray = field(default_factory=lambda: np.zeros(0))
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.u.shape[0]

    @property
    def d(self):
        return np.hstack([self.beta, self.alpha])

    def mean(self, name):
        return getattr(self, name).mean(axis=0)

    def state(self, j):
        u = self.u[j]
        return ModelState(x=u.copy(), u=u.copy(), lambdas=self.lambdas[j].copy(),
                          beta=self.beta[j].copy(), alpha=self.alpha[j].copy(),
                          **{f: float(getattr(self, f)[j]) for f in SCALAR_FIELDS})

    def copy(self):
        return replace(self, **{k: np.array(getattr(self, k)) for k in
                                ("u", "lambdas", "beta", "alpha", "iterations") + SCALAR_FIELDS},
                       info=dict(self.info))

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if self.accepted.size else float("nan")

    def post_burnin_acceptance(self, burn_in):
        acc = self.accepted[burn_in:]
        return float(np.mean(acc)) if acc.size else float("nan")


class _DrawRecorder:
    def __init__(self, n_draws, N, q, M, r):
        self.u = np.empty((n_draws, N, q))
        self.lambdas = np.empty((n_draws, M, q))
        self.beta = np.empty((n_draws, q))
        self.alpha = np.empty((n_draws, r))
        self.scalars = {f: np.empty(n_draws) for f in SCALAR_FIELDS}
        self.iterations = np.empty(n_draws, dtype=int)
        self.n = 0

    def add(self, state, k):
        j = self.n
        self.u[j] = state.u
        self.lambdas[j] = state.lambdas
        self.beta[j] = state.beta
        self.alpha[j] = state.alpha
        for f in SCALAR_FIELDS:
            self.scalars[f][j] = getattr(state, f)
        self.iterations[j] = k
        self.n += 1

    def finish(self, **traces):
        n = self.n
        return PosteriorDraws(self.u[:n], self.lambdas[:n], self.beta[:n], self.alpha[:n],
                              iterations=self.iterations[:n],
                              **{f: v[:n] for f, v in self.scalars.items()}, **traces)


def _sign_fix(vecs):
    # first entry with non-negligible magnitude made positive in every column
    out = vecs.copy()
    for l in range(out.shape[1]):
        col = out[:, l]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            out[:, l] = -col
    return out


def spectral_init_u(Y, q):
    """Top-``q`` eigenvectors of the subject-mean network, sign-normalized."""
    N = Y.shape[1]
    if q > N:
        raise ConfigurationError(f"q={q} exceeds the node count N={N}")
    evals, evecs = np.linalg.eigh(Y.mean(axis=0))
    order = np.argsort(-evals, kind="stable")[:q]
    return _sign_fix(evecs[:, order])


def init_state(data, config):
    """Spectral initialization of the chain."""
    q = config.q
    if q > data.N:
        raise ConfigurationError(f"q={q} exceeds the node count N={data.N}")
    if data.M < q + 1:
        raise ConfigurationError(f"need at least q+1={q + 1} subjects, got {data.M}")
    u0 = spectral_init_u(data.Y, q)
    lam0 = projected_diag(data, u0)
    ss = float(network_residual_ss(data, u0, lam0).sum())
    sigma_sq = max(ss / (data.M * data.P), SIGMA_SQ_FLOOR)
    r = data.r
    alpha0 = np.zeros(r)
    tau_sq = 1.0
    if data.has_outcomes:
        resid = data.C
        if r > 0:
            alpha0 = np.linalg.lstsq(data.Z, data.C, rcond=None)[0]
            resid = data.C - data.Z @ alpha0
        tau_sq = max(float(np.mean(resid ** 2)), SIGMA_SQ_FLOOR)
    return ModelState(x=u0.copy(), u=u0.copy(), lambdas=lam0, sigma_sq=sigma_sq,
                      beta=np.zeros(q), alpha=alpha0, tau_sq=tau_sq,
                      tau_lambda_sq=1.0, tau_beta_sq=1.0, tau_alpha_sq=1.0)


def run_chain(data, config, sweep, state=None, log_density=None, monitor=None):
    """Generic MALA-within-Gibbs loop shared by the joint sampler and stage one.

    ``sweep(state, rng)`` performs the conjugate updates; ``log_density(state)``
    is traced every iteration and must stay finite.
    """
    state = init_state(data, config) if state is None else state
    N, q = state.x.shape
    gibbs_rng = make_rng(config.seed, GIBBS_STREAM)
    kernel = MalaKernel(config.mala, config.mala.initial_step(N, q), make_rng(config.seed, MALA_STREAM))
    K = config.iters
    step_trace = np.empty(K)
    acc_trace = np.zeros(K, dtype=bool)
    lj_trace = np.empty(K)
    rec = _DrawRecorder(config.n_draws, N, q, state.lambdas.shape[0], state.alpha.shape[0])
    if config.burn_in == 0 and not config.adapt_after_burnin:
        kernel.freeze()
    for k in range(1, K + 1):
        sweep(state, gibbs_rng)
        step_trace[k - 1] = kernel.omega
        target = TraceTarget(data.Y, state.lambdas, state.sigma_sq)
        t = kernel.step(state.x, target.value_and_grad)
        if t.accepted:
            state.set_x(t.x)
        acc_trace[k - 1] = t.accepted
        if k == config.burn_in and not config.adapt_after_burnin:
            kernel.freeze()
        if log_density is not None:
            lj = log_density(state)
            if not np.isfinite(lj):
                raise InvariantViolation(f"non-finite log density at iteration {k}")
            lj_trace[k - 1] = lj
        if monitor is not None:
            monitor(k, state)
        if k > config.burn_in and (k - config.burn_in) % config.thin == 0:
            rec.add(state, k)
    traces = dict(step_size=step_trace, accepted=acc_trace,
                  log_joint=lj_trace if log_density is not None else np.zeros(0))
    draws = rec.finish(**traces)
    draws.info["final_step_size"] = kernel.omega
    draws.info["post_burnin_acceptance"] = draws.post_burnin_acceptance(config.burn_in)
    return draws


def run_joint(data, config):
    """Joint posterior sampling: full Gibbs sweep, MALA move on ``X``, polar expansion to ``U``."""
    if not data.has_outcomes:
        raise ConfigurationError("joint sampler needs clinical outcomes")
    if data.M < 1:
        raise ConfigurationError("empty dataset")
    hyper = config.hyper
    draws = run_chain(data, config,
                      sweep=lambda s, rng: gibbs_sweep(s, data, hyper, rng),
                      log_density=lambda s: log_joint(s, data, hyper))
    draws.info["sampler"] = "joint"
    log.info("joint sampler: %d draws, post-burn-in MALA acceptance %.3f",
             len(draws), draws.info["post_burnin_acceptance"])
    return draws


# ---------------------------------------------------------------------------
# Label alignment
# ---------------------------------------------------------------------------

def match_columns(reference, u):
    """Permutation and signs mapping columns of ``u`` onto ``reference``.

    Returns ``(perm, signs)`` such that ``u[:, perm] * signs`` best matches
    ``reference`` column by column.
    """
    sim = reference.T @ u
    rows, cols = linear_sum_assignment(-np.abs(sim))
    perm = cols[np.argsort(rows)]
    signs = np.sign(sim[np.arange(sim.shape[0]), perm])
    signs[signs == 0] = 1.0
    return perm, signs


def align_draws(draws, reference=None):
    """Resolve column permutation and sign symmetry against a reference ``U``.

    ``reference`` defaults to the first draw. A permutation moves ``U``
    columns, loading columns and ``beta`` entries together. A sign flip of
    ``u_l`` leaves ``u_l u_l'`` unchanged, so it is applied to ``U`` alone;
    fitted networks and ``beta' lambda_i`` are both preserved.
    """
    if len(draws) == 0:
        raise ValueError("no draws to align")
    ref = draws.u[0] if reference is None else np.asarray(reference, dtype=float)
    out = draws.copy()
    for j in range(len(draws)):
        perm, signs = match_columns(ref, draws.u[j])
        out.u[j] = draws.u[j][:, perm] * signs
        out.lambdas[j] = draws.lambdas[j][:, perm]
        out.beta[j] = draws.beta[j][perm]
    return out


def mcse(x, n_batches=20):
    """Batch-means Monte Carlo standard error of the mean of a chain (along axis 0)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    b = max(1, n // n_batches)
    nb = n // b
    if nb < 2:
        return np.std(x, axis=0, ddof=1) / np.sqrt(n)
    means = x[: nb * b].reshape((nb, b) + x.shape[1:]).mean(axis=1)
    return np.std(means, axis=0, ddof=1) / np.sqrt(nb)
