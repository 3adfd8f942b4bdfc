"""Two-stage sampler: network block first, clinical block second, IMH correction with A(lambda)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gibbs import SIGMA_SQ_FLOOR, clinical_sweep, network_sweep
from .marginal import log_A_lambda, log_marginal_network, imh_accept
from .model import ModelState, log_g1_kernel
from .numerics import (
    GAUSS_HERMITE_1D,
    SPARSE_UNIFORM_3D,
    ConfigurationError,
    IntegrationError,
    NumericalError,
    build_quadrature,
    make_rng,
)
from .sampler import IMH_STREAM, STAGE2_STREAM, PosteriorDraws, run_chain

log = logging.getLogger(__name__)

MAX_SKIP_FRACTION = 0.05


def run_stage1(data, config, monitor_marginal=True):
    """Sample the network block (``U``, loadings, ``sigma^2``, ``tau_lambda^2``).

    Only the networks are passed on, so outcomes and covariates cannot reach
    this code path. With ``monitor_marginal`` the integrated network
    likelihood at each stored draw is kept in ``info["log_marginal_network"]``.
    """
    net = data.network_only() if data.has_outcomes or data.r else data
    if net.M < 1:
        raise ConfigurationError("empty dataset")
    hyper = config.hyper
    stored = []
    monitor = None
    if monitor_marginal:
        rule = build_quadrature(GAUSS_HERMITE_1D, config.hermite_nodes)

        def monitor(k, state):
            if k > config.burn_in and (k - config.burn_in) % config.thin == 0:
                stored.append(log_marginal_network(net, state.u, state.sigma_sq, hyper, rule))

    draws = run_chain(net, config,
                      sweep=lambda s, rng: network_sweep(s, net, hyper, rng),
                      log_density=lambda s: log_g1_kernel(s, net, hyper),
                      monitor=monitor)
    if monitor_marginal:
        draws.info["log_marginal_network"] = np.array(stored)
    draws.info["sampler"] = "stage1"
    return draws


@dataclass
class ClinicalDraws:
    beta: np.ndarray          # (D, q)
    alpha: np.ndarray         # (D, r)
    tau_sq: np.ndarray        # (D,)
    tau_beta_sq: np.ndarray
    tau_alpha_sq: np.ndarray

    def __len__(self):
        return self.beta.shape[0]


def _clinical_init(data, q):
    r = data.r
    alpha = np.zeros(r)
    resid = data.C
    if r > 0:
        alpha = np.linalg.lstsq(data.Z, data.C, rcond=None)[0]
        resid = data.C - data.Z @ alpha
    tau_sq = max(float(np.mean(resid ** 2)), SIGMA_SQ_FLOOR)
    return ModelState(x=np.eye(q), lambdas=np.zeros((data.M, q)), sigma_sq=1.0,
                      beta=np.zeros(q), alpha=alpha, tau_sq=tau_sq)


def run_stage2(lambda_draws, data, config):
    """One clinical draw per loading snapshot.

    Each snapshot is held fixed as data for ``config.stage2_sweeps`` Gibbs scans
    of ``d``, ``tau^2``, ``tau_beta^2`` and ``tau_alpha^2``; the state carries
    over from one snapshot to the next.
    """
    lambda_draws = np.asarray(lambda_draws, dtype=float)
    if not data.has_outcomes:
        raise ConfigurationError("stage two needs clinical outcomes")
    if data.M < 1:
        raise ConfigurationError("stage two needs at least one subject")
    if lambda_draws.ndim != 3 or lambda_draws.shape[1] != data.M:
        raise ConfigurationError(f"loading snapshots must be (D, {data.M}, q), got {lambda_draws.shape}")
    D, _, q = lambda_draws.shape
    rng = make_rng(config.seed, STAGE2_STREAM)
    state = _clinical_init(data, q)
    out = ClinicalDraws(np.empty((D, q)), np.empty((D, data.r)), np.empty(D), np.empty(D), np.empty(D))
    for j in range(D):
        state.lambdas = lambda_draws[j]
        for _ in range(config.stage2_sweeps):
            clinical_sweep(state, data, config.hyper, rng)
        out.beta[j], out.alpha[j] = state.beta, state.alpha
        out.tau_sq[j], out.tau_beta_sq[j], out.tau_alpha_sq[j] = (
            state.tau_sq, state.tau_beta_sq, state.tau_alpha_sq)
    return out


def _candidate_log_A(lambda_draws, data, hyper, rule):
    values = np.full(len(lambda_draws), np.nan)
    for j, lam in enumerate(lambda_draws):
        try:
            values[j] = log_A_lambda(lam, data, hyper, rule)
        except IntegrationError as exc:
            log.debug("A(lambda) failed for candidate %d: %s", j, exc)
    return values


def run_twostage(data, config):
    """Stage one, stage two, then independent Metropolis-Hastings over the paired candidates.

    Candidate ``j`` pairs the ``j``-th stored stage-one draw with the ``j``-th
    stage-two draw. A rejected or skipped candidate repeats the last accepted
    one, so the output has as many draws as there are candidates.
    """
    if not data.has_outcomes:
        raise ConfigurationError("two-stage sampler needs clinical outcomes")
    if data.M < 1:
        raise ConfigurationError("empty dataset")
    hyper = config.hyper
    s1 = run_stage1(data, config)
    s2 = run_stage2(s1.lambdas, data, config)
    rule = build_quadrature(SPARSE_UNIFORM_3D, config.sparse_level)
    log_A = _candidate_log_A(s1.lambdas, data, hyper, rule)

    D = len(s1)
    if D == 0:
        raise ConfigurationError("no stored draws; lower thin or raise iters")
    failed = ~np.isfinite(log_A)
    n_skipped = int(failed.sum())
    if n_skipped > MAX_SKIP_FRACTION * D:
        raise NumericalError(f"A(lambda) failed for {n_skipped} of {D} candidates")

    rng = make_rng(config.seed, IMH_STREAM)
    chosen = np.empty(D, dtype=int)
    current = int(np.flatnonzero(~failed)[0])
    chosen[: current + 1] = current
    n_accept = n_proposed = 0
    for j in range(current + 1, D):
        if not failed[j]:
            n_proposed += 1
            if imh_accept(log_A[j], log_A[current], rng):
                current = j
                n_accept += 1
        chosen[j] = current

    draws = PosteriorDraws(
        u=s1.u[chosen], lambdas=s1.lambdas[chosen],
        beta=s2.beta[chosen], alpha=s2.alpha[chosen],
        sigma_sq=s1.sigma_sq[chosen], tau_sq=s2.tau_sq[chosen],
        tau_lambda_sq=s1.tau_lambda_sq[chosen], tau_beta_sq=s2.tau_beta_sq[chosen],
        tau_alpha_sq=s2.tau_alpha_sq[chosen], iterations=s1.iterations.copy(),
        step_size=s1.step_size, accepted=s1.accepted, log_joint=s1.log_joint,
        info=dict(s1.info))
    rate = n_accept / n_proposed if n_proposed else float("nan")
    draws.info.update(sampler="twostage", imh_acceptance_rate=rate, imh_skipped=n_skipped,
                      imh_chosen=chosen, log_A=log_A)
    log.info("two-stage sampler: %d draws, IMH acceptance %.3f, %d skipped", D, rate, n_skipped)
    return draws
