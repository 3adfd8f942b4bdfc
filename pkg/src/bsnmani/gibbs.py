"""Conjugate full-conditional samplers for every parameter except ``U``."""

from __future__ import annotations

import numpy as np

from .model import network_residual_ss, projected_diag
from .numerics import DimensionError, gamma, mvn_from_precision

SIGMA_SQ_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# Loadings
# ---------------------------------------------------------------------------

def lambda_conditional(state, data, clinical=True, proj=None):
    """Shared precision ``(q, q)`` and per-subject natural parameters ``(M, q)``.

    The network term contributes ``sigma^-2 I`` and ``sigma^-2 diag(U'Y_iU)``,
    the prior ``tau_lambda^-2 I``; with ``clinical`` the outcome adds
    ``tau^-2 beta beta'`` and ``tau^-2 (C_i - alpha'z_i) beta``.
    """
    q = state.q
    if proj is None:
        proj = projected_diag(data, state.u)
    inv_s2 = 1.0 / state.sigma_sq
    precision = (inv_s2 + 1.0 / state.tau_lambda_sq) * np.eye(q)
    natural = inv_s2 * proj
    if clinical:
        inv_t2 = 1.0 / state.tau_sq
        precision = precision + inv_t2 * np.outer(state.beta, state.beta)
        partial = data.C - data.Z @ state.alpha
        natural = natural + inv_t2 * partial[:, None] * state.beta[None, :]
    return precision, natural


def _draw_rows(rng, precision, natural):
    L = np.linalg.cholesky(precision)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, natural.T)).T
    z = rng.standard_normal(natural.shape)
    return mean + np.linalg.solve(L.T, z.T).T


def update_lambdas(state, data, rng, clinical=True):
    """Draw every subject's loadings from its full conditional; returns (M, q)."""
    precision, natural = lambda_conditional(state, data, clinical=clinical)
    return _draw_rows(rng, precision, natural)


def update_lambda_joint(i, state, data, rng):
    precision, natural = lambda_conditional(state, data.subset([i]), clinical=True)
    return mvn_from_precision(rng, precision, natural[0])[0]


def update_lambda_network_only(i, state, data, rng):
    precision, natural = lambda_conditional(state, data.subset([i]), clinical=False)
    return mvn_from_precision(rng, precision, natural[0])[0]


# ---------------------------------------------------------------------------
# Regression coefficients d = [beta; alpha]
# ---------------------------------------------------------------------------

def coeff_conditional(lambdas, data, tau_sq, tau_beta_sq, tau_alpha_sq):
    """Precision and natural parameter of ``d | rest``."""
    if data.M < 1:
        raise DimensionError("coefficient update needs at least one subject")
    design = np.hstack([lambdas, data.Z])
    q, r = lambdas.shape[1], data.r
    prior_prec = np.concatenate([np.full(q, 1.0 / tau_beta_sq), np.full(r, 1.0 / tau_alpha_sq)])
    precision = np.diag(prior_prec) + design.T @ design / tau_sq
    natural = design.T @ data.C / tau_sq
    return precision, natural


def update_coeffs(state, data, rng):
    precision, natural = coeff_conditional(state.lambdas, data, state.tau_sq,
                                           state.tau_beta_sq, state.tau_alpha_sq)
    return mvn_from_precision(rng, precision, natural)[0]


# ---------------------------------------------------------------------------
# Variances: 1/v ~ Gamma(shape, rate)
# ---------------------------------------------------------------------------

def sigma_sq_conditional(state, data, hyper):
    ss = float(network_residual_ss(data, state.u, state.lambdas).sum())
    count = data.M * data.P
    return 0.5 * (hyper.nu0 + count), 0.5 * (hyper.nu0 * hyper.sigma0_sq + ss)


def tau_sq_conditional(state, data, hyper):
    resid = data.C - state.lambdas @ state.beta - data.Z @ state.alpha
    return 0.5 * (hyper.rho0 + data.M), 0.5 * (hyper.rho0 * hyper.psi0_sq + float(resid @ resid))


def tau_lambda_sq_conditional(state, data, hyper):
    lam = state.lambdas
    return 0.5 * (hyper.eta0 + lam.size), 0.5 * (hyper.eta0 * hyper.tau0_sq + float(np.sum(lam * lam)))


def tau_beta_sq_conditional(state, data, hyper):
    b = state.beta
    return 0.5 * (hyper.gamma0 + b.size), 0.5 * (hyper.gamma0 * hyper.kappa0_sq + float(b @ b))


def tau_alpha_sq_conditional(state, data, hyper):
    a = state.alpha
    return 0.5 * (hyper.omega0 + a.size), 0.5 * (hyper.omega0 * hyper.phi0_sq + float(a @ a))


def _draw_variance(rng, shape, rate):
    return 1.0 / gamma(rng, shape, rate)


def update_sigma_sq(state, data, hyper, rng):
    return max(_draw_variance(rng, *sigma_sq_conditional(state, data, hyper)), SIGMA_SQ_FLOOR)


def update_tau_sq(state, data, hyper, rng):
    return _draw_variance(rng, *tau_sq_conditional(state, data, hyper))


def update_tau_lambda_sq(state, data, hyper, rng):
    return _draw_variance(rng, *tau_lambda_sq_conditional(state, data, hyper))


def update_tau_beta_sq(state, data, hyper, rng):
    return _draw_variance(rng, *tau_beta_sq_conditional(state, data, hyper))


def update_tau_alpha_sq(state, data, hyper, rng):
    return _draw_variance(rng, *tau_alpha_sq_conditional(state, data, hyper))


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def network_sweep(state, data, hyper, rng):
    """Loadings, ``sigma^2`` and ``tau_lambda^2`` from the network-only conditionals (in place)."""
    state.lambdas = update_lambdas(state, data, rng, clinical=False)
    state.sigma_sq = update_sigma_sq(state, data, hyper, rng)
    state.tau_lambda_sq = update_tau_lambda_sq(state, data, hyper, rng)
    return state


def clinical_sweep(state, data, hyper, rng):
    """``d``, ``tau^2``, ``tau_beta^2``, ``tau_alpha^2`` with loadings held fixed (in place)."""
    q = state.q
    d = update_coeffs(state, data, rng)
    state.beta, state.alpha = d[:q], d[q:]
    state.tau_sq = update_tau_sq(state, data, hyper, rng)
    state.tau_beta_sq = update_tau_beta_sq(state, data, hyper, rng)
    state.tau_alpha_sq = update_tau_alpha_sq(state, data, hyper, rng)
    return state


def gibbs_sweep(state, data, hyper, rng):
    """One joint-sampler sweep in the fixed order: loadings, d, sigma^2, tau^2, tau_lambda^2, tau_beta^2, tau_alpha^2."""
    q = state.q
    state.lambdas = update_lambdas(state, data, rng, clinical=True)
    d = update_coeffs(state, data, rng)
    state.beta, state.alpha = d[:q], d[q:]
    state.sigma_sq = update_sigma_sq(state, data, hyper, rng)
    state.tau_sq = update_tau_sq(state, data, hyper, rng)
    state.tau_lambda_sq = update_tau_lambda_sq(state, data, hyper, rng)
    state.tau_beta_sq = update_tau_beta_sq(state, data, hyper, rng)
    state.tau_alpha_sq = update_tau_alpha_sq(state, data, hyper, rng)
    return state
