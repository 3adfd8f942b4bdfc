"""Integrated network likelihood, the clinical normalizing constant A(lambda), and the IMH test.

Both integrals are evaluated in log space. Every call to ``exp`` inside the
quadrature sums goes through :func:`signed_logsumexp`, whose arguments are
shifted by their maximum, and the largest argument seen is recorded on
``EXP_MONITOR`` so tests can check that no large exponential is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.optimize import minimize_scalar
from scipy.special import gammainccinv, gammaincinv, gammaln

from .model import LOG_2PI, projected_diag
from .numerics import (
    GAUSS_HERMITE_1D,
    SPARSE_UNIFORM_3D,
    ConfigurationError,
    IntegrationError,
)


# reference densities are widened by this factor relative to the fitted gamma
REFERENCE_TEMPER = 0.5


class _ExpMonitor:
    def __init__(self):
        self.max_arg = -np.inf

    def record(self, arr):
        if arr.size:
            self.max_arg = max(self.max_arg, float(np.max(arr)))

    def reset(self):
        self.max_arg = -np.inf


EXP_MONITOR = _ExpMonitor()


def signed_logsumexp(log_terms, weights):
    """``log(sum_r w_r exp(log_terms_r))`` for weights of either sign.

    Non-finite terms are dropped. Raises :class:`IntegrationError` if nothing
    finite is left or the weighted sum is not positive.
    """
    log_terms = np.asarray(log_terms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    ok = np.isfinite(log_terms) & (weights != 0)
    if not ok.any():
        raise IntegrationError("integrand is non-finite at every quadrature node")
    a = log_terms[ok]
    m = a.max()
    shifted = a - m
    EXP_MONITOR.record(shifted)
    total = float(np.dot(weights[ok], np.exp(shifted)))
    if not total > 0:
        raise IntegrationError(f"quadrature sum is not positive ({total:.3g}); refine the grid")
    return m + np.log(total)


def _log_ig_frame(log_f, shape, bracket=(-60.0, 60.0)):
    """Map standard-normal abscissae ``z`` to ``x = log v``, ``v ~ IG(shape, rate)``.

    The rate puts the density's mode at the mode of ``log_f``, and ``shape``
    matches the integrand's right tail, so ``f / density`` is smooth and
    bounded. Returns ``(x(z), log density(x(z)))`` as a function of ``z``.
    """
    res = minimize_scalar(lambda x: -log_f(x), bounds=bracket, method="bounded",
                          options={"xatol": 1e-10})
    rate = shape * np.exp(float(res.x))

    def transform(z):
        # tail-safe quantiles of the precision t = 1/v ~ Gamma(shape, rate)
        t = np.where(z > 0,
                     stats.gamma.ppf(stats.norm.sf(z), shape, scale=1.0 / rate),
                     stats.gamma.isf(stats.norm.cdf(z), shape, scale=1.0 / rate))
        with np.errstate(divide="ignore"):
            x = -np.log(t)
        log_dens = shape * np.log(rate) - gammaln(shape) - shape * x - rate * t
        return x, log_dens

    return transform


def _log_gamma_norm(shape, rate):
    return shape * np.log(rate) - gammaln(shape)


# ---------------------------------------------------------------------------
# Integrated network likelihood
# ---------------------------------------------------------------------------

@dataclass
class NetworkMarginalParts:
    log_value: float
    log_const: float
    log_integral: float


def log_marginal_network(data, u, sigma_sq, hyper, rule, return_parts=False):
    """``log prod_i pi(Y_i | U, sigma^2)`` with loadings and ``tau_lambda^2`` integrated out.

    The loadings integral is Gaussian and exact; ``tau_lambda^2`` is handled
    with Gauss-Hermite quadrature in ``x = log tau_lambda^2``. The Hermite
    abscissae are mapped to ``x`` through the quantile function of a
    log-inverse-gamma density matched to the integrand's mode and right tail.
    """
    if rule.kind != GAUSS_HERMITE_1D:
        raise ConfigurationError("log_marginal_network needs a gauss-hermite-1d rule")
    M, P, q = data.M, data.P, u.shape[1]
    proj = projected_diag(data, u)
    s = float(np.sum(proj * proj))
    frob = float(np.sum(data.frob_sq))
    inv_s2 = 1.0 / sigma_sq
    a, b = 0.5 * hyper.eta0, 0.5 * hyper.eta0 * hyper.tau0_sq

    log_const = (-0.5 * M * P * (LOG_2PI + np.log(sigma_sq))
                 + _log_gamma_norm(a, b)
                 - 0.5 * inv_s2 * frob)

    def log_g(x):
        e = np.exp(-x)  # 1 / tau_lambda^2
        denom = inv_s2 + e
        return (-0.5 * (q * M + hyper.eta0) * x
                - 0.5 * q * M * np.log(denom)
                + 0.5 * inv_s2 ** 2 * s / denom
                - b * e)

    # integrate against a log-inverse-gamma density placed at the mode of g,
    # expressed through its normal quantile transform so the rule stays Hermite
    transform = _log_ig_frame(log_g, 0.5 * (q * M + hyper.eta0))
    x, log_dens = transform(rule.nodes[:, 0])
    with np.errstate(over="ignore", invalid="ignore"):
        log_h = log_g(x) - log_dens
    log_integral = signed_logsumexp(log_h, rule.weights)
    value = log_const + log_integral
    if return_parts:
        return NetworkMarginalParts(value, log_const, log_integral)
    return value


# ---------------------------------------------------------------------------
# Clinical normalizing constant A(lambda)
# ---------------------------------------------------------------------------

@dataclass
class ALambdaParts:
    log_value: float
    log_const: float          # data-size and hyperprior constants, cancel in IMH ratios
    log_integral: float
    skipped_nodes: int


def sufficient_stats(lambdas, data):
    """``(sum x_i x_i', sum C_i x_i, sum C_i^2)`` with ``x_i = [lambda_i; z_i]``.

    Subjects are put in a canonical order first, so any permutation of the
    subjects gives bit-identical statistics.
    """
    design = np.hstack([np.asarray(lambdas, dtype=float), data.Z])
    rows = np.column_stack([data.C, design])
    order = np.lexsort(rows.T[::-1])
    design, C = design[order], data.C[order]
    return design.T @ design, design.T @ C, float(C @ C)


def _gamma_reference(q, r, M, hyper, Sxx, Scx, Scc, sweeps=5, temper=None):
    """Shapes and rates of per-axis gamma densities for ``(t, pa, pb)``.

    A few mean-field updates fit one gamma factor per precision with ``d``
    Gaussian. Both shape and rate are then scaled by ``temper`` so each
    reference keeps its mean but is wider than the fitted factor, which keeps
    the integrand-to-reference ratio bounded in the tails.
    """
    temper = REFERENCE_TEMPER if temper is None else temper
    shape = np.array([0.5 * (M + hyper.rho0), 0.5 * (r + hyper.omega0), 0.5 * (q + hyper.gamma0)])
    base = np.array([hyper.rho0 * hyper.psi0_sq, hyper.omega0 * hyper.phi0_sq, hyper.gamma0 * hyper.kappa0_sq])
    mean_prec = shape / (0.5 * base)
    for _ in range(sweeps):
        t, pa, pb = mean_prec
        P = t * Sxx + np.diag(np.concatenate([np.full(q, pb), np.full(r, pa)]))
        cov = np.linalg.inv(P)
        d = t * cov @ Scx
        second = np.outer(d, d) + cov
        e_rss = max(Scc - 2.0 * d @ Scx + float(np.sum(Sxx * second)), 0.0)
        e_alpha = float(np.trace(second[q:, q:]))
        e_beta = float(np.trace(second[:q, :q]))
        rate = 0.5 * (base + np.array([e_rss, e_alpha, e_beta]))
        mean_prec = shape / rate
    return temper * shape, temper * rate


def _gamma_quantiles(u, shape, rate):
    """Gamma(shape, rate) quantiles at survival probabilities ``u``, with their log densities."""
    # sparse-grid coordinates repeat heavily along each axis
    vals, inverse = np.unique(u, return_inverse=True)
    t = np.where(vals < 0.5, gammainccinv(shape, vals), gammaincinv(shape, 1.0 - vals)) / rate
    with np.errstate(divide="ignore"):
        log_dens = shape * np.log(rate) - gammaln(shape) + (shape - 1.0) * np.log(t) - rate * t
    return t[inverse], log_dens[inverse]


def log_A_lambda(lambdas, data, hyper, rule, return_parts=False, max_skip_frac=0.01, reference="gamma"):
    """``log A(lambda)``: the outcome model's evidence with ``d`` integrated analytically.

    ``tau^2``, ``tau_alpha^2`` and ``tau_beta^2`` are integrated on the sparse
    grid over (0, 1)^3. Each precision ``t`` is the upper quantile of a gamma
    reference density at the grid coordinate and the integrand is divided by
    that density. ``reference="exponential"`` uses Gamma(1, 1), which is the
    plain map ``x = exp(-t)``; the default fits shape and rate to the data so
    that far fewer nodes reach the same accuracy.
    """
    if rule.kind != SPARSE_UNIFORM_3D:
        raise ConfigurationError("log_A_lambda needs a sparse-uniform-3d rule")
    if data.M < 1 or not data.has_outcomes:
        raise ConfigurationError("A(lambda) needs at least one subject with an outcome")
    if reference not in ("gamma", "exponential"):
        raise ConfigurationError(f"unknown reference {reference!r}")
    lambdas = np.asarray(lambdas, dtype=float)
    M, q, r = data.M, lambdas.shape[1], data.r
    p = q + r
    Sxx, Scx, Scc = sufficient_stats(lambdas, data)

    a_t, b_t = 0.5 * hyper.rho0, 0.5 * hyper.rho0 * hyper.psi0_sq
    a_a, b_a = 0.5 * hyper.omega0, 0.5 * hyper.omega0 * hyper.phi0_sq
    a_b, b_b = 0.5 * hyper.gamma0, 0.5 * hyper.gamma0 * hyper.kappa0_sq
    log_const = (-0.5 * M * LOG_2PI + _log_gamma_norm(a_t, b_t)
                 + _log_gamma_norm(a_a, b_a) + _log_gamma_norm(a_b, b_b))

    if reference == "gamma":
        shape, rate = _gamma_reference(q, r, M, hyper, Sxx, Scx, Scc)
    else:
        shape, rate = np.ones(3), np.ones(3)
    t, ld_t = _gamma_quantiles(rule.nodes[:, 0], shape[0], rate[0])     # 1 / tau^2
    pa, ld_a = _gamma_quantiles(rule.nodes[:, 1], shape[1], rate[1])    # 1 / tau_alpha^2
    pb, ld_b = _gamma_quantiles(rule.nodes[:, 2], shape[2], rate[2])    # 1 / tau_beta^2

    prior_diag = np.concatenate([np.ones(q)[None, :] * pb[:, None], np.ones(r)[None, :] * pa[:, None]], axis=1)
    prec = t[:, None, None] * Sxx[None] + prior_diag[:, :, None] * np.eye(p)[None]

    R = len(t)
    quad = np.full(R, np.nan)
    logdet = np.full(R, np.nan)
    good = np.isfinite(t) & np.isfinite(pa) & np.isfinite(pb) & (t > 0) & (pa > 0) & (pb > 0)
    L = np.zeros_like(prec)
    try:
        L[good] = np.linalg.cholesky(prec[good])
    except np.linalg.LinAlgError:
        for k in np.flatnonzero(good):
            try:
                L[k] = np.linalg.cholesky(prec[k])
            except np.linalg.LinAlgError:
                good[k] = False
    good_idx = np.flatnonzero(good)
    skipped = R - good_idx.size
    if skipped > max_skip_frac * R:
        raise IntegrationError(f"{skipped} of {R} nodes have a non-positive-definite precision")
    Lg = L[good_idx]
    rhs = np.broadcast_to(Scx, (good_idx.size, p))[..., None]
    sol = np.linalg.solve(Lg, rhs)[..., 0]
    quad[good_idx] = np.sum(sol * sol, axis=1)
    logdet[good_idx] = 2.0 * np.sum(np.log(np.diagonal(Lg, axis1=1, axis2=2)), axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        log_f = ((0.5 * (M + hyper.rho0) - 1.0) * np.log(t)
                 + (0.5 * (r + hyper.omega0) - 1.0) * np.log(pa)
                 + (0.5 * (q + hyper.gamma0) - 1.0) * np.log(pb)
                 - 0.5 * t * (hyper.rho0 * hyper.psi0_sq + Scc)
                 - pa * b_a
                 - pb * b_b
                 + 0.5 * t * t * quad
                 - 0.5 * logdet)
        log_h = log_f - ld_t - ld_a - ld_b
    log_integral = signed_logsumexp(log_h, np.where(good, rule.weights, 0.0))
    value = log_const + log_integral
    if return_parts:
        return ALambdaParts(value, log_const, log_integral, skipped)
    return value


def imh_accept(log_A_proposed, log_A_current, rng):
    """Independent Metropolis-Hastings test with ratio ``A(lambda*) / A(lambda)``."""
    diff = log_A_proposed - log_A_current
    if np.isnan(diff):
        return False
    return bool(np.log(rng.random()) < diff)
