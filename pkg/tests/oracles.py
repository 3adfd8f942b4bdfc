"""Independent Monte Carlo oracles for the marginal integrals.

Each draws the sampled quantities from their priors and averages the
likelihood, with no shared code path beyond the data containers.
"""

import numpy as np
from scipy.special import logsumexp


def _inv_gamma(rng, df, s2, size):
    # 1/v ~ Gamma(df/2, rate df s2/2)
    return (0.5 * df * s2) / rng.gamma(0.5 * df, 1.0, size)


def _finish(ll, n):
    est = logsumexp(ll) - np.log(n)
    w = np.exp(ll - ll.max())
    return float(est), float(w.std() / w.mean() / np.sqrt(n))


def mc_log_marginal_network(Y, u, sigma_sq, hyper, n, rng, chunk=1_000_000):
    """Log of ``E[(2 pi s2)^(-MP/2) exp(-||Y_i - U diag(lam_i) U'||_F^2 / (2 s2))]`` over the prior.

    Returns ``(estimate, relative standard error)``.
    """
    M, N = Y.shape[:2]
    q = u.shape[1]
    P = N * (N - 1) // 2
    G = u.T @ u  # identity for a Stiefel point, kept general
    A = np.einsum("nl,mnk,kl->ml", u, Y, u)
    F = np.sum(Y * Y, axis=(1, 2))
    out = []
    for _ in range(n // chunk):
        v = _inv_gamma(rng, hyper.eta0, hyper.tau0_sq, chunk)
        lam = np.sqrt(v)[:, None, None] * rng.standard_normal((chunk, M, q))
        fit_sq = np.einsum("cml,lk,cmk->cm", lam, G * G, lam)
        ss = F[None] - 2.0 * np.einsum("cml,ml->cm", lam, A) + fit_sq
        out.append(-0.5 * M * P * np.log(2 * np.pi * sigma_sq) - ss.sum(axis=1) / (2 * sigma_sq))
    return _finish(np.concatenate(out), n)


def mc_log_A(lambdas, Z, C, hyper, n, rng, chunk=1_000_000):
    """Log outcome evidence with ``(beta, alpha, tau^2, tau_alpha^2, tau_beta^2)`` drawn from their priors."""
    M, q = lambdas.shape
    r = Z.shape[1]
    out = []
    for _ in range(n // chunk):
        t2 = _inv_gamma(rng, hyper.rho0, hyper.psi0_sq, chunk)
        tb = _inv_gamma(rng, hyper.gamma0, hyper.kappa0_sq, chunk)
        ta = _inv_gamma(rng, hyper.omega0, hyper.phi0_sq, chunk)
        b = np.sqrt(tb)[:, None] * rng.standard_normal((chunk, q))
        a = np.sqrt(ta)[:, None] * rng.standard_normal((chunk, r))
        mean = b @ lambdas.T + a @ Z.T
        out.append(-0.5 * M * np.log(2 * np.pi * t2) - np.sum((C - mean) ** 2, axis=1) / (2 * t2))
    return _finish(np.concatenate(out), n)



def mc_log_marginal_network_rb(Y, u, sigma_sq, hyper, n, rng, chunk=100_000):
    """Same integral as :func:`mc_log_marginal_network` with the loadings integrated exactly.

    Given ``tau_lambda^2 = v`` the entries of ``Y_i`` are jointly normal with
    covariance ``s2 I + v W W'``, ``W`` holding ``vec(u_l u_l')`` in its columns.
    That density is evaluated by a batched dense solve over all ``N^2`` entries,
    then reweighted to the ``(2 pi s2)^(-P/2)`` normalization. Only ``v`` is sampled,
    from its prior.
    """
    M, N = Y.shape[:2]
    q = u.shape[1]
    P = N * (N - 1) // 2
    W = np.stack([np.outer(u[:, l], u[:, l]).ravel() for l in range(q)], axis=1)
    y = Y.reshape(M, N * N)
    base = W @ W.T
    out = []
    for _ in range(n // chunk):
        v = _inv_gamma(rng, hyper.eta0, hyper.tau0_sq, chunk)
        cov = sigma_sq * np.eye(N * N)[None] + v[:, None, None] * base[None]
        _, logdet = np.linalg.slogdet(cov)
        quad = np.einsum("mk,ckm->c", y, np.linalg.solve(cov, np.broadcast_to(y.T, (chunk, N * N, M))))
        ll = -0.5 * M * (N * N * np.log(2 * np.pi) + logdet) - 0.5 * quad
        out.append(ll + 0.5 * M * (N * N - P) * np.log(2 * np.pi * sigma_sq))
    return _finish(np.concatenate(out), n)
