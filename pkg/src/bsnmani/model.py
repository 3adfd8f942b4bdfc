"""Data containers, parameter state and log densities.

Noise convention: each subject contributes ``P = N(N-1)/2`` residuals (the
strict lower triangle) to the normalizing constants and to the variance
update. The loadings and the Stiefel factor are driven by the trace
expansion ``||Y - U L U'||_F^2 = ||Y||_F^2 - 2 tr(L U'YU) + ||lambda||^2``,
which makes the loading Gram matrix the identity.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import gammaln

from .numerics import (
    DimensionError,
    ParameterError,
    SymmetricNetwork,
    boxprod,
    devecl,
    kron,
    polar_factors,
    polar_expand,
    vecl,
)

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SubjectRecord:
    y: SymmetricNetwork
    c: float
    z: np.ndarray


class Dataset:
    """Stacked networks ``Y`` (M, N, N), outcomes ``C`` (M,) and covariates ``Z`` (M, r).

    ``C`` and ``Z`` may be ``None`` for network-only data (test sets, stage one).
    """

    def __init__(self, Y, C=None, Z=None, subject_ids=None):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        if Y.ndim != 3 or Y.shape[1] != Y.shape[2]:
            raise DimensionError(f"networks must be (M, N, N), got {Y.shape}")
        if not np.allclose(Y, np.swapaxes(Y, 1, 2), atol=1e-10, rtol=0):
            raise ParameterError("networks must be symmetric")
        if np.any(np.abs(np.diagonal(Y, axis1=1, axis2=2)) > 1e-12):
            raise ParameterError("networks must have a zero diagonal")
        # stored exactly symmetric, rebuilt from the strict lower triangle
        self.vecl_Y = vecl(Y)
        self.Y = devecl(self.vecl_Y, Y.shape[1]) if Y.shape[0] else Y.copy()
        M = Y.shape[0]
        if C is not None:
            C = np.asarray(C, dtype=float).reshape(-1)
            if C.shape[0] != M:
                raise DimensionError(f"{C.shape[0]} outcomes for {M} networks")
        if Z is None:
            Z = np.zeros((M, 0))
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.shape[0] != M:
            raise DimensionError(f"{Z.shape[0]} covariate rows for {M} networks")
        self.C = C
        self.Z = Z
        self.subject_ids = list(range(M)) if subject_ids is None else list(subject_ids)
        self.frob_sq = np.einsum("ijk,ijk->i", self.Y, self.Y)

    @classmethod
    def from_records(cls, records):
        Y = np.stack([r.y.matrix() for r in records])
        C = np.array([r.c for r in records], dtype=float)
        Z = np.stack([np.atleast_1d(np.asarray(r.z, dtype=float)) for r in records])
        return cls(Y, C, Z)

    @property
    def M(self):
        return self.Y.shape[0]

    @property
    def N(self):
        return self.Y.shape[1]

    @property
    def P(self):
        return self.N * (self.N - 1) // 2

    @property
    def r(self):
        return self.Z.shape[1]

    @property
    def has_outcomes(self):
        return self.C is not None

    def subset(self, idx):
        idx = np.asarray(idx)
        C = None if self.C is None else self.C[idx]
        return Dataset(self.Y[idx], C, self.Z[idx], [self.subject_ids[i] for i in idx])

    def network_only(self):
        return Dataset(self.Y, None, self.Z[:, :0], self.subject_ids)

    def records(self):
        return [SubjectRecord(SymmetricNetwork(self.N, self.vecl_Y[i]),
                              float(self.C[i]) if self.C is not None else float("nan"),
                              self.Z[i].copy())
                for i in range(self.M)]


@dataclass
class Hyperparams:
    """Inverse-gamma hyperparameters: ``1/v ~ Gamma(a/2, a s^2 / 2)`` for each variance ``v``."""

    nu0: float = 2.0
    sigma0_sq: float = 1.0
    eta0: float = 2.0
    tau0_sq: float = 1.0
    gamma0: float = 2.0
    kappa0_sq: float = 1.0
    omega0: float = 2.0
    phi0_sq: float = 1.0
    rho0: float = 2.0
    psi0_sq: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"hyperparameter {f.name} must be positive, got {v}")

    def as_dict(self):
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass
class ModelState:
    x: np.ndarray
    lambdas: np.ndarray
    sigma_sq: float
    beta: np.ndarray
    alpha: np.ndarray
    tau_sq: float
    tau_lambda_sq: float = 1.0
    tau_beta_sq: float = 1.0
    tau_alpha_sq: float = 1.0
    u: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        if self.u is None:
            self.u = polar_expand(self.x)
        for name in ("sigma_sq", "tau_sq", "tau_lambda_sq", "tau_beta_sq", "tau_alpha_sq"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be positive, got {v}")

    @property
    def q(self):
        return self.x.shape[1]

    @property
    def d(self):
        return np.concatenate([self.beta, self.alpha])

    def set_x(self, x, u=None):
        self.x = x
        self.u = polar_expand(x) if u is None else u

    def copy(self):
        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# Likelihood terms
# ---------------------------------------------------------------------------

def _as_matrix(y):
    if isinstance(y, SymmetricNetwork):
        return y.matrix()
    return np.asarray(y, dtype=float)


def network_loglik(y, u, lambda_i, sigma_sq):
    """Gaussian log-likelihood of one network over its strict lower triangle."""
    if sigma_sq <= 0:
        raise ParameterError("sigma_sq must be positive")
    Y = _as_matrix(y)
    u = np.asarray(u, dtype=float)
    lam = np.asarray(lambda_i, dtype=float).reshape(-1)
    if Y.shape[0] != u.shape[0] or lam.shape[0] != u.shape[1]:
        raise DimensionError("network, U and lambda dimensions disagree")
    resid = vecl(Y - (u * lam) @ u.T)
    P = resid.shape[0]
    return -0.5 * P * (LOG_2PI + np.log(sigma_sq)) - 0.5 * resid @ resid / sigma_sq


def clinical_loglik(c, z, lambda_i, beta, alpha, tau_sq):
    if tau_sq <= 0:
        raise ParameterError("tau_sq must be positive")
    mean = np.dot(beta, lambda_i) + np.dot(alpha, z)
    return -0.5 * (LOG_2PI + np.log(tau_sq)) - 0.5 * (c - mean) ** 2 / tau_sq


def network_residual_ss(data, u, lambdas):
    """Per-subject sum of squared strict-lower residuals, shape (M,)."""
    fitted = (u[None] * lambdas[:, None, :]) @ u.T
    resid = vecl(data.Y - fitted)
    return np.einsum("ij,ij->i", resid, resid)


def projected_diag(data, u):
    """``diag(U' Y_i U)`` for every subject, shape (M, q)."""
    return np.einsum("jl,ijl->il", u, data.Y @ u)


# ---------------------------------------------------------------------------
# Transformed target for X and its gradient
# ---------------------------------------------------------------------------

class TraceTarget:
    """``log pi(X) = -tr(X'X)/2 + sigma^-2 sum_i tr(L_i U_X' Y_i U_X)`` for fixed loadings.

    The loadings enter only through ``B_l = sum_i lambda_il Y_i`` so that one
    evaluation costs ``O(q N^2)`` regardless of the number of subjects.
    """

    def __init__(self, Y, lambdas, sigma_sq):
        if sigma_sq <= 0:
            raise ParameterError("sigma_sq must be positive")
        self.B = np.tensordot(np.asarray(lambdas, dtype=float), Y, axes=(0, 0))
        self.inv_sigma_sq = 1.0 / sigma_sq

    def trace_term(self, u):
        Bu = np.einsum("ljk,kl->jl", self.B, u)
        return self.inv_sigma_sq * float(np.sum(u * Bu))

    def logpdf(self, x):
        u = polar_expand(x)
        return -0.5 * float(np.sum(x * x)) + self.trace_term(u)

    def value_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        u, evals, V = polar_factors(x)
        Bu = np.einsum("ljk,kl->jl", self.B, u)
        value = -0.5 * float(np.sum(x * x)) + self.inv_sigma_sq * float(np.sum(u * Bu))
        G = 2.0 * self.inv_sigma_sq * Bu  # d(trace term)/dU
        return value, -x + _pullback_polar(x, G, evals, V)

    def grad(self, x):
        return self.value_and_grad(x)[1]


def _pullback_polar(x, G, evals, V):
    """Map ``dF/dU`` to ``dF/dX`` through ``U = X (X'X)^{-1/2}``."""
    r = np.sqrt(evals)
    R_inv = (V / r) @ V.T
    B = R_inv @ G.T @ x @ R_inv
    Bt = V.T @ B @ V
    Ct = Bt / (r[:, None] + r[None, :])  # Sylvester solve for d(X'X)^{1/2}
    C = V @ Ct @ V.T
    return G @ R_inv - x @ (C + C.T)


def log_target_x(x, state, data):
    """Transformed log posterior of ``X`` (up to a constant) at the state's loadings and ``sigma^2``."""
    return TraceTarget(data.Y, state.lambdas, state.sigma_sq).logpdf(x)


def grad_log_target_x(x, state, data):
    return TraceTarget(data.Y, state.lambdas, state.sigma_sq).grad(x)


def grad_log_target_x_vec(x, state, data):
    """Reference gradient assembled from explicit Jacobians with Kronecker and box products.

    Uses column-major ``vec``. Cost is ``O((Nq)^2)`` memory; meant for small
    problems and cross-checking :func:`grad_log_target_x`.
    """
    x = np.asarray(x, dtype=float)
    N, q = x.shape
    u, evals, V = polar_factors(x)
    R = (V * np.sqrt(evals)) @ V.T
    R_inv = (V / np.sqrt(evals)) @ V.T
    I_q, I_N = np.eye(q), np.eye(N)
    K_Nq = boxprod(I_N, I_q)  # vec(A) -> vec(A') for N x q matrices A

    # d vec(S) / d vec(X) with S = X'X
    dS = kron(x.T, I_q) @ K_Nq + kron(I_q, x.T)
    # d vec(R) from the Sylvester equation R dR + dR R = dS
    dR = np.linalg.solve(kron(I_q, R) + kron(R, I_q), dS)
    dRinv = -kron(R_inv, R_inv) @ dR
    dU = kron(R_inv, I_N) + kron(I_q, x) @ dRinv

    # d tr(F_i) / d vec(U) with F_i = L_i U' Y_i U
    vec_Iq = I_q.reshape(-1, order="F")
    g = np.zeros(N * q)
    for lam, Y in zip(state.lambdas, data.Y):
        L = np.diag(lam)
        dF = kron((Y @ u).T, L) @ K_Nq + kron(I_q, L @ u.T @ Y)
        g += vec_Iq @ dF
    g /= state.sigma_sq
    return -x + (g @ dU).reshape((N, q), order="F")


# ---------------------------------------------------------------------------
# Priors and joint density
# ---------------------------------------------------------------------------

def log_inv_gamma_prior(v, shape_df, scale_sq):
    """Log density of a variance ``v`` whose precision is ``Gamma(df/2, df s^2/2)``."""
    a = 0.5 * shape_df
    b = 0.5 * shape_df * scale_sq
    return a * np.log(b) - gammaln(a) - (a + 1.0) * np.log(v) - b / v


def log_normal_iid(values, var):
    values = np.asarray(values, dtype=float).reshape(-1)
    return -0.5 * values.size * (LOG_2PI + np.log(var)) - 0.5 * float(values @ values) / var


def log_g1_kernel(state, data, hyper):
    """Network-block terms: network likelihood, loading prior, ``tau_lambda^2`` and ``sigma^2`` priors."""
    ss = network_residual_ss(data, state.u, state.lambdas)
    M, P = data.M, data.P
    out = -0.5 * M * P * (LOG_2PI + np.log(state.sigma_sq)) - 0.5 * ss.sum() / state.sigma_sq
    out += log_normal_iid(state.lambdas, state.tau_lambda_sq)
    out += log_inv_gamma_prior(state.tau_lambda_sq, hyper.eta0, hyper.tau0_sq)
    out += log_inv_gamma_prior(state.sigma_sq, hyper.nu0, hyper.sigma0_sq)
    return float(out)


def log_g2_kernel(state, data, hyper):
    """Clinical-block terms: outcome likelihood, coefficient priors and their variance priors."""
    mean = state.lambdas @ state.beta + data.Z @ state.alpha
    resid = data.C - mean
    out = -0.5 * data.M * (LOG_2PI + np.log(state.tau_sq)) - 0.5 * float(resid @ resid) / state.tau_sq
    out += log_normal_iid(state.beta, state.tau_beta_sq)
    out += log_normal_iid(state.alpha, state.tau_alpha_sq)
    out += log_inv_gamma_prior(state.tau_sq, hyper.rho0, hyper.psi0_sq)
    out += log_inv_gamma_prior(state.tau_beta_sq, hyper.gamma0, hyper.kappa0_sq)
    out += log_inv_gamma_prior(state.tau_alpha_sq, hyper.omega0, hyper.phi0_sq)
    return float(out)


def log_joint(state, data, hyper):
    """Log joint density of data and parameters, up to the uniform Stiefel prior constant."""
    return log_g1_kernel(state, data, hyper) + log_g2_kernel(state, data, hyper)
