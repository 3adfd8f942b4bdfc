"""Matrix, quadrature and random-variate primitives.

Storage convention for connectivity matrices: ``vecl`` walks the strict lower
triangle column by column, ``[B21, ..., Bn1, B32, ..., Bn2, ..., Bn,n-1]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb

import numpy as np


class BSNManiError(Exception):
    """Base class for all package errors."""


class DimensionError(BSNManiError, ValueError):
    pass


class ParameterError(BSNManiError, ValueError):
    pass


class ConfigurationError(BSNManiError, ValueError):
    pass


class SingularityError(BSNManiError, np.linalg.LinAlgError):
    pass


class NumericalError(BSNManiError, ArithmeticError):
    pass


class IntegrationError(NumericalError):
    pass


# ---------------------------------------------------------------------------
# Symmetric networks and lower-triangle vectorization
# ---------------------------------------------------------------------------

def _strict_lower_index(n):
    # column-major over the strict lower triangle: row indices vary fastest
    cols, rows = np.triu_indices(n, k=1)
    return rows, cols


def vecl(B):
    """Vectorize the strict lower triangle of a square matrix, column-major.

    Accepts a single ``(n, n)`` matrix or a stack ``(..., n, n)``.
    """
    B = np.asarray(B, dtype=float)
    if B.ndim < 2 or B.shape[-1] != B.shape[-2]:
        raise DimensionError(f"vecl needs square matrices, got shape {B.shape}")
    n = B.shape[-1]
    if n < 2:
        raise DimensionError("vecl needs n >= 2")
    rows, cols = _strict_lower_index(n)
    return B[..., rows, cols]


def n_from_p(p):
    """Node count ``n`` such that ``n(n-1)/2 == p``."""
    n = int(round((1 + np.sqrt(1 + 8 * p)) / 2))
    if n * (n - 1) // 2 != p:
        raise DimensionError(f"{p} is not a triangular count n(n-1)/2")
    return n


def devecl(v, n=None):
    """Inverse of :func:`vecl` onto symmetric zero-diagonal matrices."""
    v = np.asarray(v, dtype=float)
    p = v.shape[-1]
    if n is None:
        n = n_from_p(p)
    if p != n * (n - 1) // 2:
        raise DimensionError(f"vector length {p} does not match n={n}")
    rows, cols = _strict_lower_index(n)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


@dataclass(frozen=True)
class SymmetricNetwork:
    """Symmetric zero-diagonal ``n x n`` connectivity matrix kept in vecl form."""

    n: int
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.n * (self.n - 1) // 2,):
            raise DimensionError(
                f"expected {self.n * (self.n - 1) // 2} entries for n={self.n}, got {data.shape}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_matrix(cls, Y, atol=1e-12):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2 or Y.shape[0] != Y.shape[1]:
            raise DimensionError(f"expected a square matrix, got {Y.shape}")
        if not np.allclose(Y, Y.T, atol=atol, rtol=0):
            raise ParameterError("network matrix is not symmetric")
        return cls(Y.shape[0], vecl(Y))

    def __getitem__(self, jk):
        j, k = jk
        if j == k:
            return 0.0
        if j < k:
            j, k = k, j
        # offset of column k in the column-major strict lower triangle
        offset = k * self.n - k * (k + 1) // 2
        return float(self.data[offset + (j - k - 1)])

    def matrix(self):
        return devecl(self.data, self.n)


# ---------------------------------------------------------------------------
# Stiefel / Euclidean points, polar decomposition
# ---------------------------------------------------------------------------

def check_stiefel(U, tol=1e-10):
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] > U.shape[0]:
        raise DimensionError(f"Stiefel point must be N x q with q <= N, got {U.shape}")
    err = np.max(np.abs(U.T @ U - np.eye(U.shape[1])))
    if err > tol:
        raise ParameterError(f"columns not orthonormal (max |U'U - I| = {err:.3g})")
    return U


def check_full_rank(X, rtol=1e-12):
    """Validate an ``N x q`` Euclidean point; returns the eigenpairs of X'X."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] > X.shape[0]:
        raise DimensionError(f"Euclidean point must be N x q with q <= N, got {X.shape}")
    evals, evecs = np.linalg.eigh(X.T @ X)
    if not np.all(np.isfinite(evals)) or evals[0] <= rtol * max(evals[-1], 0.0) or evals[-1] <= 0:
        raise SingularityError("X is rank deficient (X'X has a vanishing eigenvalue)")
    return evals, evecs


def polar_factors(X):
    """Return ``(U, evals, evecs)`` with ``U = X (X'X)^{-1/2}`` and ``X'X = V diag(evals) V'``."""
    evals, evecs = check_full_rank(X)
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return np.asarray(X, dtype=float) @ inv_sqrt, evals, evecs


def polar_expand(X):
    """Orthonormal polar factor ``U_X = X (X'X)^{-1/2}`` of a full-rank ``N x q`` matrix."""
    return polar_factors(X)[0]


def inv_sqrt_spd(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionError(f"expected a square matrix, got {S.shape}")
    evals, evecs = np.linalg.eigh(0.5 * (S + S.T))
    if evals[0] <= 0:
        raise SingularityError(f"matrix is not positive definite (min eigenvalue {evals[0]:.3g})")
    return (evecs / np.sqrt(evals)) @ evecs.T


def kron(G, H):
    return np.kron(np.atleast_2d(G), np.atleast_2d(H))


def boxprod(G, H):
    """Box product ``G [x] H``.

    For ``G`` (m1 x n1) and ``H`` (m2 x n2) the result is (m1 m2) x (n1 n2)
    with entry ``[(i, j), (k, l)] = g[i, l] * h[j, k]`` where rows are indexed
    by ``(i, j)`` (``i`` slow) and columns by ``(k, l)`` (``k`` slow). Row one
    therefore reads ``g11 h11, g12 h11, ..., g1n1 h11, g11 h12, ...``.
    ``boxprod(I_m, I_n)`` is the commutation matrix taking ``vec(A)`` to
    ``vec(A')`` for column-major ``vec`` of an ``m x n`` matrix ``A``.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    H = np.atleast_2d(np.asarray(H, dtype=float))
    m1, n1 = G.shape
    m2, n2 = H.shape
    # out[i, j, k, l] = G[i, l] * H[j, k]
    return np.einsum("il,jk->ijkl", G, H).reshape(m1 * m2, n2 * n1)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

GAUSS_HERMITE_1D = "gauss-hermite-1d"
SPARSE_UNIFORM_3D = "sparse-uniform-3d"
DEFAULT_HERMITE_NODES = 32
DEFAULT_SPARSE_LEVEL = 6  # 1023 nodes; level 7 would exceed 2000


@dataclass(frozen=True)
class QuadratureRule:
    dims: int
    nodes: np.ndarray   # (R, dims)
    weights: np.ndarray  # (R,)
    kind: str
    level: int = field(default=0)

    def __len__(self):
        return len(self.weights)

    def integrate(self, f):
        """Apply the rule to a vectorized integrand ``f(nodes) -> (R,)``."""
        return float(np.dot(self.weights, f(self.nodes)))


def fejer2_rule(level):
    """Nested Fejér type-2 rule on the open interval (0, 1) with ``2**level - 1`` nodes."""
    n = 2 ** level - 1
    theta = np.arange(1, n + 1) * np.pi / (n + 1)
    j = np.arange(1, (n + 1) // 2 + 1)
    s = np.sin(np.outer(theta, 2 * j - 1)) / (2 * j - 1)
    w = 4.0 * np.sin(theta) / (n + 1) * s.sum(axis=1)
    # [-1, 1] -> (0, 1)
    return (1.0 - np.cos(theta)) / 2.0, w / 2.0


def _smolyak_open(dim, level):
    """Smolyak combination of nested Fejér-2 rules, duplicates merged exactly."""
    total = level + dim - 1
    fine = level  # finest 1-D level that can appear
    merged = {}
    for levels in itertools.product(range(1, level + 1), repeat=dim):
        s = sum(levels)
        if s < total - dim + 1 or s > total:
            continue
        coef = (-1) ** (total - s) * comb(dim - 1, total - s)
        factors = []
        for lv in levels:
            x, w = fejer2_rule(lv)
            # integer key on the finest grid: node k at level lv is node k * 2^(fine-lv)
            keys = np.arange(1, len(x) + 1) * 2 ** (fine - lv)
            factors.append((keys, x, w))
        for combo in itertools.product(*[range(len(f[0])) for f in factors]):
            key = tuple(int(factors[d][0][c]) for d, c in enumerate(combo))
            w = coef * np.prod([factors[d][2][c] for d, c in enumerate(combo)])
            merged[key] = merged.get(key, 0.0) + w
    keys = sorted(k for k, w in merged.items() if w != 0.0)
    n_fine = 2 ** fine
    theta = np.array(keys, dtype=float) * np.pi / n_fine
    nodes = (1.0 - np.cos(theta)) / 2.0
    weights = np.array([merged[k] for k in keys])
    return nodes, weights


def build_quadrature(kind, level=None):
    """Build a quadrature rule.

    ``gauss-hermite-1d``: ``level`` nodes integrating against the standard
    normal density (weights sum to one). ``sparse-uniform-3d``: Smolyak sparse
    grid on the open cube (0, 1)^3 with unit weight function.
    """
    if kind == GAUSS_HERMITE_1D:
        level = DEFAULT_HERMITE_NODES if level is None else int(level)
        if level < 1:
            raise ConfigurationError("quadrature level must be >= 1")
        x, w = np.polynomial.hermite_e.hermegauss(level)
        w = w / np.sqrt(2.0 * np.pi)
        return QuadratureRule(1, x[:, None], w, kind, level)
    if kind == SPARSE_UNIFORM_3D:
        level = DEFAULT_SPARSE_LEVEL if level is None else int(level)
        if level < 1:
            raise ConfigurationError("quadrature level must be >= 1")
        nodes, weights = _smolyak_open(3, level)
        return QuadratureRule(3, nodes, weights, kind, level)
    raise ConfigurationError(f"unsupported quadrature kind {kind!r}")


# ---------------------------------------------------------------------------
# Random variates
# ---------------------------------------------------------------------------

def make_rng(seed, stream=0):
    """Generator fully determined by ``(seed, stream)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream),))))


def normal(rng, mean=0.0, var=1.0, size=None):
    if np.any(np.asarray(var) <= 0):
        raise ParameterError("normal variance must be positive")
    return rng.normal(mean, np.sqrt(var), size=size)


def multivariate_normal(rng, mean, cov):
    mean = np.asarray(mean, dtype=float)
    try:
        L = np.linalg.cholesky(np.asarray(cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise ParameterError("covariance is not positive definite") from exc
    return mean + L @ rng.standard_normal(mean.shape[0])


def mvn_from_precision(rng, precision, natural):
    """Draw from ``N(P^{-1} b, P^{-1})`` given precision ``P`` and natural parameter ``b``.

    Returns ``(draw, mean)``.
    """
    try:
        L = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("assembled precision is not positive definite") from exc
    mean = np.linalg.solve(L.T, np.linalg.solve(L, natural))
    z = rng.standard_normal(mean.shape[0])
    return mean + np.linalg.solve(L.T, z), mean


def gamma(rng, shape, rate, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ParameterError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate), size=size)


def inv_gamma(rng, shape, scale, size=None):
    """Inverse-gamma draw: ``1 / Gamma(shape, rate=scale)``."""
    return 1.0 / gamma(rng, shape, scale, size=size)


def exponential(rng, rate, size=None):
    if np.any(np.asarray(rate) <= 0):
        raise ParameterError("exponential rate must be positive")
    return rng.exponential(1.0 / np.asarray(rate), size=size)


def uniform(rng, size=None):
    return rng.random(size)


def matrix_normal_std(rng, n, q):
    return rng.standard_normal((n, q))
