"""Prediction, accuracy metrics and repeated k-fold cross-validation."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import projected_diag
from .numerics import ConfigurationError, DimensionError, make_rng
from .sampler import align_draws

log = logging.getLogger(__name__)

PREDICT_STREAM = 20
CV_PARTITION_STREAM = 30


class UndefinedMetricError(ValueError):
    pass


@dataclass
class Prediction:
    samples: np.ndarray   # (D, M_test) predictive draws
    point: np.ndarray     # (M_test,)
    sd: np.ndarray        # (M_test,) posterior predictive SD, outcome noise included
    lambdas: np.ndarray   # (D, M_test, q) test-time loading draws


def predict(draws, test_data, seed=0, noise=False):
    """Posterior predictive outcomes for held-out subjects.

    For each draw, test loadings come from their network-only conditional under
    that draw's ``U``, ``sigma^2`` and ``tau_lambda^2``. ``samples`` holds
    ``beta' lambda + alpha' z`` at the sampled loadings, plus ``N(0, tau^2)``
    noise if ``noise``. The point prediction averages the per-draw conditional
    means ``beta' E[lambda] + alpha' z``, which removes loading noise from the
    point estimate without changing its expectation.
    """
    D, N, q = draws.u.shape
    if test_data.N != N:
        raise DimensionError(f"test networks have N={test_data.N}, posterior has N={N}")
    if test_data.r != draws.alpha.shape[1]:
        raise DimensionError(f"test covariates have r={test_data.r}, posterior has r={draws.alpha.shape[1]}")
    rng = make_rng(seed, PREDICT_STREAM)
    M = test_data.M
    lam = np.empty((D, M, q))
    means = np.empty((D, M))
    samples = np.empty((D, M))
    within = np.empty(D)
    for j in range(D):
        s2, tl2 = draws.sigma_sq[j], draws.tau_lambda_sq[j]
        prec = 1.0 / s2 + 1.0 / tl2
        mu = projected_diag(test_data, draws.u[j]) / (s2 * prec)
        lam[j] = mu + rng.standard_normal((M, q)) / np.sqrt(prec)
        cov_term = test_data.Z @ draws.alpha[j]
        means[j] = mu @ draws.beta[j] + cov_term
        samples[j] = lam[j] @ draws.beta[j] + cov_term
        within[j] = float(draws.beta[j] @ draws.beta[j]) / prec
    if noise:
        samples = samples + np.sqrt(draws.tau_sq)[:, None] * rng.standard_normal((D, M))
    sd = np.sqrt(means.var(axis=0) + within.mean() + draws.tau_sq.mean())
    return Prediction(samples, means.mean(axis=0), sd, lam)


def predictive_r2(predictions, truths):
    predictions = np.asarray(predictions, dtype=float).reshape(-1)
    truths = np.asarray(truths, dtype=float).reshape(-1)
    if predictions.shape != truths.shape or truths.size < 2:
        raise DimensionError("need equal-length vectors with at least two entries")
    sst = float(np.sum((truths - truths.mean()) ** 2))
    if sst == 0:
        raise UndefinedMetricError("outcomes have zero variance")
    return 1.0 - float(np.sum((truths - predictions) ** 2)) / sst


def subspace_distance(u_a, u_b):
    """Frobenius distance between the orthogonal projectors onto the two column spans."""
    u_a, u_b = np.asarray(u_a, dtype=float), np.asarray(u_b, dtype=float)
    if u_a.shape != u_b.shape:
        raise DimensionError(f"shape mismatch {u_a.shape} vs {u_b.shape}")
    return float(np.linalg.norm(u_a @ u_a.T - u_b @ u_b.T))


def posterior_mean_u(draws):
    """Orthonormal representative of the averaged projector ``E[U U']``."""
    proj = np.einsum("djl,dkl->jk", draws.u, draws.u) / len(draws)
    evals, evecs = np.linalg.eigh(proj)
    return evecs[:, ::-1][:, : draws.u.shape[2]]


def _rmse(a, b):
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def param_rmse(draws, truth, align=True):
    """RMSE of posterior means against ground truth for U, lambda, d, sigma^2 and tau^2.

    Draws are first aligned (column permutation and signs) to ``truth.u_true``.
    """
    if draws.u.shape[1:] != truth.u_true.shape:
        raise DimensionError("posterior and truth U shapes differ")
    if draws.lambdas.shape[1:] != truth.lambdas_true.shape:
        raise DimensionError("posterior and truth loading shapes differ")
    aligned = align_draws(draws, truth.u_true) if align else draws
    return {
        "U": _rmse(aligned.u.mean(axis=0), truth.u_true),
        "lambda": _rmse(aligned.lambdas.mean(axis=0), truth.lambdas_true),
        "d": _rmse(aligned.d.mean(axis=0), truth.d_true),
        "sigma_sq": abs(float(aligned.sigma_sq.mean()) - truth.sigma_sq_true),
        "tau_sq": abs(float(aligned.tau_sq.mean()) - truth.tau_sq_true),
    }


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

def fit(data, config, sampler="joint"):
    if sampler == "joint":
        from .sampler import run_joint
        return run_joint(data, config)
    if sampler == "twostage":
        from .twostage import run_twostage
        return run_twostage(data, config)
    raise ConfigurationError(f"unknown sampler {sampler!r}")


def fold_assignments(subject_ids, folds, seed, repeat):
    """Fold label per subject, keyed by subject id so row order does not matter."""
    ids = list(subject_ids)
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    perm = make_rng(seed, CV_PARTITION_STREAM + repeat).permutation(len(ids))
    labels = np.empty(len(ids), dtype=int)
    for f, chunk in enumerate(np.array_split(perm, folds)):
        for pos in chunk:
            labels[order[pos]] = f
    return labels


def n_workers():
    env = os.environ.get("BSNMANI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigurationError(f"BSNMANI_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def _run_fold(job):
    data, train_idx, test_idx, config, sampler, pred_seed = job
    draws = fit(data.subset(train_idx), config, sampler)
    pred = predict(draws, data.subset(test_idx), seed=pred_seed)
    return pred.point


@dataclass
class CVResult:
    rows: list          # dicts: repeat, fold, n_test, r2
    median: float
    iqr: float


def cross_validate(data, folds=5, repeats=10, config=None, sampler="joint", seed=0, workers=None):
    """Repeated k-fold CV of predictive R^2.

    With ``folds == M`` (leave-one-out) single-subject folds have no R^2 of
    their own; each repeat then reports one R^2 over its pooled held-out
    predictions.
    """
    from .sampler import SamplerConfig

    config = SamplerConfig() if config is None else config
    if not data.has_outcomes:
        raise ConfigurationError("cross-validation needs outcomes")
    if folds < 2:
        raise ConfigurationError("folds must be >= 2")
    if data.M < folds:
        raise ConfigurationError(f"{data.M} subjects cannot fill {folds} folds")
    loo = folds == data.M
    if not loo and data.M // folds < 2:
        raise ConfigurationError("every fold needs at least two subjects")

    jobs, keys = [], []
    for rep in range(repeats):
        labels = fold_assignments(data.subject_ids, folds, seed, rep)
        for f in range(folds):
            test_idx = np.flatnonzero(labels == f)
            train_idx = np.flatnonzero(labels != f)
            fit_seed = seed * 1_000_003 + rep * folds + f
            jobs.append((data, train_idx, test_idx, config.with_seed(fit_seed), sampler, fit_seed))
            keys.append((rep, f, test_idx))

    workers = n_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            points = list(pool.map(_run_fold, jobs))
    else:
        points = [_run_fold(j) for j in jobs]

    rows = []
    pooled = {}
    for (rep, f, test_idx), point in zip(keys, points):
        truth = data.C[test_idx]
        r2 = float("nan") if loo else predictive_r2(point, truth)
        rows.append({"repeat": rep, "fold": f, "n_test": len(test_idx), "r2": r2})
        pooled.setdefault(rep, []).append((test_idx, point))
    if loo:
        for rep, parts in pooled.items():
            idx = np.concatenate([p[0] for p in parts])
            pred = np.concatenate([p[1] for p in parts])
            rows.append({"repeat": rep, "fold": "pooled", "n_test": len(idx),
                         "r2": predictive_r2(pred, data.C[idx])})
    scores = np.array([r["r2"] for r in rows if np.isfinite(r["r2"])])
    q25, med, q75 = np.percentile(scores, [25, 50, 75])
    return CVResult(rows, float(med), float(q75 - q25))
