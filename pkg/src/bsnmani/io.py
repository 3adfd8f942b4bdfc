"""Readers and writers for datasets, posterior draws, predictions and configs.

CSV floats are written with 17 significant digits, which round-trips every
64-bit value exactly.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .mala import MalaConfig
from .model import Dataset, Hyperparams
from .numerics import ConfigurationError, DimensionError, n_from_p
from .sampler import SCALAR_FIELDS, PosteriorDraws, SamplerConfig
from .simulate import GroundTruth, SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FLOAT_FMT = "%.17g"
VECL_ORDER = "column-major-strict-lower"


def fmt(x):
    return FLOAT_FMT % x


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ConfigurationError(f"{path} is empty")
    return rows[0], rows[1:]


def _float(s):
    return float("nan") if s == "" else float(s)


def _json_dump(obj, path):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

def edge_labels(n):
    """Column names ``e_j_k`` (1-based, j > k) in vecl order."""
    return [f"e_{j + 1}_{k + 1}" for k in range(n) for j in range(k + 1, n)]


def write_networks(data, path):
    rows = ([str(sid)] + [fmt(v) for v in data.vecl_Y[i]] for i, sid in enumerate(data.subject_ids))
    _write_rows(path, ["subject_id"] + edge_labels(data.N), rows)


def write_clinical(data, path):
    header = ["subject_id", "outcome"] + [f"z_{k + 1}" for k in range(data.r)]
    rows = []
    for i, sid in enumerate(data.subject_ids):
        c = "" if data.C is None else fmt(data.C[i])
        rows.append([str(sid), c] + [fmt(v) for v in data.Z[i]])
    _write_rows(path, header, rows)


def write_meta(data, path, node_labels=None, extra=None):
    labels = [str(j + 1) for j in range(data.N)] if node_labels is None else list(node_labels)
    if len(labels) != data.N:
        raise DimensionError(f"{len(labels)} node labels for N={data.N}")
    meta = {"N": data.N, "M": data.M, "r": data.r, "node_labels": labels, "vecl_order": VECL_ORDER}
    meta.update(extra or {})
    _json_dump(meta, path)


def read_networks(path):
    """Returns ``(subject_ids, vecl matrix (M, P), N)``."""
    header, rows = _read_rows(path)
    if header[0] != "subject_id":
        raise ConfigurationError(f"{path}: first column must be subject_id")
    P = len(header) - 1
    N = n_from_p(P)
    if header[1:] != edge_labels(N):
        raise ConfigurationError(f"{path}: edge columns are not in {VECL_ORDER} order")
    ids = [r[0] for r in rows]
    if len(set(ids)) != len(ids):
        raise ConfigurationError(f"{path}: duplicate subject ids")
    values = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), P)
    return ids, values, N


def read_clinical(path):
    """Returns ``{subject_id: (outcome, z)}``; a blank outcome reads as NaN."""
    header, rows = _read_rows(path)
    if header[:2] != ["subject_id", "outcome"]:
        raise ConfigurationError(f"{path}: header must start with subject_id,outcome")
    r = len(header) - 2
    out = {}
    for row in rows:
        if len(row) != r + 2:
            raise ConfigurationError(f"{path}: row for {row[0]!r} has {len(row)} fields, expected {r + 2}")
        out[row[0]] = (_float(row[1]), np.array([float(v) for v in row[2:]], dtype=float))
    return out, r


def read_dataset(networks_path, clinical_path=None, meta_path=None):
    """Load a dataset; clinical rows are matched to networks by subject id."""
    from .numerics import devecl

    ids, vecl_Y, N = read_networks(networks_path)
    if meta_path is not None and Path(meta_path).exists():
        with open(meta_path) as f:
            meta = json.load(f)
        if meta.get("N") != N:
            raise DimensionError(f"meta.json says N={meta.get('N')}, networks.csv has N={N}")
    Y = devecl(vecl_Y, N) if len(ids) else np.zeros((0, N, N))
    if clinical_path is None:
        return Dataset(Y, None, None, ids)
    clin, r = read_clinical(clinical_path)
    missing = [s for s in ids if s not in clin]
    if missing:
        raise ConfigurationError(f"no clinical row for subjects {missing[:5]}")
    C = np.array([clin[s][0] for s in ids], dtype=float)
    Z = np.array([clin[s][1] for s in ids], dtype=float).reshape(len(ids), r)
    return Dataset(Y, None if np.all(np.isnan(C)) else C, Z, ids)


def write_truth(truth, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    N, q = truth.u_true.shape
    _write_rows(out_dir / "u_true.csv", [f"u_{l + 1}" for l in range(q)],
                ([fmt(v) for v in row] for row in truth.u_true))
    _write_rows(out_dir / "lambdas_true.csv", [f"lambda_{l + 1}" for l in range(q)],
                ([fmt(v) for v in row] for row in truth.lambdas_true))
    rows = [["sigma_sq", 1, fmt(truth.sigma_sq_true)], ["tau_sq", 1, fmt(truth.tau_sq_true)]]
    rows += [["beta", l + 1, fmt(v)] for l, v in enumerate(truth.beta_true)]
    rows += [["alpha", k + 1, fmt(v)] for k, v in enumerate(truth.alpha_true)]
    _write_rows(out_dir / "parameters.csv", ["name", "index", "value"], rows)
    if truth.edge_variances is not None:
        _write_rows(out_dir / "edge_variances.csv", ["variance"], ([fmt(v)] for v in truth.edge_variances))


def read_truth(out_dir):
    out_dir = Path(out_dir)
    _, rows = _read_rows(out_dir / "u_true.csv")
    u = np.array(rows, dtype=float)
    _, rows = _read_rows(out_dir / "lambdas_true.csv")
    lam = np.array(rows, dtype=float).reshape(-1, u.shape[1])
    _, rows = _read_rows(out_dir / "parameters.csv")
    params = {}
    for name, _, value in rows:
        params.setdefault(name, []).append(float(value))
    ev = None
    if (out_dir / "edge_variances.csv").exists():
        _, rows = _read_rows(out_dir / "edge_variances.csv")
        ev = np.array([r[0] for r in rows], dtype=float)
    return GroundTruth(u, lam, params["sigma_sq"][0], np.array(params.get("beta", [])),
                       np.array(params.get("alpha", [])), params["tau_sq"][0], ev)


def write_simulation(data, truth, out_dir, config=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_networks(data, out_dir / "networks.csv")
    write_clinical(data, out_dir / "clinical.csv")
    write_truth(truth, out_dir / "truth")
    extra = {"sim_config": sim_config_dict(config)} if config is not None else None
    write_meta(data, out_dir / "meta.json", extra=extra)


# ---------------------------------------------------------------------------
# Configs
# ---------------------------------------------------------------------------

def _finite_or_str(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return v


def sim_config_dict(config):
    out = {}
    for f in fields(config):
        v = getattr(config, f.name)
        if isinstance(v, np.ndarray):
            v = [float(x) for x in v]
        out[f.name] = _finite_or_str(v)
    return out


def sampler_config_dict(config):
    d = asdict(config)
    d["mala"] = asdict(config.mala)
    d["hyper"] = config.hyper.as_dict()
    return d


def load_toml(path):
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc


def _check_keys(table, allowed, where):
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown {where} keys: {', '.join(unknown)}")


def sampler_config_from_dict(d):
    """Flat ``SamplerConfig`` keys, with optional ``[mala]`` and ``[hyper]`` tables."""
    d = dict(d)
    mala = d.pop("mala", {}) or {}
    hyper = d.pop("hyper", {}) or {}
    _check_keys(d, [f.name for f in fields(SamplerConfig) if f.name not in ("mala", "hyper")], "sampler")
    _check_keys(mala, [f.name for f in fields(MalaConfig)], "[mala]")
    _check_keys(hyper, [f.name for f in fields(Hyperparams)], "[hyper]")
    try:
        return SamplerConfig(mala=MalaConfig(**mala), hyper=Hyperparams(**hyper), **d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def sim_config_from_dict(d):
    d = dict(d)
    _check_keys(d, [f.name for f in fields(SimConfig)], "simulation")
    for k in ("snr_y", "snr_c"):
        if isinstance(d.get(k), str):
            d[k] = float(d[k])
    try:
        return SimConfig(**d)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Posterior draws
# ---------------------------------------------------------------------------

def _draw_blocks(draws):
    """Yield ``(name, index labels, values (D, k))`` for every stored quantity except U."""
    D = len(draws)
    for f in SCALAR_FIELDS:
        yield f, ["1"], getattr(draws, f).reshape(D, 1)
    yield "beta", [str(l + 1) for l in range(draws.beta.shape[1])], draws.beta
    yield "alpha", [str(k + 1) for k in range(draws.alpha.shape[1])], draws.alpha
    M, q = draws.lambdas.shape[1:]
    yield "lambda", [f"{i + 1}_{l + 1}" for i in range(M) for l in range(q)], draws.lambdas.reshape(D, M * q)


def write_draws(draws, out_dir):
    """``draws.csv`` (long format) and ``u_draws.csv`` (one row-major flattened U per draw)."""
    out_dir = Path(out_dir)
    D, N, q = draws.u.shape
    with open(out_dir / "draws.csv", "w") as f:
        f.write("iteration,name,index,value\n")
        for name, labels, values in _draw_blocks(draws):
            lines = []
            for j in range(D):
                it = int(draws.iterations[j])
                lines.extend(f"{it},{name},{lab},{FLOAT_FMT % v}\n" for lab, v in zip(labels, values[j]))
            f.writelines(lines)
    header = ["iteration", "n", "q"] + [f"u_{a + 1}_{l + 1}" for a in range(N) for l in range(q)]
    with open(out_dir / "u_draws.csv", "w") as f:
        f.write(",".join(header) + "\n")
        flat = draws.u.reshape(D, N * q)
        for j in range(D):
            f.write(f"{int(draws.iterations[j])},{N},{q}," + ",".join(FLOAT_FMT % v for v in flat[j]) + "\n")


def read_draws(out_dir):
    """Inverse of :func:`write_draws`; traces come back from ``run.json`` when present."""
    out_dir = Path(out_dir)
    header, rows = _read_rows(out_dir / "u_draws.csv")
    if header[:3] != ["iteration", "n", "q"]:
        raise ConfigurationError("u_draws.csv header must start with iteration,n,q")
    if not rows:
        raise ConfigurationError("u_draws.csv has no draws")
    N, q = int(rows[0][1]), int(rows[0][2])
    iterations = np.array([int(r[0]) for r in rows])
    u = np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), N, q)
    pos = {it: j for j, it in enumerate(iterations)}
    D = len(rows)

    blocks = {}
    _, rows = _read_rows(out_dir / "draws.csv")
    for it, name, idx, value in rows:
        blocks.setdefault(name, {}).setdefault(idx, np.empty(D))[pos[int(it)]] = float(value)

    def vector(name):
        cols = blocks.get(name, {})
        keys = sorted(cols, key=int)
        return np.column_stack([cols[k] for k in keys]) if keys else np.zeros((D, 0))

    lam_cols = blocks.get("lambda", {})
    M = len(lam_cols) // q
    lambdas = np.empty((D, M, q))
    for key, col in lam_cols.items():
        i, l = (int(t) - 1 for t in key.split("_"))
        lambdas[:, i, l] = col
    draws = PosteriorDraws(u=u, lambdas=lambdas, beta=vector("beta"), alpha=vector("alpha"),
                           iterations=iterations,
                           **{f: blocks[f]["1"] for f in SCALAR_FIELDS})
    run_path = out_dir / "run.json"
    if run_path.exists():
        with open(run_path) as f:
            run = json.load(f)
        draws.step_size = np.array(run.get("step_size", []), dtype=float)
        draws.accepted = np.array(run.get("accepted", []), dtype=bool)
        draws.log_joint = np.array(run.get("log_joint", []), dtype=float)
        draws.info = dict(run.get("info", {}))
    return draws


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def write_run(draws, config, out_dir, data=None):
    """``run.json``: config echo, per-iteration traces and sampler diagnostics."""
    info = {k: _jsonable(v) for k, v in draws.info.items()}
    run = {
        "config": sampler_config_dict(config),
        "n_draws": len(draws),
        "step_size": draws.step_size.tolist(),
        "accepted": [int(a) for a in draws.accepted],
        "log_joint": draws.log_joint.tolist(),
        "info": info,
    }
    if data is not None:
        run["data"] = {"M": data.M, "N": data.N, "r": data.r, "subject_ids": [str(s) for s in data.subject_ids]}
    _json_dump(run, Path(out_dir) / "run.json")


def write_predictions(pred, subject_ids, path, samples_path=None):
    rows = [[str(s), fmt(p), fmt(sd)] for s, p, sd in zip(subject_ids, pred.point, pred.sd)]
    _write_rows(path, ["subject_id", "prediction", "predictive_sd"], rows)
    if samples_path is not None:
        _write_rows(samples_path, ["draw"] + [str(s) for s in subject_ids],
                    ([str(j + 1)] + [fmt(v) for v in row] for j, row in enumerate(pred.samples)))


def write_cv(result, path):
    rows = [[str(r["repeat"]), str(r["fold"]), str(r["n_test"]), fmt(r["r2"]), ""] for r in result.rows]
    rows.append(["summary", "all", "", fmt(result.median), fmt(result.iqr)])
    _write_rows(path, ["repeat", "fold", "n_test", "r2", "iqr"], rows)
