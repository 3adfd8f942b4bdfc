"""Command-line entry point: ``bsnmani simulate | fit | predict | cv``.

Exit codes: 0 success, 2 usage, 3 validation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path


from . import io
from .evaluate import cross_validate, fit, predict
from .numerics import BSNManiError, ConfigurationError, NumericalError, SingularityError
from .simulate import generate

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("bsnmani")

SIM_FLAGS = {
    "n_nodes": int, "rank": int, "n_subjects": int, "snr_y": float, "snr_c": float,
    "lambda_rate": float, "n_continuous": int, "n_binary": int, "dispersion": float, "seed": int,
}
SAMPLER_FLAGS = {"q": int, "iters": int, "burn_in": int, "thin": int, "seed": int}


def _add_overrides(parser, flags):
    for name, typ in flags.items():
        parser.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def _overrides(args, flags):
    return {k: getattr(args, k) for k in flags if getattr(args, k) is not None}


def _sampler_config(args):
    base = io.load_toml(args.config) if args.config else {}
    base.update(_overrides(args, SAMPLER_FLAGS))
    return io.sampler_config_from_dict(base)


def _load_train(args):
    meta = Path(args.networks).with_name("meta.json")
    return io.read_dataset(args.networks, args.clinical, meta)


def cmd_simulate(args):
    base = io.load_toml(args.config) if args.config else {}
    base.update(_overrides(args, SIM_FLAGS))
    if args.heteroscedastic:
        base["heteroscedastic"] = True
    config = io.sim_config_from_dict(base)
    data, truth = generate(config)
    io.write_simulation(data, truth, args.out, config)
    log.info("wrote %d subjects (N=%d) to %s", data.M, data.N, args.out)
    return EXIT_OK


def cmd_fit(args):
    config = _sampler_config(args)
    data = _load_train(args)
    t0 = time.perf_counter()
    draws = fit(data, config, args.sampler)
    runtime = time.perf_counter() - t0
    out = Path(args.out)
    created = not out.exists()
    try:
        out.mkdir(parents=True, exist_ok=True)
        io.write_draws(draws, out)
        io.write_run(draws, config, out, data)
        # wall-clock time is kept apart so the other outputs are reproducible byte for byte
        with open(out / "timing.json", "w") as f:
            json.dump({"runtime_seconds": runtime}, f)
            f.write("\n")
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise
    log.info("%s sampler: %d draws in %.1fs -> %s", args.sampler, len(draws), runtime, out)
    return EXIT_OK


def cmd_predict(args):
    draws = io.read_draws(args.posterior)
    meta = Path(args.networks).with_name("meta.json")
    test = io.read_dataset(args.networks, args.clinical, meta)
    if test.r != draws.alpha.shape[1] and args.clinical is None:
        raise ConfigurationError(f"posterior has r={draws.alpha.shape[1]} covariates; pass --clinical")
    pred = predict(draws, test, seed=args.seed, noise=args.samples is not None)
    io.write_predictions(pred, test.subject_ids, args.out, args.samples)
    return EXIT_OK


def cmd_cv(args):
    config = _sampler_config(args)
    data = _load_train(args)
    result = cross_validate(data, folds=args.folds, repeats=args.repeats, config=config,
                            sampler=args.sampler, seed=config.seed)
    io.write_cv(result, args.out)
    log.info("CV median R^2 %.4f (IQR %.4f)", result.median, result.iqr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bsnmani", description="Bayesian scalar-on-network regression")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("--config", help="TOML file with SimConfig keys")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--heteroscedastic", action="store_true")
    _add_overrides(s, SIM_FLAGS)
    s.set_defaults(func=cmd_simulate)

    for name, func, helptext in (("fit", cmd_fit, "sample the posterior"),
                                 ("cv", cmd_cv, "repeated k-fold cross-validation")):
        f = sub.add_parser(name, help=helptext)
        f.add_argument("--networks", required=True)
        f.add_argument("--clinical", required=True)
        f.add_argument("--config", help="TOML file with SamplerConfig keys and [mala]/[hyper] tables")
        f.add_argument("--sampler", choices=("joint", "twostage"), default="joint")
        f.add_argument("--out", required=True)
        _add_overrides(f, SAMPLER_FLAGS)
        if name == "cv":
            f.add_argument("--folds", type=int, default=5)
            f.add_argument("--repeats", type=int, default=10)
        f.set_defaults(func=func)

    pr = sub.add_parser("predict", help="posterior predictive outcomes for new subjects")
    pr.add_argument("--posterior", required=True, help="directory written by fit")
    pr.add_argument("--networks", required=True)
    pr.add_argument("--clinical", help="covariates for the test subjects (outcome column may be blank)")
    pr.add_argument("--out", required=True)
    pr.add_argument("--samples", help="also write the predictive draw matrix here")
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_predict)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, SingularityError, FloatingPointError) as exc:
        print(f"bsnmani: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BSNManiError, ValueError, OSError, KeyError) as exc:
        print(f"bsnmani: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
