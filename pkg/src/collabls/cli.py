"""Command-line entry point: ``collabls run | theory | check``.

Exit codes: 0 success, 1 failed acceptance checks or unwritable output,
2 invalid configuration, 3 some method failed in every trial.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import harness
from .errors import CollabError, ConfigError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_METHOD = 0, 1, 2, 3


def _load(args):
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    if args.config:
        cfg = harness.load_config(args.config)
    elif args.preset:
        cfg = harness.ExperimentConfig.from_dict({"preset": args.preset})
    else:
        raise ConfigError("one of --config or --preset is required")
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.validate()
    return cfg


def _write(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def cmd_run(args):
    cfg = _load(args)
    fmt = args.format or cfg.output.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown report format {fmt!r}")
    out = args.out or cfg.output.get("path")
    reports = harness.run_experiment(cfg, threads=args.threads, dump_dir=args.dump_frames)
    summary = harness.summarize_trials(reports, cfg.confidence, cfg.metric)
    _write(harness.report_text(summary, fmt, cfg.to_dict()), out)

    failed = []
    for label in dict.fromkeys(r.method for r in reports):
        errs = [r.error for r in reports if r.method == label]
        if all(errs):
            failed.append(label)
            print(f"method {label} failed in every trial: {errs[0]}", file=sys.stderr)
    return EXIT_METHOD if failed else EXIT_OK


def _mat(a):
    return np.asarray(a, dtype=float).tolist()


def cmd_theory(args):
    from .baselines import oracle_alphas
    from .theory import TheoryContext, c_gaussian, c_imp_glb, c_strong, local_theory_cov

    if args.format not in (None, "json"):
        raise ConfigError("theory output is JSON only")
    cfg = _load(args)
    exp = harness.build_experiment(cfg)
    ctx = TheoryContext(exp.model, exp.masks)
    cg = c_gaussian(ctx)
    doc = {
        "d": ctx.d,
        "m": ctx.m,
        "noise_var": exp.model.noise_var,
        "sigma": _mat(exp.model.sigma_cov),
        "theta": _mat(exp.model.theta),
        "c_gaussian": _mat(cg),
        "c_strong": _mat(c_strong(ctx)),
        "c_imp_glb_oracle": _mat(c_imp_glb(ctx, oracle_alphas(exp.model, exp.masks))),
        "trace_sigma_c_gaussian": float(np.trace(exp.model.sigma_cov @ cg)),
        "agents": [
            {
                "agent": i,
                "observed": list(mk.observed),
                "irreducible_risk": ctx.irreducible[i],
                "inverse_gaussian_weight": _mat(np.linalg.inv(ctx.w_gauss[i])),
                "local_covariance": _mat(local_theory_cov(cg, ctx.t_ops[i])),
            }
            for i, mk in enumerate(ctx.masks)
        ],
    }
    _write(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_check(args):
    from .acceptance import CRITERIA, run_all

    numbers = args.only or sorted(CRITERIA)
    unknown = [k for k in numbers if k not in CRITERIA]
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}")
    results = run_all(numbers)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    return EXIT_OK if passed == len(results) else EXIT_FAIL


def build_parser():
    parser = argparse.ArgumentParser(prog="collabls", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--preset", choices=sorted(harness.PRESETS), help="built-in config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), help="report format")

    run = sub.add_parser("run", help="run an experiment and write a report")
    config_flags(run)
    run.add_argument("--threads", type=int, default=1, help="worker threads across trials")
    run.add_argument("--dump-frames", metavar="DIR", help="write every wire frame under DIR")
    run.set_defaults(func=cmd_run)

    theory = sub.add_parser("theory", help="dump closed-form covariance matrices for a config")
    config_flags(theory)
    theory.set_defaults(func=cmd_theory)

    check = sub.add_parser("check", help="run the acceptance checks")
    check.add_argument("--only", type=int, nargs="+", metavar="K", help="criterion numbers to run")
    check.add_argument("--threads", type=int, default=1, help=argparse.SUPPRESS)
    check.set_defaults(func=cmd_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CollabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_METHOD
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
