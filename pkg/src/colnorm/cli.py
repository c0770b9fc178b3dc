"""Command line entry point: ``colnorm {train,verify-lemmas,grad-check,compare}``.

Exit status: 0 success, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from . import config, harness
from .errors import ColnormError, ConfigError

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

# Problems used by grad-check when no config file is given.
GRAD_CHECK_PROBLEMS = {
    "quadratic": {"type": "quadratic", "m": "8", "n": "6", "kappa": "10", "init_scale": "1"},
    "mlp": {"type": "mlp"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _override_run(run: config.RunConfig, args) -> config.RunConfig:
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    return dataclasses.replace(run, **changes)


def _cmd_train(args) -> int:
    cfg = config.load_experiment(args.config)
    cfg = dataclasses.replace(cfg, run=_override_run(cfg.run, args))
    runlog = harness.run_experiment(cfg)
    print(f"final_loss = {runlog.losses[-1]!r}")
    print(f"wrote {cfg.run.output_dir}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    ccfg = config.load_compare(args.config)
    ccfg = dataclasses.replace(ccfg, run=_override_run(ccfg.run, args))
    rows = harness.compare_optimizers(ccfg)
    print(",".join(harness.diagnostics.SUMMARY_HEADER))
    for row in rows:
        print(",".join(row.cells()))
    return EXIT_OK


def _cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    checks = harness.verify_lemmas(seed=seed, trials=args.trials, rank_deficient=args.rank_deficient)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.ok]
    for c in failed:
        detail = c.error or f"max deviation {c.max_dev:.3e} exceeds {harness.LEMMA_TOL:g}"
        print(f"error: verification: {c.name}: {detail}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def _cmd_grad_check(args) -> int:
    if args.config is not None:
        cfg = config.load_experiment(args.config)
        pcfg, seed = cfg.problem, cfg.run.seed
    else:
        pcfg, seed = config.parse_problem(GRAD_CHECK_PROBLEMS[args.problem]), 0
    if args.seed is not None:
        seed = args.seed
    if args.h <= 0:
        raise ConfigError("--h must be positive")
    err = harness.grad_check(pcfg, args.h, seed)
    tol = harness.GRAD_CHECK_TOL[pcfg.kind]
    print(f"{pcfg.kind}: max_rel_error={err:.3e} (tol {tol:g})")
    if err > tol:
        print(f"error: verification: gradient check {err:.3e} exceeds {tol:g}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colnorm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, need_config):
        p.add_argument("--config", required=need_config)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")

    p = sub.add_parser("train", help="run one experiment")
    common(p, True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("compare", help="lr-grid comparison across optimizers")
    common(p, True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("verify-lemmas", help="check the SVD and column-sum forms of Muon/Conda")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--rank-deficient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    common(p, False)
    p.add_argument("--problem", choices=sorted(config.PROBLEM_KEYS), default="quadratic")
    p.add_argument("--h", type=float, default=1e-6)
    p.set_defaults(func=_cmd_grad_check)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if getattr(args, "trials", 1) < 1:
            raise ConfigError("--trials must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ColnormError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
