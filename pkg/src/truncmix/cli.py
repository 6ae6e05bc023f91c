"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 data or constraint
violation, 4 runaway rejection sampling.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import io, synth
from .exceptions import (ConfigError, ConstraintViolationError, DataFormatError,
                         DegenerateNormalizerError, RunawayRejectionError)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNAWAY = 0, 2, 3, 4


def _add_config_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    for f in dataclasses.fields(io.RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       metavar=f.name.upper())


def _overrides(args):
    names = {f.name for f in dataclasses.fields(io.RunConfig)}
    return {k: v for k, v in vars(args).items() if k in names and v is not None}


def _run_dir_config(args):
    base = io.config_from_manifest(args.run_dir).to_dict()
    base["output_dir"] = args.run_dir
    if args.config:
        base.update(io.load_config(args.config).to_dict())
    base.update(_overrides(args))
    return io.RunConfig.from_dict(base)


def cmd_fit(args):
    cfg = io.load_config(args.config, _overrides(args))
    store = io.run_fit(cfg)
    print("fit: %d samples written to %s" % (len(store), cfg.output_dir))


def cmd_evaluate(args):
    cfg = _run_dir_config(args)
    store = io.load_store(args.run_dir, cfg.model)
    m = io.run_evaluate(cfg, store)
    print("test log-likelihood %.6f over %d points" % (m["test"]["total"], m["test"]["n"]))


def cmd_grid(args):
    cfg = _run_dir_config(args)
    paths = io.run_grid(cfg, io.load_store(args.run_dir, cfg.model))
    print("\n".join(paths))


def cmd_ppc(args):
    cfg = _run_dir_config(args)
    out = io.run_ppc(cfg, io.load_store(args.run_dir, cfg.model))
    print("observed %.4f  p-value %.4f" % (out["observed_fraction"], out["p_value"]))


def cmd_sweep(args):
    cfg = io.load_config(args.config, _overrides(args))
    for row in io.run_sweep(cfg):
        print("t=%-6s test log-likelihood %.4f" % (row[0], row[1]))


def cmd_geweke(args):
    from .geweke import geweke_joint_test
    z = geweke_joint_test(np.random.default_rng(args.seed), sampler=args.sampler,
                          n_draws=args.n_draws)
    ok = all(abs(v) < args.z_max for v in z.values())
    out = {"sampler": args.sampler, "n_draws": args.n_draws, "seed": args.seed,
           "z_max": args.z_max, "z": z, "passed": ok}
    if args.output:
        io.write_json(args.output, out)
    for k, v in z.items():
        print("%-10s z = %+.3f" % (k, v))
    print("PASS" if ok else "FAIL")


def cmd_synth(args):
    kwargs = {}
    if args.kind == "edge_normal":
        kwargs = {"scale": args.scale, "scale_is": args.scale_is}
    x, constraint = synth.generate(args.kind, args.n, args.seed, **kwargs)
    os.makedirs(args.output_dir, exist_ok=True)
    names = ["x%d" % j for j in range(x.shape[1])]
    io.write_csv(os.path.join(args.output_dir, "data.csv"), names, x.tolist())
    with open(os.path.join(args.output_dir, "constraint.json"), "w") as fh:
        json.dump(constraint.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    io.write_json(os.path.join(args.output_dir, "manifest.json"),
                  {"command": "synth", "kind": args.kind, "n": args.n, "seed": args.seed,
                   "options": kwargs})
    print("wrote %d points to %s" % (len(x), args.output_dir))


def cmd_contour(args):
    paths = sorted(os.path.join(args.run_dir, f) for f in os.listdir(args.run_dir)
                   if f.startswith("grid") and f.endswith(".csv"))
    if not paths:
        raise ConfigError("no grid CSVs in %s; run the grid subcommand first" % args.run_dir)
    out = io.contour_script(paths, os.path.join(args.run_dir, "contour.gp"))
    print(out)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="truncmix",
        description="Nonparametric mixture densities on constrained domains.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="run the sampler on the training split")
    _add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sweep-thresholds", help="fit and evaluate over a threshold grid")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    for name, func, text in (("evaluate", cmd_evaluate, "test log-likelihood and q(S)"),
                             ("grid", cmd_grid, "posterior-mean density grids"),
                             ("ppc", cmd_ppc, "boundary-scale predictive check")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--run-dir", required=True, help="directory written by fit")
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("contour-script", help="gnuplot script for the grid CSVs")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=cmd_contour)

    p = sub.add_parser("geweke", help="joint-distribution test of a sampler")
    p.add_argument("--sampler", choices=("tmog", "motg"), default="tmog")
    p.add_argument("--n-draws", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--z-max", type=float, default=4.0)
    p.add_argument("--output", help="write z-scores as JSON")
    p.set_defaults(func=cmd_geweke)

    p = sub.add_parser("synth", help="write a synthetic dataset and its constraint")
    p.add_argument("--kind", choices=sorted(synth.GENERATORS), required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=0.05)
    p.add_argument("--scale-is", choices=("variance", "sd"), default="variance")
    p.add_argument("--output-dir", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except RunawayRejectionError as exc:
        sweep = getattr(exc, "sweep", None)
        print("error: runaway rejection sampling%s: %s"
              % ("" if sweep is None else " at sweep %d" % sweep, exc), file=sys.stderr)
        return EXIT_RUNAWAY
    except (ConstraintViolationError, DataFormatError, DegenerateNormalizerError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
