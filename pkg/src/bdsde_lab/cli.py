"""Command-line entry point: ``bdsde-lab <subcommand> --config FILE``.

Subcommands and the experiment kinds they accept:

    simulate      forward paths plus the backward solve; records u (any config kind)
    estimate      u-estimate, grad-weights, grad-variational, z-profile, z-discrete
    compare       oracle-compare (or any per-path kind, with oracle records)
    jumps         jumps
    convergence   convergence
    accept        the acceptance suite (config optional)

Records go to ``--out`` (or the config ``output`` key, else stdout) as CSV.
Exit status: 0 success, 1 acceptance or oracle failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import sys

from .config import read_config
from .errors import BDSDEError
from .harness import run_experiment, write_records

_ALLOWED = {
    "simulate": None,
    "estimate": ("u-estimate", "grad-weights", "grad-variational", "z-profile", "z-discrete"),
    "compare": ("oracle-compare", "u-estimate", "grad-weights", "grad-variational", "z-profile"),
    "jumps": ("jumps",),
    "convergence": ("convergence",),
}


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdsde-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "compare", "jumps", "convergence", "accept"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "accept", help="experiment config file")
        p.add_argument("--seed", type=_seed, help="override the config seed")
        p.add_argument("--threads", type=_positive, default=1)
        p.add_argument("--out", help="CSV output path (default: config output key, else stdout)")
        p.add_argument("--paths", type=_positive, help="override n_inner_paths")
        if name == "accept":
            p.add_argument("--path-scale", type=float, default=1.0,
                           help="multiply every criterion's path count (small values report insufficient samples)")
            p.add_argument("--criteria", type=int, nargs="+", help="subset of criterion numbers")
        else:
            p.add_argument("--dump-paths", metavar="PREFIX", help="write per-path forward/backward dumps")
    return parser


def _accept(args) -> int:
    from .acceptance import run_acceptance
    seed = args.seed
    if seed is None and args.config:
        seed = read_config(args.config).seed
    report = run_acceptance(seed=seed or 0, path_scale=args.path_scale, criteria=args.criteria)
    n_pass = sum(r.passed for r in report.results)
    print(f"{n_pass}/{len(report.results)} criteria passed")
    return 0 if report.passed else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "accept":
            return _accept(args)
        cfg = read_config(args.config, seed=args.seed, n_inner_paths=args.paths)
        allowed = _ALLOWED[args.command]
        if allowed is None:
            cfg = cfg.replace(kind="u-estimate")
        elif cfg.kind not in allowed:
            print(f"error: subcommand {args.command} does not run kind {cfg.kind} (accepts {', '.join(allowed)})",
                  file=sys.stderr)
            return 2
        records = run_experiment(cfg, threads=args.threads, dump_paths=args.dump_paths)
    except (BDSDEError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = args.out or cfg.output
    if out:
        write_records(records, out)
    else:
        write_records(records, sys.stdout)
    return 1 if any(r.passed is False for r in records) else 0


if __name__ == "__main__":
    sys.exit(main())
