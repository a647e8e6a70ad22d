"""Command-line front end: ``rare {simulate,train,reconstruct,evaluate,report,run}``.

Failures print one JSON error record to stderr and exit nonzero.  The
environment variable ``RARE_NUM_THREADS`` caps BLAS threads.
"""

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import study
from .config import METHODS, ConfigError, load_config
from .solvers import SolverDivergedError
from .training import TrainingDivergedError

__all__ = ["main", "build_parser", "parse_grid"]

THREADS_ENV = "RARE_NUM_THREADS"

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_OTHER = 1


def parse_grid(text):
    """``"tau=0.3,1;lam=0.01,0.03"`` -> ``{"tau": [0.3, 1.0], "lam": [0.01, 0.03]}``."""
    grid = {}
    if not text:
        return grid
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, sep, values = part.partition("=")
        key = key.strip()
        if not sep or key not in ("tau", "lam"):
            raise ConfigError(f"bad grid entry {part!r}; expected tau=... or lam=...", "grid")
        try:
            vals = [float(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"non-numeric grid values in {part!r}", "grid") from None
        if not vals or min(vals) <= 0:
            raise ConfigError(f"grid {key} needs positive values", "grid")
        grid[key] = vals
    return grid


def _methods(text):
    if text is None:
        return None
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="rare", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate ground truth, training images and test measurements"),
        ("train", "train the A2A prior and RED denoisers"),
        ("reconstruct", "reconstruct the test cases"),
        ("evaluate", "score results against ground truth"),
        ("report", "tables, per-phase curves and residual images"),
        ("run", "all stages in order"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML experiment config (defaults if omitted)")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
        if name in ("reconstruct", "run"):
            p.add_argument("--resume", action="store_true",
                           help="keep results whose digests match")
            p.add_argument("--grid", help='parameter grids, e.g. "tau=0.3,1;lam=0.01,0.03"')
    return parser


def _error(command, kind, exc, code, **extra):
    record = {"status": "error", "command": command, "error": kind, "message": str(exc)}
    record.update(extra)
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def _dispatch(args):
    methods = _methods(args.methods)
    cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out, methods=methods)
    grid = parse_grid(getattr(args, "grid", None))
    resume = getattr(args, "resume", False)
    cmd = args.command
    if cmd == "simulate":
        result = study.simulate(cfg)
        summary = {"train_images": len(result["entries"]), "cases": len(result["cases"])}
    elif cmd == "train":
        result = study.train(cfg)
        summary = {"weights": [e["weights"] for e in result["entries"]]}
    elif cmd == "reconstruct":
        result = study.reconstruct(cfg, grid=grid, resume=resume)
        summary = {"results": len(result["entries"])}
    elif cmd in ("evaluate", "report"):
        reports = study.evaluate(cfg) if cmd == "evaluate" else study.report(cfg)
        summary = {"reports": len(reports)}
    else:
        reports = study.run_all(cfg, grid=grid, resume=resume)
        summary = {"reports": len(reports)}
    print(json.dumps({"status": "ok", "command": cmd, "out": cfg.out, **summary}, sort_keys=True))
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    limits = None
    if threads:
        try:
            limits = int(threads)
        except ValueError:
            return _error(args.command, "ConfigError",
                          f"{THREADS_ENV} must be an integer, got {threads!r}", EXIT_CONFIG)
    try:
        with threadpool_limits(limits=limits):
            return _dispatch(args)
    except ConfigError as exc:
        return _error(args.command, "ConfigError", exc, EXIT_CONFIG, field=exc.field)
    except study.StudyError as exc:
        return _error(args.command, "StudyError", exc, EXIT_DATA)
    except TrainingDivergedError as exc:
        return _error(args.command, "TrainingDiverged", exc, EXIT_DIVERGED, epoch=exc.epoch)
    except SolverDivergedError as exc:
        return _error(args.command, "SolverDiverged", exc, EXIT_DIVERGED, iteration=exc.iteration)
    except OSError as exc:
        return _error(args.command, type(exc).__name__, exc, EXIT_DATA,
                      path=getattr(exc, "filename", None))
    except ValueError as exc:
        return _error(args.command, "ValueError", exc, EXIT_OTHER)


if __name__ == "__main__":
    sys.exit(main())
