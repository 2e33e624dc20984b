"""Command line entry point: ``loopsmith <stage|pipeline|plots> --config FILE``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import ConvergenceError, DomainError, LoopsmithError
from .pipeline import MANIFEST_JSON, STAGES, emit_plots, run_pipeline, run_stage

EXIT_OK, EXIT_DOMAIN, EXIT_CONVERGENCE = 0, 2, 3


def _parser():
    ap = argparse.ArgumentParser(prog="loopsmith", description=__doc__)
    ap.add_argument("command", choices=STAGES + ("pipeline", "plots"))
    ap.add_argument("--config", type=Path, help="JSON configuration (defaults when omitted)")
    ap.add_argument("--out", type=Path, help="output directory (overrides the config)")
    ap.add_argument("--seed", type=int, help="synthesis seed (overrides the config)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.out is not None:
            cfg = cfg.with_output(args.out)
        out = Path(cfg.output)
        if args.command == "pipeline":
            print(run_pipeline(cfg))
        elif args.command == "plots":
            for path in emit_plots(out / MANIFEST_JSON):
                print(path)
        else:
            print(run_stage(args.command, cfg))
    except ConvergenceError as exc:
        print(f"loopsmith {getattr(exc, 'stage', args.command)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (DomainError, LoopsmithError) as exc:
        print(f"loopsmith {getattr(exc, 'stage', args.command)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
