"""Command-line entry point: ``rtescatter <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(underflow or degeneracy beyond the allowed fraction), 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DegenerateGeometryError, InvalidMeasurementError, SubcriticalityError, UnderflowError
from .config import load_config
from .drivers import DRIVERS, RunContext

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("rtescatter")


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML experiment configuration")
    p.add_argument("--set", dest="overrides", action="append", default=d if suppress else [],
                   metavar="KEY=VALUE", help="override a config entry, e.g. grid.n=9 (repeatable)")
    p.add_argument("--seed", type=int, default=d, help="RNG seed (required for stochastic runs)")
    p.add_argument("--out", default=d, help="output directory (overrides output.directory)")
    p.add_argument("--epsilon", type=float, default=d, help="beam width for simulate / finite-width reconstruct")
    p.add_argument("--measurements", default=d, help="reconstruct from a measurement CSV written by simulate")
    p.add_argument("--timestamp", action="store_true", default=d if suppress else False,
                   help="record a wall-clock timestamp in JSON provenance (breaks byte-identical reruns)")
    p.add_argument("-v", "--verbose", action="store_true", default=d if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rtescatter",
        description="Simulate narrow-beam boundary readings and reconstruct scattering kernels.",
        epilog="exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error",
    )
    _add_common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "simulate": "finite-width boundary readings over the scan grid",
        "reconstruct": "pointwise k^2 reconstruction",
        "reconstruct-mf": "pointwise k^4 reconstruction from two-frequency readings",
        "convergence": "reading error against beam width",
        "stability": "noise sweep for k^2 (and k^4) with an ART baseline",
        "baseline": "ART reconstruction of absorption from ballistic readings",
    }
    for name, h in helps.items():
        _add_common(sub.add_parser(name, help=h, description=h), suppress=True)
    return parser


def _overrides(args) -> list[str]:
    ov = list(args.overrides or [])
    if args.out is not None:
        ov.append(f"output.directory={_toml_str(args.out)}")
    if args.epsilon is not None:
        key = "simulate.epsilon" if args.command == "simulate" else "reconstruct.epsilon"
        ov.append(f"{key}={args.epsilon!r}")
        if args.command in ("reconstruct", "reconstruct-mf"):
            ov.append('reconstruct.source="finite-epsilon"')
    if args.measurements is not None:
        ov.append('reconstruct.source="file"')
        ov.append(f"reconstruct.measurements={_toml_str(args.measurements)}")
    return ov


def _toml_str(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, raw = load_config(args.config, _overrides(args))
        seed = args.seed if args.seed is not None else cfg.seed
        if seed is not None:
            raw = dict(raw, seed=seed)
        ctx = RunContext(args.command, Path(cfg.output.directory), raw, seed, bool(args.timestamp or cfg.output.timestamp))
        report, code = DRIVERS[args.command](cfg, ctx)
    except (ConfigError, SubcriticalityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UnderflowError, DegenerateGeometryError, InvalidMeasurementError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    log.info("wrote %s outputs to %s", args.command, ctx.out_dir)
    if code == EXIT_NUMERIC:
        print("numeric failure: too many points failed; see the summary status counts", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
