"""Command line entry point: ``sphlight <command> ...``.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from ..envmap import EquirectMap
from ..needlet import analyze, build_frame, frame_summary, synthesize
from ..sparse import sparsify
from ..sphgeom import SCHEMES
from ..transport import NumericalError, TransportConfig, std_report
from .coeffile import CoeffFile, CoeffFileError, read_coeffs, write_coeffs
from .fit import LOSSES, fit_coefficients, two_source_target
from .pfm import PFMError, read_pfm, write_pfm

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("sphlight")


def _frame_args(p):
    p.add_argument("--B", type=float, default=2.0, help="needlet dilation parameter (> 1)")
    p.add_argument("--jmax", type=int, default=3, help="top needlet band")
    p.add_argument("--scheme", choices=SCHEMES, default="paper_matching")


def _transport_args(p):
    p.add_argument("--tau", type=float, default=10.0, help="marginal relaxation weight")
    p.add_argument("--gamma", type=float, default=0.05, help="entropic weight")
    p.add_argument("--points", type=int, default=192, help="STD resampling points")


def _cfg(args, **kw) -> TransportConfig:
    return TransportConfig(tau=args.tau, gamma=args.gamma, **kw)


def _bands(text):
    return {int(t) for t in text.split(",") if t.strip()}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphlight", description="Needlet lighting toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="panorama (PFM) -> needlet coefficient file")
    p.add_argument("input")
    p.add_argument("output")
    _frame_args(p)
    p.add_argument("--sparsify", "--lambda", dest="lam", type=float, default=None,
                   help="soft-threshold bands >= 2 with this sparsity rate")
    p.add_argument("--bands", type=_bands, default=None, help="bands to threshold, e.g. 2,3")

    p = sub.add_parser("synthesize", help="coefficient file -> panorama (PFM)")
    p.add_argument("coeffs")
    p.add_argument("output")
    p.add_argument("--height", "-H", type=int, default=64)
    p.add_argument("--width", "-W", type=int, default=None, help="defaults to 2 * height")

    p = sub.add_parser("sparsify", help="threshold an existing coefficient file")
    p.add_argument("coeffs")
    p.add_argument("output")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--bands", type=_bands, default=None)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")

    p = sub.add_parser("std", help="spherical transport distance between two panoramas")
    p.add_argument("a")
    p.add_argument("b")
    _transport_args(p)
    p.add_argument("--report", default=None, help="write the JSON report here ('-' for stdout)")

    p = sub.add_parser("fit-demo", help="fit coefficients to a target by gradient descent")
    p.add_argument("target", nargs="?", default=None, help="target PFM; omit to use --synthetic")
    p.add_argument("--synthetic", action="store_true", help="use the two-antipodal-source target")
    p.add_argument("--seed", type=int, default=None, help="jitters the synthetic target")
    _frame_args(p)
    _transport_args(p)
    p.add_argument("--loss", choices=LOSSES, default="l2+stl")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--stl-weight", type=float, default=0.003)
    p.add_argument("--aux-fraction", type=float, default=0.66)
    p.add_argument("--output", default=None, help="write fitted coefficients here")
    p.add_argument("--report", default=None, help="write the fit report JSON here")

    p = sub.add_parser("frame-info", help="describe a needlet frame")
    _frame_args(p)
    return parser


def cmd_analyze(args) -> int:
    frame = build_frame(args.B, args.jmax, args.scheme)
    coeffs = analyze(read_pfm(args.input), frame)
    prov = {"source": str(args.input)}
    if args.lam is not None:
        coeffs = sparsify(coeffs, args.lam, args.bands)
        prov.update(sparsify="soft", **{"lambda": args.lam}, bands=sorted(args.bands or range(2, args.jmax + 1)))
    write_coeffs(CoeffFile.from_frame(frame, coeffs, **prov), args.output)
    print(f"{args.output}: {frame.n_coeffs} band coefficients per channel ({'+'.join(map(str, frame.counts))}) + dc")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    cf = read_coeffs(args.coeffs)
    frame = build_frame(cf.B, cf.j_max, cf.scheme)
    H = args.height
    W = args.width or 2 * H
    img = synthesize(cf.coeffs, frame, H, W)
    neg = int((img < 0).sum())
    print(f"negative samples clamped: {neg} of {img.size} (min {img.min():.4g})", file=sys.stderr)
    write_pfm(np.clip(img, 0.0, None), args.output)
    return EXIT_OK


def cmd_sparsify(args) -> int:
    cf = read_coeffs(args.coeffs)
    cf.coeffs = sparsify(cf.coeffs, args.lam, args.bands, args.mode)
    cf.provenance = {**cf.provenance, "sparsify": args.mode, "lambda": args.lam,
                     "bands": sorted(args.bands or range(2, cf.j_max + 1))}
    write_coeffs(cf, args.output)
    return EXIT_OK


def cmd_std(args) -> int:
    rep = std_report(read_pfm(args.a), read_pfm(args.b), args.points, _cfg(args, aux_fraction=0.0))
    print(f"{rep['std']:.10g}")
    if args.report == "-":
        json.dump(rep, sys.stdout, indent=1)
        print()
    elif args.report:
        with open(args.report, "w") as fh:
            json.dump(rep, fh, indent=1)
    return EXIT_OK


def cmd_fit_demo(args) -> int:
    if args.target is None and not args.synthetic:
        raise UsageError("give a target PFM or --synthetic")
    target = two_source_target(seed=args.seed) if args.target is None else read_pfm(args.target)
    frame = build_frame(args.B, args.jmax, args.scheme)
    cfg = _cfg(args, aux_fraction=args.aux_fraction)
    report, coeffs = fit_coefficients(target, frame, args.loss, args.iters, args.lr, cfg, args.stl_weight, args.points)
    last = report.trace[-1]
    print(f"STD {report.std_initial:.6g} -> {report.std_final:.6g}; final l2 {last[0]:.6g}, stl {last[1]:.6g}")
    if args.output:
        write_coeffs(CoeffFile.from_frame(frame, coeffs, source="fit-demo", loss=args.loss), args.output)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    return EXIT_OK


def cmd_frame_info(args) -> int:
    print(json.dumps(frame_summary(build_frame(args.B, args.jmax, args.scheme)), indent=1))
    return EXIT_OK


class UsageError(Exception):
    pass


COMMANDS = {
    "analyze": cmd_analyze,
    "synthesize": cmd_synthesize,
    "sparsify": cmd_sparsify,
    "std": cmd_std,
    "fit-demo": cmd_fit_demo,
    "frame-info": cmd_frame_info,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PFMError, CoeffFileError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
