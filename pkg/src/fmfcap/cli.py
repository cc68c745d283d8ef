"""``fmfcap`` command line: capacity bounds, BAA, autoencoder sweeps, plots.

Exit codes: 0 success, 1 configuration/usage error, 2 numerical failure
(at least one sweep point failed or the run aborted).
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from . import experiments as ex
from .channel import ConfigError
from .plotting import PlotDataError, emit_plot_data

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _floats(s):
    try:
        return [float(v) for v in s.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _ints(s):
    try:
        return [int(v) for v in s.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fmfcap", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="YAML file merged over the built-in defaults")
    p.add_argument("--seed", type=int, help="single seed (replaces the configured seed list)")
    p.add_argument("--profile", default="desk", choices=sorted(ex.SCALE_PROFILES))
    p.add_argument("--out-dir", default="results")
    p.add_argument("--threads", type=int, default=1, help="concurrent sweep points")
    p.add_argument("--timings", action="store_true", help="record wall-clock runtimes (breaks byte identity)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in (("bounds", "QR upper bounds over SNR"), ("baa", "Blahut-Arimoto MI over SNR")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--snr", type=_floats, help="comma-separated SNR list in dB")
        if name == "baa":
            s.add_argument("--m", type=_ints, help="comma-separated PAM orders per mode")
            s.add_argument("--power-search", action="store_true")
    s = sub.add_parser("ae-train", help="train pre-coder/detector pairs at one operating point")
    s.add_argument("--m", type=int)
    s.add_argument("--snr", type=float)
    s = sub.add_parser("xt-sweep", help="AE rate versus DEMUX crosstalk")
    s.add_argument("--xt", type=_floats, help="comma-separated DEMUX XT2 values in dB")
    s = sub.add_parser("fixed-channel", help="BAA versus AE without crosstalk drift")
    s.add_argument("--snr", type=_floats)
    s = sub.add_parser("plot", help="gnuplot data and SVG from result CSVs")
    s.add_argument("csv", nargs="+")
    s.add_argument("--no-svg", action="store_true")
    return p


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["seeds"] = [args.seed]
    sweeps = {}
    cmd = args.command
    if cmd in ("bounds", "baa", "fixed-channel") and args.snr:
        sweeps["fixed_snr_db" if cmd == "fixed-channel" else "snr_db"] = args.snr
    if cmd == "baa" and args.m:
        sweeps["m_list"] = args.m
    if cmd == "baa" and args.power_search:
        o["baa"] = {"power_search": True}
    if cmd == "xt-sweep" and args.xt:
        sweeps["xt2_demux_db"] = args.xt
    if cmd == "ae-train":
        a = {}
        if args.m:
            a["m"] = args.m
        if args.snr is not None:
            a["snr_db"] = args.snr
        if a:
            o["ae"] = a
    if cmd in ("bounds", "baa"):
        o["methods"] = [cmd]
    if sweeps:
        o["sweeps"] = sweeps
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "plot":
            for path in args.csv:
                for out in emit_plot_data(path, args.out_dir, svg=not args.no_svg):
                    print(out)
            return EXIT_OK
        cfg = ex.ExperimentConfig.load(args.config, args.profile, _overrides(args),
                                       out_dir=args.out_dir, threads=args.threads, timings=args.timings)
        run = {
            "bounds": lambda: ex.run_capacity_sweep(cfg, "bounds.csv"),
            "baa": lambda: ex.run_capacity_sweep(cfg, "baa.csv"),
            "ae-train": lambda: ex.run_ae_train(cfg),
            "xt-sweep": lambda: ex.run_xt_sweep(cfg),
            "fixed-channel": lambda: ex.run_fixed_channel(cfg),
        }[args.command]
        with np.errstate(over="ignore", under="ignore"):
            rows = run()
    except (ConfigError, PlotDataError, OSError) as e:
        print(f"fmfcap: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"fmfcap: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    failed = [r for r in rows if r.status.startswith("failed")]
    for r in failed:
        print(f"fmfcap: {r.method} {r.kind} snr={r.snr_db} xt={r.xt2_db} seed={r.seed}: {r.status}", file=sys.stderr)
    return EXIT_NUMERIC if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
