"""Command-line entry point.

Exit codes: 0 success, 1 other package errors (I/O, invalid input),
2 configuration errors, 3 numerical-instability errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import load_config
from .errors import ConfigError, CqedSourceError, NumericalInstabilityError
from .experiment import (
    FIGURES,
    csv_text,
    diagnostics_table,
    emit_csv,
    envelope_for,
    envelope_table,
    figure_command,
    run_experiment,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cqedsource", description=(
        "Fidelity of a cavity-QED entangled-photon source under intensity noise, "
        "photon loss and atomic motion."))
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a TOML config")
    run.add_argument("config")
    run.add_argument("--seed", type=_seed, help="override the config seed")
    run.add_argument("--out", help="CSV path (default: config 'output' or stdout)")
    run.add_argument("--diagnostics", help="also write Monte Carlo or propagation diagnostics CSV here")

    fig = sub.add_parser("figure", help="reproduce one fidelity figure as CSV curves + gnuplot script")
    fig.add_argument("figure", choices=FIGURES)
    fig.add_argument("--out", required=True, help="output directory")
    fig.add_argument("--seed", type=_seed, default=0)

    env = sub.add_parser("envelope", help="dump the photon spectral envelope as CSV")
    env.add_argument("config")
    env.add_argument("--branch", type=int, choices=(0, 1), default=0)
    env.add_argument("--out", help="CSV path (default stdout)")
    env.add_argument("--seed", type=_seed, help="accepted for symmetry; unused")

    val = sub.add_parser("validate", help="check a config and print the resolved settings")
    val.add_argument("config")
    val.add_argument("--seed", type=_seed, help="accepted for symmetry; unused")
    return parser


def _write(table, out) -> None:
    if out:
        emit_csv(table, out)
    else:
        sys.stdout.write(csv_text(table))


def _describe(config) -> str:
    b0, b1 = config.branches
    lines = [
        f"mode: {config.mode}",
        f"branch 0: g={b0.g} delta={b0.delta} k_c={b0.k_c} k_a={b0.k_a} (MHz)",
        f"branch 1: g={b1.g} delta={b1.delta} k_c={b1.k_c} k_a={b1.k_a} (MHz)",
        f"pulse: {type(config.pulse.shape).__name__}, T={config.pulse.duration} us",
        f"grid: W={config.grid.half_bandwidth:.6g} MHz, M={config.grid.mode_count}, "
        f"spacing*T={config.grid.spacing * config.pulse.duration:.6g}",
        f"n: {', '.join(str(n) for n in config.n_values)}",
    ]
    if config.motion is not None:
        lines.append(f"motion: omega0={config.motion.omega0} eta_L={config.motion.eta_L} "
                     f"eta_r={config.motion.eta_r} N={config.motion.N} n_max={config.motion.n_max}")
    if config.sweep is not None:
        lines.append(f"sweep: {config.sweep.variable} over {len(config.sweep.values)} values")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            config = load_config(args.config)
            if args.seed is not None:
                config = config.with_seed(args.seed)
            table = run_experiment(config)
            _write(table, args.out or config.output)
            if args.diagnostics:
                diag = diagnostics_table(config)
                if diag is None:
                    print(f"mode {config.mode} has no diagnostics", file=sys.stderr)
                else:
                    emit_csv(diag, args.diagnostics)
        elif args.command == "figure":
            curves = figure_command(args.figure, args.out, seed=args.seed)
            for stem in curves:
                print(Path(args.out) / f"{stem}.csv")
            print(Path(args.out) / f"{args.figure}.gp")
        elif args.command == "envelope":
            config = load_config(args.config)
            _write(envelope_table(envelope_for(config, args.branch)), args.out)
        elif args.command == "validate":
            sys.stdout.write(_describe(load_config(args.config)))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalInstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CqedSourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
