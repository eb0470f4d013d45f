"""Command-line entry point: ``clockens {simulate,hvar,weights,gains,validate}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .decomposition import build_transform
from .ensemble import assemble_system
from .filters import steady_gains
from .harness import compute_weights, load_config, run_scenario
from .stability import HVAR_COLUMNS, hvar_curve, octave_grid

DEFAULT_CONFIG = "paper_sec5"
MODES = {"short": "short_term", "long": "long_term", "general": "general"}


def _read_series(path, column: str | None) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        [float(x) for x in rows[0]]
        header = None
    except ValueError:
        header, rows = rows[0], rows[1:]
    data = np.array(rows, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if column is None:
        if header is not None:
            candidates = [i for i, h in enumerate(header) if h.strip() != "k"]
            idx = candidates[0] if candidates else 0
        else:
            idx = 0
    elif header is not None and column in header:
        idx = header.index(column)
    else:
        try:
            idx = int(column)
        except ValueError:
            raise ValueError(f"{path}: no column named {column!r}") from None
        if not 0 <= idx < data.shape[1]:
            raise ValueError(f"{path}: column index {idx} out of range")
    return data[:, idx]


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.horizon is not None:
        cfg.horizon = args.horizon
    if args.seeds:
        cfg.seeds = args.seeds
    if args.weight_mode:
        cfg.weight_mode = args.weight_mode
    arts = run_scenario(cfg, out_dir=args.out, workers=args.workers)
    print(arts.directory)
    for f in arts.manifest["files"]:
        print(f"  {f['name']}  {f['sha256'][:16]}")
    return 0


def cmd_hvar(args) -> int:
    series = _read_series(args.csv, args.column)
    ms = args.m or octave_grid(series.size - 1)
    if not ms:
        raise ValueError("series too short for any averaging factor")
    curve = hvar_curve(series, args.tau, ms, args.series_id)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(HVAR_COLUMNS)
    w.writerows(curve.rows())
    return 0


def cmd_weights(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.ensemble_spec()
    modes = ["short", "long", "general"] if args.mode == "all" else [args.mode]
    for mode in modes:
        if mode == "general" and args.tau is None:
            if args.mode == "all":
                continue
            raise ValueError("--mode general needs --tau")
        q = compute_weights(spec, MODES[mode], tau_opt=args.tau)
        label = f"general(tau={args.tau:g})" if mode == "general" else mode
        print(label + ": " + " ".join(repr(float(x)) for x in q))
    return 0


def cmd_gains(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.ensemble_spec()
    sysm = assemble_system(spec)
    bundle = build_transform(spec, cfg.weight_vector(spec))
    gains = steady_gains(bundle, sysm.Q, spec.r)
    gains.save(args.out)
    print(f"spectral radius {gains.closed_loop_spectral_radius:.12f}, "
          f"{gains.riccati_iterations} Riccati doublings -> {args.out}")
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    spec = cfg.ensemble_spec()
    print(f"{cfg.name}: ok (N={spec.N}, M={spec.M}, tau={spec.tau:g}, "
          f"weight={cfg.weight_mode}, gamma={cfg.gamma:g})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clockens", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def config_arg(p):
        p.add_argument("--config", default=DEFAULT_CONFIG,
                       help="YAML scenario file or a bundled name (default: %(default)s)")

    p = sub.add_parser("simulate", help="run a scenario and write CSV artifacts")
    config_arg(p)
    p.add_argument("--out", help="output root (overrides the config and $CLOCKENS_OUTPUT_DIR)")
    p.add_argument("--horizon", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--weight-mode", choices=["short_term", "long_term"])
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hvar", help="Hadamard variance of a phase series in a CSV file")
    p.add_argument("--csv", required=True)
    p.add_argument("--column", help="column name or 0-based index")
    p.add_argument("--m", type=int, nargs="+", help="averaging factors (default: octaves)")
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--series-id", default="series")
    p.set_defaults(func=cmd_hvar)

    p = sub.add_parser("weights", help="print ensemble weight vectors")
    config_arg(p)
    p.add_argument("--mode", choices=["short", "long", "general", "all"], default="all")
    p.add_argument("--tau", type=float, help="interval for --mode general")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("gains", help="compute steady-state filter gains and save them")
    config_arg(p)
    p.add_argument("--out", default="gains.npz")
    p.set_defaults(func=cmd_gains)

    p = sub.add_parser("validate", help="check a configuration without running it")
    config_arg(p)
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"clockens {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
