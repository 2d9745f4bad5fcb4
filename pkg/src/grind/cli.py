"""Command-line experiments: generate, interp-sweep, fit, rollout, report.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines whose keys
are flag names (``n-freq`` or ``n_freq``); explicit flags win.  The worker
count for sweeps comes from ``GRIND_WORKERS`` (default 1).
"""

import argparse
import csv
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from grind import experiments
from grind.fourier_interp import DEFAULT_N_FREQ
from grind.mol_forecaster import analytic_model, derivative_snapshots, fit_model
from grind.pde_sim import SYSTEMS, SystemSpec
from grind.pipeline import DEFAULT_HORIZON, GrindConfig, read_reports, write_reports
from grind.storage import (FormatError, export_observations_csv, generate_dataset, load_model, read_dataset,
                           read_manifest, save_model, write_dataset)

log = logging.getLogger("grind")

SWEEP_COLUMNS = ("system", "n_points", "n_freq", "mse")
SUMMARY_COLUMNS = ("system", "model", "n_seeds", "horizon", "mse_step_1", "mse_step_last")
SWEEP_SUMMARY_COLUMNS = ("system", "n_points", "best_n_freq", "best_mse", "mse_n_freq_min", "mse_n_freq_max")


class CLIError(Exception):
    pass


# --- argument types -------------------------------------------------------------


def _int_at_least(lo):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if value < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {value}")
        return value
    parse.__name__ = f"int>={lo}"
    return parse


def _float_where(check, what):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
        if not np.isfinite(value) or not check(value):
            raise argparse.ArgumentTypeError(f"must be {what}, got {value}")
        return value
    parse.__name__ = what
    return parse


positive_int = _int_at_least(1)
nonneg_int = _int_at_least(0)
positive_float = _float_where(lambda v: v > 0, "positive")
nonneg_float = _float_where(lambda v: v >= 0, "nonnegative")


def _param(text):
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    try:
        return key.strip(), float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"parameter {key!r} needs a number, got {value!r}") from None


def _bool(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# --- parser -----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="grind", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text, description=None):
        p = sub.add_parser(name, help=help_text, description=description or help_text)
        p.add_argument("--config", type=Path, help="key = value file; flags override its entries")
        return p

    def system_flags(p):
        p.add_argument("--system", choices=SYSTEMS, default="advection")
        p.add_argument("--param", type=_param, action="append", default=[], metavar="KEY=VALUE",
                       help="system coefficient, e.g. c_x=1.0 (repeatable)")
        p.add_argument("--resolution", type=_int_at_least(3), default=64, help="simulation grid size per axis")
        p.add_argument("--points", type=positive_int, default=900, help="scattered observation count")
        p.add_argument("--frames", type=_int_at_least(2), default=32, help="recorded frames per run")
        p.add_argument("--dt", type=positive_float, default=None, help="recorded step (default: CFL 0.25)")
        p.add_argument("--substeps", type=positive_int, default=4)
        p.add_argument("--record-stride", type=positive_int, default=1)
        p.add_argument("--max-wavenumber", type=positive_int, default=3, help="initial-condition mode cutoff")

    p = command("generate", "simulate a system and write a scattered-observation dataset")
    system_flags(p)
    p.add_argument("--seed", type=nonneg_int, default=0)
    p.add_argument("--point-seed", type=nonneg_int, default=None)
    p.add_argument("--out", type=Path, help="dataset directory (manifest.txt + payload.bin)")
    p.add_argument("--csv", type=Path, default=None, help="also export observations as CSV")

    p = command("interp-sweep", "interpolation MSE versus number of Fourier frequencies",
                "Fit the FI layer to every frame's scattered observations, evaluate on the simulation "
                "grid and compare with the grid truth. CSV columns: system, n_points, n_freq, mse; "
                "mse is the mean over grid points, channels, frames and datasets.")
    system_flags(p)
    p.add_argument("--data", type=Path, nargs="+", default=None,
                   help="datasets to sweep (default: generate one per --seeds entry)")
    p.add_argument("--seeds", type=nonneg_int, nargs="+", default=[0, 1, 2])
    p.add_argument("--freq-min", type=positive_int, default=3)
    p.add_argument("--freq-max", type=positive_int, default=25)
    p.add_argument("--out", type=Path, help="output CSV")

    p = command("fit", "least-squares stencil model from dataset time derivatives")
    p.add_argument("--data", type=Path, nargs="+", default=None)
    p.add_argument("--ridge", type=nonneg_float, default=0.0)
    p.add_argument("--out", type=Path, help="model directory (manifest.txt + weights.bin)")

    p = command("rollout", "closed-loop GrINd rollout against the persistence baseline",
                "CSV columns: system, model, step, mse, seed; mse is the mean over points and "
                "channels at each step. The persistence baseline is always included.")
    p.add_argument("--data", type=Path, nargs="+", default=None)
    p.add_argument("--model", default="analytic", help="model directory, 'analytic' or 'persistence'")
    p.add_argument("--horizon", type=positive_int, default=DEFAULT_HORIZON)
    p.add_argument("--start", type=nonneg_int, default=0, help="initial observation frame")
    p.add_argument("--n-freq", type=positive_int, default=DEFAULT_N_FREQ)
    p.add_argument("--grid", type=_int_at_least(3), default=64, help="interpolation grid size per axis")
    p.add_argument("--ridge", type=nonneg_float, default=None)
    p.add_argument("--substeps", type=positive_int, default=4)
    p.add_argument("--mirror", type=_bool, nargs="?", const=True, default=False)
    p.add_argument("--no-cache", dest="cache", action="store_false")
    p.add_argument("--out", type=Path, help="output CSV")

    p = command("report", "aggregate sweep and rollout CSVs into summary tables",
                "Rollout summary columns: " + ", ".join(SUMMARY_COLUMNS) + " (MSEs are means over seeds). "
                "Sweep summary columns: " + ", ".join(SWEEP_SUMMARY_COLUMNS) + ".")
    p.add_argument("--inputs", type=Path, nargs="+", default=None)
    p.add_argument("--out", type=Path, help="rollout summary CSV")
    p.add_argument("--sweep-out", type=Path, default=None, help="sweep summary CSV (default: <out>.sweep.csv)")

    return parser, sub.choices


def _apply_config(parser, subparsers, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None) is None:
        return args
    sp = subparsers[args.command]
    try:
        entries = read_manifest(args.config)
    except (FormatError, OSError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    actions = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, text in entries.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            parser.error(f"config key {key!r} is not an option of '{args.command}'")
        try:
            if isinstance(action, argparse._StoreFalseAction):
                value = not _bool(text)
            elif isinstance(action, argparse._StoreTrueAction):
                value = _bool(text)
            elif action.nargs in ("+", "*") or isinstance(action, argparse._AppendAction):
                convert = action.type or str
                value = [convert(t) for t in text.replace(",", " ").split()]
            else:
                value = (action.type or str)(text)
            if action.choices is not None and value not in action.choices:
                raise argparse.ArgumentTypeError(f"must be one of {list(action.choices)}")
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        defaults[dest] = value
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _need(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise CLIError(f"missing required option --{name.replace('_', '-')} (flag or config key)")


def _spec(args):
    try:
        return SystemSpec(args.system, dict(args.param))
    except ValueError as exc:
        raise CLIError(f"--param: {exc}") from None


def _load_datasets(paths):
    out = []
    for path in paths:
        try:
            out.append(read_dataset(path))
        except (FormatError, OSError) as exc:
            raise CLIError(f"cannot read dataset {path}: {exc}") from None
    return out


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    with open(path, newline="") as fh:
        if next(csv.reader(fh)) != list(header):
            raise CLIError(f"validation of {path} failed")


# --- commands ---------------------------------------------------------------------


def cmd_generate(args):
    _need(args, "out")
    spec = _spec(args)
    ds = generate_dataset(spec, args.resolution, args.points, args.frames, args.seed, args.point_seed,
                          args.dt, args.substeps, args.record_stride, args.max_wavenumber)
    try:
        path = write_dataset(ds, args.out)
    except OSError as exc:
        raise CLIError(f"cannot write dataset to {args.out}: {exc}") from None
    back = read_dataset(path)
    if not np.array_equal(back.run.array(), ds.run.array()):
        raise CLIError(f"validation of {path} failed")
    if args.csv is not None:
        export_observations_csv(ds, args.csv)
    size = sum(f.stat().st_size for f in Path(path).iterdir())
    print(f"generated {spec.kind}: {len(ds.run.frames)} frames, {args.points} points, "
          f"{args.resolution}x{args.resolution} grid, {size} bytes -> {path}")


def cmd_interp_sweep(args):
    _need(args, "out")
    if args.freq_min > args.freq_max:
        raise CLIError(f"empty frequency range {args.freq_min}..{args.freq_max}")
    if args.data:
        datasets = _load_datasets(args.data)
    else:
        spec = _spec(args)
        datasets = experiments.pool_map(
            lambda s: generate_dataset(spec, args.resolution, args.points, args.frames, s, None,
                                       args.dt, args.substeps, args.record_stride, args.max_wavenumber),
            args.seeds)
    try:
        rows = experiments.interpolation_sweep(datasets, range(args.freq_min, args.freq_max + 1))
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    _write_csv(args.out, SWEEP_COLUMNS, [(r.system, r.n_points, r.n_freq, repr(r.mse)) for r in rows])
    best = experiments.best_row(rows)
    print(f"best: system={best.system} n_points={best.n_points} n_freq={best.n_freq} mse={best.mse:.6e}")
    return rows


def cmd_fit(args):
    _need(args, "data", "out")
    datasets = _load_datasets(args.data)
    systems = {d.run.spec for d in datasets}
    if len(systems) != 1:
        raise CLIError(f"fit datasets must share one system, got {[s.kind for s in systems]}")
    snapshots = []
    for d in datasets:
        try:
            snapshots += derivative_snapshots(d.run.frames, d.run.record_dt)
        except ValueError as exc:
            raise CLIError(f"dataset for {d.system}: {exc}") from None
    model = fit_model(snapshots, ridge=args.ridge)
    spec = systems.pop()
    reference = analytic_model(spec, datasets[0].run.frames[0].spacing, model.library)
    try:
        save_model(model, args.out, {"system": spec.kind})
    except OSError as exc:
        raise CLIError(f"cannot write model to {args.out}: {exc}") from None
    if not np.array_equal(load_model(args.out).weights, model.weights):
        raise CLIError(f"validation of {args.out} failed")

    print(f"{'out':>3}  {'feature':<28} {'fitted':>14} {'analytic':>14} {'deviation':>10}")
    for c in range(model.library.channels):
        for f, w, ref in zip(model.library.features, model.weights[c], reference.weights[c]):
            dev = f"{abs(w - ref) / abs(ref):.2%}" if ref != 0 else f"{abs(w - ref):.2e}"
            print(f"{c:>3}  {str(f):<28} {w:>14.6g} {ref:>14.6g} {dev:>10}")
    return model


def cmd_rollout(args):
    _need(args, "data", "out")
    datasets = _load_datasets(args.data)
    reports = []
    for d in datasets:
        if args.model == "persistence":
            model, label = None, "persistence"
        elif args.model == "analytic":
            model, label = analytic_model(d.run.spec, d.run.frames[0].spacing), "grind-analytic"
        else:
            try:
                model, label = load_model(args.model), "grind-fitted"
            except (FormatError, OSError) as exc:
                raise CLIError(f"cannot load model {args.model}: {exc}") from None
        cfg = GrindConfig(dt=d.run.record_dt, n_freq=args.n_freq, grid_resolution=(args.grid, args.grid),
                          ridge=args.ridge, substeps=args.substeps, use_mirror=args.mirror,
                          cache_factorization=args.cache)
        try:
            found = experiments.rollout_reports(d, model, cfg, args.horizon, args.start, label)
        except ValueError as exc:
            raise CLIError(str(exc)) from None
        reports += [r.with_seed(d.run.seed) for r in found]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_reports(reports, args.out)
    if len(read_reports(args.out)) != len(reports):
        raise CLIError(f"validation of {args.out} failed")
    for (system, label), group in _group(reports).items():
        first = np.mean([r.per_step_mse[0] for r in group])
        last = np.mean([r.per_step_mse[-1] for r in group])
        print(f"{system} {label}: step 1 mse={first:.6e}  step {args.horizon} mse={last:.6e}")
    return reports


def _group(reports):
    grouped = defaultdict(list)
    for r in reports:
        grouped[r.system, r.model].append(r)
    return grouped


def cmd_report(args):
    _need(args, "inputs", "out")
    rollouts, sweeps = [], []
    for path in args.inputs:
        try:
            with open(path, newline="") as fh:
                header = next(csv.reader(fh), None)
        except OSError as exc:
            raise CLIError(f"cannot read {path}: {exc}") from None
        if header is None:
            raise CLIError(f"{path} is empty")
        if tuple(header) == SWEEP_COLUMNS:
            with open(path, newline="") as fh:
                sweeps += list(csv.DictReader(fh))
        else:
            try:
                rollouts += read_reports(path)
            except ValueError as exc:
                raise CLIError(str(exc)) from None
    if not rollouts and not sweeps:
        raise CLIError("no rows found in the input CSVs")

    summary = []
    for (system, label), group in sorted(_group(rollouts).items()):
        horizons = {r.horizon for r in group}
        if len(horizons) != 1:
            raise CLIError(f"{system}/{label}: mixed horizons {sorted(horizons)}")
        summary.append((system, label, len(group), horizons.pop(),
                        float(np.mean([r.per_step_mse[0] for r in group])),
                        float(np.mean([r.per_step_mse[-1] for r in group]))))
    _write_csv(args.out, SUMMARY_COLUMNS, [row[:4] + tuple(repr(float(v)) for v in row[4:]) for row in summary])

    sweep_summary = []
    curves = defaultdict(list)
    for row in sweeps:
        curves[row["system"], int(row["n_points"])].append((int(row["n_freq"]), float(row["mse"])))
    for (system, n_points), curve in sorted(curves.items()):
        curve.sort()
        best = min(curve, key=lambda t: (t[1], t[0]))
        sweep_summary.append((system, n_points, best[0], best[1], curve[0][1], curve[-1][1]))
    if sweep_summary:
        out = args.sweep_out or Path(str(args.out) + ".sweep.csv")
        _write_csv(out, SWEEP_SUMMARY_COLUMNS, [r[:3] + tuple(repr(float(v)) for v in r[3:]) for r in sweep_summary])

    if summary:
        print(f"{'system':<10} {'model':<16} {'seeds':>5} {'horizon':>7} {'mse@1':>12} {'mse@last':>12}")
        for system, label, n, h, first, last in summary:
            print(f"{system:<10} {label:<16} {n:>5} {h:>7} {first:>12.4e} {last:>12.4e}")
    if sweep_summary:
        print(f"{'system':<10} {'points':>6} {'best n_freq':>11} {'best mse':>12}")
        for system, n_points, nf, best, *_ in sweep_summary:
            print(f"{system:<10} {n_points:>6} {nf:>11} {best:>12.4e}")
    return summary, sweep_summary


COMMANDS = {
    "generate": cmd_generate,
    "interp-sweep": cmd_interp_sweep,
    "fit": cmd_fit,
    "rollout": cmd_rollout,
    "report": cmd_report,
}


def main(argv=None):
    parser, subparsers = build_parser()
    args = _apply_config(parser, subparsers, argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}
    log.info("grind %s: %s", args.command, resolved)
    try:
        experiments.worker_count()
        COMMANDS[args.command](args)
    except CLIError as exc:
        print(f"grind {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"grind {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
