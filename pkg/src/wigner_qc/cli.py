"""Command-line entry point: ``wigner-qc {run,sweep,collapse,fit,check}``.

Every subcommand prints one JSON object per result on stdout and exits 0 on
success; errors go to stderr as a single ``error: ...`` line with exit 1
(exit 2 for usage errors).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from . import fileio
from .diagnostics import period_average
from .experiments import (SweepPlan, collapse_band, collapse_curves, fit_saturation, make_plan,
                          point_label, relative_l2, run_point, run_sweep)
from .grid import make_grid

log = logging.getLogger("wigner_qc")


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _run_config(args) -> fileio.RunConfig:
    data = {}
    if args.config:
        data = fileio.read_config_data(args.config)
    overrides = {
        "hbar": args.hbar, "D": args.diffusion, "n_q": args.n_q, "n_p": args.n_p,
        "t_final": args.t_final, "dt": args.dt, "label": args.label, "output_dir": args.output,
        "snapshot_mode": args.snapshot_mode, "scheme": args.scheme,
    }
    if args.snapshots is not None:
        overrides["snapshot_times"] = _floats(args.snapshots)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return fileio.config_from_dict(data, args.config or "<command line>")


def cmd_run(args) -> int:
    cfg = _run_config(args)
    shared = cfg.shared()
    result = run_point(cfg.hbar, cfg.D, shared)
    out = cfg.output_path()
    base = out / point_label(cfg.hbar, cfg.D)
    fileio.write_point(result, shared, base, cfg.snapshot_mode)
    avg_path = fileio.write_curve(result.averaged, Path(f"{base}.avg.csv"), fileio.point_echo(shared, cfg.hbar, cfg.D))
    (out / "config.echo.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True), encoding="utf-8")
    if args.plot_data:
        fileio.write_plot_data(result.raw, Path(f"{base}.raw.dat"))
        fileio.write_plot_data(result.averaged, Path(f"{base}.avg.dat"))
    _emit({"command": "run", "zeta0": cfg.zeta0, "hbar": cfg.hbar, "D": cfg.D,
           "curve": str(fileio.curve_path(base)), "averaged": str(avg_path),
           "samples": len(result.raw), "max_avg_g": float(result.averaged.g.max()),
           "dt": result.config.dt, "snapshots": sorted(result.snapshots)})
    return 0


def load_plan(path: str) -> SweepPlan:
    """Plan file: RunConfig keys shared by every point, plus ``points: [[hbar, D], ...]``
    and/or ``families: {zeta0: first_hbar}`` with ``pairs`` and ``scale``."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    points = [tuple(map(float, p)) for p in data.pop("points", [])]
    families = data.pop("families", {}) or {}
    pairs = int(data.pop("pairs", 2))
    scale = float(data.pop("scale", 2.0))
    probe = dict(data, hbar=1.0, D=1.0)
    shared = fileio.config_from_dict(probe, path).shared()
    plan = make_plan({float(z): float(h) for z, h in families.items()}, shared, pairs, scale)
    plan.points = points + plan.points
    return plan


def cmd_sweep(args) -> int:
    plan = load_plan(args.plan)
    outdir = Path(args.output) if args.output else fileio.default_output_root() / Path(args.plan).stem
    result = run_sweep(plan, outdir, workers=args.workers, resume=args.resume)
    print(result.summary())
    for z, curves in sorted(result.curves.items()):
        peaks = [float(period_average(c, c.params.duffing.period).g.max()) for c in curves]
        _emit({"zeta0": z, "curves": len(curves), "max_avg_g": peaks})
        if args.plot_data:
            for c in curves:
                base = outdir / point_label(c.params.bath.hbar, c.params.bath.D)
                fileio.write_plot_data(period_average(c, c.params.duffing.period), Path(f"{base}.avg.dat"))
    return 1 if result.failures else 0


def cmd_collapse(args) -> int:
    curves = [fileio.read_curve(p) for p in args.curves]
    avg = [period_average(c, c.params.duffing.period) for c in curves]
    avg = [c for c in avg if c.zeta0 <= args.zeta_max * (1 + 1e-12)] if args.zeta_max else avg
    if not avg:
        raise ValueError("no curves left after the zeta0 filter")
    normalized, maxima = collapse_curves(avg)
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for c in normalized:
        name = point_label(c.params.bath.hbar, c.params.bath.D)
        fileio.write_curve(c, outdir / f"{name}.norm.csv")
        if args.plot_data:
            fileio.write_plot_data(c, outdir / f"{name}.norm.dat")
    table = outdir / "max_table.csv"
    with table.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zeta0", "max_g"])
        for z, m in sorted(maxima.items()):
            w.writerow([format(z, ".17g"), format(m, ".17g")])
    _emit({"command": "collapse", "curves": len(normalized), "max_table": str(table),
           "band_half_width": collapse_band(normalized), "max_values": {str(k): v for k, v in sorted(maxima.items())}})
    return 0


def read_max_table(path: str) -> dict[float, float]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"zeta0", "max_g"}:
        raise ValueError(f"{path}: expected columns zeta0,max_g")
    return {float(r["zeta0"]): float(r["max_g"]) for r in rows}


def cmd_fit(args) -> int:
    fit = fit_saturation(read_max_table(args.table), zeta_max=args.zeta_max)
    _emit({"command": "fit", "a": fit.a, "b": fit.b, "residual": fit.residual})
    return 0


def cmd_check(args) -> int:
    """Refine grid (and halve dt) until averaged G changes by less than the tolerance."""
    cfg = _run_config(args)
    shared = cfg.shared()
    ref = run_point(cfg.hbar, cfg.D, shared)
    report = []
    accepted = False
    for level in range(1, args.levels + 1):
        g = shared.grid
        finer = replace(shared, grid=make_grid(g.q_min, g.q_max, g.p_min, g.p_max, 2 * g.n_q, 2 * g.n_p))
        res = run_point(cfg.hbar, cfg.D, finer)
        a, b = ref.averaged, res.averaged
        change = relative_l2(a.t, a.g, b.t, b.g)
        peak_change = abs(b.g.max() - a.g.max()) / b.g.max()
        entry = {"level": level, "n_q": finer.grid.n_q, "n_p": finer.grid.n_p,
                 "relative_l2_change": change, "peak_change": float(peak_change)}
        report.append(entry)
        _emit({"command": "check", **entry})
        if change < args.tolerance:
            accepted = True
            break
        shared, ref = finer, res
    dt_half = replace(shared, dt=ref.config.dt / 2)
    res = run_point(cfg.hbar, cfg.D, dt_half)
    dt_change = relative_l2(ref.averaged.t, ref.averaged.g, res.averaged.t, res.averaged.g)
    _emit({"command": "check", "dt": ref.config.dt, "dt_halving_change": dt_change,
           "accepted": bool(accepted and dt_change < args.tolerance)})
    return 0 if accepted and dt_change < args.tolerance else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wigner-qc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def point_args(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--hbar", type=float)
        p.add_argument("--diffusion", "-D", type=float, help="momentum diffusion coefficient D")
        p.add_argument("--n-q", type=int, dest="n_q")
        p.add_argument("--n-p", type=int, dest="n_p")
        p.add_argument("--t-final", type=float, dest="t_final")
        p.add_argument("--dt", type=float)
        p.add_argument("--scheme", choices=("rk4", "rk2"))
        p.add_argument("--snapshots", help="comma-separated snapshot times")
        p.add_argument("--snapshot-mode", choices=fileio.SNAPSHOT_MODES, dest="snapshot_mode")
        p.add_argument("--label")
        p.add_argument("--output", "-o", help="output directory")

    p = sub.add_parser("run", help="evolve one (hbar, D) point")
    point_args(p)
    p.add_argument("--plot-data", action="store_true", help="also write gnuplot column files")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a sweep plan (resumable)")
    p.add_argument("plan")
    p.add_argument("--output", "-o")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--resume", action="store_true", help="skip points whose outputs already exist")
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("collapse", help="normalise curves by their maxima")
    p.add_argument("curves", nargs="+")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--zeta-max", type=float, default=None)
    p.add_argument("--plot-data", action="store_true")
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("fit", help="fit a*(1-exp(-b*zeta0^2)) to a max table")
    p.add_argument("table")
    p.add_argument("--zeta-max", type=float, default=2.0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("check", help="grid and dt convergence study")
    point_args(p)
    p.add_argument("--levels", type=int, default=2)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "config", "absent") is None and args.command in ("run", "check"):
        if args.hbar is None or args.diffusion is None:
            parser.error(f"{args.command}: --hbar and --diffusion are required without --config")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - reported as a diagnostic line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
