"""Command line entry point ``wmp``."""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("wmplab")


def _levels(text: str) -> tuple:
    from .harness import _parse_levels

    return _parse_levels(text)


def _angle(text: str) -> float:
    from .harness import _number

    return _number(text)


def _write_rows(rows, path) -> None:
    cols = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def cmd_mesh(args) -> int:
    from .harness import build_mesh
    from .io import write_mesh
    from .mesh import quasi_uniformity

    mesh = build_mesh(args.domain, args.level)
    print(
        f"nodes={mesh.n_nodes} triangles={mesh.n_triangles} width={mesh.width:.6g} "
        f"h={mesh.h:.6g} K={quasi_uniformity(mesh):.6g} area={mesh.areas.sum():.12g}"
    )
    if args.out:
        write_mesh(mesh, args.out)
        log.info("mesh written to %s", args.out)
    return 0


def cmd_run(args) -> int:
    from .harness import ExperimentConfig, run_wmp, write_records_csv

    cfg = ExperimentConfig(
        domain=args.domain,
        r=int(args.element.lstrip("pP")),
        scheme=args.scheme,
        levels=(args.h_level,),
        tau=args.tau,
        T=args.T,
        data=args.data,
        amplitude=args.amplitude,
        seed=args.seed,
        initial=args.initial,
        out=args.out,
    )
    rec = run_wmp(cfg)
    print(
        f"scheme={args.scheme} level={rec.level} tau={rec.tau:.6g} N={rec.N} "
        f"data_norm={rec.data_norm:.17g} sol_norm={rec.sol_norm:.17g} ratio={rec.ratio:.17g} "
        f"interior_ratio={rec.interior_ratio:.6g}"
    )
    if args.out:
        write_records_csv([rec], Path(args.out) / "record.csv")
    return 0


def cmd_sweep(args) -> int:
    from .harness import expand_grid, read_config, sweep, write_records_csv

    settings = read_config(args.config)
    out = args.out or settings.pop("out", None)
    settings.pop("out", None)
    res = sweep(expand_grid(settings), workers=args.workers)
    for row in res.summary:
        print(" ".join(f"{k}={v}" for k, v in row.items()))
    for rec in res.failures:
        print(f"FAILED cell {rec.config['scheme']} {rec.config['domain']} level {rec.level}: {rec.error}")
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        write_records_csv(res.records, Path(out) / "records.csv")
        _write_rows(res.summary, Path(out) / "summary.csv")
    return 1 if res.failures else 0


def cmd_symbol(args) -> int:
    from .symbol import consistency_slope, sector_bounds_check, write_sector_csv

    lo, hi = _levels(args.tau_levels)[0], _levels(args.tau_levels)[-1]
    taus = [2.0**-j for j in range(lo, hi + 1)]
    rep = sector_bounds_check(args.k, args.theta, taus, n_points=args.n_points, eps=args.eps)
    for row in rep.rows:
        print(" ".join(f"{k}={v:.6g}" for k, v in row.items()))
    s1, s2 = rep.spread()
    print(
        f"spread_C1={s1:.6g} spread_C2={s2:.6g} slope={consistency_slope(rep):.6g} "
        f"max_arg={rep.max_arg:.6g} fitted_eps={rep.fitted_eps:.6g} violations={rep.violations}"
    )
    if args.out:
        write_sector_csv(rep, args.out)
    return 0


def cmd_green(args) -> int:
    from .green import annulus_profile, band_measurement, green_run, l1_bounds, write_annulus_csv, write_green_csv
    from .mesh import MeshError, dyadic_annuli

    x0 = tuple(float(s) for s in args.x0.split(","))
    for lv in _levels(args.levels):
        run = green_run(args.domain, x0, lv, extra=args.extra, T=args.T)
        m = band_measurement(run)
        a = l1_bounds(run.coarse)
        print(
            f"level={lv} band_estimate={m.value:.6g} tail={m.tail:.3g} decay_rate={m.decay_rate:.3g} "
            f"max_l1={np.nanmax(a['l1']):.6g} max_t_dt_l1={np.nanmax(a['t_dt_l1']):.6g}"
        )
        if args.out:
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            write_green_csv(run, out / f"green_l{lv}.csv")
            try:
                dec = dyadic_annuli(run.coarse.space.mesh, x0, args.c_star)
            except MeshError as err:
                log.warning("no annulus table at level %d: %s", lv, err)
            else:
                write_annulus_csv(annulus_profile(run, dec), out / f"annuli_l{lv}.csv")
    return 0


def cmd_accept(args) -> int:
    from .acceptance import acceptance, write_report

    ids = None if not args.criteria else [int(s) for s in args.criteria.split(",")]
    checks = acceptance(args.suite, ids)
    for c in checks:
        print(c.line())
    if args.out:
        write_report(checks, args.out)
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmp", description="Weak maximum principle laboratory for FEM heat equations.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="build and describe a mesh")
    m.add_argument("--domain", default="lshape")
    m.add_argument("--level", type=int, default=3)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mesh)

    r = sub.add_parser("run", help="one WMP measurement")
    r.add_argument("--domain", default="lshape")
    r.add_argument("--element", default="p1")
    r.add_argument("--scheme", default="bdf1")
    r.add_argument("--h-level", type=int, default=4)
    r.add_argument("--tau", default="h")
    r.add_argument("--T", type=float, default=1.0)
    r.add_argument("--data", default="rademacher")
    r.add_argument("--amplitude", type=float, default=1.0)
    r.add_argument("--initial", default="harmonic")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="parameter sweep from a key = value file")
    s.add_argument("--config", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    y = sub.add_parser("symbol", help="BDF symbol sector bounds")
    y.add_argument("--k", type=int, default=2)
    y.add_argument("--theta", type=_angle, default=0.55 * math.pi)
    y.add_argument("--tau-levels", default="4:10")
    y.add_argument("--n-points", type=int, default=64)
    y.add_argument("--eps", type=float, default=0.05)
    y.add_argument("--out")
    y.set_defaults(func=cmd_symbol)

    g = sub.add_parser("green", help="Green's function band estimate")
    g.add_argument("--domain", default="lshape")
    g.add_argument("--x0", default="0.25,0.25")
    g.add_argument("--levels", default="3")
    g.add_argument("--extra", type=int, default=2)
    g.add_argument("--T", type=float, default=1.0)
    g.add_argument("--c-star", type=float, default=16.0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_green)

    a = sub.add_parser("accept", help="acceptance suite")
    a.add_argument("--suite", default="fast", choices=("fast", "full"))
    a.add_argument("--criteria", help="comma-separated criterion numbers")
    a.add_argument("--out")
    a.set_defaults(func=cmd_accept)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
