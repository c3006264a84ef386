"""Acceptance suite: one function per criterion, each returning checks.

The schemes' constants have no published numeric values, so several
thresholds are stability thresholds (growth per refinement level) and the
proximity constant of the M/L solution maps is calibrated once and frozen
(`CALIBRATED_ML`); reports state which is which.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .fem import FeSpace
from .green import band_measurement, green_run, l1_bounds
from .harness import ExperimentConfig, run_wmp
from .mesh import domain_mesh
from .stepper import BoundaryData, TimeGrid, bdf_solve, dg0_solve, split_solution, starting_values
from .symbol import (
    consistency_slope,
    contour_reconstruct,
    hat_factor,
    laplace_hat_piecewise_linear,
    resolvent_linf_norm,
    sector_bounds_check,
    sector_sample,
    solution_map_difference_ratio,
    ztransform,
)

__all__ = ["Check", "CRITERIA", "SUITES", "run_criterion", "acceptance", "write_report"]

# max_z ||(M - L) f|| / (tau |z| ||f||) on the L-shape at h = 2^-3, tau = 2^-4,
# theta = 0.55 pi (first pinned run); later runs must stay within 10%
CALIBRATED_ML = {2: 0.2251, 3: 0.4361, 4: 0.8739, 5: 5.1777, 6: 0.8480}


@dataclass
class Check:
    criterion_id: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.criterion_id}: measured={self.measured:.6g} threshold={self.threshold:.6g} {self.detail}"


def _le(cid, measured, threshold, detail=""):
    return Check(cid, float(measured), float(threshold), bool(measured <= threshold), detail)


def _growth(values) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.max(v[1:] / v[:-1]))


def _ones(space, grid):
    return BoundaryData.constant(space, grid, 1.0)


def c1_constants(levels=None) -> list:
    worst, where = 0.0, ""
    for dom in ("square", "lshape"):
        space = FeSpace(domain_mesh(dom, 4))
        h = space.mesh.width
        u0 = np.ones(space.n_dofs)
        for k in range(1, 7):
            grid = TimeGrid.for_horizon(1.0, h)
            bd = _ones(space, grid)
            tr = bdf_solve(space, k, grid, bd, starting_values(space, k, h, bd, u0))
            err = np.abs(tr.values - 1.0).max()
            if err >= worst:
                worst, where = err, f"{dom} bdf{k}"
        grid = TimeGrid.graded(1.0, h)
        tr = dg0_solve(space, grid, _ones(space, grid), u0)
        err = np.abs(tr.values - 1.0).max()
        if err >= worst:
            worst, where = err, f"{dom} dg0"
    return [_le("1", worst, 1e-11, f"max |u-1| (worst: {where})")]


def _wmp_checks(cid, scheme_list, levels):
    ratios, growths = [], []
    for scheme in scheme_list:
        cfg = ExperimentConfig(domain="lshape", scheme=scheme, levels=levels, data="rademacher-nodal", seed=7)
        r = [run_wmp(cfg, lv).ratio for lv in levels]
        ratios.append(max(r))
        growths.append(_growth(r))
    return [
        _le(f"{cid}a", max(ratios), 10.0, "max WMP ratio over k and levels"),
        _le(f"{cid}b", max(growths), 1.05, "max ratio(h/2)/ratio(h)"),
    ]


def c2_fully_discrete(levels=(3, 4, 5, 6)) -> list:
    return _wmp_checks("2", [f"bdf{k}" for k in range(1, 7)], levels)


def c3_semidiscrete(levels=(3, 4, 5, 6)) -> list:
    return _wmp_checks("3", ["semidiscrete"], levels)


def c4_horizon(levels=None) -> list:
    r = [
        run_wmp(ExperimentConfig(domain="lshape", scheme="bdf2", levels=(4,), tau="0.0625", T=T, seed=7)).ratio
        for T in (1.0, 8.0)
    ]
    return [_le("4", r[1] / r[0], 1.1, f"ratio(T=8)={r[1]:.6g} ratio(T=1)={r[0]:.6g}")]


def c5_ztransform(levels=None, n_pairs: int = 100, seed: int = 5) -> list:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(3, 40))
        tau = float(rng.uniform(0.01, 0.5))
        seq = np.concatenate([[0.0], rng.standard_normal(n)])
        z = complex(rng.uniform(0.1, 10.0), rng.uniform(-20.0, 20.0))
        exact = laplace_hat_piecewise_linear(seq, tau, z)
        via = hat_factor(z, tau) * ztransform(seq, np.exp(-tau * z))
        worst = max(worst, abs(via - exact) / abs(exact))
    return [_le("5", worst, 1e-10, f"max relative error over {n_pairs} pairs")]


def c6_symbol(levels=None) -> list:
    taus = [2.0**-j for j in range(4, 11)]
    spread, slope_dev = 0.0, 0.0
    for k in range(1, 7):
        rep = sector_bounds_check(k, 0.55 * math.pi, taus)
        spread = max(spread, *rep.spread())
        slope_dev = max(slope_dev, abs(consistency_slope(rep) - k))
    return [
        _le("6a", spread, 2.0, "max C1/C2 spread across tau"),
        _le("6b", slope_dev, 0.1, "max |consistency slope - k|"),
    ]


def _sector_z(n=12):
    return [m * np.exp(1j * s * math.radians(80.0)) for m in np.geomspace(1.0, 1e4, n) for s in (1, -1)]


def c7_resolvent(levels=(3, 4, 5)) -> list:
    zs = _sector_z()
    worst, detail = 0.0, []
    for dom in ("square", "lshape"):
        vals = [max(resolvent_linf_norm(FeSpace(domain_mesh(dom, lv)), z) for z in zs) for lv in levels]
        g = _growth(vals)
        worst = max(worst, g)
        detail.append(f"{dom}: " + ",".join(f"{v:.4f}" for v in vals))
    return [_le("7", worst, 1.10, "max growth of sup_z norm; " + "; ".join(detail))]


def ml_probes(space) -> np.ndarray:
    """Level-independent boundary probes (functions of position)."""
    x = space.dof_coords[space.boundary_dofs]
    X, Y = x[:, 0], x[:, 1]
    return np.stack(
        [np.ones_like(X), np.cos(np.pi * X) * np.cos(np.pi * Y), np.where(X + Y < 0.75, 1.0, -1.0), np.sin(6 * np.pi * (X - Y))],
        axis=1,
    )


def ml_constant(k: int, level: int, tau: float = 2.0**-4, theta: float = 0.55 * math.pi) -> float:
    space = FeSpace(domain_mesh("lshape", level))
    smp = sector_sample(theta, 1.0, tau, 16)
    z = smp.points[smp.points.imag >= 0]
    P = ml_probes(space)
    return max(solution_map_difference_ratio(space, k, tau, zi, P) for zi in z)


def c8_ml_proximity(levels=(3, 4, 5)) -> list:
    growth, excess, detail = 0.0, 0.0, []
    for k in range(2, 7):
        vals = [ml_constant(k, lv) for lv in levels]
        growth = max(growth, _growth(vals))
        excess = max(excess, max(vals) / CALIBRATED_ML[k])
        detail.append(f"k={k}: " + ",".join(f"{v:.4f}" for v in vals))
    return [
        _le("8a", growth, 1.10, "max growth per level; " + "; ".join(detail)),
        _le("8b", excess, 1.10, "max C / frozen calibration"),
    ]


def c9_contour(levels=None) -> list:
    space = FeSpace(domain_mesh("lshape", 3))
    N, tau = 20, 1.0 / 20
    grid = TimeGrid.uniform(tau, N)
    rng = np.random.default_rng(9)
    worst = 0.0
    for k in (1, 3):
        vals = 2.0 * rng.integers(0, 2, size=(N + 1, len(space.boundary_dofs))) - 1.0
        vals[:k] = 0.0
        bd = BoundaryData(space, grid.times, vals)
        oracle = bdf_solve(space, k, grid, bd, [np.zeros(space.n_dofs)] * k).values[N]
        u = contour_reconstruct(space, k, tau, bd, N)
        worst = max(worst, np.abs(u - oracle).max())
    return [_le("9", worst, 1e-6, "max nodal gap vs time stepping, k=1,3")]


def c10_green(levels=(3, 4, 5)) -> list:
    band, l1 = [], []
    for lv in levels:
        run = green_run("lshape", (0.25, 0.25), lv)
        band.append(band_measurement(run).value)
        a, b = l1_bounds(run.coarse), l1_bounds(run.reference)
        l1.append([np.nanmax(a["l1"]), np.nanmax(a["t_dt_l1"]), np.nanmax(b["l1"]), np.nanmax(b["t_dt_l1"])])
    l1 = np.array(l1)
    q = l1[1:] / l1[:-1]
    l1_worst = float(np.max(np.maximum(q, 1.0 / q)))
    return [
        _le("10a", _growth(band), 1.15, "band estimate growth; values " + ",".join(f"{v:.4g}" for v in band)),
        _le("10b", l1_worst, 1.5, "max level-to-level factor of the L1 bounds"),
    ]


def c11_dg0_log(levels=(3, 4, 5, 6)) -> list:
    q = []
    for lv in levels:
        rec = run_wmp(ExperimentConfig(domain="lshape", scheme="dg0", levels=(lv,), data="rademacher-nodal", seed=11), lv)
        q.append(rec.ratio / rec.log_factor)
    return [_le("11", _growth(q), 1.05, "max step of ratio/ln(T/tau): " + ",".join(f"{v:.4f}" for v in q))]


def c12_split(levels=None) -> list:
    space = FeSpace(domain_mesh("lshape", 3))
    grid = TimeGrid.for_horizon(1.0, space.mesh.width)
    rng = np.random.default_rng(12)
    vals = rng.uniform(-1, 1, size=(grid.N + 1, len(space.boundary_dofs)))
    bd = BoundaryData(space, grid.times, vals)
    u0 = rng.uniform(-1, 1, space.n_dofs)
    u0[space.boundary_dofs] = vals[0]
    start = starting_values(space, 4, grid.tau, bd, u0)
    u = bdf_solve(space, 4, grid, bd, start).values
    parts = split_solution(space, 4, grid, bd, start)
    err = np.abs(sum(p.values for p in parts) - u).max()
    return [_le("12", err, 1e-11, "max_n ||u1+u2+u3-u||_inf")]


CRITERIA = {
    1: c1_constants,
    2: c2_fully_discrete,
    3: c3_semidiscrete,
    4: c4_horizon,
    5: c5_ztransform,
    6: c6_symbol,
    7: c7_resolvent,
    8: c8_ml_proximity,
    9: c9_contour,
    10: c10_green,
    11: c11_dg0_log,
    12: c12_split,
}

# the fast suite drops the finest level of the level sweeps
SUITES = {
    "full": {2: (3, 4, 5, 6), 3: (3, 4, 5, 6), 7: (3, 4, 5), 8: (3, 4, 5), 10: (3, 4, 5), 11: (3, 4, 5, 6)},
    "fast": {2: (3, 4, 5), 3: (3, 4, 5), 7: (3, 4), 8: (3, 4), 10: (3, 4), 11: (3, 4, 5)},
}


def run_criterion(cid: int, suite: str = "full") -> list:
    fn = CRITERIA[cid]
    levels = SUITES[suite].get(cid)
    t0 = time.perf_counter()
    try:
        checks = fn(levels) if levels is not None else fn()
    except Exception as err:  # a crash is a failed criterion, not an aborted suite
        checks = [Check(str(cid), math.nan, math.nan, False, f"{type(err).__name__}: {err}")]
    dt = time.perf_counter() - t0
    for c in checks:
        c.seconds = dt
    return checks


def acceptance(suite: str = "fast", criteria=None) -> list:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {tuple(SUITES)}")
    ids = sorted(CRITERIA) if criteria is None else list(criteria)
    return [c for cid in ids for c in run_criterion(cid, suite)]


def write_report(checks, path) -> None:
    cols = ["criterion_id", "measured", "threshold", "pass", "detail", "seconds"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for c in checks:
            d = asdict(c)
            d["pass"] = d.pop("passed")
            w.writerow({k: d[k] for k in cols})
