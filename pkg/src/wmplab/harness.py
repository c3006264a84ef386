"""Experiment configuration, boundary-data families, WMP runs and sweeps."""

from __future__ import annotations

import csv
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .fem import FeSpace, interpolate
from .mesh import Mesh, domain_mesh, refine_uniform
from .stepper import (
    BoundaryData,
    GridError,
    TimeGrid,
    bdf_solve,
    dg0_solve,
    discrete_harmonic_extension,
    semidiscrete_reference,
    starting_values,
)

__all__ = [
    "ExperimentConfig",
    "WmpRecord",
    "SweepResult",
    "FAMILIES",
    "boundary_family",
    "build_mesh",
    "run_wmp",
    "sweep",
    "expand_grid",
    "read_config",
    "write_records_csv",
]

FAMILIES = ("constant", "smooth-wave", "step-in-time", "rademacher-nodal", "corner-focused")
_ALIASES = {"rademacher": "rademacher-nodal", "smooth": "smooth-wave", "step": "step-in-time", "corner": "corner-focused"}
SCHEMES = tuple(f"bdf{k}" for k in range(1, 7)) + ("dg0", "semidiscrete")


def _family_id(name: str) -> str:
    fid = _ALIASES.get(name, name)
    if fid not in FAMILIES:
        raise ValueError(f"unknown boundary family {name!r}; expected one of {FAMILIES}")
    return fid


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment (possibly over several h-levels).

    ``tau`` is either a multiple of the nominal mesh width (``"h"``,
    ``"0.5h"``) or a fixed step (``"0.0625"``). ``domain`` is ``square``,
    ``lshape`` or the path of a mesh file (refined ``level`` times).
    ``initial`` selects u0: ``harmonic`` (discrete harmonic extension of
    ``g^0``) or ``bump`` (interpolant of ``16 x y (1-x)(1-y)`` plus the
    harmonic extension).
    """

    domain: str = "lshape"
    r: int = 1
    scheme: str = "bdf1"
    levels: tuple = (4,)
    tau: str = "h"
    T: float = 1.0
    data: str = "rademacher-nodal"
    amplitude: float = 1.0
    omega: float = 2 * math.pi
    corner_radius: float = 0.25
    seed: int = 0
    initial: str = "harmonic"
    kappa: float = 1.2
    substep_ratio: int = 8
    out: str | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.r not in (1, 2):
            raise ValueError("element degree must be 1 or 2")
        if self.domain not in ("square", "lshape") and not os.path.exists(self.domain):
            raise FileNotFoundError(f"mesh file {self.domain!r} not found")
        if self.initial not in ("harmonic", "bump"):
            raise ValueError(f"unknown initial value {self.initial!r}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        _family_id(self.data)
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))
        self.tau_for(1.0)

    @property
    def k(self) -> int:
        return int(self.scheme[3:]) if self.scheme.startswith("bdf") else 1

    def tau_for(self, h: float) -> float:
        s = str(self.tau).strip()
        if s.endswith("h"):
            c = s[:-1].strip().rstrip("*")
            return (float(c) if c else 1.0) * h
        return float(s)

    def grid_for(self, h: float) -> TimeGrid:
        tau = self.tau_for(h)
        if self.scheme == "dg0":
            return TimeGrid.graded(self.T, tau, kappa=self.kappa)
        grid = TimeGrid.for_horizon(self.T, tau)
        if grid.N < self.k + 2:
            raise GridError(f"{grid.N} steps; {self.scheme} needs at least {self.k + 2}")
        return grid

    def echo(self) -> dict:
        d = asdict(self)
        d["levels"] = ",".join(map(str, self.levels))
        return d


def _parse_levels(v: str) -> tuple:
    v = v.strip()
    if ":" in v:
        a, b = v.split(":")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(x) for x in v.split(","))


def read_config(path) -> dict:
    """Flat ``key = value`` file (``#`` comments) as a dict of strings."""
    out = {}
    for ln, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


_LIST_KEYS = ("domain", "scheme", "data", "tau", "r")


def expand_grid(settings: dict) -> list:
    """Configs for the cartesian product of comma-separated list values.

    List-valued keys: domain, scheme, data, tau, r; ``levels`` accepts
    ``3:6`` or ``3,4,5`` and stays a single field.
    """
    names = {f.name for f in fields(ExperimentConfig)}
    base, lists = {}, {}
    for key, val in settings.items():
        if key == "element":
            key, val = "r", str(val).lstrip("pP")
        if key not in names:
            raise ValueError(f"unknown configuration key {key!r}")
        if key in _LIST_KEYS and isinstance(val, str) and "," in val:
            lists[key] = [s.strip() for s in val.split(",")]
        else:
            base[key] = val
    out = []
    keys = list(lists)
    for combo in itertools.product(*(lists[k] for k in keys)) if keys else [()]:
        d = dict(base)
        d.update(zip(keys, combo))
        out.append(_coerce(d))
    return out


def _coerce(d: dict) -> ExperimentConfig:
    conv = {}
    for key, val in d.items():
        if not isinstance(val, str):
            conv[key] = val
        elif key == "levels":
            conv[key] = _parse_levels(val)
        elif key in ("r", "seed", "substep_ratio"):
            conv[key] = int(val)
        elif key in ("T", "amplitude", "omega", "corner_radius", "kappa"):
            conv[key] = _number(val)
        elif key == "out":
            conv[key] = val or None
        else:
            conv[key] = val
    return ExperimentConfig(**conv)


def _number(v: str) -> float:
    """Float, allowing a trailing ``pi`` factor (``2pi``, ``0.5*pi``)."""
    v = v.strip()
    if v.endswith("pi"):
        c = v[:-2].rstrip("*").strip()
        return (float(c) if c else 1.0) * math.pi
    return float(v)


def build_mesh(domain: str, level: int) -> Mesh:
    if domain in ("square", "lshape"):
        return domain_mesh(domain, level)
    from .io import read_mesh

    mesh = read_mesh(domain)
    for _ in range(level):
        mesh = refine_uniform(mesh)
    return mesh


def boundary_family(fid: str, params: dict, space: FeSpace, grid: TimeGrid) -> BoundaryData:
    """Boundary data of family `fid` at the grid times.

    params: ``amplitude`` (all), ``omega`` (smooth-wave), ``seed``
    (rademacher-nodal), ``t_switch`` (step-in-time, default T/2; the data
    is ``+A`` before and ``-A`` from the switch on), ``radius``
    (corner-focused: hat of this radius at the first reentrant corner, or
    at the first polygon vertex for convex domains, with sign ``(-1)^n``).
    """
    fid = _family_id(fid)
    A = float(params.get("amplitude", 1.0))
    t = grid.times
    x = space.dof_coords[space.boundary_dofs]
    nb = len(x)
    if fid == "constant":
        vals = np.full((len(t), nb), A)
        return BoundaryData(space, t, vals, lambda s, x1, x2: np.full(np.shape(x1), A))
    if fid == "smooth-wave":
        om = float(params.get("omega", 2 * math.pi))

        def g(s, x1, x2):
            return A * np.sin(om * s) * np.cos(np.pi * x1)

        return BoundaryData.from_function(space, grid, g)
    if fid == "step-in-time":
        ts = float(params.get("t_switch", 0.5 * grid.T))
        vals = np.where((t < ts)[:, None], A, -A) * np.ones((1, nb))
        return BoundaryData(space, t, vals)
    if fid == "rademacher-nodal":
        rng = np.random.default_rng(int(params.get("seed", 0)))
        vals = A * (2.0 * rng.integers(0, 2, size=(len(t), nb)) - 1.0)
        return BoundaryData(space, t, vals)
    poly = space.mesh.polygon
    corners = poly.reentrant_corners()
    c = corners[0] if len(corners) else poly.vertices[0]
    rad = float(params.get("radius", 0.25))
    prof = np.clip(1.0 - np.linalg.norm(x - c, axis=1) / rad, 0.0, None)
    sign = (-1.0) ** np.arange(len(t))
    return BoundaryData(space, t, A * sign[:, None] * prof[None, :])


@dataclass
class WmpRecord:
    """Measured weak-maximum-principle ratio of one run.

    Maxima are nodal (exact sup norms for P1). ``interior_ratio`` uses only
    interior dofs for the solution maxima, which exposes overshoot that the
    boundary values would otherwise mask.
    """

    config: dict
    level: int
    h: float
    tau: float
    N: int
    data_norm: float
    sol_norm: float
    ratio: float
    maxima: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False)
    log_factor: float = math.nan
    interior_ratio: float = math.nan
    error: str = ""

    def row(self) -> dict:
        d = {
            "domain": self.config["domain"],
            "scheme": self.config["scheme"],
            "r": self.config["r"],
            "data": self.config["data"],
            "seed": self.config["seed"],
            "level": self.level,
            "h": self.h,
            "tau": self.tau,
            "N": self.N,
            "data_norm": self.data_norm,
            "sol_norm": self.sol_norm,
            "ratio": self.ratio,
            "interior_ratio": self.interior_ratio,
            "error": self.error,
        }
        if self.config["scheme"] == "dg0":
            d["ratio_over_log"] = self.ratio / self.log_factor
        return d


def _initial(cfg, space, bdata):
    u0 = discrete_harmonic_extension(space, bdata.values[0])
    if cfg.initial == "bump":
        u0 = u0 + interpolate(space, lambda x, y: 16 * x * y * (1 - x) * (1 - y)) * _interior_mask(space)
    return u0


def _interior_mask(space):
    m = np.zeros(space.n_dofs)
    m[space.interior_dofs] = 1.0
    return m


def run_wmp(cfg: ExperimentConfig, level: int | None = None) -> WmpRecord:
    """Run one scheme on one h-level and measure the WMP ratio."""
    level = cfg.levels[0] if level is None else level
    mesh = build_mesh(cfg.domain, level)
    space = FeSpace(mesh, cfg.r)
    h = mesh.width
    grid = cfg.grid_for(h)
    params = {"amplitude": cfg.amplitude, "omega": cfg.omega, "seed": cfg.seed, "radius": cfg.corner_radius}
    bdata = boundary_family(cfg.data, params, space, grid)
    u0 = _initial(cfg, space, bdata)
    gmax = float(np.abs(bdata.values).max())
    if cfg.scheme.startswith("bdf"):
        k = cfg.k
        start = starting_values(space, k, grid.tau, bdata, u0)
        traj = bdf_solve(space, k, grid, bdata, start)
        first = k
    elif cfg.scheme == "dg0":
        traj = dg0_solve(space, grid, bdata, u0, cfg.kappa)
        first = 1
    else:
        sub = grid.tau / cfg.substep_ratio
        traj = semidiscrete_reference(space, bdata, u0, grid.T, sub)
        first = 1
    maxima = traj.linf_series()
    data_norm = max(float(maxima[:first].max()), gmax)
    sol_norm = float(maxima[first:].max())
    ratio = sol_norm / data_norm if data_norm > 0 else 0.0
    inner = float(np.abs(traj.values[first:, space.interior_dofs]).max()) if len(space.interior_dofs) else 0.0
    rec = WmpRecord(
        cfg.echo(), level, h, grid.tau, grid.N, data_norm, sol_norm, ratio, maxima, traj.times,
        math.log(grid.T / grid.tau), inner / data_norm if data_norm > 0 else 0.0,
    )
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        name = f"wmp_{cfg.domain if cfg.domain in ('square', 'lshape') else 'mesh'}_{cfg.scheme}_p{cfg.r}_{_family_id(cfg.data)}_l{level}.csv"
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "max_abs"])
            for n, (ti, m) in enumerate(zip(traj.times, maxima)):
                w.writerow([n, repr(float(ti)), repr(float(m))])
    return rec


@dataclass
class SweepResult:
    records: list
    summary: list

    @property
    def failures(self) -> list:
        return [r for r in self.records if r.error]


def _failed(cfg, level, err) -> WmpRecord:
    return WmpRecord(cfg.echo(), level, math.nan, math.nan, 0, math.nan, math.nan, math.nan,
                     np.array([]), np.array([]), error=f"{type(err).__name__}: {err}")


def _cell(args):
    cfg, level = args
    try:
        return run_wmp(cfg, level)
    except Exception as err:  # recorded, the sweep continues
        return _failed(cfg, level, err)


def sweep(configs, workers: int = 1) -> SweepResult:
    """Run every (config, level) cell; failures are recorded, not raised.

    Records come back in cell order whatever `workers` is. The summary has
    one row per (domain, scheme, data) with the max ratio and the growth
    factors ``ratio(l+1) / ratio(l)``.
    """
    if isinstance(configs, ExperimentConfig):
        configs = [configs]
    cells = [(c, lv) for c in configs for lv in c.levels]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_cell, cells))
    else:
        records = [_cell(c) for c in cells]
    groups = {}
    for rec in records:
        c = rec.config
        groups.setdefault((c["domain"], c["scheme"], c["r"], c["data"], c["tau"]), []).append(rec)
    summary = []
    for key, recs in groups.items():
        recs = sorted(recs, key=lambda r: r.level)
        ratios = np.array([r.ratio for r in recs])
        growth = ratios[1:] / ratios[:-1]
        row = dict(domain=key[0], scheme=key[1], r=key[2], data=key[3], tau=key[4],
                   levels=",".join(str(r.level) for r in recs),
                   max_ratio=float(np.nanmax(ratios)) if np.any(np.isfinite(ratios)) else math.nan,
                   growth=";".join(f"{g:.6g}" for g in growth),
                   max_growth=float(np.nanmax(growth)) if len(growth) and np.any(np.isfinite(growth)) else math.nan)
        if key[1] == "dg0":
            row["ratio_over_log"] = ";".join(f"{r.ratio / r.log_factor:.6g}" for r in recs)
        summary.append(row)
    return SweepResult(records, summary)


def write_records_csv(records, path) -> None:
    rows = [r.row() for r in records]
    cols = list(dict.fromkeys(k for row in rows for k in row))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
