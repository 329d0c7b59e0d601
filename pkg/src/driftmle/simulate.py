"""Time grids and the path samplers built on Wiener increments.

The linear model is sampled with exact Gaussian transitions
X_{i+1} = phi_i X_i + sqrt(v_i) z_i (see :mod:`driftmle.quadrature`); the
perturbed model with Euler-Maruyama using left-endpoint coefficients.
Batch samplers return one row per replicate; row ``k`` uses normal stream
``streams[k]``, so any subset of replicates can be regenerated on its own.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .expr import CoeffDomainError, compile_program, stack_depth
from .model import ModelSpec
from .quadrature import LinearMoments, NumericalError
from .rng import SeedSpec, normal_block, standard_normals

OVERFLOW_LIMIT = 1e12


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    nodes: np.ndarray
    tag: str
    params: dict = field(default_factory=dict)
    T: float = math.inf

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1 or nodes[0] != 0.0:
            raise GridError("grid must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise GridError("grid nodes must be strictly increasing")
        if nodes[-1] >= self.T:
            raise GridError(f"grid reaches T={self.T}")
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n(self) -> int:
        """Number of intervals."""
        return self.nodes.size - 1

    def index_at(self, t: float, rtol: float = 1e-9) -> int:
        """Index of the last node <= t (within a relative tolerance)."""
        k = int(np.searchsorted(self.nodes, t * (1 + rtol) + rtol, side="right")) - 1
        if k < 0:
            raise GridError(f"t={t} precedes the grid")
        return k

    def __len__(self):
        return self.nodes.size


def make_grid(kind: str, *, h: float | None = None, t_max: float | None = None, T: float = math.inf,
              rho: float | None = None, count: int | None = None, delta: float | None = None) -> TimeGrid:
    """Build a grid.

    ``uniform`` / ``uniform-unbounded``: nodes k*h up to t_max (< T).
    ``geometric``: nodes T - T*rho^k, k = 0..count-1; without ``count`` the
    grid runs to the hard stop T - delta (default delta = 2^-20 T), which is
    always the last node.
    """
    if kind in ("uniform", "uniform-unbounded"):
        if h is None or not h > 0:
            raise GridError("uniform grid needs h > 0")
        if t_max is None or not t_max >= 0:
            raise GridError("uniform grid needs t_max >= 0")
        if kind == "uniform-unbounded":
            T = math.inf
        if not t_max < T:
            raise GridError(f"t_max={t_max} must be < T={T}")
        steps = t_max / h
        k = int(round(steps)) if abs(steps - round(steps)) < 1e-9 * max(1.0, steps) else int(math.floor(steps))
        nodes = h * np.arange(k + 1)
        return TimeGrid(nodes, kind, {"h": h, "t_max": t_max}, T)
    if kind in ("geometric", "geometric-to-T"):
        if not math.isfinite(T):
            raise GridError("geometric grid needs a finite T")
        if rho is None or not 0 < rho < 1:
            raise GridError("geometric grid needs rho in (0, 1)")
        if delta is None:
            delta = 2.0 ** -20 * T
        if not 0 < delta < T:
            raise GridError("delta must lie in (0, T)")
        stop = count is None
        if stop:
            count = int(math.floor(math.log(delta / T) / math.log(rho) + 1e-9)) + 1
        if count < 1:
            raise GridError("count must be >= 1")
        nodes = T - T * rho ** np.arange(count)
        nodes[0] = 0.0
        nodes = nodes[nodes <= T - delta * (1 - 1e-12)]
        if stop and nodes[-1] < (T - delta) * (1 - 1e-15):
            nodes = np.append(nodes, T - delta)     # hard stop
        return TimeGrid(nodes, "geometric", {"rho": rho, "count": int(nodes.size), "delta": delta}, T)
    raise GridError(f"unknown grid kind {kind!r}")


def refine_grid(grid: TimeGrid, factor: int) -> TimeGrid:
    """Split every interval into ``factor`` equal parts."""
    dt = grid.dt
    frac = np.arange(factor) / factor
    inner = (grid.nodes[:-1, None] + dt[:, None] * frac[None, :]).ravel()
    nodes = np.concatenate([inner, grid.nodes[-1:]])
    return TimeGrid(nodes, grid.tag + f"/refined{factor}", dict(grid.params), grid.T)


@dataclass
class Path:
    grid: TimeGrid
    values: np.ndarray
    wiener_increments: np.ndarray
    kind: str
    diagnostic: str | None = None

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes[: self.values.size]


# --------------------------------------------------------------------------
# noise


def wiener_increments(grid: TimeGrid, seed: SeedSpec) -> np.ndarray:
    z = standard_normals(seed.base_seed, seed.stream, grid.n)
    return np.sqrt(grid.dt) * z


def simulate_wiener(grid: TimeGrid, seed: SeedSpec) -> Path:
    db = wiener_increments(grid, seed)
    w = np.concatenate([[0.0], np.cumsum(db)])
    return Path(grid, w, db, "wiener")


# --------------------------------------------------------------------------
# linear model


def _check_grid(model: ModelSpec, grid: TimeGrid):
    if grid.nodes[-1] >= model.T:
        raise GridError(f"grid end {grid.nodes[-1]} not below model horizon T={model.T}")


def linear_coefficients(model: ModelSpec, grid: TimeGrid, scheme: str = "exact", m: int = 8):
    """Per-interval (phi, scale) with X_{i+1} = phi_i X_i + scale_i z_i."""
    _check_grid(model, grid)
    if scheme == "exact":
        lm = LinearMoments(model, grid.nodes, m)
        return lm.phi, np.sqrt(lm.v)
    if scheme == "euler":
        t = grid.nodes[:-1]
        try:
            b = np.asarray(model.b(t), dtype=float)
            s = np.asarray(model.sigma(t), dtype=float)
        except CoeffDomainError as exc:
            raise NumericalError(str(exc)) from exc
        return 1.0 + model.alpha * b * grid.dt, s * np.sqrt(grid.dt)
    raise ValueError(f"unknown scheme {scheme!r}")


def linear_paths(model: ModelSpec, grid: TimeGrid, base_seed: int, streams, scheme: str = "exact",
                 m: int = 8, coeffs=None):
    """Batch of linear-model paths. Returns (X, dB), both with one row per stream."""
    if not model.is_linear:
        raise ValueError("linear sampler needs a model without r")
    phi, scale = coeffs if coeffs is not None else linear_coefficients(model, grid, scheme, m)
    z = normal_block(base_seed, streams, grid.n)
    x = np.empty((z.shape[0], grid.n + 1))
    kernels.linear_recursion(np.ascontiguousarray(phi), np.ascontiguousarray(scale), z, x)
    db = z * np.sqrt(grid.dt)[None, :]
    return x, db


def simulate_linear_exact(model: ModelSpec, grid: TimeGrid, seed: SeedSpec, m: int = 8) -> Path:
    x, db = linear_paths(model, grid, seed.base_seed, [seed.stream], "exact", m)
    return Path(grid, x[0], db[0], "linear-exact")


def simulate_linear_euler(model: ModelSpec, grid: TimeGrid, seed: SeedSpec) -> Path:
    x, db = linear_paths(model, grid, seed.base_seed, [seed.stream], "euler")
    return Path(grid, x[0], db[0], "linear-euler")


# --------------------------------------------------------------------------
# perturbed model


def _r_program(model: ModelSpec):
    ops, consts = compile_program(model.r.expr)
    if stack_depth(model.r.expr) > 60:
        raise ValueError("expression for r is nested too deeply")
    return ops, consts


def perturbed_from_increments(model: ModelSpec, grid: TimeGrid, db: np.ndarray):
    """Euler-Maruyama driven by given increments (rows). Returns (Y, valid)."""
    if model.r is None:
        raise ValueError("perturbed sampler needs r; use the exact sampler for the linear model")
    _check_grid(model, grid)
    t = grid.nodes[:-1]
    b = np.ascontiguousarray(model.b(t), dtype=float)
    s = np.ascontiguousarray(model.sigma(t), dtype=float)
    db = np.ascontiguousarray(np.atleast_2d(db), dtype=float)
    y = np.empty((db.shape[0], grid.n + 1))
    ops, consts = _r_program(model)
    valid, bad = kernels.em_perturbed(float(model.alpha), np.broadcast_to(b, t.shape).copy(),
                                      np.broadcast_to(s, t.shape).copy(), np.ascontiguousarray(grid.dt),
                                      db, ops, consts, y, OVERFLOW_LIMIT)
    if not math.isnan(bad):
        raise CoeffDomainError("r not finite", bad)
    return y, np.asarray(valid)


def perturbed_paths(model: ModelSpec, grid: TimeGrid, base_seed: int, streams):
    """Batch of EM paths. Returns (Y, dB, valid); rows past an overflow are NaN."""
    z = normal_block(base_seed, streams, grid.n)
    db = z * np.sqrt(grid.dt)[None, :]
    y, valid = perturbed_from_increments(model, grid, db)
    return y, db, valid


def simulate_perturbed_em(model: ModelSpec, grid: TimeGrid, seed: SeedSpec) -> Path:
    if model.r is None:
        raise ValueError("perturbed sampler needs r; use simulate_linear_exact for the linear model")
    y, db, valid = perturbed_paths(model, grid, seed.base_seed, [seed.stream])
    k = int(valid[0])
    diag = None
    if k < grid.n + 1:
        diag = f"overflow: |Y| > {OVERFLOW_LIMIT:g} after t={grid.nodes[k - 1]!r}; path truncated"
    return Path(grid, y[0, :k], db[0], "perturbed-em", diag)


# --------------------------------------------------------------------------
# CSV


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def path_to_csv(path: Path, include_db: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "value", "dB"] if include_db else ["t", "value"])
    db = path.wiener_increments
    for i, (t, v) in enumerate(zip(path.t, path.values)):
        row = [fmt(t), fmt(v)]
        if include_db:
            row.append(fmt(db[i]) if i < db.size else "")
        w.writerow(row)
    return buf.getvalue()


def path_from_csv(text: str, T: float = math.inf, kind: str = "linear-exact") -> Path:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][:2] != ["t", "value"]:
        raise ValueError("path CSV needs header 't,value[,dB]'")
    body = [r for r in rows[1:] if r]
    t = np.array([float(r[0]) for r in body])
    v = np.array([float(r[1]) for r in body])
    if len(rows[0]) > 2 and rows[0][2] == "dB":
        db = np.array([float(r[2]) for r in body[:-1]])
    else:
        db = np.full(max(t.size - 1, 0), np.nan)
    grid = TimeGrid(t, "file", {}, T)
    return Path(grid, v, db, kind)
