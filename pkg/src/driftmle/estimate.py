"""Drift MLE and the Fisher information used to normalise its error.

For observations of X (linear model) or Y (perturbed model, a = id + r) on
a grid, the MLE is the ratio of an Ito sum and a Riemann sum::

    num_k = sum_{i<k} b_i V_i / sigma_i^2 (Z_{i+1} - Z_i)
    den_k = sum_{i<k} b_i^2 V_i^2 / sigma_i^2 (t_{i+1} - t_i)

with Z the observed path and V = Z (linear) or V = a(Z) (perturbed), all
coefficients at the left endpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import ModelSpec
from .quadrature import LinearMoments
from .simulate import Path, TimeGrid, perturbed_paths


class GridMismatchError(ValueError):
    pass


@dataclass
class MleSeries:
    t: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray

    @property
    def defined(self) -> np.ndarray:
        return self.denominator > 0

    @property
    def alpha_hat(self) -> np.ma.MaskedArray:
        d = self.defined
        vals = np.zeros_like(self.numerator)
        np.divide(self.numerator, self.denominator, out=vals, where=d)
        return np.ma.array(vals, mask=~d)

    def final(self) -> float | None:
        """alpha_hat at the last node, or None if undefined."""
        return float(self.numerator[-1] / self.denominator[-1]) if self.denominator[-1] > 0 else None


@dataclass
class FisherSeries:
    t: np.ndarray
    I: np.ndarray
    method: str = "deterministic-quadrature"
    stderr: np.ndarray | None = None
    n_paths: int | None = None
    diagnostic: str | None = None


def mle_weights(model: ModelSpec, nodes: np.ndarray):
    """Left-endpoint weights (b/sigma^2, b^2/sigma^2 dt) per interval."""
    t = nodes[:-1]
    b = np.broadcast_to(np.asarray(model.b(t), dtype=float), t.shape)
    s = np.broadcast_to(np.asarray(model.sigma(t), dtype=float), t.shape)
    w1 = b / (s * s)
    w2 = b * b / (s * s) * np.diff(nodes)
    return np.ascontiguousarray(w1), np.ascontiguousarray(w2)


def mle_sums_batch(v: np.ndarray, x: np.ndarray, w1: np.ndarray, w2: np.ndarray):
    v = np.ascontiguousarray(np.atleast_2d(v), dtype=float)
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=float)
    num = np.empty_like(x)
    den = np.empty_like(x)
    kernels.mle_sums(v, x, w1, w2, num, den)
    return num, den


def mle_linear(path: Path, model: ModelSpec) -> MleSeries:
    """MLE series from a linear-model (or Wiener) path."""
    if path.kind not in ("linear-exact", "linear-euler", "wiener"):
        raise ValueError(f"mle_linear needs a linear or wiener path, got {path.kind!r}")
    if not model.is_linear:
        raise ValueError("mle_linear needs a linear model")
    nodes = path.t
    if nodes[-1] >= model.T:
        raise GridMismatchError("path extends beyond the model horizon")
    w1, w2 = mle_weights(model, nodes)
    num, den = mle_sums_batch(path.values, path.values, w1, w2)
    return MleSeries(nodes.copy(), num[0], den[0])


def mle_perturbed(path: Path, model: ModelSpec) -> MleSeries:
    """MLE series from a perturbed-model path (weights use a(Y) = Y + r(Y))."""
    if model.r is None:
        raise ValueError("mle_perturbed needs a model with r")
    nodes = path.t
    if nodes[-1] >= model.T:
        raise GridMismatchError("path extends beyond the model horizon")
    w1, w2 = mle_weights(model, nodes)
    ay = model.a(path.values)
    num, den = mle_sums_batch(ay, path.values, w1, w2)
    return MleSeries(nodes.copy(), num[0], den[0])


def second_moment_linear(model: ModelSpec, t: float, intervals: int = 256, m: int = 8) -> float:
    """E X_t^2 for the linear model, by single-pass cumulative quadrature."""
    if t < 0 or t >= model.T:
        raise ValueError(f"t={t} outside [0, T)")
    if t == 0:
        return 0.0
    nodes = np.linspace(0.0, t, intervals + 1)
    return float(LinearMoments(model, nodes, m).second_moment[-1])


def fisher_linear(model: ModelSpec, grid: TimeGrid | np.ndarray, m: int = 8) -> FisherSeries:
    nodes = grid.nodes if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    lm = LinearMoments(model, nodes, m)
    return FisherSeries(nodes.copy(), lm.fisher)


def fisher_perturbed_mc(model: ModelSpec, grid: TimeGrid, n_paths: int, base_seed: int,
                        stream_offset: int = 0, chunk: int = 128) -> FisherSeries:
    """Monte Carlo I_Y(t) = int_0^t b^2/sigma^2 E a(Y_s)^2 ds with per-node standard error.

    Each path's integral is accumulated with the trapezoid rule; the mean and
    its standard error are taken across paths.
    """
    if model.r is None:
        raise ValueError("fisher_perturbed_mc needs a model with r")
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    nodes = grid.nodes
    bb = np.broadcast_to(np.asarray(model.b(nodes), dtype=float), nodes.shape)
    ss = np.broadcast_to(np.asarray(model.sigma(nodes), dtype=float), nodes.shape)
    c = bb * bb / (ss * ss)
    dt = grid.dt
    s1 = np.zeros(nodes.size)
    s2 = np.zeros(nodes.size)
    n_over = 0
    n_ok = np.zeros(nodes.size)
    for start in range(0, n_paths, chunk):
        streams = range(stream_offset + start, stream_offset + min(start + chunk, n_paths))
        y, _, valid = perturbed_paths(model, grid, base_seed, streams)
        n_over += int(np.sum(valid < nodes.size))
        f = c[None, :] * model.a(np.nan_to_num(y)) ** 2
        ip = np.zeros_like(f)
        np.cumsum(0.5 * (f[:, 1:] + f[:, :-1]) * dt[None, :], axis=1, out=ip[:, 1:])
        alive = np.arange(nodes.size)[None, :] < valid[:, None]
        ip = np.where(alive, ip, 0.0)
        s1 += ip.sum(axis=0)
        s2 += (ip * ip).sum(axis=0)
        n_ok += alive.sum(axis=0)
    mean = s1 / np.maximum(n_ok, 1)
    var = np.maximum(s2 / np.maximum(n_ok, 1) - mean * mean, 0.0) * n_ok / np.maximum(n_ok - 1, 1)
    se = np.sqrt(var / np.maximum(n_ok, 1))
    diag = f"{n_over} of {n_paths} paths overflowed" if n_over else None
    return FisherSeries(nodes.copy(), mean, f"monte-carlo({n_paths})", se, n_paths, diag)


MODES = ("fisher-sqrt", "random-normalization", "t-times-alpha-hat", "raw-alpha-hat")


def normalized_error(series: MleSeries, fisher: FisherSeries | None, alpha: float,
                     mode: str = "fisher-sqrt") -> np.ma.MaskedArray:
    """Normalised estimation error along the grid (masked where alpha_hat is undefined)."""
    ah = series.alpha_hat
    if mode == "fisher-sqrt":
        if fisher is None:
            raise ValueError("fisher-sqrt mode needs a FisherSeries")
        if fisher.t.shape != series.t.shape or not np.array_equal(fisher.t, series.t):
            raise GridMismatchError("MLE and Fisher series are on different grids")
        return np.sqrt(fisher.I) * (ah - alpha)
    if mode == "random-normalization":
        return np.sqrt(series.denominator) * (ah - alpha)
    if mode == "t-times-alpha-hat":
        return series.t * ah
    if mode == "raw-alpha-hat":
        return ah
    raise ValueError(f"unknown mode {mode!r}")


def delta_path(y_path: Path, model: ModelSpec) -> np.ndarray:
    """Delta_t = alpha int_0^t r(Y_s) b(s) exp(alpha int_s^t b) ds along the path (left endpoint)."""
    if model.r is None:
        raise ValueError("delta_path needs a model with r")
    nodes = y_path.t
    if model.alpha == 0:
        return np.zeros(nodes.size)
    lm = LinearMoments(model, nodes, 8)
    phi = lm.phi
    t = nodes[:-1]
    b = np.broadcast_to(np.asarray(model.b(t), dtype=float), t.shape)
    ry = np.asarray(model.r(y_path.values[:-1]), dtype=float)
    src = model.alpha * ry * b * np.diff(nodes)
    d = np.zeros(nodes.size)
    for i in range(nodes.size - 1):
        d[i + 1] = phi[i] * (d[i] + src[i])
    return d
