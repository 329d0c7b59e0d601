"""Cumulative quadrature for the linear model, carried out in log space.

With B(s) = int_0^s b, the quantities needed everywhere are

* transition factor   phi_i = exp(alpha (B(t_{i+1}) - B(t_i)))
* transition variance v_i   = int_{t_i}^{t_{i+1}} sigma(u)^2 exp(2 alpha int_u^{t_{i+1}} b) du
* second moment       m(t)  = E X_t^2 = exp(2 alpha B(t)) A(t),  A(t) = int_0^t sigma^2 exp(-2 alpha B)
* Fisher information  I(t)  = int_0^t b^2/sigma^2 m(s) ds

Each original interval is split into ``m`` equal sub-intervals (m even).
B is accumulated with 3-point Simpson on every sub-interval (using its
midpoint), A likewise, and I with composite Simpson over the m sub-intervals.
Everything is kept as logarithms so that horizons like t = 2^14 with
|alpha| = 2 do not overflow.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

from .expr import CoeffDomainError

LOG4 = np.log(4.0)


class NumericalError(ArithmeticError):
    """Non-finite quadrature; ``last_safe`` is the last grid node with finite values."""

    def __init__(self, message: str, last_safe: float | None = None):
        if last_safe is not None:
            message = f"{message} (last safe node t={last_safe!r})"
        super().__init__(message)
        self.last_safe = last_safe


def _log_accumulate(logs: np.ndarray) -> np.ndarray:
    """log(cumsum(exp(logs))) with a leading -inf (empty sum)."""
    out = np.empty(logs.size + 1)
    out[0] = -np.inf
    if logs.size:
        np.logaddexp.accumulate(logs, out=out[1:])
    return out


def cumulative_simpson(f, nodes, m: int = 8) -> np.ndarray:
    """int_0^{t_k} f at every node, composite Simpson with ``m`` sub-intervals per interval.

    ``f`` is a vectorised callable. Plain (linear-space) version for well-scaled integrands.
    """
    nodes = np.asarray(nodes, dtype=float)
    if m < 2 or m % 2:
        raise ValueError("m must be a positive even integer")
    if nodes.size < 2:
        return np.zeros(nodes.size)
    dt = np.diff(nodes)
    frac = np.arange(m + 1) / m
    pts = nodes[:-1, None] + dt[:, None] * frac[None, :]
    pts[:, -1] = nodes[1:]
    w = np.ones(m + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    vals = f(pts.ravel()).reshape(pts.shape)
    per = (vals @ w) * dt / (3.0 * m)
    return np.concatenate([[0.0], np.cumsum(per)])


class LinearMoments:
    """Log-space transition coefficients and Fisher information on a grid.

    Parameters
    ----------
    model : ModelSpec
        Only the linear part of the model is used.
    nodes : array
        Strictly increasing, ``nodes[0] = 0``, all ``< T``.
    m : int
        Even number of sub-intervals per interval.
    alpha : float, optional
        Overrides ``model.alpha``.
    """

    def __init__(self, model, nodes, m: int = 8, alpha: float | None = None):
        nodes = np.asarray(nodes, dtype=float)
        if m < 2 or m % 2:
            raise ValueError("m must be a positive even integer")
        if nodes.ndim != 1 or nodes.size < 1 or nodes[0] != 0.0:
            raise ValueError("nodes must start at 0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        self.nodes = nodes
        self.m = m
        self.alpha = float(model.alpha if alpha is None else alpha)
        n = nodes.size - 1
        self.n = n
        if n == 0:
            self._empty()
            return

        dt = np.diff(nodes)
        frac = np.arange(m + 1) / m
        fine = (nodes[:-1, None] + dt[:, None] * frac[None, :])
        fine[:, -1] = nodes[1:]
        u = np.concatenate([fine[:, :-1].ravel(), nodes[-1:]])   # N+1 fine nodes
        h = np.diff(u)
        mid = u[:-1] + 0.5 * h

        try:
            bu = np.asarray(model.b(u), dtype=float)
            bm = np.asarray(model.b(mid), dtype=float)
            su = np.asarray(model.sigma(u), dtype=float)
            sm = np.asarray(model.sigma(mid), dtype=float)
        except CoeffDomainError as exc:
            raise NumericalError(f"coefficient evaluation failed: {exc}",
                                 self._last_safe(exc.point)) from exc
        if np.any(su <= 0) or np.any(sm <= 0):
            bad = np.concatenate([u[su <= 0], mid[sm <= 0]]).min()
            raise NumericalError(f"sigma not positive at t={bad!r}", self._last_safe(bad))

        a = self.alpha
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            dB = h / 6.0 * (bu[:-1] + 4.0 * bm + bu[1:])
            Bu = np.concatenate([[0.0], np.cumsum(dB)])
            Bm = Bu[:-1] + 0.5 * h * (5.0 * bu[:-1] + 8.0 * bm - bu[1:]) / 12.0
            absb = np.abs(bu)
            dAbsB = h / 6.0 * (absb[:-1] + 4.0 * np.abs(bm) + absb[1:])
            lgu = 2.0 * np.log(su) - 2.0 * a * Bu
            lgm = 2.0 * np.log(sm) - 2.0 * a * Bm
            lG = np.logaddexp(np.logaddexp(lgu[:-1], LOG4 + lgm), lgu[1:]) + np.log(h / 6.0)
            logA_u = _log_accumulate(lG)
            logm_u = 2.0 * a * Bu + logA_u
            logf = 2.0 * np.log(absb) - 2.0 * np.log(su) + logm_u

        for arr in (Bu, lG, np.cumsum(dAbsB)):
            fin = np.isfinite(arr)
            if not np.all(fin):
                first = int(np.argmin(fin))
                raise NumericalError("non-finite quadrature", self._last_safe(u[min(first, u.size - 1)]))
        if np.any(np.isnan(logf)):
            first = int(np.argmax(np.isnan(logf)))
            raise NumericalError("non-finite quadrature", self._last_safe(u[first]))

        idx = np.arange(n + 1) * m
        self.B = Bu[idx]
        self.int_abs_b = np.concatenate([[0.0], np.cumsum(dAbsB)])[idx]
        self.log_phi = a * np.diff(self.B)
        self.log_v = 2.0 * a * self.B[1:] + logsumexp(lG.reshape(n, m), axis=1)
        self.log_A = logA_u[idx]
        self.log_m = logm_u[idx]

        w = np.ones(m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        lf = np.concatenate([logf[:-1].reshape(n, m), logf[m::m][:, None]], axis=1)
        with np.errstate(divide="ignore"):
            lI = logsumexp(lf + np.log(w)[None, :], axis=1) + np.log(dt / (3.0 * m))
        self.log_I_inc = lI
        self.log_I = _log_accumulate(lI)

        self.b_nodes = bu[idx]
        self.sigma_nodes = su[idx]

    def _empty(self):
        self.B = np.zeros(1)
        self.int_abs_b = np.zeros(1)
        self.log_phi = np.zeros(0)
        self.log_v = np.zeros(0)
        self.log_A = np.array([-np.inf])
        self.log_m = np.array([-np.inf])
        self.log_I = np.array([-np.inf])
        self.log_I_inc = np.zeros(0)
        self.b_nodes = np.zeros(0)
        self.sigma_nodes = np.zeros(0)

    def _last_safe(self, point):
        if point is None:
            return None
        safe = self.nodes[self.nodes < point]
        return float(safe[-1]) if safe.size else None

    @property
    def phi(self) -> np.ndarray:
        return np.exp(self.log_phi)

    @property
    def v(self) -> np.ndarray:
        return np.exp(self.log_v)

    @property
    def second_moment(self) -> np.ndarray:
        return np.exp(self.log_m)

    @property
    def fisher(self) -> np.ndarray:
        return np.exp(self.log_I)

    @property
    def energy(self) -> np.ndarray:
        """int_0^t sigma^2 exp(-2 alpha B) at the nodes."""
        return np.exp(self.log_A)
