"""Generalized Gronwall bound and the martingale strong-law diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GronwallInstance:
    s: np.ndarray
    phi: np.ndarray
    psi1: np.ndarray
    dpsi1: np.ndarray   # derivative of psi1, supplied analytically
    psi2: np.ndarray

    def __post_init__(self):
        for name in ("s", "phi", "psi1", "dpsi1", "psi2"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.s.size
        if n < 2:
            raise ValueError("grid needs at least 2 nodes")
        if any(getattr(self, k).shape != (n,) for k in ("phi", "psi1", "dpsi1", "psi2")):
            raise ValueError("all samples must match the grid length")
        if np.any(np.diff(self.s) < 0):
            raise ValueError("grid must be nondecreasing")
        if np.any(self.phi < 0) or np.any(self.psi2 < 0):
            raise ValueError("phi and psi2 must be nonnegative")


@dataclass
class GronwallReport:
    bound: np.ndarray
    hypothesis_rhs: np.ndarray      # psi1 + int psi2 phi
    hypothesis_holds: np.ndarray    # per node
    dominated: np.ndarray           # phi <= bound + tol, per node
    tolerance: float

    @property
    def ok(self) -> bool:
        """Conclusion verified wherever the hypothesis holds."""
        return bool(np.all(self.dominated | ~self.hypothesis_holds))

    @property
    def hypothesis_ok(self) -> bool:
        return bool(np.all(self.hypothesis_holds))


def _cumtrapz(f, s):
    out = np.zeros_like(s)
    out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s))
    return out


def _bound(s, psi1, dpsi1, psi2):
    P = _cumtrapz(psi2, s)
    # int_{s0}^{s} psi1'(u) exp(P(s) - P(u)) du, exponent kept relative to P(s)
    g = dpsi1 * np.exp(-P)
    return psi1[0] * np.exp(P) + np.exp(P) * _cumtrapz(g, s)


def gronwall_bound(inst: GronwallInstance, rtol: float = 1e-8) -> GronwallReport:
    """Evaluate the bound psi1(s0) e^{int psi2} + int psi1' e^{int_u^s psi2} du on the grid.

    Both the hypothesis check and the domination check allow ``rtol * scale``
    plus twice a Richardson estimate of the trapezoid error (grid vs. every
    other node).
    """
    s, phi = inst.s, inst.phi
    rhs = inst.psi1 + _cumtrapz(inst.psi2 * phi, s)
    bound = _bound(s, inst.psi1, inst.dpsi1, inst.psi2)
    scale = float(np.max(np.abs(bound))) or 1.0
    q_bound = q_rhs = 0.0
    if s.size >= 5:
        c = slice(None, None, 2)
        coarse = _bound(s[c], inst.psi1[c], inst.dpsi1[c], inst.psi2[c])
        q_bound = float(np.max(np.abs(coarse - bound[c]))) / 3.0
        coarse = inst.psi1[c] + _cumtrapz(inst.psi2[c] * phi[c], s[c])
        q_rhs = float(np.max(np.abs(coarse - rhs[c]))) / 3.0
    tol = rtol * scale + 2.0 * q_bound
    hyp = phi <= rhs + rtol * max(scale, float(np.max(np.abs(rhs)))) + 2.0 * q_rhs
    dom = phi <= bound + tol
    return GronwallReport(bound, rhs, hyp, dom, tol)


def gronwall_equality_solution(s, psi1, psi2) -> np.ndarray:
    """phi with phi = psi1 + int psi2 phi (trapezoid), by forward recursion."""
    s = np.asarray(s, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    phi = np.empty_like(s)
    phi[0] = psi1[0]
    acc = 0.0
    for k in range(1, s.size):
        h = s[k] - s[k - 1]
        den = 1.0 - 0.5 * h * psi2[k]
        if den <= 0:
            raise ValueError("step too large for the implicit trapezoid recursion")
        phi[k] = (psi1[k] + acc + 0.5 * h * psi2[k - 1] * phi[k - 1]) / den
        acc += 0.5 * h * (psi2[k - 1] * phi[k - 1] + psi2[k] * phi[k])
    return phi


def slln_diagnostic(m_values, qv_values) -> np.ma.MaskedArray:
    """M_t / <M>_t where <M>_t > 0, masked elsewhere."""
    m = np.asarray(m_values, dtype=float)
    qv = np.asarray(qv_values, dtype=float)
    if m.shape != qv.shape:
        raise ValueError("martingale and quadratic variation shapes differ")
    if np.any(np.diff(qv, axis=-1) < 0):
        raise ValueError("quadratic variation must be nondecreasing")
    ok = qv > 0
    out = np.zeros_like(m)
    np.divide(m, qv, out=out, where=ok)
    return np.ma.array(out, mask=~ok)


def mle_martingale(series, alpha: float):
    """(M, <M>) with alpha_hat - alpha = M/<M>: M = numerator - alpha*denominator."""
    return series.numerator - alpha * series.denominator, series.denominator
