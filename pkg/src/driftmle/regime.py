"""Numerical probes of the asymptotic conditions and a regime classifier.

Every probe looks at a quantity along a tail of probe times approaching T
(t = 2^k for T = inf, t = T(1 - 2^-k) otherwise) and returns ``holds``,
``fails`` or ``inconclusive``. These are heuristics with explicit
tolerances, not proofs; ``Unknown`` is a legitimate answer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .quadrature import LinearMoments, NumericalError

K_PROBES = 5
REL_TOL = 1e-2
DIVERGENCE_THRESHOLD = 1e3
C_FLOOR = 1e-8
LOG_DRIFT = 1.0
NORMAL_LEVEL = 1e-2

CONDITIONS = ("fisher-divergence", "c-limit", "b-integral-divergence", "energy-finite",
              "energy-divergent", "normal-vanishing")


class RegimeConflictError(RuntimeError):
    """Two regime rules matched; the condition sets are supposed to be disjoint."""


@dataclass
class ProbeGrid:
    """Quadrature nodes plus the indices of the probe times among them."""
    nodes: np.ndarray
    probe_index: np.ndarray
    m: int
    T: float
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.nodes[self.probe_index]

    def truncated(self, t_limit: float) -> "ProbeGrid":
        keep = self.nodes < t_limit
        nodes = self.nodes[keep]
        idx = self.probe_index[self.probe_index < nodes.size]
        return ProbeGrid(nodes, idx, self.m, self.T)


def tail_grid(T: float, k_max: int | None = None, per_unit: int = 8, per_halving: int = 32,
              m: int | None = None) -> ProbeGrid:
    """Probe grid: t = 2^0..2^14 for T = inf, t = T(1 - 2^-k), k = 1..20 for finite T."""
    if math.isinf(T):
        k_max = 14 if k_max is None else k_max
        nodes = np.arange(per_unit * 2 ** k_max + 1) / per_unit
        idx = per_unit * 2 ** np.arange(k_max + 1)
        return ProbeGrid(nodes, idx, 4 if m is None else m, T)
    k_max = 20 if k_max is None else k_max
    rho = 2.0 ** (-1.0 / per_halving)
    j = np.arange(per_halving * k_max + 1)
    nodes = T - T * rho ** j
    nodes[0] = 0.0
    idx = per_halving * np.arange(1, k_max + 1)
    return ProbeGrid(nodes, idx, 8 if m is None else m, T)


@dataclass
class ConditionProbe:
    id: str
    times: np.ndarray
    values: np.ndarray
    verdict: str
    estimate: float | None = None
    note: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "times": [float(t) for t in self.times],
             "values": [_json_real(v) for v in self.values], "verdict": self.verdict}
        if self.estimate is not None:
            d["estimate"] = _json_real(self.estimate)
        if self.note:
            d["note"] = self.note
        return d


def _json_real(v):
    v = float(v)
    if math.isfinite(v):
        return v
    return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")


@dataclass
class RegimeVerdict:
    regime: str                     # Singular, Cauchy, Normal, Unknown
    C: float | None = None
    sign: int | None = None
    probes: list[ConditionProbe] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    matched: list[str] = field(default_factory=list)

    def probe(self, cid: str) -> ConditionProbe:
        for p in self.probes:
            if p.id == cid:
                return p
        raise KeyError(cid)

    def to_dict(self) -> dict:
        d = {"regime": self.regime}
        if self.C is not None:
            d["C"] = self.C
            d["sign"] = self.sign
        d["probes"] = [p.to_dict() for p in self.probes]
        d["notes"] = list(self.notes)
        d["tolerances"] = {"K": K_PROBES, "rel_tol": REL_TOL,
                           "divergence_threshold": DIVERGENCE_THRESHOLD}
        return d


# --------------------------------------------------------------------------
# shared quadrature


def _moments(model: ModelSpec, alpha: float, tail: ProbeGrid):
    """(LinearMoments, grid actually used); shrinks the grid if coefficients blow up."""
    key = (model.b.text, model.sigma.text, model.T, float(alpha))
    if key in tail._cache:
        return tail._cache[key]
    grid = tail
    try:
        lm = LinearMoments(model, grid.nodes, grid.m, alpha=alpha)
    except NumericalError as exc:
        if exc.last_safe is None:
            raise
        grid = tail.truncated(exc.last_safe)
        if grid.probe_index.size < K_PROBES + 1:
            raise
        lm = LinearMoments(model, grid.nodes, grid.m, alpha=alpha)
    tail._cache[key] = (lm, grid)
    return lm, grid


def _tail_note(tail: ProbeGrid, grid: ProbeGrid) -> str | None:
    if grid.probe_index.size < tail.probe_index.size:
        return f"coefficients not finite beyond t={float(grid.nodes[-1])!r}; probes truncated"
    return None


def _log_c(model, alpha, lm, grid):
    idx = grid.probe_index
    b = np.asarray(model.b(grid.nodes[idx]), dtype=float)
    s = np.asarray(model.sigma(grid.nodes[idx]), dtype=float)
    with np.errstate(divide="ignore"):
        logc = np.log(np.abs(b)) - 2.0 * np.log(s) + 2.0 * alpha * lm.B[idx]
    return np.sign(b), logc


def _converged(v: np.ndarray) -> bool:
    w = v[-K_PROBES:]
    scale = np.max(np.abs(w))
    return bool(scale > 0 and np.all(np.isfinite(w)) and (np.max(w) - np.min(w)) <= REL_TOL * scale)


def _growing(v: np.ndarray) -> bool:
    w = v[-K_PROBES:]
    if not np.all(np.isfinite(w)) or w[0] <= 0:
        return bool(np.all(np.isinf(w[1:])) and w[-1] > 0)
    inc = np.diff(w) / w[1:]
    return bool(np.all(inc > REL_TOL))


def _divergence_verdict(v: np.ndarray) -> str:
    """holds = diverges; fails = converges; inconclusive otherwise."""
    if _growing(v):
        return "holds"
    if _converged(v):
        return "fails"
    if v[-1] > DIVERGENCE_THRESHOLD and v[-1] >= v[-K_PROBES]:
        return "holds"
    return "inconclusive"


# --------------------------------------------------------------------------
# probes


def probe_c_limit(model: ModelSpec, alpha: float, tail: ProbeGrid) -> ConditionProbe:
    """c(t) = b/sigma^2 exp(2 alpha int b) tends to a nonzero constant C."""
    lm, grid = _moments(model, alpha, tail)
    sgn, logc = _log_c(model, alpha, lm, grid)
    with np.errstate(over="ignore"):
        c = sgn * np.exp(logc)
    w, lw, sw = c[-K_PROBES:], logc[-K_PROBES:], sgn[-K_PROBES:]
    verdict, est = "inconclusive", None
    if np.all(sw == sw[-1]) and sw[-1] != 0 and _converged(w) and abs(w[-1]) > C_FLOOR:
        verdict, est = "holds", float(w[-1])
    else:
        with np.errstate(invalid="ignore"):
            d = np.diff(lw)
        if (np.all(d > 0) or np.all(d < 0)) and abs(lw[-1] - lw[0]) > LOG_DRIFT:
            verdict = "fails"
        elif np.all(np.isneginf(lw)):
            verdict = "fails"
    return ConditionProbe("c-limit", grid.times, c, verdict, est, _tail_note(tail, grid))


def probe_b_divergence(model: ModelSpec, tail: ProbeGrid, alpha: float | None = None) -> ConditionProbe:
    """int_0^t |b| tends to infinity."""
    lm, grid = _moments(model, model.alpha if alpha is None else alpha, tail)
    v = lm.int_abs_b[grid.probe_index]
    return ConditionProbe("b-integral-divergence", grid.times, v, _divergence_verdict(v),
                          note=_tail_note(tail, grid))


def probe_energy_integral(model: ModelSpec, alpha: float, tail: ProbeGrid) -> ConditionProbe:
    """int_0^t sigma^2 exp(-2 alpha int b) stays finite (holds) or diverges (fails)."""
    lm, grid = _moments(model, alpha, tail)
    with np.errstate(over="ignore"):
        v = np.exp(lm.log_A[grid.probe_index])
    div = _divergence_verdict(v)
    verdict = {"holds": "fails", "fails": "holds"}.get(div, div)
    est = float(v[-1]) if verdict == "holds" else None
    return ConditionProbe("energy-finite", grid.times, v, verdict, est, _tail_note(tail, grid))


def probe_fisher_divergence(model: ModelSpec, alpha: float, tail: ProbeGrid) -> ConditionProbe:
    lm, grid = _moments(model, alpha, tail)
    with np.errstate(over="ignore"):
        v = np.exp(lm.log_I[grid.probe_index])
    return ConditionProbe("fisher-divergence", grid.times, v, _divergence_verdict(v),
                          note=_tail_note(tail, grid))


def probe_normal_condition(model: ModelSpec, alpha: float, tail: ProbeGrid) -> ConditionProbe:
    """(1/sqrt(I)) (b/sigma^2) int_0^t sigma^2 exp(2 alpha int_s^t b) ds tends to 0."""
    lm, grid = _moments(model, alpha, tail)
    idx = grid.probe_index
    _, logc = _log_c(model, 0.0, lm, grid)     # log|b| - 2 log sigma
    with np.errstate(over="ignore", invalid="ignore"):
        logr = logc + lm.log_m[idx] - 0.5 * lm.log_I[idx]
        r = np.exp(logr)
    w = r[-K_PROBES:]
    verdict = "inconclusive"
    with np.errstate(invalid="ignore"):
        dw = np.diff(w)
    dec = bool(np.all(dw < 0))
    if dec and w[-1] < NORMAL_LEVEL:
        verdict = "holds"
    elif np.all(np.isfinite(w)) and (not dec or _converged(w)) and w[-1] >= NORMAL_LEVEL:
        if _converged(w) or np.all(dw >= 0):
            verdict = "fails"
    elif np.any(np.isinf(w)) and w[-1] > 0 and not dec:
        verdict = "fails"
    return ConditionProbe("normal-vanishing", grid.times, r, verdict, note=_tail_note(tail, grid))


# --------------------------------------------------------------------------
# classifier


def classify(model: ModelSpec, alpha: float | None = None, tail: ProbeGrid | None = None) -> RegimeVerdict:
    """First matching rule wins; a second match raises RegimeConflictError."""
    alpha = float(model.alpha if alpha is None else alpha)
    tail = tail_grid(model.T) if tail is None else tail
    lin = model.linearized() if not model.is_linear else model

    notes = []
    try:
        pc = probe_c_limit(lin, alpha, tail)
        pb = probe_b_divergence(lin, tail, alpha)
        pe = probe_energy_integral(lin, alpha, tail)
        pf = probe_fisher_divergence(lin, alpha, tail)
        pn = probe_normal_condition(lin, alpha, tail)
    except NumericalError as exc:
        return RegimeVerdict("Unknown", notes=[f"probe evaluation failed: {exc}"])
    probes = [pf, pc, pb, pe, pn]

    rules = [
        ("Singular", pc.verdict == "holds" and pb.verdict == "holds"),
        ("Cauchy", (pf.verdict == "holds" or pb.verdict == "holds") and pe.verdict == "holds"),
        ("Normal", pf.verdict == "holds" and pn.verdict == "holds"),
    ]
    matched = [name for name, ok in rules if ok]
    if len(matched) > 1:
        raise RegimeConflictError(f"regime rules {matched} all match for alpha={alpha}; "
                                  "tolerance artifact or bug")
    regime = matched[0] if matched else "Unknown"

    # under the c-limit the divergence probes must all agree
    if pc.verdict == "holds":
        agree = {pb.verdict, pf.verdict, {"holds": "fails", "fails": "holds"}.get(pe.verdict, pe.verdict)}
        if len(agree) > 1:
            notes.append("c-limit holds but divergence probes disagree: "
                         f"b={pb.verdict}, fisher={pf.verdict}, energy-finite={pe.verdict}")
    for p in probes:
        if p.note and p.note not in notes:
            notes.append(p.note)
    notes.append("continuity of b and sigma on [0,T) is assumed, not verified")

    C = sign = None
    if regime == "Singular":
        C = pc.estimate
        sign = 1 if C > 0 else -1
    if not model.is_linear:
        if regime == "Singular" and alpha != 0 and math.copysign(1, alpha) != sign:
            notes.append("sign(alpha) != sign(C): outside theorem hypotheses for the perturbed model")
            regime = "Unknown"
        elif regime in ("Cauchy", "Normal"):
            notes.append(f"linear conditions indicate {regime}; the perturbed result covers only the "
                         "singular case, so this is outside theorem hypotheses")
            regime = "Unknown"
        if regime == "Unknown":
            C = sign = None
    return RegimeVerdict(regime, C, sign, probes, notes, matched)
