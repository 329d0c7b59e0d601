"""Coefficient functions, model specifications, validation and the model registry."""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from .expr import CoeffDomainError, Expr, evaluate, is_zero, parse_expr


class ModelError(ValueError):
    """Invalid or inconsistent model definition."""


class OutOfDomainError(CoeffDomainError):
    pass


@dataclass(frozen=True)
class CoeffFn:
    """A parsed coefficient with its source text and domain.

    Time coefficients live on ``[0, T)``, state coefficients on the real line.
    """

    text: str
    variable: str = "t"
    horizon: float = math.inf
    expr: Expr = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.expr is None:
            object.__setattr__(self, "expr", parse_expr(self.text, self.variable))

    @property
    def is_time(self) -> bool:
        return self.variable == "t"

    def __call__(self, x):
        if self.is_time:
            xa = np.asarray(x, dtype=float)
            bad = (xa < 0) | (xa >= self.horizon)
            if np.any(bad):
                w = float(xa) if xa.ndim == 0 else float(xa[bad][0])
                raise OutOfDomainError(f"time outside [0, {self.horizon})", w)
        return evaluate(self.expr, x)

    def with_horizon(self, horizon: float) -> "CoeffFn":
        return CoeffFn(self.text, self.variable, horizon, self.expr)


def eval_expr(fn: CoeffFn, point: float) -> float:
    return fn(float(point))


@dataclass(frozen=True)
class ModelSpec:
    """Model dY = alpha b(t) a(Y) dt + sigma(t) dB on [0, T), Y_0 = 0, a(x) = x + r(x).

    ``r is None`` gives the linear model. ``L, gamma, M`` are the declared
    growth and Lipschitz constants of ``r``.
    """

    T: float
    b: CoeffFn
    sigma: CoeffFn
    alpha: float = 0.0
    r: CoeffFn | None = None
    L: float | None = None
    gamma: float | None = None
    M: float | None = None
    name: str = "custom"
    sigma2_tail: CoeffFn | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ModelError(f"horizon T must be positive, got {self.T}")
        if self.r is not None:
            if self.L is None or self.gamma is None or self.M is None:
                raise ModelError("perturbed model needs constants L, gamma and M")
            if self.L < 0 or self.M < 0 or not (0 <= self.gamma < 1):
                raise ModelError("need L >= 0, M >= 0 and gamma in [0, 1)")

    @property
    def is_linear(self) -> bool:
        return self.r is None

    @property
    def finite_horizon(self) -> bool:
        return math.isfinite(self.T)

    def with_alpha(self, alpha: float) -> "ModelSpec":
        return replace(self, alpha=float(alpha))

    def a(self, x):
        """Drift shape a(x) = x + r(x)."""
        if self.r is None:
            return np.asarray(x, dtype=float) if np.ndim(x) else float(x)
        return x + self.r(x)

    def linearized(self) -> "ModelSpec":
        """Same model with r removed."""
        return replace(self, r=None, L=None, gamma=None, M=None)


def make_model(b: str, sigma: str, T: float = math.inf, alpha: float = 0.0, r: str | None = None,
               L=None, gamma=None, M=None, name="custom", sigma2_tail: str | None = None) -> ModelSpec:
    """Build a ModelSpec from expression strings."""
    T = float(T)
    return ModelSpec(
        T=T,
        b=CoeffFn(b, "t", T),
        sigma=CoeffFn(sigma, "t", T),
        alpha=float(alpha),
        r=CoeffFn(r, "x") if r is not None else None,
        L=L, gamma=gamma, M=M, name=name,
        sigma2_tail=CoeffFn(sigma2_tail, "t", T) if sigma2_tail is not None else None,
    )


# --------------------------------------------------------------------------
# validation


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    witness: float | None = None
    evidence: str = "probed"


@dataclass
class ValidationReport:
    checks: list[Check]
    t0: float | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "t0": self.t0,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail,
                 "witness": c.witness, "evidence": c.evidence}
                for c in self.checks
            ],
            "notes": list(self.notes),
        }


def time_probes(T: float, count: int) -> np.ndarray:
    """Probe times in [0, T): a uniform block plus a geometric run toward T (or to 2^14)."""
    n_uni = count // 2
    n_geo = count - n_uni
    if math.isfinite(T):
        uni = np.linspace(0.0, T, n_uni, endpoint=False)
        geo = T * (1.0 - 2.0 ** -np.linspace(1.0, 20.0, n_geo))
    else:
        uni = np.linspace(0.0, 10.0, n_uni)
        geo = 2.0 ** np.linspace(0.0, 14.0, n_geo)
    return np.unique(np.concatenate([uni, geo]))


def state_probes(count: int, seed: int) -> np.ndarray:
    half = max(count // 2, 4)
    mag = np.logspace(-3, 6, half)
    rnd = np.random.default_rng(seed).normal(scale=3.0, size=count)
    return np.unique(np.concatenate([-mag, [0.0, -1.0, 1.0], mag, rnd]))


def _probe_values(fn: CoeffFn, pts: np.ndarray):
    """Evaluate pointwise; returns (values, first failing point or None)."""
    out = np.empty_like(pts)
    for i, p in enumerate(pts):
        try:
            out[i] = fn(float(p))
        except CoeffDomainError:
            return out[:i], float(p)
    return out, None


def validate_model(spec: ModelSpec, probe_count: int = 64, seed: int = 0) -> ValidationReport:
    """Probe the model hypotheses; failures are recorded in the report, never raised."""
    if probe_count < 16:
        raise ValueError("probe_count must be >= 16")
    checks: list[Check] = []
    notes = ["continuity of b and sigma on [0,T) is assumed, not verified"]
    ts = time_probes(spec.T, probe_count)

    sig, bad = _probe_values(spec.sigma, ts)
    if bad is not None:
        checks.append(Check("sigma-positive", False, "sigma not evaluable", bad))
    else:
        neg = sig <= 0
        if np.any(neg):
            checks.append(Check("sigma-positive", False, "sigma(t) <= 0", float(ts[neg][0])))
        else:
            checks.append(Check("sigma-positive", True, f"min sigma = {sig.min():.6g}"))

    bv, bad = _probe_values(spec.b, ts)
    t0 = None
    if bad is not None:
        checks.append(Check("b-evaluable", False, "b not evaluable", bad))
    else:
        zero = np.flatnonzero(bv == 0)
        if zero.size == 0:
            t0 = float(ts[0])
        elif zero[-1] + 1 < ts.size:
            t0 = float(ts[zero[-1] + 1])
        ok = t0 is not None
        checks.append(Check("b-nonzero-tail", ok,
                            f"b != 0 on probes beyond t0={t0}" if ok else "b vanishes at the last probe",
                            None if ok else float(ts[zero[-1]])))

    if spec.sigma2_tail is not None and spec.finite_horizon:
        checks.append(_check_sigma2_tail(spec, ts))

    if spec.r is not None:
        xs = state_probes(probe_count, seed)
        rv, bad = _probe_values(spec.r, xs)
        if bad is not None:
            checks.append(Check("r-evaluable", False, "r not evaluable", bad))
        else:
            bound = spec.L * (1.0 + np.abs(xs) ** spec.gamma)
            viol = np.abs(rv) > bound * (1.0 + 1e-12) + 1e-300
            checks.append(Check(
                "r-growth", not np.any(viol),
                f"|r(x)| <= {spec.L}(1+|x|^{spec.gamma}) on {xs.size} probes",
                float(xs[viol][0]) if np.any(viol) else None, "sampled evidence"))
            rng = np.random.default_rng(seed + 1)
            x1 = rng.choice(xs, size=4 * probe_count)
            d = rng.choice([-1.0, 1.0], size=x1.size) * np.logspace(-6, 2, x1.size)
            x2 = x1 + d
            try:
                r1 = spec.r(x1)
                r2 = spec.r(x2)
                q = np.abs(r1 - r2) / np.abs(x1 - x2)
                viol = q > spec.M * (1.0 + 1e-9) + 1e-12
                checks.append(Check(
                    "r-lipschitz", not np.any(viol),
                    f"max sampled quotient {q.max():.6g} vs M={spec.M}",
                    float(x1[viol][0]) if np.any(viol) else None, "sampled evidence"))
            except CoeffDomainError as exc:
                checks.append(Check("r-lipschitz", False, str(exc), exc.point, "sampled evidence"))
    return ValidationReport(checks, t0, notes)


def _check_sigma2_tail(spec: ModelSpec, ts: np.ndarray) -> Check:
    worst = 0.0
    where = None
    for t in ts[:: max(1, ts.size // 16)]:
        num, _ = integrate.quad(lambda u: spec.sigma(u) ** 2, t, spec.T, epsabs=0.0, epsrel=1e-10, limit=200)
        given = spec.sigma2_tail(float(t))
        rel = abs(given - num) / max(abs(num), 1e-300)
        if rel > worst:
            worst, where = rel, float(t)
    return Check("sigma2-tail", worst <= 1e-6,
                 f"max relative mismatch vs quadrature {worst:.3g}", where if worst > 1e-6 else None)


# --------------------------------------------------------------------------
# registry

# r(x) = -c/(1 + (x-c)^2), c = clamp(x, -1, 1): equals -x on [-1,1] and the
# two rational tails outside; a(x) = x + r(x) vanishes exactly on [-1, 1].
DIETZ_KUTOYANTS_R = "-max(-1, min(1, x)) / (1 + (x - max(-1, min(1, x)))^2)"

REGISTRY = ("ou", "remark27-finiteT", "remark27-alpha0", "luschgy-counterexample",
            "dietz-kutoyants", "perturbed-singular")


def registry_model(name: str, alpha: float = 0.0, T: float | None = None, sigma: str | None = None,
                   sigma2_tail: str | None = None) -> ModelSpec:
    """Named model families; ``alpha`` is the true parameter."""
    alpha = float(alpha)
    if name == "ou":
        return make_model("1", sigma or "1", math.inf if T is None else T, alpha, name="ou")
    if name == "remark27-finiteT":
        if alpha == 0:
            raise ModelError("remark27-finiteT needs alpha != 0 (use remark27-alpha0)")
        T = 1.0 if T is None else float(T)
        if not math.isfinite(T):
            raise ModelError("remark27-finiteT needs a finite horizon")
        sigma = sigma or "1"
        if sigma2_tail is None:
            if parse_expr(sigma, "t") == parse_expr("1", "t"):
                sigma2_tail = f"{T!r} - t"
            else:
                raise ModelError("remark27-finiteT with non-constant sigma needs the closed form of "
                                 "int_t^T sigma^2 (sigma2_tail)")
        b = f"-(({sigma})^2) / (2*({alpha!r})*({sigma2_tail}))"
        return make_model(b, sigma, T, alpha, name=name, sigma2_tail=sigma2_tail)
    if name == "remark27-alpha0":
        sigma = sigma or "1"
        return make_model(f"({sigma})^2", sigma, math.inf if T is None else T, alpha, name=name)
    if name == "luschgy-counterexample":
        return make_model("-exp(-t)", "1", math.inf if T is None else T, alpha, name=name)
    if name == "dietz-kutoyants":
        return make_model("1", "1", math.inf if T is None else T, alpha, r=DIETZ_KUTOYANTS_R,
                          L=0.5, gamma=0.0, M=1.0, name=name)
    if name == "perturbed-singular":
        return make_model("1", sigma or "exp(t)", math.inf if T is None else T, alpha,
                          r="0.5*sin(x)", L=0.5, gamma=0.0, M=0.5, name=name)
    raise ModelError(f"unknown model {name!r}; known: {', '.join(REGISTRY)}")


# --------------------------------------------------------------------------
# model files

MODEL_KEYS = {
    "model": {"name", "T", "alpha"},
    "coefficients": {"b", "sigma", "r", "sigma2_tail"},
    "constants": {"L", "gamma", "M"},
}


def _unquote(v: str) -> str:
    v = v.strip()
    if len(v) >= 2 and v[0] == v[-1] and v[0] in "\"'":
        return v[1:-1]
    return v


def parse_real(v: str) -> float:
    v = _unquote(v).strip().lower()
    if v in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def model_from_sections(sections: dict[str, dict[str, str]], overrides: dict | None = None) -> ModelSpec:
    """Model from parsed config sections; unknown keys are rejected."""
    for sec, keys in MODEL_KEYS.items():
        extra = set(sections.get(sec, {})) - keys
        if extra:
            raise ModelError(f"unknown key(s) in [{sec}]: {', '.join(sorted(extra))}")
    m = dict(sections.get("model", {}))
    co = {k: _unquote(v) for k, v in sections.get("coefficients", {}).items()}
    cs = {k: parse_real(v) for k, v in sections.get("constants", {}).items()}
    ov = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = _unquote(ov.get("name", m.get("name", "custom")))
    alpha = float(ov.get("alpha", parse_real(m["alpha"]) if "alpha" in m else 0.0))
    T = ov.get("T", parse_real(m["T"]) if "T" in m else None)
    sigma = ov.get("sigma", co.get("sigma"))
    if name in REGISTRY and "b" not in co:
        spec = registry_model(name, alpha, T, sigma, ov.get("sigma2_tail", co.get("sigma2_tail")))
        if "r" in co:
            spec = replace(spec, r=CoeffFn(co["r"], "x"), L=cs.get("L"), gamma=cs.get("gamma"), M=cs.get("M"))
        return spec
    if "b" not in co or sigma is None:
        raise ModelError("model needs coefficients b and sigma (or a registry name)")
    return make_model(co["b"], sigma, math.inf if T is None else T, alpha, r=co.get("r"),
                      L=cs.get("L"), gamma=cs.get("gamma"), M=cs.get("M"), name=name,
                      sigma2_tail=co.get("sigma2_tail"))


def read_config(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    return {s: dict(cp.items(s)) for s in cp.sections()}


def load_model(path, **overrides) -> ModelSpec:
    return model_from_sections(read_config(path), overrides)


def model_to_text(spec: ModelSpec) -> str:
    lines = ["[model]", f'name = "{spec.name}"',
             f"T = {'inf' if not spec.finite_horizon else repr(spec.T)}",
             f"alpha = {spec.alpha!r}", "", "[coefficients]",
             f'b = "{spec.b.text}"', f'sigma = "{spec.sigma.text}"']
    if spec.sigma2_tail is not None:
        lines.append(f'sigma2_tail = "{spec.sigma2_tail.text}"')
    if spec.r is not None:
        lines += [f'r = "{spec.r.text}"', "", "[constants]",
                  f"L = {spec.L!r}", f"gamma = {spec.gamma!r}", f"M = {spec.M!r}"]
    return "\n".join(lines) + "\n"


def r_is_zero(spec: ModelSpec) -> bool:
    return spec.r is not None and is_zero(spec.r.expr)
