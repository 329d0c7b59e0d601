"""Seeded Monte Carlo experiments with Kolmogorov-Smirnov verdicts.

Replicate ``k`` always uses normal stream ``k`` of the experiment's base
seed. Work is cut into fixed chunks of replicates; chunks may run on any
number of threads but results are merged in replicate order, so the output
does not depend on the worker count.
"""

from __future__ import annotations

import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .estimate import fisher_linear, fisher_perturbed_mc, mle_sums_batch, mle_weights
from .limitlaws import (LimitLaw, OracleError, boundary_crossing_prob, cauchy_law, dickey_fuller_law,
                        ks_statistic, normal_law, read_oracle)
from .model import ModelSpec, registry_model
from .simulate import TimeGrid, linear_coefficients, linear_paths, make_grid, perturbed_paths

CHUNK = 128
FISHER_STREAM_OFFSET = 2 ** 32
QUANTILES = (1, 5, 25, 50, 75, 95, 99)
MODES = ("fisher-sqrt", "random-normalization", "t-times-alpha-hat", "raw-alpha-hat")
TARGETS = ("normal", "cauchy", "zeta", "+zeta/sqrt2", "-zeta/sqrt2")
DEFAULT_ORACLE = os.path.join("oracles", "zeta-main.bin")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class StatSpec:
    mode: str
    target: str | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ExperimentError(f"unknown statistic mode {self.mode!r}")
        if self.target is not None and self.target not in TARGETS:
            raise ExperimentError(f"unknown target law {self.target!r}; known: {', '.join(TARGETS)}")

    @classmethod
    def parse(cls, text: str) -> "StatSpec":
        """'mode[:target[:threshold]]'"""
        parts = [p.strip() for p in text.split(":")]
        if not 1 <= len(parts) <= 3:
            raise ExperimentError(f"bad statistic {text!r}")
        th = float(parts[2]) if len(parts) == 3 else None
        return cls(parts[0], parts[1] if len(parts) > 1 and parts[1] else None, th)

    def text(self) -> str:
        s = self.mode
        if self.target:
            s += ":" + self.target
            if self.threshold is not None:
                s += ":" + repr(self.threshold)
        return s


@dataclass(frozen=True)
class ExperimentSpec:
    model: ModelSpec
    horizons: tuple
    n_replicates: int
    grid: dict                       # {"kind": "uniform", "h": ...} or {"kind": "geometric", "rho", "delta"}
    statistics: tuple = ()
    base_seed: int = 0
    estimator: str = "linear"
    scheme: str = "exact"
    m: int = 8                       # Simpson subrefinement
    fisher_paths: int = 500
    oracle: str | None = None
    name: str = "experiment"

    def __post_init__(self):
        hs = tuple(float(t) for t in self.horizons)
        object.__setattr__(self, "horizons", hs)
        stats = tuple(s if isinstance(s, StatSpec) else StatSpec.parse(s) for s in self.statistics)
        object.__setattr__(self, "statistics", stats)
        if not hs:
            raise ExperimentError("need at least one horizon")
        if any(not (0 < t < self.model.T) for t in hs):
            raise ExperimentError(f"horizons must lie in (0, T={self.model.T})")
        if self.n_replicates < 1:
            raise ExperimentError("n_replicates must be >= 1")
        if any(s.target for s in stats) and self.n_replicates < 100:
            raise ExperimentError("KS runs need n_replicates >= 100")
        if self.estimator not in ("linear", "perturbed"):
            raise ExperimentError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "linear" and not self.model.is_linear:
            raise ExperimentError("linear estimator needs a model without r")
        if self.estimator == "perturbed" and self.model.is_linear:
            raise ExperimentError("perturbed estimator needs a model with r")
        if self.scheme not in ("exact", "euler"):
            raise ExperimentError(f"unknown scheme {self.scheme!r}")

    def build_grid(self) -> TimeGrid:
        g = dict(self.grid)
        kind = g.pop("kind", "uniform")
        if kind in ("uniform", "uniform-unbounded"):
            return make_grid(kind, h=g["h"], t_max=max(self.horizons), T=self.model.T)
        if kind in ("geometric", "geometric-to-T"):
            grid = make_grid("geometric", rho=g["rho"], T=self.model.T, delta=g.get("delta"))
            if max(self.horizons) > grid.nodes[-1] * (1 + 1e-12):
                raise ExperimentError(f"horizon beyond the grid end {grid.nodes[-1]!r}")
            return grid
        raise ExperimentError(f"unknown grid kind {kind!r}")

    def to_dict(self) -> dict:
        m = self.model
        model = {"name": m.name, "T": "inf" if math.isinf(m.T) else m.T, "alpha": m.alpha,
                 "b": m.b.text, "sigma": m.sigma.text}
        if m.r is not None:
            model.update(r=m.r.text, L=m.L, gamma=m.gamma, M=m.M)
        d = {"name": self.name, "model": model, "horizons": list(self.horizons),
             "n_replicates": self.n_replicates, "grid": dict(self.grid), "m": self.m,
             "statistics": [s.text() for s in self.statistics], "base_seed": self.base_seed,
             "estimator": self.estimator, "scheme": self.scheme}
        if self.estimator == "perturbed" and any(s.mode == "fisher-sqrt" for s in self.statistics):
            d["fisher_paths"] = self.fisher_paths
        return d


@dataclass
class StatResult:
    spec: StatSpec
    samples: np.ndarray              # defined samples, replicate order
    undefined: int
    ks: float | None = None
    passed: bool | None = None

    def quantiles(self) -> dict:
        if self.samples.size == 0:
            return {}
        q = np.quantile(self.samples, np.array(QUANTILES) / 100.0)
        return {f"q{p:02d}": float(v) for p, v in zip(QUANTILES, q)}

    def to_dict(self) -> dict:
        d = {"mode": self.spec.mode, "target": self.spec.target, "threshold": self.spec.threshold,
             "n_defined": int(self.samples.size), "n_undefined": int(self.undefined),
             "quantiles": self.quantiles(), "ks": self.ks, "passed": self.passed}
        if self.samples.size and np.all(np.isfinite(self.samples)):
            d["median"] = float(np.median(self.samples))
        return d


@dataclass
class HorizonResult:
    t: float
    fisher: float | None
    fisher_stderr: float | None
    stats: list[StatResult]
    values: dict = field(default_factory=dict, repr=False)   # mode -> masked array (all replicates)

    def stat(self, mode: str) -> StatResult:
        for s in self.stats:
            if s.spec.mode == mode:
                return s
        raise KeyError(mode)

    def to_dict(self) -> dict:
        d = {"t": self.t, "statistics": [s.to_dict() for s in self.stats]}
        if self.fisher is not None:
            d["fisher"] = self.fisher
        if self.fisher_stderr is not None:
            d["fisher_stderr"] = self.fisher_stderr
        return d


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    horizons: list[HorizonResult]
    diagnostics: list[str] = field(default_factory=list)
    runtime: float = 0.0             # seconds; kept out of the JSON on purpose

    @property
    def passed(self) -> bool | None:
        flags = [s.passed for h in self.horizons for s in h.stats if s.passed is not None]
        return all(flags) if flags else None

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(),
                "seeds": {"base_seed": self.spec.base_seed, "streams": [0, self.spec.n_replicates - 1],
                          "fisher_stream_offset": FISHER_STREAM_OFFSET},
                "results": [h.to_dict() for h in self.horizons],
                "diagnostics": list(self.diagnostics), "passed": self.passed}

    def samples_csv(self) -> str:
        from .outputs import table_csv
        rep, ts, cols = [], [], {s.mode: [] for s in self.spec.statistics}
        masks = {s.mode: [] for s in self.spec.statistics}
        for h in self.horizons:
            n = self.spec.n_replicates
            rep.append(np.arange(n))
            ts.append(np.full(n, h.t))
            for mode in cols:
                v = h.values[mode]
                cols[mode].append(np.ma.getdata(v))
                masks[mode].append(np.ma.getmaskarray(v))
        header = ["replicate", "t"] + list(cols)
        columns = [np.concatenate(rep), np.concatenate(ts)] + [np.concatenate(c) for c in cols.values()]
        undefined = [None, None] + [np.concatenate(masks[k]) for k in cols]
        return table_csv(header, columns, undefined)


# --------------------------------------------------------------------------
# laws


_ORACLES: dict = {}


def load_oracle(path: str) -> np.ndarray:
    key = os.path.abspath(path)
    if key not in _ORACLES:
        _ORACLES[key] = read_oracle(path)[0]
    return _ORACLES[key]


def target_law(name: str, oracle_path: str | None) -> LimitLaw:
    if name == "normal":
        return normal_law()
    if name == "cauchy":
        return cauchy_law()
    path = oracle_path or DEFAULT_ORACLE
    z = load_oracle(path)
    if name == "zeta":
        return dickey_fuller_law(z, 1.0, scaled=False)
    return dickey_fuller_law(z, 1.0 if name.startswith("+") else -1.0, scaled=True)


# --------------------------------------------------------------------------
# core loop


def _statistic(mode, num, den, alpha, t, fisher):
    d = den > 0
    ah = np.divide(num, den, out=np.zeros_like(num), where=d)
    if mode == "fisher-sqrt":
        v = math.sqrt(fisher) * (ah - alpha)
    elif mode == "random-normalization":
        v = np.divide(num - alpha * den, np.sqrt(den), out=np.zeros_like(num), where=d)
    elif mode == "t-times-alpha-hat":
        v = t * ah
    else:
        v = ah
    return v, ~d


class _Plan:
    """Everything shared by all chunks: grid, coefficients, weights, Fisher values."""

    def __init__(self, spec: ExperimentSpec, diagnostics: list):
        self.spec = spec
        self.grid = spec.build_grid()
        self.idx = [self.grid.index_at(t) for t in spec.horizons]
        for t, k in zip(spec.horizons, self.idx):
            if abs(self.grid.nodes[k] - t) > 1e-9 * max(1.0, t):
                diagnostics.append(f"horizon {t!r} is not a grid node; using t={self.grid.nodes[k]!r}")
        self.w1, self.w2 = mle_weights(spec.model, self.grid.nodes)
        self.coeffs = None
        if spec.estimator == "linear":
            self.coeffs = linear_coefficients(spec.model, self.grid, spec.scheme, spec.m)
        self.fisher = self.fisher_se = None
        if any(s.mode == "fisher-sqrt" for s in spec.statistics):
            if spec.estimator == "linear":
                self.fisher = fisher_linear(spec.model, self.grid, spec.m).I[self.idx]
            else:
                fs = fisher_perturbed_mc(spec.model, self.grid, spec.fisher_paths, spec.base_seed,
                                         stream_offset=FISHER_STREAM_OFFSET)
                self.fisher, self.fisher_se = fs.I[self.idx], fs.stderr[self.idx]
                if fs.diagnostic:
                    diagnostics.append("fisher pre-pass: " + fs.diagnostic)

    def run_chunk(self, start: int):
        spec = self.spec
        stop = min(start + CHUNK, spec.n_replicates)
        streams = range(start, stop)
        if spec.estimator == "linear":
            x, _ = linear_paths(spec.model, self.grid, spec.base_seed, streams, coeffs=self.coeffs)
            num, den = mle_sums_batch(x, x, self.w1, self.w2)
            over = np.zeros(stop - start, dtype=int)
            alive = None
        else:
            y, _, valid = perturbed_paths(spec.model, self.grid, spec.base_seed, streams)
            ay = spec.model.a(y)
            num, den = mle_sums_batch(ay, y, self.w1, self.w2)
            alive = np.asarray(valid)
            over = (alive < self.grid.nodes.size).astype(int)
        out = []
        for j, (t, k) in enumerate(zip(spec.horizons, self.idx)):
            nk, dk = num[:, k].copy(), den[:, k].copy()
            lost = np.zeros(nk.size, dtype=bool) if alive is None else alive <= k
            nk[lost] = 0.0
            dk[lost] = 0.0
            per = {}
            for s in spec.statistics:
                f = None if self.fisher is None else float(self.fisher[j])
                v, undef = _statistic(s.mode, nk, dk, spec.model.alpha, self.grid.nodes[k], f)
                per[s.mode] = (v, undef | lost)
            out.append(per)
        return out, int(over.sum())


def run_experiment(spec: ExperimentSpec, threads: int = 1, progress=None) -> ExperimentResult:
    """Run all replicates and aggregate; output is independent of ``threads``."""
    t0 = time.perf_counter()
    diagnostics: list[str] = []
    plan = _Plan(spec, diagnostics)
    laws = {}
    for s in spec.statistics:
        if s.target and s.target not in laws:
            laws[s.target] = target_law(s.target, spec.oracle)

    starts = list(range(0, spec.n_replicates, CHUNK))
    done = [0]

    def work(start):
        r = plan.run_chunk(start)
        done[0] += 1
        if progress:
            progress(f"[{spec.name}] chunk {done[0]}/{len(starts)}")
        return r

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, starts))
    else:
        parts = [work(s) for s in starts]

    n_over = sum(p[1] for p in parts)
    if n_over:
        diagnostics.append(f"{n_over} of {spec.n_replicates} paths overflowed (|Y| > 1e12)")

    horizons = []
    for j, t in enumerate(spec.horizons):
        stats, values = [], {}
        for s in spec.statistics:
            v = np.concatenate([p[0][j][s.mode][0] for p in parts])
            u = np.concatenate([p[0][j][s.mode][1] for p in parts])
            values[s.mode] = np.ma.array(v, mask=u)
            res = StatResult(s, v[~u], int(u.sum()))
            if res.samples.size == 0:
                diagnostics.append(f"t={t!r} {s.mode}: statistic undefined for every replicate")
            elif s.target:
                res.ks = ks_statistic(res.samples, laws[s.target])[0]
                if s.threshold is not None:
                    res.passed = bool(res.ks < s.threshold)
            stats.append(res)
        f = None if plan.fisher is None else float(plan.fisher[j])
        fse = None if plan.fisher_se is None else float(plan.fisher_se[j])
        horizons.append(HorizonResult(float(plan.grid.nodes[plan.idx[j]]), f, fse, stats, values))
    return ExperimentResult(spec, horizons, diagnostics, time.perf_counter() - t0)


# --------------------------------------------------------------------------
# consistency and existence


@dataclass
class ConsistencyResult:
    horizons: list[float]
    medians: list[float]
    undefined: list[int]

    @property
    def decreasing(self) -> bool:
        m = self.medians
        return all(b < a for a, b in zip(m, m[1:]))

    def to_dict(self) -> dict:
        return {"horizons": self.horizons, "median_abs_error": self.medians,
                "undefined": self.undefined, "strictly_decreasing": self.decreasing}


def consistency_experiment(spec: ExperimentSpec, threads: int = 1, estimator_override=None) -> ConsistencyResult:
    """Median |alpha_hat_t - alpha| along the horizon ladder.

    ``estimator_override(alpha_hat, alpha) -> array`` replaces alpha_hat
    (harness sanity checks).
    """
    spec = replace(spec, statistics=(StatSpec("raw-alpha-hat"),))
    res = run_experiment(spec, threads)
    meds, und = [], []
    for h in res.horizons:
        s = h.stat("raw-alpha-hat")
        ah = s.samples if estimator_override is None else estimator_override(s.samples, spec.model.alpha)
        meds.append(float(np.median(np.abs(ah - spec.model.alpha))) if ah.size else math.nan)
        und.append(s.undefined)
    return ConsistencyResult([h.t for h in res.horizons], meds, und)


def consistency_ladder(alpha: float, n: int = 200, base_seed: int = 31) -> ExperimentSpec:
    """Frozen ladders: {10, 40, 160} at h = 0.01 for alpha <= 0, {2, 4, 8} for alpha > 0."""
    model = registry_model("ou", alpha)
    if alpha > 0:
        return ExperimentSpec(model, (2.0, 4.0, 8.0), n, {"kind": "uniform", "h": 2.0 ** -10},
                              base_seed=base_seed, scheme="euler", name=f"consistency-ou{alpha:+g}")
    return ExperimentSpec(model, (10.0, 40.0, 160.0), n, {"kind": "uniform", "h": 0.01},
                          base_seed=base_seed, name=f"consistency-ou{alpha:+g}")


@dataclass
class ExistenceResult:
    t: list[float]
    estimate: list[float]
    stderr: list[float]
    reference: list[float]           # P(kappa >= t)
    n: int

    @property
    def positive(self) -> bool:
        return all(p > 0 for p in self.estimate)

    @property
    def lower_bound_ok(self) -> bool:
        return all(p >= r / 2 - 3 * se for p, r, se in zip(self.estimate, self.reference, self.stderr))

    @property
    def monotone(self) -> bool:
        e = self.estimate
        return all(b <= a for a, b in zip(e, e[1:]))

    def to_dict(self) -> dict:
        return {"t": self.t, "estimate": self.estimate, "stderr": self.stderr,
                "boundary_crossing_prob": self.reference, "n": self.n, "positive": self.positive,
                "lower_bound_ok": self.lower_bound_ok, "monotone": self.monotone}


def existence_probability_experiment(model: ModelSpec, t_list, n: int, h: float = 2.0 ** -12,
                                     base_seed: int = 0, threads: int = 1) -> ExistenceResult:
    """Fraction of paths whose MLE denominator is still 0 at each t."""
    if model.is_linear:
        raise ExperimentError("existence experiment needs a perturbed model")
    ts = sorted(float(t) for t in t_list)
    grid = make_grid("uniform", h=h, t_max=ts[-1], T=model.T)
    idx = [grid.index_at(t) for t in ts]
    w1, w2 = mle_weights(model, grid.nodes)

    def work(start):
        streams = range(start, min(start + CHUNK, n))
        y, _, valid = perturbed_paths(model, grid, base_seed, streams)
        _, den = mle_sums_batch(model.a(np.nan_to_num(y)), y, w1, w2)
        return np.stack([den[:, k] == 0 for k in idx], axis=1)

    starts = range(0, n, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            zero = np.concatenate(list(ex.map(work, starts)))
    else:
        zero = np.concatenate([work(s) for s in starts])
    p = zero.mean(axis=0)
    se = np.sqrt(p * (1 - p) / n)
    return ExistenceResult(ts, [float(v) for v in p], [float(v) for v in se],
                           [boundary_crossing_prob(t) for t in ts], n)


# --------------------------------------------------------------------------
# frozen acceptance configurations


def presets(oracle: str | None = None) -> dict[str, ExperimentSpec]:
    h12, h10 = 2.0 ** -12, 2.0 ** -10
    delta = 2.0 ** -20
    return {
        "dickey-fuller": ExperimentSpec(
            registry_model("ou", 0.0), (1.0,), 2000, {"kind": "uniform", "h": h12},
            ("t-times-alpha-hat:zeta:0.05", "fisher-sqrt:+zeta/sqrt2:0.05"),
            base_seed=101, oracle=oracle, name="dickey-fuller"),
        "remark27": ExperimentSpec(
            registry_model("remark27-finiteT", 1.0, 1.0, "1"), (1.0 - delta,), 2000,
            {"kind": "geometric", "rho": 1.0 - 2.0 ** -9, "delta": delta},
            ("fisher-sqrt:-zeta/sqrt2:0.06",), base_seed=102, oracle=oracle, name="remark27"),
        "cauchy": ExperimentSpec(
            registry_model("ou", 1.0), (8.0,), 2000, {"kind": "uniform", "h": h10},
            ("fisher-sqrt:cauchy:0.06", "random-normalization:normal:0.05"),
            base_seed=103, scheme="euler", name="cauchy"),
        "normal": ExperimentSpec(
            registry_model("ou", -1.0), (50.0,), 2000, {"kind": "uniform", "h": 0.01},
            ("fisher-sqrt:normal:0.05", "random-normalization:normal:0.05"),
            base_seed=104, name="normal"),
        "perturbed-singular": ExperimentSpec(
            registry_model("perturbed-singular", 1.0), (6.0,), 1000, {"kind": "uniform", "h": h10},
            ("fisher-sqrt:+zeta/sqrt2:0.08",), base_seed=105, estimator="perturbed",
            fisher_paths=500, oracle=oracle, name="perturbed-singular"),
    }


def stderr_progress(msg: str):
    print(msg, file=sys.stderr, flush=True)
