"""Command line interface: simulate, estimate, classify, zeta-oracle, experiment.

Model files are INI-style text with sections [model] (name, T, alpha),
[coefficients] (b, sigma, r, sigma2_tail; quoted expressions) and
[constants] (L, gamma, M). Experiment files add [experiment] and [grid].
Flags override file values. Exit codes: 0 ok, 2 config/user error,
3 numeric failure, 4 acceptance failure (``experiment --assert``).
"""

from __future__ import annotations

import argparse
import configparser
import math
import os
import sys

import numpy as np

from . import __version__
from .estimate import (GridMismatchError, fisher_linear, fisher_perturbed_mc, mle_linear,
                       mle_perturbed)
from .expr import CoeffDomainError, ExprError
from .limitlaws import OracleError, ks_statistic, read_oracle, sample_zeta, write_oracle
from .mc import (ExperimentError, ExperimentSpec, StatSpec, consistency_experiment, consistency_ladder,
                 existence_probability_experiment, presets, run_experiment, stderr_progress)
from .model import MODEL_KEYS, ModelError, model_from_sections, parse_real, read_config, validate_model
from .outputs import atomic_write, dumps_json, table_csv
from .quadrature import NumericalError
from .regime import RegimeConflictError, classify
from .simulate import (GridError, make_grid, path_from_csv, path_to_csv, simulate_linear_euler,
                       simulate_linear_exact, simulate_perturbed_em)
from .rng import SeedSpec

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4
THREADS_ENV = "DRIFTMLE_THREADS"

EXPERIMENT_KEYS = {
    "experiment": {"name", "horizons", "n", "seed", "estimator", "scheme", "m", "fisher_paths",
                   "oracle", "statistics"},
    "grid": {"kind", "h", "rho", "delta"},
}


class UsageError(Exception):
    pass


def _err(msg: str):
    print(f"driftmle: error: {msg}", file=sys.stderr)


def _log(args, msg: str):
    if getattr(args, "verbose", 0):
        print(msg, file=sys.stderr)


# --------------------------------------------------------------------------
# argument plumbing


def _model_flags(p):
    g = p.add_argument_group("model")
    g.add_argument("--config", help="model / experiment file")
    g.add_argument("--model", help="registry model name")
    g.add_argument("--alpha", type=float)
    g.add_argument("--T", type=parse_real, help="horizon (number or inf)")
    g.add_argument("--b", help="drift coefficient b(t)")
    g.add_argument("--sigma", help="diffusion coefficient sigma(t)")
    g.add_argument("--r", help="drift perturbation r(x)")
    g.add_argument("--sigma2-tail", dest="sigma2_tail", help="closed form of int_t^T sigma^2")
    g.add_argument("--L", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--M", type=float)


def _common(p):
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _sections(args) -> dict:
    sec = {}
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file {args.config!r} not found")
        try:
            sec = read_config(args.config)
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {args.config!r}: {exc}") from None
    return sec


def _build_model(args, sections=None):
    sections = {k: dict(v) for k, v in (sections if sections is not None else _sections(args)).items()}
    model_sec = {k: v for k, v in sections.items() if k in ("model", "coefficients", "constants")}
    m = model_sec.setdefault("model", {})
    co = model_sec.setdefault("coefficients", {})
    cs = model_sec.setdefault("constants", {})
    if args.model is not None:
        m["name"] = args.model
    if args.alpha is not None:
        m["alpha"] = repr(args.alpha)
    if args.T is not None:
        m["T"] = "inf" if math.isinf(args.T) else repr(args.T)
    for key in ("b", "sigma", "r", "sigma2_tail"):
        if getattr(args, key) is not None:
            co[key] = getattr(args, key)
    for key in ("L", "gamma", "M"):
        if getattr(args, key) is not None:
            cs[key] = repr(getattr(args, key))
    for name, keys in MODEL_KEYS.items():
        extra = set(model_sec[name]) - keys
        if extra:
            raise UsageError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    if not m.get("name") and "b" not in co:
        raise UsageError("no model given (use --model NAME, --b/--sigma or --config FILE)")
    return model_from_sections(model_sec)


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        try:
            n = int(os.environ.get(THREADS_ENV, "1"))
        except ValueError:
            raise UsageError(f"${THREADS_ENV} must be an integer") from None
    if n < 1:
        raise UsageError("threads must be >= 1")
    return n


def _check_out(path):
    if path:
        d = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(d):
            raise UsageError(f"output directory {d!r} does not exist")


def _emit(path, text):
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def _validated(spec, args):
    rep = validate_model(spec, 64, 0)
    for c in rep.failed():
        if c.name == "sigma-positive":
            raise CoeffDomainError(f"sigma not positive: {c.detail}", c.witness)
    for c in rep.failed():
        print(f"driftmle: warning: check {c.name} failed: {c.detail}", file=sys.stderr)
    return rep


def _grid(args, spec):
    if args.rho is not None:
        return make_grid("geometric", rho=args.rho, T=spec.T, delta=args.delta)
    if args.h is None or args.t_max is None:
        raise UsageError("give --h and --t-max (or --rho for a geometric-to-T grid)")
    kind = "uniform" if spec.finite_horizon else "uniform-unbounded"
    return make_grid(kind, h=args.h, t_max=args.t_max, T=spec.T)


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    _check_out(args.out)
    spec = _build_model(args)
    _validated(spec, args)
    grid = _grid(args, spec)
    seed = SeedSpec(args.seed if args.seed is not None else 0, args.stream)
    if spec.is_linear:
        path = (simulate_linear_euler(spec, grid, seed) if args.scheme == "euler"
                else simulate_linear_exact(spec, grid, seed))
    else:
        path = simulate_perturbed_em(spec, grid, seed)
    if path.diagnostic:
        print(f"driftmle: warning: {path.diagnostic}", file=sys.stderr)
    _emit(args.out, path_to_csv(path))
    side = {"kind": path.kind, "grid": {"tag": grid.tag, **grid.params, "nodes": int(grid.nodes.size)},
            "seed": {"base_seed": seed.base_seed, "stream": seed.stream},
            "model": {"name": spec.name, "alpha": spec.alpha, "b": spec.b.text, "sigma": spec.sigma.text,
                      "r": spec.r.text if spec.r is not None else None,
                      "T": "inf" if math.isinf(spec.T) else spec.T}}
    if path.diagnostic:
        side["diagnostic"] = path.diagnostic
    if args.out:
        atomic_write(args.out + ".json", dumps_json(side))
    else:
        _log(args, dumps_json(side))
    return EXIT_OK


def cmd_estimate(args) -> int:
    _check_out(args.out)
    _check_out(args.fisher_out)
    spec = _build_model(args)
    if args.path == "-":
        text = sys.stdin.read()
    else:
        if not os.path.isfile(args.path):
            raise UsageError(f"path file {args.path!r} not found")
        with open(args.path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        path = path_from_csv(text, math.inf, "linear-exact" if spec.is_linear else "perturbed-em")
    except (ValueError, IndexError) as exc:
        raise UsageError(f"bad path file: {exc}") from None
    if path.t[-1] >= spec.T:
        raise GridMismatchError(f"path reaches t={float(path.t[-1])!r} but the model horizon is T={spec.T!r}")
    path.grid = type(path.grid)(path.grid.nodes, "file", {}, spec.T)
    series = mle_linear(path, spec) if spec.is_linear else mle_perturbed(path, spec)
    ah = series.alpha_hat
    mle_csv = table_csv(["t", "numerator", "denominator", "alpha_hat", "defined"],
                        [series.t, series.numerator, series.denominator, np.ma.getdata(ah), series.defined],
                        [None, None, None, ~series.defined, None])
    _emit(args.out, mle_csv)
    if args.fisher_out:
        if spec.is_linear:
            fs = fisher_linear(spec, path.grid)
            se = np.zeros_like(fs.I)
        else:
            fs = fisher_perturbed_mc(spec, path.grid, args.fisher_paths,
                                     args.seed if args.seed is not None else 0)
            se = fs.stderr
        atomic_write(args.fisher_out, table_csv(["t", "I", "stderr"], [fs.t, fs.I, se]))
    return EXIT_OK


def cmd_classify(args) -> int:
    _check_out(args.out)
    spec = _build_model(args)
    v = classify(spec)
    d = v.to_dict()
    if not args.full:
        d = {k: d[k] for k in ("regime", "C", "sign", "notes") if k in d}
    _emit(args.out, dumps_json(d))
    return EXIT_OK


def cmd_zeta_oracle(args) -> int:
    if args.verify:
        data, header = read_oracle(args.verify)
        msg = {"file": args.verify, "checksum": "ok", **header}
        if args.compare:
            other, _ = read_oracle(args.compare)
            msg["ks_two_sample"] = ks_statistic(data, other)[0]
        _emit(args.out, dumps_json(msg))
        return EXIT_OK
    if not args.out:
        raise UsageError("zeta-oracle needs --out FILE (or --verify FILE)")
    _check_out(args.out)
    if args.n < 1:
        raise UsageError("n must be >= 1")
    if args.steps < 256:
        raise UsageError("steps must be >= 256")
    if args.n < 10_000:
        print(f"driftmle: warning: n={args.n} is below 10^4; too small for KS acceptance use",
              file=sys.stderr)
    seed = args.seed if args.seed is not None else 0
    z = sample_zeta(args.n, args.steps, seed, threads=_threads(args))
    header = write_oracle(args.out, z, args.steps, seed)
    print(dumps_json(header), end="", file=sys.stderr if args.quiet else sys.stdout)
    return EXIT_OK


def _experiment_from_sections(sec, args) -> ExperimentSpec:
    for name, keys in EXPERIMENT_KEYS.items():
        extra = set(sec.get(name, {})) - keys
        if extra:
            raise UsageError(f"unknown key(s) in [{name}]: {', '.join(sorted(extra))}")
    known = set(EXPERIMENT_KEYS) | {"model", "coefficients", "constants"}
    extra = set(sec) - known
    if extra:
        raise UsageError(f"unknown section(s): {', '.join(sorted(extra))}")
    ex = {k: v.strip().strip('"').strip("'") for k, v in sec.get("experiment", {}).items()}
    gr = {k: v.strip().strip('"') for k, v in sec.get("grid", {}).items()}
    model = _build_model(args, sec)
    grid = {"kind": gr.get("kind", "uniform")}
    for key in ("h", "rho", "delta"):
        if key in gr:
            grid[key] = parse_real(gr[key])
    if "horizons" not in ex:
        raise UsageError("[experiment] needs horizons")
    stats = tuple(StatSpec.parse(s) for s in ex.get("statistics", "fisher-sqrt").split(",") if s.strip())
    return ExperimentSpec(
        model, tuple(parse_real(t) for t in ex["horizons"].split(",")), int(ex.get("n", 2000)), grid,
        stats, base_seed=int(ex.get("seed", 0)), estimator=ex.get("estimator", "linear"),
        scheme=ex.get("scheme", "exact"), m=int(ex.get("m", 8)),
        fisher_paths=int(ex.get("fisher_paths", 500)), oracle=ex.get("oracle"),
        name=ex.get("name", "experiment"))


SPECIAL = ("consistency-ou-1", "consistency-ou+1", "existence-dk")


def cmd_experiment(args) -> int:
    _check_out(args.out)
    _check_out(args.samples)
    threads = _threads(args)
    progress = stderr_progress if args.verbose else None
    if args.preset in SPECIAL:
        return _special(args, threads)
    if args.preset:
        table = presets(args.oracle)
        if args.preset not in table:
            raise UsageError(f"unknown preset {args.preset!r}; known: {', '.join(list(table) + list(SPECIAL))}")
        spec = table[args.preset]
    elif args.config:
        spec = _experiment_from_sections(_sections(args), args)
        if args.oracle:
            spec = _replace(spec, oracle=args.oracle)
    else:
        raise UsageError("experiment needs --preset NAME or --config FILE")
    if args.n is not None:
        spec = _replace(spec, n_replicates=args.n)
    if args.seed is not None:
        spec = _replace(spec, base_seed=args.seed)
    res = run_experiment(spec, threads, progress)
    _emit(args.out, dumps_json(res.to_dict()))
    if args.samples:
        atomic_write(args.samples, res.samples_csv())
    for d in res.diagnostics:
        print(f"driftmle: note: {d}", file=sys.stderr)
    _log(args, f"[{spec.name}] runtime {res.runtime:.1f}s")
    if args.assert_:
        for h in res.horizons:
            for s in h.stats:
                if s.passed is not None:
                    status = "PASS" if s.passed else "FAIL"
                    print(f"{status} {spec.name} t={h.t:g} {s.spec.mode} vs {s.spec.target}: "
                          f"KS={s.ks:.4f} threshold={s.spec.threshold}", file=sys.stderr)
        if res.passed is False:
            return EXIT_ASSERT
    return EXIT_OK


def _replace(spec, **kw):
    from dataclasses import replace
    return replace(spec, **kw)


def _special(args, threads) -> int:
    from .model import registry_model
    if args.preset.startswith("consistency"):
        alpha = -1.0 if args.preset.endswith("-1") else 1.0
        spec = consistency_ladder(alpha, args.n or 200, args.seed if args.seed is not None else 31)
        res = consistency_experiment(spec, threads)
        ok = res.decreasing
        out = res.to_dict()
    else:
        res = existence_probability_experiment(registry_model("dietz-kutoyants", 1.0), (0.25, 0.5, 1.0),
                                               args.n or 10_000, 2.0 ** -12,
                                               args.seed if args.seed is not None else 41, threads)
        ok = res.positive and res.lower_bound_ok and res.monotone
        out = res.to_dict()
    out["passed"] = ok
    _emit(args.out, dumps_json(out))
    if args.assert_:
        print(f"{'PASS' if ok else 'FAIL'} {args.preset}", file=sys.stderr)
        if not ok:
            return EXIT_ASSERT
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="driftmle", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"driftmle {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate one path to CSV")
    _model_flags(s)
    _common(s)
    s.add_argument("--t-max", dest="t_max", type=float)
    s.add_argument("--h", type=float)
    s.add_argument("--rho", type=float, help="geometric-to-T ratio")
    s.add_argument("--delta", type=float, help="hard stop T - delta for geometric grids")
    s.add_argument("--stream", type=int, default=0)
    s.add_argument("--scheme", choices=("exact", "euler"), default="exact")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("estimate", help="MLE and Fisher information from a path CSV")
    _model_flags(s)
    _common(s)
    s.add_argument("--path", required=True, help="path CSV (t,value[,dB]); '-' for stdin")
    s.add_argument("--fisher-out", dest="fisher_out")
    s.add_argument("--fisher-paths", dest="fisher_paths", type=int, default=500)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("classify", help="asymptotic regime of (model, alpha)")
    _model_flags(s)
    _common(s)
    s.add_argument("--full", action="store_true", help="include probe tables")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("zeta-oracle", help="generate or verify a zeta oracle file")
    _common(s)
    s.add_argument("--n", type=int, default=100_000)
    s.add_argument("--steps", type=int, default=2 ** 14)
    s.add_argument("--verify", help="check an oracle file's header and checksum")
    s.add_argument("--compare", help="with --verify: two-sample KS against another oracle")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_zeta_oracle)

    s = sub.add_parser("experiment", help="Monte Carlo experiment with KS verdicts")
    _model_flags(s)
    _common(s)
    s.add_argument("--preset", help="frozen acceptance configuration")
    s.add_argument("--oracle", help="zeta oracle file")
    s.add_argument("--samples", help="CSV of raw statistic samples")
    s.add_argument("--n", type=int, help="override replicate count")
    s.add_argument("--assert", dest="assert_", action="store_true",
                   help="exit 4 when a KS threshold is exceeded")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (NumericalError, CoeffDomainError, RegimeConflictError) as exc:
        witness = getattr(exc, "point", None)
        _err(f"numeric failure: {exc}" + (f" (witness t={witness!r})" if witness is not None
                                          and "point" not in str(exc) else ""))
        return EXIT_NUMERIC
    except OracleError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except (UsageError, ModelError, ExprError, ExperimentError, GridError, GridMismatchError,
            configparser.Error, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
