"""Drift-parameter MLE for time-inhomogeneous linear and perturbed diffusions."""

__version__ = "0.1.0"

from .expr import parse_expr, to_text, evaluate
from .model import ModelSpec, CoeffFn, make_model, registry_model, validate_model, load_model, eval_expr
from .rng import SeedSpec
from .simulate import (TimeGrid, Path, make_grid, wiener_increments, simulate_wiener,
                       simulate_linear_exact, simulate_linear_euler, simulate_perturbed_em)
from .estimate import (MleSeries, FisherSeries, mle_linear, mle_perturbed, second_moment_linear,
                       fisher_linear, fisher_perturbed_mc, normalized_error, delta_path)
from .regime import classify, probe_c_limit, probe_b_divergence, probe_energy_integral, probe_normal_condition
from .limitlaws import LimitLaw, sample_zeta, cdf, ks_statistic, boundary_crossing_prob
from .analysis import GronwallInstance, gronwall_bound, slln_diagnostic
from .mc import ExperimentSpec, run_experiment, consistency_experiment, existence_probability_experiment
from .kernels import BACKEND
