import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftmle.analysis import (GronwallInstance, gronwall_bound, gronwall_equality_solution,
                               mle_martingale, slln_diagnostic)
from driftmle.estimate import mle_linear
from driftmle.model import registry_model
from driftmle.rng import SeedSpec
from driftmle.simulate import make_grid, simulate_linear_exact, simulate_wiener


def test_classical_constant_case():
    s = np.linspace(0, 2, 401)
    c, k = 1.5, 0.7
    one = np.ones_like(s)
    phi = c * np.exp(k * s)
    rep = gronwall_bound(GronwallInstance(s, phi, c * one, 0 * one, k * one))
    np.testing.assert_allclose(rep.bound, c * np.exp(k * s), rtol=1e-5)
    assert rep.ok


def test_phi_zero_trivially_dominated():
    s = np.linspace(0, 1, 101)
    rep = gronwall_bound(GronwallInstance(s, 0 * s, 1 + s, np.ones_like(s), 2 + 0 * s))
    assert rep.hypothesis_ok and rep.ok
    assert np.all(rep.bound >= 1)


def test_bound_linear_psi1():
    # psi1 = a + b s, psi2 = k: bound = (a + b/k) e^{ks} - b/k
    s = np.linspace(0, 1, 2001)
    a, b, k = 0.5, 2.0, 1.3
    rep = gronwall_bound(GronwallInstance(s, 0 * s, a + b * s, b + 0 * s, k + 0 * s))
    np.testing.assert_allclose(rep.bound, (a + b / k) * np.exp(k * s) - b / k, rtol=1e-6)


def test_hypothesis_violation_reported():
    s = np.linspace(0, 1, 51)
    one = np.ones_like(s)
    rep = gronwall_bound(GronwallInstance(s, 5 * one, one, 0 * one, 0 * one))
    assert not rep.hypothesis_ok
    assert not rep.dominated.any()
    assert rep.ok           # vacuous: the conclusion is only claimed where the hypothesis holds


def test_instance_validation():
    s = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        GronwallInstance(s, -s, s, s, s)
    with pytest.raises(ValueError):
        GronwallInstance(s[::-1], s, s, s, s)
    with pytest.raises(ValueError):
        GronwallInstance(s, s[:3], s, s, s)
    with pytest.raises(ValueError):
        GronwallInstance(s[:1], s[:1], s[:1], s[:1], s[:1])


def _random_instance(rng):
    n = int(rng.integers(40, 200))
    fine = np.linspace(0, float(rng.uniform(0.5, 3)), 16 * (n - 1) + 1)
    a, b, w = rng.uniform(0.3, 2), rng.uniform(0, 2), rng.uniform(0, 2)
    p0, p1, f = rng.uniform(0, 1.5, 3)
    psi1 = a + b * fine + 0.3 * np.sin(w * fine)
    dpsi1 = b + 0.3 * w * np.cos(w * fine)
    psi2 = p0 + p1 * np.sin(f * fine) ** 2
    # extremal phi from the refined grid, then scaled down and subsampled
    phi = gronwall_equality_solution(fine, psi1, psi2) * rng.uniform(0.2, 1.0)
    keep = slice(None, None, 16)
    return GronwallInstance(fine[keep], phi[keep], psi1[keep], dpsi1[keep], psi2[keep])


def test_random_instances():
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(100):
        inst = _random_instance(rng)
        rep = gronwall_bound(inst)
        bad += not (rep.hypothesis_ok and rep.ok)
    assert bad == 0


def test_equality_solution_attains_bound():
    s = np.linspace(0, 2, 4001)
    psi1 = 1 + s ** 2
    psi2 = 0.5 + 0 * s
    phi = gronwall_equality_solution(s, psi1, psi2)
    rep = gronwall_bound(GronwallInstance(s, phi, psi1, 2 * s, psi2))
    np.testing.assert_allclose(phi, rep.bound, rtol=1e-5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0.01, 1))
def test_bound_monotone_in_psi2(k, extra, a):
    s = np.linspace(0, 1, 201)
    psi1 = a + s
    lo = gronwall_bound(GronwallInstance(s, 0 * s, psi1, np.ones_like(s), k + 0 * s)).bound
    hi = gronwall_bound(GronwallInstance(s, 0 * s, psi1, np.ones_like(s), k + extra + 0 * s)).bound
    assert np.all(hi >= lo * (1 - 1e-12))


def test_equality_solution_step_too_large():
    with pytest.raises(ValueError):
        gronwall_equality_solution([0, 1], [1, 1], [5, 5])


# martingale strong law


def test_slln_masks_zero_qv():
    d = slln_diagnostic([0.0, 1.0, 2.0], [0.0, 2.0, 8.0])
    assert d.mask.tolist() == [True, False, False]
    np.testing.assert_allclose(d.compressed(), [0.5, 0.25])


def test_slln_rejects_bad_input():
    with pytest.raises(ValueError):
        slln_diagnostic([1.0, 2.0], [2.0, 1.0])
    with pytest.raises(ValueError):
        slln_diagnostic([1.0], [1.0, 2.0])


def test_slln_brownian_ratio_vanishes():
    g = make_grid("uniform", h=0.1, t_max=10_000.0)
    w = simulate_wiener(g, SeedSpec(12))
    d = slln_diagnostic(w.values, g.nodes)
    assert abs(d[-1]) < 0.05
    assert abs(d[-1]) < abs(d[g.index_at(1.0)]) + 0.05


def test_mle_martingale_identity():
    m = registry_model("ou", -1.0)
    g = make_grid("uniform", h=0.01, t_max=50.0)
    s = mle_linear(simulate_linear_exact(m, g, SeedSpec(4)), m)
    M, qv = mle_martingale(s, -1.0)
    d = slln_diagnostic(M, qv)
    np.testing.assert_allclose(np.ma.getdata(d)[s.defined], np.ma.getdata(s.alpha_hat)[s.defined] + 1.0,
                               rtol=1e-9, atol=1e-12)
    assert math.isfinite(d[-1]) and abs(d[-1]) < 0.5
