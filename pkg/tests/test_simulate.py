import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from driftmle.estimate import second_moment_linear
from driftmle.model import make_model, registry_model
from driftmle.quadrature import LinearMoments, NumericalError
from driftmle.rng import SeedSpec, normal_block, standard_normals
from driftmle.simulate import (GridError, linear_coefficients, linear_paths, make_grid, path_from_csv,
                               path_to_csv, perturbed_from_increments, refine_grid, simulate_linear_euler,
                               simulate_linear_exact, simulate_perturbed_em, simulate_wiener,
                               wiener_increments)


def test_uniform_grid():
    g = make_grid("uniform", h=0.25, t_max=1.0)
    np.testing.assert_array_equal(g.nodes, [0, .25, .5, .75, 1.0])


def test_geometric_grid():
    g = make_grid("geometric", rho=0.5, T=1.0, count=4)
    np.testing.assert_array_equal(g.nodes, [0, 0.5, 0.75, 0.875])


def test_geometric_grid_hard_stop():
    g = make_grid("geometric", rho=1 - 2.0 ** -9, T=2.0)
    assert g.nodes[-1] == 2.0 - 2.0 * 2.0 ** -20
    assert np.all(np.diff(g.nodes) > 0) and g.nodes[-1] < 2.0


@pytest.mark.parametrize("kw", [
    dict(kind="uniform", h=0.0, t_max=1.0),
    dict(kind="uniform", h=-1.0, t_max=1.0),
    dict(kind="uniform", h=0.1, t_max=1.0, T=1.0),
    dict(kind="geometric", rho=1.5, T=1.0),
    dict(kind="geometric", rho=0.5),
    dict(kind="spiral", h=0.1, t_max=1.0),
])
def test_grid_errors(kw):
    kind = kw.pop("kind")
    with pytest.raises(GridError):
        make_grid(kind, **kw)


def test_index_at():
    g = make_grid("uniform", h=0.01, t_max=2.0)
    assert g.index_at(1.0) == 100
    assert g.index_at(2.0) == 200


def test_wiener_increment_mean():
    g = make_grid("uniform", h=1.0, t_max=1e6 - 1)
    db = wiener_increments(g, SeedSpec(11))
    assert abs(db.mean()) < 0.004


def test_wiener_increment_variance():
    g = make_grid("uniform", h=0.5, t_max=0.5 * 200_000)
    db = wiener_increments(g, SeedSpec(12))
    assert db.var() == pytest.approx(0.5, rel=0.01)


def test_wiener_determinism():
    g = make_grid("uniform", h=0.1, t_max=10)
    a = wiener_increments(g, SeedSpec(5, 3))
    b = wiener_increments(g, SeedSpec(5, 3))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, wiener_increments(g, SeedSpec(5, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 63), st.integers(0, 1000), st.integers(1, 300), st.integers(1, 300))
def test_streams_are_prefix_stable(seed, stream, n1, n2):
    # normal i depends only on (seed, stream, i)
    a = standard_normals(seed, stream, n1)
    b = standard_normals(seed, stream, n2)
    k = min(n1, n2)
    assert a[:k].tobytes() == b[:k].tobytes()


def test_block_rows_match_single_streams():
    z = normal_block(9, [4, 0, 7], 33)
    for row, s in zip(z, [4, 0, 7]):
        assert row.tobytes() == standard_normals(9, s, 33).tobytes()


def test_simulate_wiener_moments():
    g = make_grid("uniform", h=1.0, t_max=1.0)
    x, _ = linear_paths(make_model("0", "1"), g, 21, range(100_000))
    w1 = x[:, -1]
    assert abs(w1.mean()) < 0.01
    assert w1.var() == pytest.approx(1.0, rel=0.02)


def test_single_step_wiener():
    g = make_grid("uniform", h=1.0, t_max=1.0)
    p = simulate_wiener(g, SeedSpec(3))
    assert p.values[0] == 0.0 and p.values[1] == p.wiener_increments[0]


def test_exact_marginal_variance_ou():
    m = registry_model("ou", -1.0)
    g = make_grid("uniform", h=0.05, t_max=2.0)
    x, _ = linear_paths(m, g, 5, range(20_000))
    v = x[:, -1]
    want = (1 - math.exp(-4)) / 2
    se = want * math.sqrt(2 / v.size)
    assert abs(v.var() - want) < 3 * se
    assert abs(v.mean()) < 3 * math.sqrt(want / v.size)


@pytest.mark.parametrize("model,t", [
    (make_model("cos(t)", "1 + 0.5*sin(t)", alpha=0.7), 3.0),
    (registry_model("remark27-finiteT", 1.0, 1.0), 0.9),
    (registry_model("luschgy-counterexample", 2.0), 2.5),
])
def test_exact_marginal_matches_second_moment(model, t):
    g = make_grid("uniform", h=t / 64, t_max=t, T=model.T)
    x, _ = linear_paths(model, g, 8, range(20_000))
    want = second_moment_linear(model, t)
    v = x[:, -1]
    assert abs(np.mean(v * v) - want) < 3 * np.std(v * v) / math.sqrt(v.size)


def test_alpha_zero_linear_is_wiener():
    g = make_grid("uniform", h=0.01, t_max=1.0)
    x = simulate_linear_exact(make_model("1", "1", alpha=0.0), g, SeedSpec(4))
    w = simulate_wiener(g, SeedSpec(4))
    np.testing.assert_allclose(x.values, w.values, rtol=0, atol=1e-12)


def test_b_zero_equals_alpha_zero():
    g = make_grid("uniform", h=0.01, t_max=1.0)
    a = simulate_linear_exact(make_model("0", "1 + t", alpha=1.3), g, SeedSpec(4))
    b = simulate_linear_exact(make_model("exp(t)", "1 + t", alpha=0.0), g, SeedSpec(4))
    np.testing.assert_array_equal(a.values, b.values)


def test_simpson_refinement_consistency():
    m = make_model("cos(t) + 0.5", "1 + 0.3*sin(2*t)", alpha=-0.8)
    g = make_grid("uniform", h=0.05, t_max=5.0)
    p8, v8 = linear_coefficients(m, g, "exact", 8)
    p32, v32 = linear_coefficients(m, g, "exact", 32)
    np.testing.assert_allclose(p8, p32, rtol=1e-8)
    np.testing.assert_allclose(v8, v32, rtol=1e-8)


def test_quadrature_blow_up_reports_last_safe():
    m = make_model("1/(1-t)^3", "1", T=2.0, alpha=1.0)
    with pytest.raises(NumericalError) as e:
        LinearMoments(m, np.linspace(0, 1.5, 31))
    assert e.value.last_safe is not None and e.value.last_safe < 1.0


def test_perturbed_rejects_linear_model():
    g = make_grid("uniform", h=0.1, t_max=1.0)
    with pytest.raises(ValueError):
        simulate_perturbed_em(registry_model("ou", 1.0), g, SeedSpec(1))


def test_perturbed_alpha_zero_is_cumsum():
    g = make_grid("uniform", h=0.01, t_max=2.0)
    p = simulate_perturbed_em(registry_model("dietz-kutoyants", 0.0), g, SeedSpec(6))
    np.testing.assert_allclose(p.values, np.concatenate([[0], np.cumsum(p.wiener_increments)]),
                               rtol=0, atol=1e-13)


def test_em_strong_order_one():
    m = make_model("1", "1", alpha=1.0, r="0.5*sin(x)", L=0.5, gamma=0.0, M=0.5)
    fine = make_grid("uniform", h=2.0 ** -12, t_max=1.0)
    z = normal_block(3, range(400), fine.n) * math.sqrt(2.0 ** -12)
    ref, _ = perturbed_from_increments(m, fine, z)

    def err(k):
        coarse = make_grid("uniform", h=2.0 ** -12 * k, t_max=1.0)
        db = z.reshape(z.shape[0], -1, k).sum(axis=2)
        y, _ = perturbed_from_increments(m, coarse, db)
        return math.sqrt(np.mean((y[:, -1] - ref[:, -1]) ** 2))

    ratio = err(64) / err(16)   # h = 2^-6 vs 2^-8
    assert 3.0 < ratio < 5.5


def test_overflow_truncates_with_diagnostic():
    m = make_model("1", "1", alpha=8.0, r="0.5*sin(x)", L=0.5, gamma=0.0, M=0.5)
    g = make_grid("uniform", h=0.01, t_max=6.0)
    p = simulate_perturbed_em(m, g, SeedSpec(2))
    assert p.diagnostic and "overflow" in p.diagnostic
    assert p.values.size < g.nodes.size
    assert np.all(np.isfinite(p.values))


def test_euler_linear_recursion():
    m = registry_model("ou", -1.0)
    g = make_grid("uniform", h=0.1, t_max=1.0)
    p = simulate_linear_euler(m, g, SeedSpec(1))
    x = np.zeros(g.nodes.size)
    for i in range(g.n):
        x[i + 1] = x[i] - x[i] * 0.1 + p.wiener_increments[i]
    np.testing.assert_allclose(p.values, x, rtol=1e-13, atol=1e-15)


def test_refine_grid():
    g = refine_grid(make_grid("uniform", h=0.5, t_max=1.0), 4)
    np.testing.assert_allclose(g.nodes, np.arange(9) / 8)


def test_csv_round_trip():
    g = make_grid("uniform", h=0.1, t_max=1.0)
    p = simulate_linear_exact(registry_model("ou", 1.0), g, SeedSpec(2))
    text = path_to_csv(p)
    assert text.splitlines()[0] == "t,value,dB"
    assert "\r" not in text
    back = path_from_csv(text)
    assert back.values.tobytes() == p.values.tobytes()
    assert back.wiener_increments.tobytes() == p.wiener_increments.tobytes()
    assert back.t.tobytes() == p.t.tobytes()
