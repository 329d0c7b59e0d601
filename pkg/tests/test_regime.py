import json
import math

import numpy as np
import pytest

from driftmle.model import REGISTRY, make_model, registry_model
from driftmle.regime import (RegimeConflictError, classify, probe_b_divergence, probe_c_limit,
                             probe_energy_integral, probe_fisher_divergence, tail_grid)

ALPHAS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)


@pytest.mark.parametrize("alpha,want", [(-1.0, "Normal"), (0.0, "Singular"), (1.0, "Cauchy")])
def test_ou_regimes(alpha, want):
    v = classify(registry_model("ou", alpha))
    assert v.regime == want
    if want == "Singular":
        assert v.C == pytest.approx(1.0, rel=1e-2) and v.sign == 1


@pytest.mark.parametrize("alpha", [-2.0, -1.0, 0.5, 1.0, 2.0])
def test_remark27_singular_constant(alpha):
    v = classify(registry_model("remark27-finiteT", alpha, 1.0))
    assert v.regime == "Singular"
    assert v.C == pytest.approx(-1.0 / (2 * alpha), rel=1e-2)
    assert v.sign == (1 if alpha < 0 else -1)


def test_luschgy_not_singular():
    for a in ALPHAS:
        v = classify(registry_model("luschgy-counterexample", a))
        assert v.regime != "Singular"
        assert v.probe("c-limit").verdict != "holds"


def test_remark27_alpha0_like_ou():
    for a, want in [(-1.0, "Normal"), (0.0, "Singular"), (1.0, "Cauchy")]:
        assert classify(registry_model("remark27-alpha0", a)).regime == want


def test_perturbed_singular_only_when_signs_match():
    v = classify(registry_model("perturbed-singular", 1.0))
    assert v.regime == "Singular" and v.C == pytest.approx(1.0, rel=1e-2)
    for a in (-1.0, 0.5, 2.0):
        v = classify(registry_model("perturbed-singular", a))
        assert v.regime == "Unknown" and v.C is None
    # at alpha=2 the linear probes point to Cauchy, which the perturbed gate rejects
    assert any("outside theorem hypotheses" in n for n in v.notes)


def test_perturbed_sign_mismatch_gate():
    # linear part has C = -1/(2 alpha) < 0 for alpha > 0
    lin = registry_model("remark27-finiteT", 1.0, 1.0)
    m = make_model(lin.b.text, "1", 1.0, 1.0, r="0.5*sin(x)", L=0.5, gamma=0.0, M=0.5,
                   sigma2_tail="1 - t")
    v = classify(m)
    assert v.regime == "Unknown"
    assert any("sign(alpha)" in n for n in v.notes)
    assert probe_c_limit(lin, 1.0, tail_grid(1.0)).estimate < 0


def test_sweep_verdicts_disjoint_and_deterministic():
    for name in REGISTRY:
        for a in ALPHAS:
            if name == "remark27-finiteT" and a == 0:
                continue
            m = registry_model(name, a)
            try:
                v = classify(m)
            except RegimeConflictError as exc:      # pragma: no cover
                pytest.fail(f"{name} alpha={a}: {exc}")
            assert len(v.matched) <= 1
            assert json.dumps(v.to_dict(), sort_keys=True) == json.dumps(classify(m).to_dict(), sort_keys=True)


def test_c_limit_implies_divergences_agree():
    # under the c-limit the divergence probes coincide (energy-finite fails)
    for name in ("ou", "remark27-alpha0"):
        v = classify(registry_model(name, 0.0))
        assert v.probe("c-limit").verdict == "holds"
        assert v.probe("b-integral-divergence").verdict == "holds"
        assert v.probe("fisher-divergence").verdict == "holds"
        assert v.probe("energy-finite").verdict == "fails"
        assert not any("disagree" in n for n in v.notes)
    for a in (-1.0, 1.0):
        v = classify(registry_model("remark27-finiteT", a, 1.0))
        assert {v.probe(k).verdict for k in ("b-integral-divergence", "fisher-divergence")} == {"holds"}


def test_energy_finite_for_ou_positive():
    tail = tail_grid(math.inf)
    assert probe_energy_integral(registry_model("ou", 1.0), 1.0, tail).verdict == "holds"
    assert probe_energy_integral(registry_model("ou", -1.0), -1.0, tail).verdict == "fails"


def test_b_divergence_luschgy_fails():
    tail = tail_grid(math.inf)
    assert probe_b_divergence(registry_model("luschgy-counterexample", 0.0), tail).verdict == "fails"
    assert probe_b_divergence(registry_model("ou", 0.0), tail).verdict == "holds"


def test_fisher_divergence_ou():
    tail = tail_grid(math.inf)
    p = probe_fisher_divergence(registry_model("ou", -1.0), -1.0, tail)
    assert p.verdict == "holds"
    assert np.all(np.diff(p.values) > 0)


def test_tail_grid_probe_times():
    g = tail_grid(math.inf)
    np.testing.assert_array_equal(g.times, 2.0 ** np.arange(15))
    f = tail_grid(2.0)
    np.testing.assert_allclose(f.times, 2.0 * (1 - 2.0 ** -np.arange(1, 21)), rtol=1e-14)


def test_verdict_json_shape():
    d = classify(registry_model("remark27-finiteT", 1.0, 1.0)).to_dict()
    text = json.dumps(d, allow_nan=False)
    back = json.loads(text)
    assert back["regime"] == "Singular"
    assert back["tolerances"] == {"K": 5, "rel_tol": 1e-2, "divergence_threshold": 1e3}
    assert {p["id"] for p in back["probes"]} >= {"c-limit", "fisher-divergence", "energy-finite"}
    assert any("continuity" in n for n in back["notes"])


def test_truncation_note():
    v = classify(registry_model("perturbed-singular", 1.0))
    assert any("truncated" in n for n in v.notes)
