import csv
import io
import json
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import ORACLE_MAIN
from driftmle.mc import (ExperimentError, ExperimentSpec, StatSpec, consistency_experiment, consistency_ladder,
                         existence_probability_experiment, presets, run_experiment, target_law)
from driftmle.model import registry_model
from driftmle.outputs import dumps_json


def _small(model=None, **kw):
    base = dict(model=model or registry_model("ou", -1.0), horizons=(1.0, 2.0), n_replicates=300,
                grid={"kind": "uniform", "h": 0.01},
                statistics=("fisher-sqrt:normal:0.5", "random-normalization", "raw-alpha-hat"), base_seed=3)
    base.update(kw)
    return ExperimentSpec(**base)


def test_statspec_parse_round_trip():
    s = StatSpec.parse("fisher-sqrt:+zeta/sqrt2:0.05")
    assert (s.mode, s.target, s.threshold) == ("fisher-sqrt", "+zeta/sqrt2", 0.05)
    assert StatSpec.parse(s.text()) == s
    assert StatSpec.parse("raw-alpha-hat").target is None


@pytest.mark.parametrize("text", ["bogus", "fisher-sqrt:gamma", "a:b:c:d"])
def test_statspec_errors(text):
    with pytest.raises(ExperimentError):
        StatSpec.parse(text)


@pytest.mark.parametrize("kw", [
    dict(horizons=()),
    dict(horizons=(-1.0,)),
    dict(n_replicates=50),
    dict(estimator="perturbed"),
    dict(scheme="milstein"),
])
def test_spec_validation(kw):
    with pytest.raises(ExperimentError):
        _small(**kw)


def test_spec_horizon_beyond_T():
    with pytest.raises(ExperimentError):
        _small(registry_model("remark27-finiteT", 1.0, 1.0), horizons=(1.5,))


@pytest.mark.parametrize("threads", [4, 16])
def test_thread_invariance(threads):
    spec = _small(n_replicates=700)
    a = dumps_json(run_experiment(spec, 1).to_dict())
    b = dumps_json(run_experiment(spec, threads).to_dict())
    assert a == b
    assert run_experiment(spec, 1).samples_csv() == run_experiment(spec, threads).samples_csv()


def test_perturbed_thread_invariance():
    spec = replace(presets()["perturbed-singular"], n_replicates=300, horizons=(2.0,), fisher_paths=200)
    assert dumps_json(run_experiment(spec, 1).to_dict()) == dumps_json(run_experiment(spec, 16).to_dict())


def test_prefix_stable_replicates():
    a = run_experiment(_small(n_replicates=200)).horizons[0].stat("raw-alpha-hat").samples
    b = run_experiment(_small(n_replicates=400)).horizons[0].stat("raw-alpha-hat").samples
    np.testing.assert_array_equal(a, b[:200])


@pytest.mark.parametrize("name", ["ou", "remark27-alpha0"])
@pytest.mark.parametrize("alpha", [-1.0, 0.0, 1.0])
def test_no_undefined_for_linear_registry(name, alpha):
    spec = _small(registry_model(name, alpha), horizons=(1.0, 3.0), n_replicates=200, scheme="exact",
                  grid={"kind": "uniform", "h": 2.0 ** -8})
    res = run_experiment(spec)
    assert all(s.undefined == 0 for h in res.horizons for s in h.stats)


def test_undefined_counted_for_dietz_kutoyants():
    spec = ExperimentSpec(registry_model("dietz-kutoyants", 1.0), (0.25,), 400,
                          {"kind": "uniform", "h": 2.0 ** -10}, ("raw-alpha-hat",), base_seed=8,
                          estimator="perturbed")
    res = run_experiment(spec)
    s = res.horizons[0].stat("raw-alpha-hat")
    assert s.undefined > 300 and s.undefined + s.samples.size == 400


def test_fisher_values_in_result():
    res = run_experiment(_small())
    assert res.horizons[1].fisher == pytest.approx(1.0 - (1 - math.exp(-4)) / 4, rel=1e-6)


def test_json_is_stable_and_has_no_runtime():
    d = run_experiment(_small()).to_dict()
    text = dumps_json(d)
    assert "runtime" not in text
    back = json.loads(text)
    assert back["seeds"]["fisher_stream_offset"] == 2 ** 32
    st = back["results"][0]["statistics"][0]
    assert set(st["quantiles"]) == {"q01", "q05", "q25", "q50", "q75", "q95", "q99"}
    assert st["passed"] in (True, False)


def test_samples_csv_shape():
    res = run_experiment(_small())
    rows = list(csv.reader(io.StringIO(res.samples_csv())))
    assert rows[0] == ["replicate", "t", "fisher-sqrt", "random-normalization", "raw-alpha-hat"]
    assert len(rows) == 1 + 2 * 300
    v = float(rows[1][4])
    assert v == res.horizons[0].stat("raw-alpha-hat").samples[0]


def test_target_law_needs_oracle(tmp_path):
    with pytest.raises(Exception) as e:
        target_law("zeta", str(tmp_path / "missing.bin"))
    assert "zeta-oracle" in str(e.value)
    assert target_law("+zeta/sqrt2", ORACLE_MAIN).scale > 0


# consistency


@pytest.mark.parametrize("alpha", [-1.0, 1.0])
def test_consistency_ladders_decrease(alpha):
    r = consistency_experiment(consistency_ladder(alpha))
    assert r.decreasing and r.undefined == [0, 0, 0]


def test_consistency_synthetic_exact_estimator():
    r = consistency_experiment(consistency_ladder(-1.0, n=100), estimator_override=lambda ah, a: np.full_like(ah, a))
    assert r.medians == [0.0, 0.0, 0.0]


def test_consistency_thread_invariance():
    spec = consistency_ladder(1.0, n=150)
    assert consistency_experiment(spec, 1).to_dict() == consistency_experiment(spec, 8).to_dict()


# existence


def test_existence_small():
    m = registry_model("dietz-kutoyants", 1.0)
    r = existence_probability_experiment(m, [1.0, 0.25], 1000, h=2.0 ** -10, base_seed=2)
    assert r.t == [0.25, 1.0]
    assert r.positive and r.monotone and r.lower_bound_ok
    assert r.to_dict()["n"] == 1000


def test_existence_needs_perturbed_model():
    with pytest.raises(ExperimentError):
        existence_probability_experiment(registry_model("ou", 1.0), [0.5], 10)


def test_existence_threads():
    m = registry_model("dietz-kutoyants", 1.0)
    a = existence_probability_experiment(m, [0.5], 600, h=2.0 ** -8, threads=1)
    b = existence_probability_experiment(m, [0.5], 600, h=2.0 ** -8, threads=4)
    assert a.to_dict() == b.to_dict()


# acceptance configurations


def test_presets_frozen():
    p = presets()
    assert set(p) == {"dickey-fuller", "remark27", "cauchy", "normal", "perturbed-singular"}
    assert p["dickey-fuller"].grid == {"kind": "uniform", "h": 2.0 ** -12}
    assert p["cauchy"].horizons == (8.0,) and p["normal"].horizons == (50.0,)
    assert p["perturbed-singular"].fisher_paths == 500
    assert [s.threshold for s in p["remark27"].statistics] == [0.06]


@pytest.mark.slow
@pytest.mark.parametrize("name", ["dickey-fuller", "remark27", "cauchy", "normal", "perturbed-singular"])
def test_self_averaging(name):
    # doubling n_replicates must not raise any KS distance by more than 2/sqrt(n)
    full = presets()[name]
    half = replace(full, n_replicates=full.n_replicates // 2)
    a, b = run_experiment(half), run_experiment(full)
    n = half.n_replicates
    for ha, hb in zip(a.horizons, b.horizons):
        for sa, sb in zip(ha.stats, hb.stats):
            assert sb.ks <= sa.ks + 2 / math.sqrt(n)
