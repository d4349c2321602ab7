"""End-to-end smoke of the python bindings: construction, simulation,
spectral quantities, estimators, experiment runner, and error mapping."""

import json
import math
import os

import pytest

import psdbp


GEOM = psdbp.OffspringSpec.geometric(psdbp.MeanModel.constant(0.8))
RICKER = psdbp.OffspringSpec.two_point_binary(psdbp.MeanModel.ricker(1.2, 30))


def test_offspring_pmf_mass_and_mean():
    for spec, z in [(GEOM, 1), (GEOM, 7), (RICKER, 5), (RICKER, 30)]:
        pmf = spec.pmf(z)
        assert math.isclose(sum(pmf), 1.0, abs_tol=1e-9)
        mean = sum(k * p for k, p in enumerate(pmf))
        assert math.isclose(mean, spec.mean(z), rel_tol=1e-9)


def test_simulate_is_deterministic_and_absorbing():
    a = psdbp.simulate(GEOM, 5, 200, seed=42)
    b = psdbp.simulate(GEOM, 5, 200, seed=42)
    assert a == b
    assert a[0] == 5
    died = a.index(0) if 0 in a else None
    assert died is not None, "subcritical path should hit 0 within 200 steps"
    assert all(z == 0 for z in a[died:])


def test_tree_sample_is_consistent():
    tree = psdbp.simulate_tree(GEOM, 5, 50, seed=7)
    assert len(tree.counts) + 1 == len(tree.z)
    for t, tally in enumerate(tree.counts):
        assert sum(tally.values()) == tree.z[t]
        assert sum(k * c for k, c in tally.items()) == tree.z[t + 1]


def test_spectral_triple_invariants():
    bundle = psdbp.build_adaptive(GEOM, 5)
    t = bundle.triple
    assert 0.0 < t.rho < 1.0
    assert math.isclose(sum(t.u), 1.0, abs_tol=1e-10)
    dot = sum(ui * vi for ui, vi in zip(t.u, t.v))
    assert math.isclose(dot, 1.0, abs_tol=1e-10)
    assert psdbp.coupling_limit(t) > 0.0


def test_hybrid_sampler_conditions_on_survival():
    bundle = psdbp.build_adaptive(GEOM, 5)
    k = psdbp.default_hybrid_k(bundle.kernel, bundle.triple)
    sampler = psdbp.HybridSampler(bundle.kernel, bundle.triple, k)
    for seed in range(20):
        path = sampler.sample(5, 60, seed)
        assert len(path) == 61
        assert all(z >= 1 for z in path)
    assert sampler.sample(5, 60, 3) == sampler.sample(5, 60, 3)
    assert sampler.error_bound(60) <= 1e-6


def test_estimators_on_a_long_path():
    bundle = psdbp.build_adaptive(GEOM, 5)
    k = psdbp.default_hybrid_k(bundle.kernel, bundle.triple)
    sampler = psdbp.HybridSampler(bundle.kernel, bundle.triple, k)
    path = sampler.sample(5, 4000, 12345)
    rep = psdbp.mle_m_gw(path)
    assert rep.sample_size == 4000
    assert 0.8 < rep.value < 1.1
    tilde = psdbp.c_estimator_tilde(path, GEOM)
    assert abs(tilde.value - 0.8) < 0.1
    assert tilde.ci[0] < tilde.value < tilde.ci[1]
    bar = psdbp.c_estimator_bar(path, GEOM)
    assert abs(bar.m.value - 0.8) < 0.15
    assert bar.sigma2.value > 0.0


def test_run_experiment_dict_round_trip(tmp_path):
    config = {
        "kind": "spectrum",
        "spec": json.loads(psdbp.spec_to_json(RICKER)),
        "states": [8, 28],
        "zmax": 48,
        "seed": 1,
        "out_dir": str(tmp_path / "spec"),
    }
    summary, files = psdbp.run_experiment_dict(config)
    assert 0.9 < summary["spectral"]["rho"] < 1.0
    assert any(f.endswith("spectrum.csv") for f in files)
    assert all(os.path.exists(f) for f in files)


def test_error_mapping():
    with pytest.raises(psdbp.SpecError):
        psdbp.MeanModel.constant(-1.0)
    with pytest.raises(psdbp.ConfigError):
        psdbp.run_experiment(json.dumps({"kind": "simulate"}))
    with pytest.raises(psdbp.UndefinedEstimatorError):
        psdbp.c_estimator_bar([5, 5, 5, 5, 5])
    assert issubclass(psdbp.SpecError, psdbp.Error)
