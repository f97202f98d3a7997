import json
import os

import numpy as np
import pytest

from manifold_mcmc.errors import NonIntegrable
from manifold_mcmc.targets import make_gaussian, make_quartic
from manifold_mcmc.verification import (
    Oracle,
    OracleCache,
    batched_rwm_reference,
    finite_difference_check,
    fingerprint,
    quadrature_moments,
    quartic_envelope_constant,
    rejection_sampler_quartic,
)

QUARTIC_SECOND_MOMENT = 0.3379891200336423
QUARTIC_NORMALIZER = 1.8128049541109539  # 2 Gamma(5/4)


def test_quadrature_standard_normal():
    q = quadrature_moments(lambda x: -0.5 * x * x)
    assert q.normalizer == pytest.approx(np.sqrt(2 * np.pi), abs=1e-10)
    assert q.variance == pytest.approx(1.0, abs=1e-10)
    assert q.mean == pytest.approx(0.0, abs=1e-12)


def test_quadrature_quartic():
    q = quadrature_moments(lambda x: -x**4)
    assert q.variance == pytest.approx(QUARTIC_SECOND_MOMENT, abs=1e-12)
    assert q.normalizer == pytest.approx(QUARTIC_NORMALIZER, abs=1e-12)
    assert abs(q.mean) <= 1e-12
    assert len(q.grid) == 4096
    assert np.all(np.diff(q.cdf_table) >= 0)


def test_quadrature_shifted_mean():
    q = quadrature_moments(lambda x: -0.5 * (x - 1.5) ** 2 / 0.25)
    assert q.mean == pytest.approx(1.5, abs=1e-10)
    assert q.variance == pytest.approx(0.25, abs=1e-10)


def test_quadrature_heavy_tail_rejected():
    with pytest.raises(NonIntegrable):
        quadrature_moments(lambda x: -np.log1p(x * x))
    with pytest.raises(ValueError):
        quadrature_moments(lambda x: -x * x, order=32)


def test_fd_linear_exact():
    a = np.array([1.0, -2.0, 0.5])
    err = finite_difference_check(lambda x: float(a @ x), lambda x: a, np.random.default_rng(0).normal(size=(5, 3)))
    assert err <= 1e-10


def test_fd_quartic_at_one():
    m = make_quartic()
    assert finite_difference_check(m.log_density, m.grad_log_density, np.array([[1.0]]), h=1e-5) <= 1e-6


def test_fd_detects_wrong_gradient():
    err = finite_difference_check(lambda x: float(x @ x), lambda x: 3 * x, np.array([[1.0, 2.0]]))
    assert err > 0.1


def test_fd_step_range():
    with pytest.raises(ValueError):
        finite_difference_check(lambda x: 0.0, lambda x: np.zeros(1), np.zeros((1, 1)), h=1e-3)


def test_rejection_sampler_moments():
    draws, rate = rejection_sampler_quartic(1_000_000, np.random.default_rng(0), return_rate=True)
    assert draws.shape == (1_000_000,)
    assert np.isfinite(draws).all()
    assert abs(draws.var() - 0.3380) <= 0.002
    assert abs(draws.mean()) <= 0.002
    predicted = 1.0 / quartic_envelope_constant()
    assert abs(rate - predicted) <= 0.1 * predicted


def test_rejection_sampler_deterministic():
    a = rejection_sampler_quartic(1000, np.random.default_rng(3))
    b = rejection_sampler_quartic(1000, np.random.default_rng(3))
    assert a.tobytes() == b.tobytes()


def test_batched_reference_gaussian():
    model = make_gaussian([1.0, -1.0], [[1.0, 0.5], [0.5, 2.0]])
    rng = np.random.default_rng(0)
    start = rng.standard_normal((50, 2)) + [1.0, -1.0]
    chol = 1.7 * np.linalg.cholesky([[1.0, 0.5], [0.5, 2.0]])
    means, rate = batched_rwm_reference(model.log_density_batch, start, chol, 4000, rng)
    assert 0.1 < rate < 0.6
    np.testing.assert_allclose(means.mean(axis=0), [1.0, -1.0], atol=0.05)


def test_fingerprint_stable_and_sensitive():
    a = fingerprint({"x": np.arange(3.0), "n": 1})
    assert a == fingerprint({"n": 1, "x": np.arange(3.0)})
    assert a != fingerprint({"x": np.arange(3.0) + [0, 0, 1e-12], "n": 1})


def test_oracle_cache_roundtrip(tmp_path):
    cache = OracleCache(tmp_path)
    calls = []

    def fn():
        calls.append(1)
        return {"value": 42.0}

    o1 = cache.compute("answer", "test oracle", {"k": 1}, fn, provenance="unit test")
    o2 = cache.compute("answer", "test oracle", {"k": 1}, fn)
    assert o1.result == o2.result == {"value": 42.0}
    assert len(calls) == 1
    files = os.listdir(tmp_path)
    assert len(files) == 1 and files[0].endswith(".json")
    rec = json.loads((tmp_path / files[0]).read_text())
    assert rec["provenance"] == "unit test"
    cache.compute("answer", "test oracle", {"k": 2}, fn)
    assert len(calls) == 2
    assert isinstance(o1, Oracle)


def test_oracle_cache_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv("MANIFOLD_MCMC_ORACLE_CACHE", str(tmp_path / "c"))
    assert OracleCache().root == tmp_path / "c"
