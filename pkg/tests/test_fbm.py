import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughskew.fbm import (
    BetaQuadrature,
    OUBank,
    build_quadrature,
    check_hurst,
    continuum_c_h,
    fbm_covariance,
    init_bank_stationary,
    init_bank_zero,
    lemma1_decomposition_check,
    load_bank,
    sample_fbm_exact,
    save_bank,
    simulate_drivers,
    step_bank,
    wh_from_bank,
)
from roughskew.numerics import RngStream


@pytest.fixture(scope="module")
def q01():
    return build_quadrature(0.1)


def test_hurst_domain():
    for bad in (0.0, 0.5, 0.7, -0.1):
        with pytest.raises(ValueError):
            check_hurst(bad)
    assert check_hurst(0.25) == 0.25


def test_fbm_covariance_formula():
    assert fbm_covariance(1.0, 1.0, 0.1) == pytest.approx(1.0)
    # 0.5 (0.5^0.2 + 1 - 0.5^0.2) = 0.5
    assert fbm_covariance(0.5, 1.0, 0.1) == pytest.approx(0.5)
    assert fbm_covariance(0.25, 1.0, 0.25) == pytest.approx(0.5 * (0.5 + 1 - 0.75**0.5))


@pytest.mark.parametrize("h", [0.05, 0.1, 0.3, 0.45])
def test_unit_variance_normalization(h):
    q = build_quadrature(h)
    assert q.variance(1.0) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("h", [0.1, 0.3])
def test_engine_covariance_matches_fbm(h):
    q = build_quadrature(h)
    for s, t in [(0.01, 0.02), (0.1, 0.7), (0.5, 1.0), (1e-3, 1e-3)]:
        exact = float(fbm_covariance(s, t, h))
        assert q.covariance(s, t) == pytest.approx(exact, rel=5e-3)


def test_c_hat_close_to_continuum_constant():
    for h in (0.1, 0.3):
        assert build_quadrature(h).c_hat == pytest.approx(continuum_c_h(h), rel=1e-3)


def test_quadrature_rejects_bad_inputs():
    with pytest.raises(ValueError):
        build_quadrature(0.1, n_nodes=1)
    with pytest.raises(ValueError):
        build_quadrature(0.1, beta_min=10.0, beta_max=1.0)
    with pytest.raises(ValueError):
        BetaQuadrature(0.1, np.array([2.0, 1.0]), np.array([1.0, 1.0]), 1.0)


def test_step_factor_reproduces_step_covariance(q01):
    dt = 0.01
    f = q01.step_factor(dt)
    cov = f @ f.T
    assert cov[0, 0] == pytest.approx(dt, rel=1e-10)
    b = q01.nodes
    cross = -np.expm1(-b * dt) / b
    assert np.allclose(cov[0, 1:], cross, rtol=1e-6, atol=1e-14)
    assert q01.step_factor(dt) is f


def test_stationary_bank_variances(q01):
    bank = init_bank_stationary(q01, RngStream(3).generator(), 40_000)
    idx = [10, 40, 70]
    emp = bank.z[:, idx].var(axis=0)
    assert np.allclose(emp * 2 * q01.nodes[idx], 1.0, rtol=0.05)


def test_step_bank_preserves_stationarity(q01):
    gen = RngStream(4).generator()
    bank = init_bank_stationary(q01, gen, 20_000)
    new, dw, innov = step_bank(bank, 0.05, gen)
    assert new.time == pytest.approx(0.05)
    assert dw.shape == (20_000,)
    assert dw.var() == pytest.approx(0.05, rel=0.05)
    j = 40
    assert new.z[:, j].var() * 2 * q01.nodes[j] == pytest.approx(1.0, rel=0.05)


def test_wh_increment_variance(q01):
    gen = RngStream(5).generator()
    bank = init_bank_stationary(q01, gen, 20_000)
    new, _, _ = step_bank(bank, 0.25, gen)
    inc = wh_from_bank(q01, new, bank)
    assert inc.var() == pytest.approx(0.25**0.2, rel=0.05)


def test_lemma_split_is_exact(q01):
    bank = init_bank_stationary(q01, RngStream(6).generator())
    lhs, rhs = lemma1_decomposition_check(q01, bank, 0.3, 0.8, RngStream(7).generator(), wh_s=0.25)
    assert lhs == pytest.approx(rhs, abs=1e-12)
    assert lemma1_decomposition_check(q01, bank, 0.3, 0.3, None, wh_s=0.25) == (0.25, 0.25)
    with pytest.raises(ValueError):
        lemma1_decomposition_check(q01, bank, 0.8, 0.3, RngStream(7).generator())


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-4, 1.0), st.integers(0, 2**32))
def test_lemma_split_property(dt, seed):
    q = build_quadrature(0.2, n_nodes=30)
    bank = init_bank_stationary(q, RngStream(seed).generator())
    lhs, rhs = lemma1_decomposition_check(q, bank, 0.0, dt, RngStream(seed, 1).generator())
    assert lhs == pytest.approx(rhs, abs=1e-11 * max(1.0, abs(lhs)))


def test_exact_sampler_covariance():
    times = np.array([0.1, 0.5, 1.0])
    x = sample_fbm_exact(0.3, times, RngStream(8).generator(), 40_000)
    emp = x.T @ x / x.shape[0]
    exact = fbm_covariance(times[:, None], times[None, :], 0.3)
    assert np.allclose(emp, exact, atol=0.03)
    with pytest.raises(ValueError):
        sample_fbm_exact(0.3, [0.0, 1.0], None)


def test_simulate_drivers_shapes_and_reproducibility(q01):
    t = np.linspace(0, 1, 5)
    a = simulate_drivers(q01, t, 6, RngStream(9).generator())
    b = simulate_drivers(q01, t, 6, RngStream(9).generator())
    assert a.wh.shape == (6, 5) and a.dW.shape == (6, 4)
    assert np.array_equal(a.wh, b.wh)
    assert np.all(a.wh[:, 0] == 0)


def test_zero_bank_starts_history_free(q01):
    bank = init_bank_zero(q01, 3)
    assert bank.n_paths == 3 and not bank.z.any()
    with pytest.raises(ValueError):
        OUBank(q01, np.zeros(5))


def test_bank_snapshot_round_trip(q01, tmp_path):
    bank = init_bank_stationary(q01, RngStream(10).generator(), 3)
    bank.time = 0.75
    path = tmp_path / "bank.txt"
    save_bank(bank, path)
    back = load_bank(path)
    assert np.array_equal(back.z, bank.z)
    assert back.time == 0.75
    assert back.quadrature.same_as(q01)
    assert load_bank(path, q01).quadrature is q01
    text = path.read_text().replace("version 1", "version 99")
    path.write_text(text)
    with pytest.raises(ValueError):
        load_bank(path)
