import math

import numpy as np
import pytest

from roughskew.fbm import build_quadrature, init_bank_stationary, init_bank_zero
from roughskew.models import (
    LsvSpec,
    MarketState,
    RoughSpec,
    SimulationError,
    condition_and_restart,
    model_zoo,
    simulate,
)
from roughskew.numerics import RngStream


def test_zoo_names_and_unknown():
    for name in ("bs", "lsv-linear", "heston", "rough-bounded", "rough-exp"):
        spec = model_zoo(name)
        assert spec.name == name
        assert spec.compliance
    with pytest.raises(KeyError):
        model_zoo("sabr")


def test_rough_bounded_log_derivative():
    spec = model_zoo("rough-bounded", {"a": 0.5, "y_scale": 1.0})
    y = np.array([0.3])
    s = np.ones(1)
    dlog = spec.dv_dy(s, y, 0.0)[0] / spec.v(s, y, 0.0)[0]
    # 0.5 sech^2(0.3) / (1 + 0.5 tanh 0.3), mpmath
    assert dlog == pytest.approx(0.399394197393029679590258950367, rel=1e-13)


def test_y_scale_rescales_derivative():
    a = model_zoo("rough-bounded", {"y_scale": 1.0})
    b = model_zoo("rough-bounded", {"y_scale": 5.0})
    s, y = np.ones(1), np.array([0.0])
    assert b.dv_dy(s, y, 0)[0] == pytest.approx(a.dv_dy(s, y, 0)[0] / 5)
    assert b.params["y_scale"] == 5.0
    with pytest.raises(ValueError):
        model_zoo("rough-bounded", {"y_scale": 0})


def test_invalid_parameters_rejected():
    with pytest.raises(ValueError):
        model_zoo("lsv-linear", {"rho": -1.5})
    with pytest.raises(ValueError):
        model_zoo("lsv-linear", {"a": 1.2})
    with pytest.raises(ValueError):
        model_zoo("bs", {"sigma0": 0})
    with pytest.raises(ValueError):
        model_zoo("rough-bounded", {"hurst": 0.6})


def test_wrong_derivative_callback_is_caught():
    with pytest.raises(ValueError, match="grad_y_v"):
        LsvSpec(
            v=lambda s, y, t: 0.2 + 0.1 * np.tanh(y[:, 0]),
            dv_ds=lambda s, y, t: np.zeros(np.shape(s)),
            grad_y_v=lambda s, y, t: 0.2 * np.ones((np.size(s), 1)),
            b=lambda s, y, t: -y,
            c=lambda s, y, t: np.ones((np.size(s), 1, 1)),
            rho=lambda s, y, t: np.zeros((np.size(s), 1)),
        )
    with pytest.raises(ValueError, match="dv_dy"):
        RoughSpec(
            v=lambda s, y, t: np.exp(y) * np.ones(np.shape(s)),
            dv_ds=lambda s, y, t: np.zeros(np.broadcast(s, y).shape),
            dv_dy=lambda s, y, t: np.ones(np.broadcast(s, y).shape),
            b=lambda y: -y,
            rho=lambda y: np.zeros(np.shape(y)),
            hurst=0.1,
        )


def test_market_state_requires_positive_spot():
    with pytest.raises(ValueError):
        MarketState(0.0, 0.0)


def test_lsv_martingale_and_reproducibility():
    spec = model_zoo("lsv-linear")
    init = MarketState(1.0, np.zeros(1))
    a = simulate(spec, init, 0.5, 50, RngStream(1).generator(), n_paths=20_000, antithetic=True)
    b = simulate(spec, init, 0.5, 50, RngStream(1).generator(), n_paths=20_000, antithetic=True)
    assert np.array_equal(a.terminal.s, b.terminal.s)
    s = a.terminal.s
    assert abs(s.mean() - 1.0) < 4 * s.std() / math.sqrt(s.size)
    assert a.s_path.shape == (20_000, 51)


def test_rough_martingale_and_bank_carry():
    spec = model_zoo("rough-bounded")
    q = build_quadrature(0.1)
    init = MarketState(1.0, 0.0, init_bank_zero(q))
    out = simulate(spec, init, 0.25, 25, RngStream(2).generator(), n_paths=20_000, antithetic=True, record=False)
    s = out.terminal.s
    assert abs(s.mean() - 1.0) < 4 * s.std() / math.sqrt(s.size)
    assert out.terminal.bank.z.shape == (20_000, q.n_nodes)
    assert out.terminal.bank.time == pytest.approx(0.25)
    assert out.terminal.t == pytest.approx(0.25)


def test_rough_requires_matching_bank():
    spec = model_zoo("rough-bounded", {"hurst": 0.1})
    with pytest.raises(ValueError):
        simulate(spec, MarketState(1.0, 0.0), 0.1, 5, RngStream(0).generator())
    bank = init_bank_zero(build_quadrature(0.3))
    with pytest.raises(ValueError):
        simulate(spec, MarketState(1.0, 0.0, bank), 0.1, 5, RngStream(0).generator())


def test_constant_vol_log_return_law():
    spec = model_zoo("bs", {"sigma0": 0.3})
    out = simulate(spec, MarketState(1.0, np.zeros(1)), 1.0, 4, RngStream(3).generator(), n_paths=40_000)
    x = np.log(out.terminal.s)
    assert x.mean() == pytest.approx(-0.045, abs=4 * 0.3 / 200)
    assert x.std() == pytest.approx(0.3, rel=0.02)
    assert np.allclose(np.log(out.terminal.s), -0.045 + 0.3 * out.b_increment)


def test_restart_continues_paths():
    spec = model_zoo("rough-bounded")
    q = build_quadrature(0.1)
    bank = init_bank_stationary(q, RngStream(4).generator(), 10)
    init = MarketState(np.ones(10), np.zeros(10), bank)
    first = simulate(spec, init, 0.1, 10, RngStream(5).generator())
    second = condition_and_restart(first, spec, 0.1, 10, RngStream(6).generator())
    assert np.allclose(second.s_path[:, 0], first.terminal.s)
    assert second.grid[0] == pytest.approx(0.1)


def test_simulation_error_on_bad_volatility():
    spec = model_zoo("rough-exp", {"eta": 100.0})
    q = build_quadrature(0.1)
    init = MarketState(1.0, 8.0, init_bank_zero(q))
    with np.errstate(over="ignore"), pytest.raises(SimulationError):
        simulate(spec, init, 0.1, 5, RngStream(7).generator(), n_paths=4)


def test_path_csv(tmp_path):
    spec = model_zoo("rough-bounded")
    init = MarketState(1.0, 0.0, init_bank_zero(build_quadrature(0.1)))
    out = simulate(spec, init, 0.1, 4, RngStream(8).generator(), n_paths=2)
    out.to_csv(tmp_path / "p.csv", index=1)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "t,S,Y,WH" and len(lines) == 6
