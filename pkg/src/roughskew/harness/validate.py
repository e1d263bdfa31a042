"""Invariant suites: ``quick`` is deterministic, ``full`` adds the statistical checks."""
from __future__ import annotations

import dataclasses
import math
import time

import numpy as np

from ..asymptotics import (
    McParams,
    SkewEstimate,
    correlation_law,
    f_theta,
    fit_power_law,
    ks_two_sample,
    rough_coefficient_factor,
    skew_estimate,
    theorem1_terms,
    theorem2_iv,
    theorem3_terms,
)
from ..fbm import (
    build_quadrature,
    fbm_covariance,
    init_bank_stationary,
    init_bank_zero,
    lemma1_decomposition_check,
    simulate_drivers,
)
from ..models import MarketState, model_zoo
from ..numerics import RngStream, gamma_fn
from ..pricing import PutQuote, bs_put, bs_vega, implied_vol, mc_put
from .config import DEFAULTS, format_config, parse_config
from .runner import RunReport, restart_ks

__all__ = ["MUTATIONS", "cmd_validate"]

MUTATIONS = ("none", "alpha-sign")
PHI_01 = 0.53982783727702899  # standard normal cdf at 0.1, tabulated


def _iv_of_expansion(terms, z: float, theta: float) -> float:
    k = math.sqrt(theta) * z
    return implied_vol(PutQuote(k, theta, terms.price() * math.sqrt(theta), 0.0)).iv


# ------------------------------------------------------------------ quick

def _quick(r: RunReport, mutate: str) -> None:
    p = bs_put(0.0, 1.0, 0.2)
    r.add("bs-put-atm", abs(p - (2 * PHI_01 - 1)) <= 1e-12, f"bs_put(0, 1, 0.2) = {p:.15f}")

    worst, checked = 0.0, 0
    for k in np.linspace(-0.3, 0.3, 13):
        for theta in (1e-4, 1e-3, 1e-2, 1e-1, 1.0):
            for sigma in (0.05, 0.1, 0.2, 0.5, 1.0):
                price = float(bs_put(k, theta, sigma))
                vega = float(bs_vega(k, theta, sigma))
                if vega == 0.0 or np.spacing(price) / vega > 1e-11:
                    continue
                checked += 1
                worst = max(worst, abs(implied_vol(PutQuote(k, theta, price, 0.0)).iv - sigma))
    r.add("iv-round-trip", worst <= 1e-10, f"max error {worst:.2e} over {checked} resolvable grid points")

    rel = 0.0
    for k, theta, sigma in [(0.1, 0.5, 0.3), (-0.2, 0.01, 0.2), (0.0, 1e-3, 0.5)]:
        h = 1e-5 * sigma
        fd = (bs_put(k, theta, sigma + h) - bs_put(k, theta, sigma - h)) / (2 * h)
        rel = max(rel, abs(fd / bs_vega(k, theta, sigma) - 1))
    r.add("vega-identity", rel <= 1e-6, f"max relative FD mismatch {rel:.2e}")

    fac = rough_coefficient_factor(0.1)
    r.add("gamma-factor", abs(fac - gamma_fn(0.4) / 0.96) <= 1e-14 and abs(fac - 2.3106) < 1e-4,
          f"Gamma(0.4)/0.96 = {fac:.6f}")

    worst_v = worst_c = 0.0
    for h in (0.1, 0.3):
        q = build_quadrature(h)
        cp = q.c_hat * gamma_fn(0.5 - h) / (0.5 + h)
        for t in np.geomspace(1e-4, 1.0, 9):
            worst_v = max(worst_v, abs(q.variance(t) / t ** (2 * h) - 1))
            worst_c = max(worst_c, abs(q.cross_covariance_w(t) / (cp * t ** (h + 0.5)) - 1))
    r.add("quadrature-variance", worst_v <= 0.01, f"max |Var W^H_t / t^2H - 1| = {worst_v:.2e}")
    r.add("quadrature-cross", worst_c <= 1e-3, f"max relative error of Cov(W_t, W^H_t) = {worst_c:.2e}")

    lsv = model_zoo("lsv-linear")
    st = MarketState(1.0, np.zeros(1))
    alpha = theorem1_terms(lsv, st, 1.0, 0.01).alpha
    iv = theorem2_iv(lsv, st, 1.0, 0.01)
    r.add("theorem1-alpha", abs(alpha + 0.075) <= 1e-12, f"alpha(z=1) = {alpha:.15f}")
    r.add("theorem2-iv", abs(iv - 0.1825) <= 1e-12, f"iv(z=1, theta=0.01) = {iv:.15f}")

    q = build_quadrature(0.1)
    rough = model_zoo("rough-bounded", {"a": 0.3})
    bank = init_bank_stationary(q, RngStream(0, 901).generator())
    st = MarketState(1.0, 0.3, bank)
    theta = 0.01
    t1, t2 = theorem3_terms(rough, st, 0.5, theta), theorem3_terms(rough, st, -0.5, theta)
    skew = (t1.iv - t2.iv) / math.sqrt(theta)
    want = t1.skew_coeff * theta ** (0.1 - 0.5)
    r.add("f-term-cancellation", abs(skew / want - 1) <= 1e-12 and t1.level_term == t2.level_term,
          f"expansion skew {skew:.12g} vs coefficient {want:.12g}")
    z0 = f_theta(init_bank_zero(q), theta)
    r.add("f-theta-zero-bank", z0 == 0.0, f"F on an all-zero bank = {z0}")

    direct, split = lemma1_decomposition_check(q, bank, 0.0, 0.05, RngStream(0, 902).generator())
    r.add("lemma1-split", abs(direct - split) <= 1e-12 * max(1.0, abs(direct)),
          f"direct {direct:.15g}, history + innovation {split:.15g}")

    bs = model_zoo("bs")
    qt = mc_put(bs, MarketState(1.0, np.zeros(1)), 0.5, 0.01, 2000, 5, RngStream(0, 903))
    exact = float(bs_put(0.05, 0.01, 0.2))
    r.add("control-variate-exact", abs(qt.price - exact) <= 1e-12, f"|mc - bs| = {abs(qt.price - exact):.2e}")

    thetas = np.geomspace(1e-4, 1e-1, 6)
    fit = fit_power_law([SkewEstimate(t, 0.5, -0.5, 2 * t ** -0.4, 0.0) for t in thetas])
    r.add("power-law-synthetic", abs(fit.slope + 0.4) <= 1e-12 and abs(fit.amplitude - 2) <= 1e-12,
          f"slope {fit.slope:.15f}, amplitude {fit.amplitude:.15f}")

    cfg = parse_config("")
    again = parse_config(format_config(cfg))
    r.add("config-round-trip", again.raw == cfg.raw and set(DEFAULTS) <= set(cfg.raw), "echo parses to the same config")

    _theorem1_exactness(r, mutate)


def _theorem1_exactness(r: RunReport, mutate: str) -> None:
    # the "bs" expansion has alpha = z v / 2 exactly; the Black-Scholes price agrees to O(theta)
    bs = model_zoo("bs")
    st = MarketState(1.0, np.zeros(1))
    worst = 0.0
    for theta in (1e-4, 1e-3):
        for z in (-0.2, 0.2, 0.4):
            terms = theorem1_terms(bs, st, z, theta)
            if mutate == "alpha-sign":
                terms = dataclasses.replace(terms, alpha=-terms.alpha)
            exact = float(bs_put(math.sqrt(theta) * z, theta, 0.2)) / math.sqrt(theta)
            worst = max(worst, abs(terms.price() - exact) / theta)
    r.add("theorem1-bs-expansion", worst <= 0.1, f"max |expansion - bs| / theta = {worst:.3g}")


# ------------------------------------------------------------------- full

def _full(r: RunReport, mutate: str, seed: int, threads: int) -> None:
    root = RngStream(seed, 950)

    # fBm covariance on a 10-point grid
    times = np.linspace(0.0, 1.0, 11)
    for j, h in enumerate((0.1, 0.3)):
        q = build_quadrature(h)
        drv = simulate_drivers(q, times, 20000, root.split(j).generator())
        x = drv.wh[:, 1:]
        emp = x.T @ x / x.shape[0]
        exact = fbm_covariance(times[1:, None], times[None, 1:], h)
        se = np.sqrt((exact.diagonal()[:, None] * exact.diagonal()[None, :] + exact**2) / x.shape[0])
        bad = np.abs(emp - exact) > np.maximum(0.01 * np.abs(exact), 3.5 * se)
        r.add(f"fbm-covariance-H{h}", not bad.any(), f"{int(bad.sum())} of {bad.size} entries outside tolerance")

    # first-order expansion vs Monte Carlo in implied-volatility space, near one standard deviation
    lsv = model_zoo("lsv-linear")
    st = MarketState(1.0, np.zeros(1))
    theta = 0.01
    for i, z in enumerate((-0.2, 0.2)):
        terms = theorem1_terms(lsv, st, z, theta)
        if mutate == "alpha-sign":
            terms = dataclasses.replace(terms, alpha=-terms.alpha)
        iv_th = _iv_of_expansion(terms, z, theta)
        ivp = implied_vol(mc_put(lsv, st, z, theta, 200000, 50, root.split(10 + i), threads))
        tol = max(3 * ivp.iv_stderr, 0.01 * math.sqrt(theta))
        r.add(f"theorem1-consistency-z{z:+g}", abs(ivp.iv - iv_th) <= tol,
              f"MC iv {ivp.iv:.5f} vs expansion iv {iv_th:.5f}, tolerance {tol:.4f}")

    est = skew_estimate(lsv, st, 0.1, -0.1, 0.01, McParams(200000, 50, threads), root.split(12))
    tol = max(3 * est.stderr, 0.1 * math.sqrt(0.01))
    r.add("lsv-skew-level", abs(est.value + 0.175) <= tol, f"skew {est.value:.5f} vs -0.175, tolerance {tol:.4f}")

    bs_rough = model_zoo("bs", {"hurst": 0.1, "rho": -0.7})
    st0 = MarketState(1.0, 0.0, init_bank_zero(build_quadrature(0.1)))
    worst = 0.0
    for i, t in enumerate((1e-3, 1e-1)):
        e = skew_estimate(bs_rough, st0, 0.1, -0.1, t, McParams(2000, 20), root.split(20 + i))
        worst = max(worst, abs(e.value) / max(3 * e.stderr, 1e-10))
    r.add("constant-vol-zero-skew", worst <= 1.0, f"max |skew| / max(3 SE, 1e-10) = {worst:.3g}")

    for j, h in enumerate((0.1, 0.3)):
        q = build_quadrature(h)
        law = correlation_law(q, -0.7, [1e-3, 1e-2, 1e-1], 100000, root.split(30 + j).generator())
        dev = np.abs(law.levels - law.level_theory) / law.level_stderrs
        ok = abs(law.fit.slope - (h + 0.5)) <= 0.05 and bool(np.all(dev <= 3))
        r.add(f"correlation-law-H{h}", ok, f"slope {law.fit.slope:.4f}, max level deviation {dev.max():.2f} SE")

    q = build_quadrature(0.1)
    a = f_theta(init_bank_stationary(q, root.split(40).generator(), 10000), 1e-3)
    b = f_theta(init_bank_stationary(q, root.split(41).generator(), 10000), 1e-1)
    d, p = ks_two_sample(a, b)
    r.add("f-theta-law", p >= 0.01, f"KS D = {d:.4f}, p = {p:.3f}")

    cfg = parse_config("restart.ks_paths = 5000", {"mc.seed": seed})
    (d, p), _ = restart_ks(cfg, model_zoo("rough-bounded"), 0.5)
    r.add("restart-ks", p >= 0.01, f"KS D = {d:.4f}, p = {p:.3f}")


def cmd_validate(level: str = "quick", mutate: str = "none", seed: int = 0, threads: int = 1,
                 out_dir=None) -> RunReport:
    """Run the invariant suites; ``mutate='alpha-sign'`` flips the sign of the first-order alpha."""
    if level not in ("quick", "full"):
        raise ValueError(f"level must be 'quick' or 'full', got {level!r}")
    if mutate not in MUTATIONS:
        raise ValueError(f"unknown mutation {mutate!r}; choose from {MUTATIONS}")
    t0 = time.perf_counter()
    r = RunReport("validate")
    r.info.append(f"level: {level}")
    r.info.append(f"mutation: {mutate}")
    _quick(r, mutate)
    if level == "full":
        _full(r, mutate, seed, threads)
    r.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        r.write(out_dir)
    return r
