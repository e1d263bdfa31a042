"""Closed-form short-maturity expansions, skew estimation and power-law fitting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .fbm import BetaQuadrature, OUBank, init_bank_zero, simulate_drivers
from .models import LsvSpec, MarketState, RoughSpec
from .numerics import LinFit, RngStream, as_generator, gamma_fn, least_squares_line, norm_cdf, norm_pdf
from .pricing import PutQuote, implied_vol, mc_put_paths

__all__ = [
    "CorrelationLaw",
    "McParams",
    "PowerLawFit",
    "PowerLawError",
    "correlation_law",
    "correlation_level",
    "SkewEstimate",
    "Theorem1Terms",
    "Theorem3Terms",
    "expansion_price",
    "f_theta",
    "f_theta_variance",
    "fit_power_law",
    "ks_two_sample",
    "regular_skew_limit",
    "rough_skew_coefficient",
    "skew_estimate",
    "theorem1_price",
    "theorem1_terms",
    "theorem2_iv",
    "theorem3_terms",
]


def _delta(z: float, theta: float) -> float:
    sq = math.sqrt(theta)
    return math.expm1(sq * z) / sq


def expansion_price(delta: float, v: float, correction: float) -> float:
    """Delta Phi(Delta/v) + (v + correction) phi(Delta/v): the normalized P / (S sqrt(theta))."""
    x = delta / v
    return float(delta * norm_cdf(x) + (v + correction) * norm_pdf(x))


def _lsv_point(spec: LsvSpec, state: MarketState):
    s = np.array([float(np.ravel(state.s)[0])])
    y = np.asarray(state.y, dtype=float).reshape(1, spec.dim_y)
    t = state.t
    v = float(np.ravel(spec.v(s, y, t))[0])
    dvds = float(np.ravel(spec.dv_ds(s, y, t))[0])
    grad = np.asarray(spec.grad_y_v(s, y, t), dtype=float).reshape(spec.dim_y)
    eta = spec.eta(s, y, t).reshape(spec.dim_y)
    return s[0], v, dvds, grad, eta


def regular_skew_limit(spec: LsvSpec, state: MarketState) -> float:
    """Limit of the finite-difference ATM skew: (S dv/ds + eta . grad_y log v) / 2."""
    s, v, dvds, grad, eta = _lsv_point(spec, state)
    return 0.5 * (s * dvds + float(eta @ grad) / v)


@dataclass(frozen=True)
class Theorem1Terms:
    delta: float
    v: float
    alpha: float
    z: float
    theta: float

    def price(self) -> float:
        return expansion_price(self.delta, self.v, self.alpha * math.sqrt(self.theta))


def theorem1_terms(spec: LsvSpec, state: MarketState, z: float, theta: float) -> Theorem1Terms:
    s, v, dvds, grad, eta = _lsv_point(spec, state)
    alpha = 0.5 * z * (v + s * dvds + float(eta @ grad) / v)
    return Theorem1Terms(_delta(z, theta), v, alpha, z, theta)


def theorem1_price(spec: LsvSpec, state: MarketState, z: float, theta: float) -> float:
    """Two-term expansion of E[(S e^{sqrt(theta) z} - S_{t+theta})_+ | F_t] / (S sqrt(theta))."""
    return theorem1_terms(spec, state, z, theta).price()


def theorem2_iv(spec: LsvSpec, state: MarketState, z: float, theta: float) -> float:
    s, v, dvds, grad, eta = _lsv_point(spec, state)
    return v + (s * dvds + float(eta @ grad) / v) * math.sqrt(theta) * z / 2.0


# ---------------------------------------------------------------- rough regime

def _log_trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    x = np.log(nodes)
    w = np.empty_like(x)
    w[1:-1] = 0.5 * (x[2:] - x[:-2])
    w[0] = 0.5 * (x[1] - x[0])
    w[-1] = 0.5 * (x[-1] - x[-2])
    return w * nodes


def _one_minus_x_minus_exp(x: np.ndarray) -> np.ndarray:
    """1 - x - e^{-x} without cancellation for small x."""
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = -xs * xs * (0.5 - xs / 6.0 + xs * xs / 24.0)
    return np.where(small, series, -(x + np.expm1(-np.where(small, 1.0, x))))


def _f_theta_kernel(q: BetaQuadrature, theta: float) -> np.ndarray:
    if not theta > 0:
        raise ValueError("theta must be positive")
    lo, hi = q.nodes[0], q.nodes[-1]
    need_lo, need_hi = 1e-4 / theta, 1e6 / theta
    if lo > need_lo or hi < need_hi:
        raise ValueError(
            f"beta ladder [{lo:.3g}, {hi:.3g}] is too narrow for theta={theta:g}; "
            f"it must span at least [{need_lo:.3g}, {need_hi:.3g}]"
        )
    h = q.hurst
    g = q.nodes
    return theta ** (-h - 1.0) * _log_trapezoid_weights(g) * g ** (-1.5 - h) * _one_minus_x_minus_exp(theta * g)


def f_theta(bank: OUBank, theta: float):
    """History functional int beta^{-3/2-H} (1 - beta - e^{-beta}) theta^{-1/2} Z^{beta/theta} dbeta.

    Evaluated after the substitution beta = theta * gamma directly on the bank's
    own nodes gamma_j, so no interpolation between nodes is needed.
    """
    return bank.z @ _f_theta_kernel(bank.quadrature, theta)


def f_theta_variance(q: BetaQuadrature, theta: float) -> float:
    """Var(F^theta) of the discrete functional under a stationary bank."""
    k = _f_theta_kernel(q, theta)
    g = q.nodes
    return float(k @ (1.0 / (g[:, None] + g[None, :])) @ k)


def rough_coefficient_factor(h: float) -> float:
    """Gamma(1/2 - H) / ((1/2 + H)(3/2 + H))."""
    return gamma_fn(0.5 - h) / ((0.5 + h) * (1.5 + h))


def _rough_point(spec: RoughSpec, state: MarketState):
    s = np.array([float(np.ravel(state.s)[0])])
    y = np.array([float(np.ravel(state.y)[0])])
    v = float(np.ravel(spec.v(s, y, state.t))[0])
    dvdy = float(np.ravel(spec.dv_dy(s, y, state.t))[0])
    rho = float(np.ravel(spec.rho(y))[0])
    return v, dvdy, rho


def rough_skew_coefficient(spec: RoughSpec, state: MarketState, c_hat: float) -> float:
    """c Gamma(1/2-H) / ((1/2+H)(3/2+H)) rho(Y) d_y log v: the skew is this times theta^{H-1/2}."""
    v, dvdy, rho = _rough_point(spec, state)
    return c_hat * rough_coefficient_factor(spec.hurst) * rho * dvdy / v


@dataclass(frozen=True)
class Theorem3Terms:
    """alpha^theta = skew_coeff * z + level_term, with level_term = c F^theta d_y v."""

    skew_coeff: float
    f_theta: float
    level_term: float
    z: float
    theta: float
    v: float
    hurst: float

    @property
    def alpha(self) -> float:
        return self.skew_coeff * self.z + self.level_term

    @property
    def iv(self) -> float:
        return self.v + self.alpha * self.theta**self.hurst

    def price(self) -> float:
        return expansion_price(_delta(self.z, self.theta), self.v, self.alpha * self.theta**self.hurst)


def theorem3_terms(spec: RoughSpec, state: MarketState, z: float, theta: float) -> Theorem3Terms:
    if state.bank is None:
        raise ValueError("rough expansion needs the OU bank of the conditioning state")
    bank = state.bank
    if bank.z.ndim != 1:
        raise ValueError("pass a single-path bank")
    q = bank.quadrature
    v, dvdy, _ = _rough_point(spec, state)
    coeff = rough_skew_coefficient(spec, state, q.c_hat)
    f = float(f_theta(bank, theta))
    return Theorem3Terms(coeff, f, q.c_hat * f * dvdy, z, theta, v, spec.hurst)


# ------------------------------------------------------------------- estimation

@dataclass(frozen=True)
class McParams:
    n_paths: int = 100_000
    n_steps: int = 50
    threads: int = 1
    block_size: int = 20_000


@dataclass(frozen=True)
class SkewEstimate:
    theta: float
    z: float
    zeta: float
    value: float
    stderr: float
    iv_z: float = float("nan")
    iv_zeta: float = float("nan")


def skew_estimate(spec, state: MarketState, z: float, zeta: float, theta: float,
                  mc: McParams, rng: RngStream) -> SkewEstimate:
    """(sigma(sqrt(theta) z) - sigma(sqrt(theta) zeta)) / (sqrt(theta) (z - zeta)) on common paths."""
    if z == zeta:
        raise ValueError("skew needs two distinct strikes")
    sq = math.sqrt(theta)
    paths = mc_put_paths(spec, state, [sq * z, sq * zeta], theta, mc.n_paths, mc.n_steps, rng,
                         mc.threads, mc.block_size)
    prices, cov = paths.prices, paths.covariance()
    ivs = []
    for i, zz in enumerate((z, zeta)):
        try:
            ivs.append(implied_vol(PutQuote(sq * zz, theta, float(prices[i]), math.sqrt(cov[i, i]))))
        except (ValueError, ArithmeticError) as exc:
            raise type(exc)(f"implied vol failed at strike z={zz} (theta={theta:g}): {exc}") from exc
    a, b = ivs
    grad = np.array([1.0 / a.vega, -1.0 / b.vega])
    var = float(grad @ cov @ grad)
    denom = sq * (z - zeta)
    return SkewEstimate(theta, z, zeta, (a.iv - b.iv) / denom, math.sqrt(max(var, 0.0)) / abs(denom), a.iv, b.iv)


class PowerLawError(ValueError):
    pass


@dataclass(frozen=True)
class PowerLawFit:
    slope: float
    log_intercept: float
    fit: LinFit
    theta_grid: tuple
    excluded: tuple = field(default=())
    sign: float = 1.0

    @property
    def amplitude(self) -> float:
        return math.exp(self.log_intercept)


def fit_power_law(estimates, max_rel_se: float = 0.2, min_points: int = 4, min_decades: float = 2.0) -> PowerLawFit:
    """OLS of log|skew| on log(theta); noisy points (stderr/|value| > max_rel_se) are excluded."""
    est = list(estimates)
    if not est:
        raise PowerLawError("no skew estimates")
    pairs = {(e.z, e.zeta) for e in est}
    if len(pairs) > 1:
        raise PowerLawError(f"estimates mix strike pairs {sorted(pairs)}")
    used, dropped = [], []
    for e in est:
        if e.value != 0.0 and e.stderr / abs(e.value) <= max_rel_se:
            used.append(e)
        else:
            dropped.append(e.theta)
    if len(used) < min_points:
        raise PowerLawError(f"only {len(used)} usable points (need {min_points}); excluded thetas {dropped}")
    signs = {math.copysign(1.0, e.value) for e in used}
    if len(signs) > 1:
        raise PowerLawError("skew changes sign across the maturity grid; no single power law")
    th = np.array([e.theta for e in used])
    if math.log10(th.max() / th.min()) < min_decades - 1e-9:
        raise PowerLawError(f"usable maturities span less than {min_decades} decades")
    fit = least_squares_line(np.log(th), np.log([abs(e.value) for e in used]))
    return PowerLawFit(fit.slope, fit.intercept, fit, tuple(th), tuple(dropped), signs.pop())


# ----------------------------------------------------------------------- tests

def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic with its asymptotic p-value."""
    x = np.sort(np.asarray(a, dtype=float))
    y = np.sort(np.asarray(b, dtype=float))
    if x.size < 100 or y.size < 100:
        raise ValueError("KS test needs at least 100 observations per sample")
    pts = np.concatenate((x, y))
    cdf_x = np.searchsorted(x, pts, side="right") / x.size
    cdf_y = np.searchsorted(y, pts, side="right") / y.size
    d = float(np.max(np.abs(cdf_x - cdf_y)))
    en = x.size * y.size / (x.size + y.size)
    return d, float(special.kolmogorov(math.sqrt(en) * d))


# ---------------------------------------------------------- correlation law

def correlation_level(q: BetaQuadrature, rho: float) -> float:
    """rho c Gamma(1/2-H) / (1/2+H): E[B_theta W^H_theta] / theta^{H+1/2} for constant rho."""
    h = q.hurst
    return rho * q.c_hat * gamma_fn(0.5 - h) / (0.5 + h)


@dataclass(frozen=True)
class CorrelationLaw:
    thetas: np.ndarray
    means: np.ndarray
    stderrs: np.ndarray
    fit: LinFit
    level_theory: float
    hurst: float

    @property
    def levels(self) -> np.ndarray:
        """Per-maturity estimates of E[dB dW^H] / theta^{H+1/2}."""
        return self.means / self.thetas ** (self.hurst + 0.5)

    @property
    def level_stderrs(self) -> np.ndarray:
        return self.stderrs / self.thetas ** (self.hurst + 0.5)


def correlation_law(q: BetaQuadrature, rho: float, thetas, n_paths: int, rng, n_steps: int = 10) -> CorrelationLaw:
    """Monte Carlo E[(B_{t+theta}-B_t)(W^H_{t+theta}-W^H_t)] on a history-free bank, per maturity."""
    gen = as_generator(rng)
    th = np.asarray(thetas, dtype=float)
    means, ses = [], []
    for theta in th:
        drv = simulate_drivers(q, np.linspace(0.0, theta, n_steps + 1), n_paths, gen, bank=init_bank_zero(q))
        db = rho * drv.dW.sum(axis=1) + math.sqrt(1.0 - rho * rho) * drv.dW_perp.sum(axis=1)
        prod = db * drv.wh[:, -1]
        means.append(prod.mean())
        ses.append(prod.std(ddof=1) / math.sqrt(n_paths))
    means, ses = np.array(means), np.array(ses)
    if np.any(means == 0) or len({math.copysign(1.0, m) for m in means}) > 1:
        raise ValueError("cross moments change sign; cannot regress on a log scale")
    fit = least_squares_line(np.log(th), np.log(np.abs(means)))
    return CorrelationLaw(th, means, ses, fit, correlation_level(q, rho), q.hurst)
