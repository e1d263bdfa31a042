"""Black-Scholes put, implied-volatility inversion and the Monte Carlo put pricer.

All prices are normalized by spot: a put with log-moneyness k (strike S e^k)
and time-to-maturity theta is worth S * bs_put(k, theta, sigma).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .models import LsvSpec, MarketState, RoughSpec, simulate
from .numerics import RngStream, norm_cdf, norm_pdf

__all__ = [
    "AboveUpperBoundError",
    "BelowIntrinsicError",
    "ConvergenceError",
    "IVPoint",
    "McPaths",
    "NoArbitrageError",
    "PutQuote",
    "bs_put",
    "bs_vega",
    "implied_vol",
    "mc_put",
    "mc_put_paths",
]

SIGMA_LO = 1e-8
SIGMA_HI = 10.0
MAX_ITER = 200
MIN_PATHS = 100
DEFAULT_BLOCK = 20_000
_SQRT2 = math.sqrt(2.0)


class NoArbitrageError(ValueError):
    code = "no-arbitrage"


class BelowIntrinsicError(NoArbitrageError):
    code = "below-intrinsic"


class AboveUpperBoundError(NoArbitrageError):
    code = "above-upper-bound"


class ConvergenceError(ArithmeticError):
    pass


@dataclass(frozen=True)
class PutQuote:
    k: float
    theta: float
    price: float
    mc_stderr: float = 0.0

    @property
    def z(self) -> float:
        return self.k / math.sqrt(self.theta)


@dataclass(frozen=True)
class IVPoint:
    z: float
    theta: float
    iv: float
    iv_stderr: float = 0.0
    vega: float = float("nan")


def _check_domain(theta, sigma):
    if np.any(np.asarray(theta) <= 0):
        raise ValueError("time-to-maturity must be positive")
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("volatility must be positive")


def _otm_put(k, theta, sigma):
    """Out-of-the-money put (k <= 0); scaled-erfc form in the far wing."""
    sq = sigma * np.sqrt(theta)
    d1 = (-k + 0.5 * sq * sq) / sq
    d2 = d1 - sq
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        direct = np.exp(k) * norm_cdf(-d2) - norm_cdf(-d1)
        wing = 0.5 * np.exp(-0.5 * d1 * d1) * (special.erfcx(d2 / _SQRT2) - special.erfcx(d1 / _SQRT2))
    return np.where(d2 > 5.0, wing, direct)


def _log_otm_put(k, theta, sigma):
    sq = sigma * math.sqrt(theta)
    d1 = (-k + 0.5 * sq * sq) / sq
    d2 = d1 - sq
    if d2 > 5.0:
        diff = special.erfcx(d2 / _SQRT2) - special.erfcx(d1 / _SQRT2)
        return math.log(0.5) - 0.5 * d1 * d1 + math.log(diff) if diff > 0 else -math.inf
    p = math.exp(k) * float(norm_cdf(-d2)) - float(norm_cdf(-d1))
    return math.log(p) if p > 0 else -math.inf


def bs_put(k, theta, sigma):
    """e^k Phi(-d2) - Phi(-d1), with d1 = (-k + sigma^2 theta / 2) / (sigma sqrt(theta))."""
    _check_domain(theta, sigma)
    k = np.asarray(k, dtype=float)
    # in-the-money puts via parity with the out-of-the-money call, C(k) = e^k P(-k)
    kk = -np.abs(k)
    otm = _otm_put(kk, theta, sigma)
    out = np.where(k > 0, np.exp(k) * otm + np.expm1(np.maximum(k, 0.0)), otm)
    return out if out.ndim else float(out)


def bs_vega(k, theta, sigma):
    """d bs_put / d sigma = sqrt(theta) phi(d1)."""
    _check_domain(theta, sigma)
    sq = sigma * np.sqrt(theta)
    d1 = (-np.asarray(k, dtype=float) + 0.5 * sq * sq) / sq
    out = np.sqrt(theta) * norm_pdf(d1)
    return out if np.ndim(out) else float(out)


def _atm_guess(price, theta):
    return price * math.sqrt(2.0 * math.pi / theta)


def implied_vol(quote: PutQuote) -> IVPoint:
    """Safeguarded Newton inversion of :func:`bs_put`.

    Newton runs on the log of the out-of-the-money price (well scaled in the
    wings where vega is tiny); any step leaving the current bracket is replaced
    by bisection.
    """
    k, theta, price = float(quote.k), float(quote.theta), float(quote.price)
    if not theta > 0:
        raise ValueError("time-to-maturity must be positive")
    intrinsic = max(math.expm1(k), 0.0)
    upper = math.exp(k)
    if not price > intrinsic:
        raise BelowIntrinsicError(f"put price {price!r} is not above intrinsic value {intrinsic!r} (k={k}, theta={theta})")
    if not price < upper:
        raise AboveUpperBoundError(f"put price {price!r} is not below the upper bound e^k = {upper!r}")
    kk = -abs(k)
    target = (price - intrinsic) * math.exp(-max(k, 0.0))
    log_target = math.log(target)

    def f(sig):
        return _log_otm_put(kk, theta, sig) - log_target

    lo, hi = SIGMA_LO, SIGMA_HI
    f_hi = f(hi)
    while f_hi < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e6:
            raise ConvergenceError(f"no volatility below {hi:g} reproduces price {price!r}")
        f_hi = f(hi)
    if k == 0.0:
        sig = _atm_guess(target, theta)
    else:
        sig = math.sqrt(2.0 * abs(kk) / theta)
    if not lo < sig < hi:
        sig = math.sqrt(lo * hi)

    for _ in range(MAX_ITER):
        fs = f(sig)
        if fs == 0.0:
            break
        if fs > 0.0:
            hi = sig
        else:
            lo = sig
        otm = math.exp(_log_otm_put(kk, theta, sig))
        vega = bs_vega(kk, theta, sig)
        new = sig - fs * otm / vega if vega > 0 and otm > 0 else float("nan")
        if not lo < new < hi:
            new = 0.5 * (lo + hi) if hi / lo < 4.0 else math.sqrt(lo * hi)
        if abs(new - sig) <= 4e-16 * sig or hi - lo <= 4e-16 * hi:
            sig = new
            break
        sig = new
    else:
        raise ConvergenceError(
            f"implied vol did not converge in {MAX_ITER} iterations; bracket [{lo!r}, {hi!r}] "
            f"for k={k}, theta={theta}, price={price!r}"
        )
    vega = bs_vega(k, theta, sig)
    se = quote.mc_stderr / vega if quote.mc_stderr and vega > 0 else (0.0 if not quote.mc_stderr else math.inf)
    return IVPoint(k / math.sqrt(theta), theta, sig, se, vega)


# ------------------------------------------------------------------ Monte Carlo

@dataclass
class McPaths:
    """Per-pair control-variate-adjusted payoffs from one common set of paths.

    ``adjusted`` has shape (n_pairs, n_strikes): each row averages an antithetic
    pair, so rows are i.i.d. and covariances across strikes are direct.
    """

    ks: np.ndarray
    theta: float
    adjusted: np.ndarray
    raw_mean: np.ndarray
    cv_coef: np.ndarray
    n_paths: int

    @property
    def prices(self) -> np.ndarray:
        return self.adjusted.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        m = self.adjusted.shape[0]
        return self.adjusted.std(axis=0, ddof=1) / math.sqrt(m)

    def covariance(self) -> np.ndarray:
        """Covariance matrix of the price estimates across strikes."""
        return np.atleast_2d(np.cov(self.adjusted, rowvar=False)) / self.adjusted.shape[0]

    def quote(self, i: int = 0) -> PutQuote:
        return PutQuote(float(self.ks[i]), self.theta, float(self.prices[i]), float(self.stderr[i]))


def _frozen_vol(spec, init: MarketState) -> float:
    s = np.atleast_1d(np.asarray(init.s, dtype=float))[:1]
    if isinstance(spec, RoughSpec):
        y = np.atleast_1d(np.asarray(init.y, dtype=float))[:1]
    else:
        y = np.asarray(init.y, dtype=float).reshape(-1)[: spec.dim_y].reshape(1, -1)
    return float(np.asarray(spec.v(s, y, init.t)).ravel()[0])


def _block_payoffs(spec, init, ks, theta, n, n_steps, stream: RngStream, sigma0):
    bundle = simulate(spec, init, theta, n_steps, stream.generator(), n_paths=n, antithetic=True, record=False)
    ratio = bundle.terminal.s / np.asarray(init.s, dtype=float)
    strikes = np.exp(ks)[None, :]
    y = np.maximum(strikes - ratio[:, None], 0.0)
    s_cv = np.exp(-0.5 * sigma0 * sigma0 * theta + sigma0 * bundle.b_increment)
    x = np.maximum(strikes - s_cv[:, None], 0.0)
    return y, x


def mc_put_paths(spec, init: MarketState, ks, theta: float, n_paths: int, n_steps: int, rng,
                 threads: int = 1, block_size: int = DEFAULT_BLOCK) -> McPaths:
    """Simulate once and price puts at every log-moneyness in ``ks``.

    Paths are generated in fixed blocks, block ``i`` drawing from ``rng.split(i)``,
    so the result depends on (seed, path index) only and not on ``threads``.
    """
    if n_paths < MIN_PATHS:
        raise ValueError(f"refusing Monte Carlo with {n_paths} < {MIN_PATHS} paths")
    if theta <= 0:
        raise ValueError("time-to-maturity must be positive")
    if isinstance(spec, RoughSpec) and init.bank is None:
        raise ValueError("rough model pricing needs an initial state with an OU bank")
    if np.ndim(init.s):
        raise ValueError("Monte Carlo pricing conditions on a single initial state")
    if not isinstance(rng, RngStream):
        raise TypeError("mc_put_paths needs an RngStream so that blocks can be split")
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    block_size -= block_size % 2
    n_paths -= n_paths % 2
    sizes = [block_size] * (n_paths // block_size)
    if n_paths % block_size:
        sizes.append(n_paths % block_size)
    sigma0 = _frozen_vol(spec, init)

    def run(i):
        return _block_payoffs(spec, init, ks, theta, sizes[i], n_steps, rng.split(i), sigma0)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(i) for i in range(len(sizes))]

    def pairs(a, n):
        h = n // 2
        return 0.5 * (a[:h] + a[h:])

    y = np.concatenate([pairs(p[0], n) for p, n in zip(parts, sizes)])
    x = np.concatenate([pairs(p[1], n) for p, n in zip(parts, sizes)])
    ex = np.atleast_1d(bs_put(ks, theta, sigma0))
    # a control with no sample spread carries no slope information; fall back to the
    # design coefficient 1, which is exact whenever the payoff equals the control
    coef = np.ones(ks.size)
    for j in range(ks.size):
        xc = x[:, j] - x[:, j].mean()
        vx = float(xc @ xc)
        if vx > 0.0:
            coef[j] = float(xc @ (y[:, j] - y[:, j].mean())) / vx
    adjusted = y - coef * (x - ex)
    return McPaths(ks, theta, adjusted, y.mean(axis=0), coef, n_paths)


def mc_put(spec, init: MarketState, z: float, theta: float, n_paths: int, n_steps: int, rng,
           threads: int = 1, block_size: int = DEFAULT_BLOCK) -> PutQuote:
    """Estimate E[(S_t e^{sqrt(theta) z} - S_{t+theta})_+ | F_t] / S_t."""
    k = math.sqrt(theta) * z
    return mc_put_paths(spec, init, [k], theta, n_paths, n_steps, rng, threads, block_size).quote(0)
