"""Asset/volatility path simulation for the local-stochastic and rough models."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fbm import BetaQuadrature, DriverPath, OUBank, check_hurst, lemma_increment, step_bank
from .numerics import as_generator

__all__ = [
    "LsvSpec",
    "MarketState",
    "PathBundle",
    "RoughSpec",
    "SimulationError",
    "ZOO",
    "condition_and_restart",
    "model_zoo",
    "simulate",
    "simulate_lsv",
    "simulate_rough",
]

VOL_FLOOR = 1e-8


class SimulationError(RuntimeError):
    pass


def _fd(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


def _check_close(name, analytic, numeric, scale):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    tol = 1e-6 * np.abs(analytic) + 1e-9 * np.asarray(scale)
    bad = np.abs(analytic - numeric) > tol
    if np.any(bad):
        i = np.flatnonzero(bad.ravel())[0]
        raise ValueError(
            f"{name} callback disagrees with central differences "
            f"({analytic.ravel()[i]:.10g} vs {numeric.ravel()[i]:.10g})"
        )


@dataclass(frozen=True, eq=False)
class LsvSpec:
    """Local-stochastic volatility coefficients, vectorized over paths.

    Shapes for N paths, d factors, k Brownian drivers: ``s`` (N,), ``y`` (N, d);
    ``v``/``dv_ds`` return (N,), ``grad_y_v``/``b`` (N, d), ``c`` (N, d, k),
    ``rho`` (N, k).
    """

    v: Callable
    dv_ds: Callable
    grad_y_v: Callable
    b: Callable
    c: Callable
    rho: Callable
    dim_y: int = 1
    dim_w: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict)
    compliance: str = ""
    probe_center: float = 0.0
    probe_scale: float = 1.0

    def __post_init__(self):
        gen = np.random.default_rng(20240611)
        n = 100
        s = np.exp(gen.normal(0.0, 0.3, n))
        y = gen.normal(self.probe_center, self.probe_scale, (n, self.dim_y))
        t = 0.5
        v = self.v(s, y, t)
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("v must be positive and finite at every probe point")
        hs = 1e-6 * s
        _check_close("dv_ds", self.dv_ds(s, y, t), (self.v(s + hs, y, t) - self.v(s - hs, y, t)) / (2 * hs), v)
        grad = np.asarray(self.grad_y_v(s, y, t)).reshape(n, self.dim_y)
        for i in range(self.dim_y):
            e = np.zeros(self.dim_y)
            e[i] = 1e-6
            fd = (self.v(s, y + e, t) - self.v(s, y - e, t)) / 2e-6
            _check_close(f"grad_y_v[{i}]", grad[:, i], fd, v)
        rho = np.asarray(self.rho(s, y, t)).reshape(n, self.dim_w)
        if np.any(np.abs(rho) > 1) or np.any(np.sum(rho**2, axis=1) > 1 + 1e-12):
            raise ValueError("rho must satisfy |rho| <= 1 jointly")

    def eta(self, s, y, t):
        """eta = c rho, shape (N, d)."""
        c = np.asarray(self.c(s, y, t)).reshape(-1, self.dim_y, self.dim_w)
        rho = np.asarray(self.rho(s, y, t)).reshape(-1, self.dim_w)
        return np.einsum("nij,nj->ni", c, rho)


@dataclass(frozen=True, eq=False)
class RoughSpec:
    """Rough volatility model: Y_t = Y_0 + int b(Y) du + W^H_t, d<B, W> = rho(Y) dt."""

    v: Callable
    dv_ds: Callable
    dv_dy: Callable
    b: Callable
    rho: Callable
    hurst: float
    name: str = "custom"
    params: dict = field(default_factory=dict)
    compliance: str = ""
    b_lipschitz: float = field(init=False, default=float("nan"))

    def __post_init__(self):
        check_hurst(self.hurst)
        gen = np.random.default_rng(20240611)
        n = 100
        s = np.exp(gen.normal(0.0, 0.3, n))
        y = gen.normal(0.0, 1.0, n)
        t = 0.5
        v = self.v(s, y, t)
        if np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("v must be positive and finite at every probe point")
        hs = 1e-6 * s
        _check_close("dv_ds", self.dv_ds(s, y, t), (self.v(s + hs, y, t) - self.v(s - hs, y, t)) / (2 * hs), v)
        _check_close("dv_dy", self.dv_dy(s, y, t), _fd(lambda u: self.v(s, u, t), y, 1e-6), v)
        rho = np.asarray(self.rho(y))
        if np.any(np.abs(rho) > 1):
            raise ValueError("rho must lie in [-1, 1]")
        grid = np.linspace(-5.0, 5.0, 1001)
        bq = np.abs(np.diff(self.b(grid))) / np.diff(grid)
        lip = float(np.max(bq))
        if not math.isfinite(lip):
            raise ValueError("drift b is not finite on the probe grid")
        object.__setattr__(self, "b_lipschitz", lip)


@dataclass
class MarketState:
    s: float | np.ndarray
    y: float | np.ndarray
    bank: OUBank | None = None
    t: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.s) <= 0):
            raise ValueError("spot must be positive")


@dataclass
class PathBundle:
    grid: np.ndarray
    s_path: np.ndarray | None
    y_path: np.ndarray | None
    driver: DriverPath | None
    terminal: MarketState
    b_increment: np.ndarray
    initial: MarketState | None = None

    def to_csv(self, path, index: int = 0) -> None:
        if self.s_path is None:
            raise ValueError("bundle was simulated without path recording")
        wh = self.driver.wh[index] if self.driver is not None and self.driver.wh is not None else None
        y = self.y_path[index]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "S", "Y", "WH"])
            for k, t in enumerate(self.grid):
                yk = y[k] if np.ndim(y[k]) == 0 else y[k][0]
                w.writerow([f"{t:.17g}", f"{self.s_path[index, k]:.17g}", f"{yk:.17g}",
                            "" if wh is None else f"{wh[k]:.17g}"])


def _normals(gen, shape, antithetic):
    if antithetic:
        n = shape[0]
        if n % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        half = gen.standard_normal((n // 2, *shape[1:]))
        return np.concatenate((half, -half))
    return gen.standard_normal(shape)


def _check_vol(v, s, y, t):
    bad = ~np.isfinite(v) | (v <= 0)
    if np.any(bad):
        i = np.flatnonzero(bad)[0]
        raise SimulationError(
            f"volatility {v[i]!r} is not positive/finite at s={np.ravel(s)[i]!r}, "
            f"y={np.asarray(y)[i]!r}, t={t!r}"
        )


def _broadcast(x, n, trailing=()):
    arr = np.asarray(x, dtype=float)
    return np.broadcast_to(arr, (n, *trailing)).copy()


def _n_paths(init: MarketState, n_paths):
    if np.ndim(init.s) == 1:
        n = np.shape(init.s)[0]
        if n_paths is not None and n_paths != n:
            raise ValueError("n_paths conflicts with the per-path initial state")
        return n
    return 1 if n_paths is None else int(n_paths)


def simulate_lsv(spec: LsvSpec, init: MarketState, horizon: float, n_steps: int, rng,
                 n_paths: int | None = None, antithetic: bool = False, record: bool = True) -> PathBundle:
    """Log-Euler for S, Euler for Y, correlations frozen at each step's left end."""
    if horizon < 0 or n_steps < 1:
        raise ValueError("need horizon >= 0 and n_steps >= 1")
    gen = as_generator(rng)
    n = _n_paths(init, n_paths)
    d, k = spec.dim_y, spec.dim_w
    log_s = np.log(_broadcast(init.s, n))
    y = _broadcast(init.y, n, (d,)) if np.ndim(init.y) < 2 else np.array(init.y, dtype=float).reshape(n, d)
    grid = init.t + np.linspace(0.0, horizon, n_steps + 1)
    b_total = np.zeros(n)
    if horizon == 0:
        term = MarketState(np.exp(log_s), y.copy(), None, init.t)
        sp = np.exp(log_s)[:, None] if record else None
        return PathBundle(grid[:1], sp, y[:, None] if record else None, None, term, b_total, init)
    dt = horizon / n_steps
    sq = math.sqrt(dt)
    if record:
        s_path = np.empty((n, n_steps + 1))
        y_path = np.empty((n, n_steps + 1, d))
        s_path[:, 0] = np.exp(log_s)
        y_path[:, 0] = y
        dw_rec = np.empty((n, n_steps, k))
        dwp_rec = np.empty((n, n_steps))
    for j in range(n_steps):
        t = grid[j]
        s = np.exp(log_s)
        v = np.asarray(spec.v(s, y, t), dtype=float)
        _check_vol(v, s, y, t)
        rho = np.asarray(spec.rho(s, y, t), dtype=float).reshape(n, k)
        dw = _normals(gen, (n, k), antithetic) * sq
        dwp = _normals(gen, (n,), antithetic) * sq
        perp = np.sqrt(np.clip(1.0 - np.sum(rho**2, axis=1), 0.0, None))
        db = np.sum(rho * dw, axis=1) + perp * dwp
        drift = np.asarray(spec.b(s, y, t), dtype=float).reshape(n, d)
        diff = np.asarray(spec.c(s, y, t), dtype=float).reshape(n, d, k)
        log_s = log_s - 0.5 * v * v * dt + v * db
        y = y + drift * dt + np.einsum("nij,nj->ni", diff, dw)
        b_total += db
        if record:
            s_path[:, j + 1] = np.exp(log_s)
            y_path[:, j + 1] = y
            dw_rec[:, j] = dw
            dwp_rec[:, j] = dwp
    term = MarketState(np.exp(log_s), y, None, init.t + horizon)
    if not record:
        return PathBundle(grid, None, None, None, term, b_total, init)
    drv = DriverPath(grid, dw_rec, dwp_rec, None)
    return PathBundle(grid, s_path, y_path, drv, term, b_total, init)


def simulate_rough(spec: RoughSpec, init: MarketState, horizon: float, n_steps: int, rng,
                   n_paths: int | None = None, antithetic: bool = False, record: bool = True) -> PathBundle:
    """Rough model driven by the OU bank.

    Each step advances the bank exactly, forms the W^H increment as history term
    (from the current bank) plus innovation, and pairs the bank's dW with an
    independent dW_perp to build dB = rho(Y) dW + sqrt(1 - rho(Y)^2) dW_perp.
    """
    if init.bank is None:
        raise ValueError("rough simulation needs a MarketState carrying an OU bank")
    q: BetaQuadrature = init.bank.quadrature
    if q.hurst != spec.hurst:
        raise ValueError(f"bank quadrature has H={q.hurst} but the model has H={spec.hurst}")
    if horizon < 0 or n_steps < 1:
        raise ValueError("need horizon >= 0 and n_steps >= 1")
    gen = as_generator(rng)
    z0 = init.bank.z
    if z0.ndim == 2 and n_paths is None and np.ndim(init.s) == 0:
        n_paths = z0.shape[0]
    n = _n_paths(init, n_paths)
    if z0.ndim == 2 and z0.shape[0] != n:
        raise ValueError(f"bank carries {z0.shape[0]} paths but {n} were requested")
    log_s = np.log(_broadcast(init.s, n))
    y = _broadcast(init.y, n)
    bank = OUBank(q, np.broadcast_to(z0, (n, q.n_nodes)).copy() if z0.ndim == 1 else z0.copy(), init.bank.time)
    grid = init.t + np.linspace(0.0, horizon, n_steps + 1)
    b_total = np.zeros(n)
    if horizon == 0:
        term = MarketState(np.exp(log_s), y.copy(), bank, init.t)
        sp = np.exp(log_s)[:, None] if record else None
        return PathBundle(grid[:1], sp, y[:, None] if record else None, None, term, b_total, init)
    dt = horizon / n_steps
    sq = math.sqrt(dt)
    if record:
        s_path = np.empty((n, n_steps + 1))
        y_path = np.empty((n, n_steps + 1))
        wh = np.zeros((n, n_steps + 1))
        s_path[:, 0] = np.exp(log_s)
        y_path[:, 0] = y
        dw_rec = np.empty((n, n_steps))
        dwp_rec = np.empty((n, n_steps))
    for j in range(n_steps):
        t = grid[j]
        s = np.exp(log_s)
        v = np.asarray(spec.v(s, y, t), dtype=float)
        _check_vol(v, s, y, t)
        rho = np.asarray(spec.rho(y), dtype=float) * np.ones(n)
        z_prev = bank.z
        bank, dw, innov = step_bank(bank, dt, gen, antithetic)
        hist, fresh = lemma_increment(q, z_prev, innov, dt)
        dwh = hist + fresh
        dwp = _normals(gen, (n,), antithetic) * sq
        db = rho * dw + np.sqrt(np.clip(1.0 - rho * rho, 0.0, None)) * dwp
        log_s = log_s - 0.5 * v * v * dt + v * db
        y = y + np.asarray(spec.b(y), dtype=float) * dt + dwh
        b_total += db
        if record:
            s_path[:, j + 1] = np.exp(log_s)
            y_path[:, j + 1] = y
            wh[:, j + 1] = wh[:, j] + dwh
            dw_rec[:, j] = dw
            dwp_rec[:, j] = dwp
    term = MarketState(np.exp(log_s), y, bank, init.t + horizon)
    if not record:
        return PathBundle(grid, None, None, None, term, b_total, init)
    drv = DriverPath(grid, dw_rec, dwp_rec, wh)
    return PathBundle(grid, s_path, y_path, drv, term, b_total, init)


def simulate(spec, init, horizon, n_steps, rng, **kw) -> PathBundle:
    if isinstance(spec, RoughSpec):
        return simulate_rough(spec, init, horizon, n_steps, rng, **kw)
    return simulate_lsv(spec, init, horizon, n_steps, rng, **kw)


def condition_and_restart(bundle: PathBundle, spec, horizon2: float, n_steps2: int, rng, **kw) -> PathBundle:
    """Continue every path of ``bundle`` from its terminal Markov state."""
    if isinstance(spec, RoughSpec) and bundle.terminal.bank is None:
        raise ValueError("cannot restart a rough model without the OU bank state")
    return simulate(spec, bundle.terminal, horizon2, n_steps2, rng, **kw)


# --------------------------------------------------------------------------- zoo

def _const(value):
    return lambda *args: np.full(np.shape(args[0]), value, dtype=float)


def _zoo_bs(p):
    sigma0 = float(p.get("sigma0", 0.2))
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    note = "constant volatility; satisfies every regularity condition trivially"
    if "hurst" in p:
        return RoughSpec(
            v=lambda s, y, t: np.full(np.broadcast(s, y).shape, sigma0),
            dv_ds=lambda s, y, t: np.zeros(np.broadcast(s, y).shape),
            dv_dy=lambda s, y, t: np.zeros(np.broadcast(s, y).shape),
            b=lambda y: np.zeros(np.shape(y)),
            rho=lambda y: np.full(np.shape(y), float(p.get("rho", 0.0))),
            hurst=float(p["hurst"]), name="bs", params={"sigma0": sigma0, **p}, compliance=note,
        )
    return LsvSpec(
        v=lambda s, y, t: np.full(np.shape(s), sigma0),
        dv_ds=lambda s, y, t: np.zeros(np.shape(s)),
        grad_y_v=lambda s, y, t: np.zeros((np.size(s), 1)),
        b=lambda s, y, t: np.zeros((np.size(s), 1)),
        c=lambda s, y, t: np.zeros((np.size(s), 1, 1)),
        rho=lambda s, y, t: np.zeros((np.size(s), 1)),
        name="bs", params={"sigma0": sigma0}, compliance=note,
    )


def _tanh_vol(sigma0, a):
    if sigma0 <= 0 or not 0 <= a < 1:
        raise ValueError("need sigma0 > 0 and 0 <= a < 1 for a positive tanh volatility")

    def v(y):
        return sigma0 * (1.0 + a * np.tanh(y))

    def dv(y):
        return sigma0 * a / np.cosh(y) ** 2

    return v, dv


def _zoo_lsv_linear(p):
    sigma0 = float(p.get("sigma0", 0.2))
    a = float(p.get("a", 0.5))
    kappa = float(p.get("kappa", 1.0))
    nu = float(p.get("nu", 1.0))
    rho = float(p.get("rho", -0.7))
    if abs(rho) > 1:
        raise ValueError("rho must lie in [-1, 1]")
    v, dv = _tanh_vol(sigma0, a)
    return LsvSpec(
        v=lambda s, y, t: v(y[:, 0]),
        dv_ds=lambda s, y, t: np.zeros(np.shape(s)),
        grad_y_v=lambda s, y, t: dv(y[:, :1]),
        b=lambda s, y, t: -kappa * y,
        c=lambda s, y, t: np.full((np.shape(y)[0], 1, 1), nu),
        rho=lambda s, y, t: np.full((np.shape(y)[0], 1), rho),
        name="lsv-linear",
        params=dict(sigma0=sigma0, a=a, kappa=kappa, nu=nu, rho=rho),
        compliance="v = sigma0 (1 + a tanh y) is positive, bounded, C1 with bounded derivatives; "
        "linear drift and constant diffusion: all LSV regularity conditions hold",
    )


def _zoo_heston(p):
    kappa = float(p.get("kappa", 1.5))
    vbar = float(p.get("vbar", 0.04))
    xi = float(p.get("xi", 0.3))
    rho = float(p.get("rho", -0.7))
    eps = VOL_FLOOR

    def root(y):
        return np.sqrt(np.maximum(y, eps))

    return LsvSpec(
        v=lambda s, y, t: root(y[:, 0]),
        dv_ds=lambda s, y, t: np.zeros(np.shape(s)),
        grad_y_v=lambda s, y, t: np.where(y[:, :1] > eps, 0.5 / root(y[:, :1]), 0.0),
        b=lambda s, y, t: kappa * (vbar - y),
        c=lambda s, y, t: (xi * root(y[:, 0]))[:, None, None],
        rho=lambda s, y, t: np.full((np.shape(y)[0], 1), rho),
        name="heston",
        params=dict(kappa=kappa, vbar=vbar, xi=xi, rho=rho),
        compliance="v = sqrt(max(y, 1e-8)); grad_y v is unbounded near the floor, so the "
        "bounded-derivative condition fails: desk-scale benchmark only",
        probe_center=vbar,
        probe_scale=vbar / 8.0,
    )


def _rough_tanh(p):
    sigma0 = float(p.get("sigma0", 0.2))
    a = float(p.get("a", 0.5))
    y_scale = float(p.get("y_scale", 1.0))
    kappa = float(p.get("kappa", 1.0))
    rho = float(p.get("rho", -0.7))
    hurst = float(p.get("hurst", 0.1))
    if y_scale <= 0:
        raise ValueError("y_scale must be positive")
    if abs(rho) > 1:
        raise ValueError("rho must lie in [-1, 1]")
    # y_scale sets where v bends relative to the O(theta^H) excursions of Y
    v, dv = _tanh_vol(sigma0, a)
    return RoughSpec(
        v=lambda s, y, t: v(np.asarray(y) / y_scale) * np.ones(np.shape(s)),
        dv_ds=lambda s, y, t: np.zeros(np.broadcast(s, y).shape),
        dv_dy=lambda s, y, t: dv(np.asarray(y) / y_scale) / y_scale * np.ones(np.shape(s)),
        b=lambda y: -kappa * np.asarray(y),
        rho=lambda y: np.full(np.shape(y), rho),
        hurst=hurst,
        name="rough-bounded",
        params=dict(sigma0=sigma0, a=a, y_scale=y_scale, kappa=kappa, rho=rho, hurst=hurst),
        compliance="v = sigma0 (1 + a tanh(y / y_scale)) is positive, bounded, time-homogeneous with "
        "Hoelder derivative; b = -kappa y is Lipschitz: all rough-model conditions hold",
    )


def _rough_exp(p):
    sigma0 = float(p.get("sigma0", 0.2))
    eta = float(p.get("eta", 1.0))
    kappa = float(p.get("kappa", 1.0))
    rho = float(p.get("rho", -0.7))
    hurst = float(p.get("hurst", 0.1))
    return RoughSpec(
        v=lambda s, y, t: sigma0 * np.exp(eta * y) * np.ones(np.shape(s)),
        dv_ds=lambda s, y, t: np.zeros(np.broadcast(s, y).shape),
        dv_dy=lambda s, y, t: eta * sigma0 * np.exp(eta * y) * np.ones(np.shape(s)),
        b=lambda y: -kappa * np.asarray(y),
        rho=lambda y: np.full(np.shape(y), rho),
        hurst=hurst,
        name="rough-exp",
        params=dict(sigma0=sigma0, eta=eta, kappa=kappa, rho=rho, hurst=hurst),
        compliance="desk-scale only: v = sigma0 exp(eta y) violates linear growth in y",
    )


ZOO: dict[str, Callable] = {
    "bs": _zoo_bs,
    "lsv-linear": _zoo_lsv_linear,
    "heston": _zoo_heston,
    "rough-bounded": _rough_tanh,
    "rough-exp": _rough_exp,
}


def model_zoo(name: str, params: dict | None = None):
    try:
        factory = ZOO[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {', '.join(sorted(ZOO))}") from None
    return factory(dict(params or {}))
