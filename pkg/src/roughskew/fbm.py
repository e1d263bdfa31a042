"""Fractional Brownian motion as a superposition of Ornstein-Uhlenbeck processes.

W^H_t = c * int_0^inf beta^(-1/2-H) (Z^beta_t - Z^beta_0) dbeta, with
Z^beta_t = int_{-inf}^t exp(-beta (t-s)) dW_s. The beta-integral is discretized
on a geometric ladder; the vector of Z^beta at the ladder nodes (the "bank") is a
finite-dimensional Markov state. Every OU step is sampled exactly in distribution.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import FactorizationError, as_generator, cholesky, gaussian_factor

__all__ = [
    "BetaQuadrature",
    "DriverPath",
    "OUBank",
    "build_quadrature",
    "check_hurst",
    "fbm_covariance",
    "init_bank_stationary",
    "init_bank_zero",
    "lemma1_decomposition_check",
    "load_bank",
    "sample_fbm_exact",
    "save_bank",
    "simulate_drivers",
    "step_bank",
    "wh_from_bank",
]

DEFAULT_N_NODES = 80
DEFAULT_BETA_MIN = 1e-8
DEFAULT_BETA_MAX = 1e16
MAX_EXACT_GRID = 2000
SNAPSHOT_VERSION = 1


def check_hurst(h: float) -> float:
    h = float(h)
    if not 0.0 < h < 0.5:
        raise ValueError(f"Hurst parameter must lie strictly inside (0, 1/2), got {h}")
    return h


def fbm_covariance(s, t, h: float):
    """Cov(W^H_s, W^H_t) = (s^2H + t^2H - |t-s|^2H) / 2."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (s ** (2 * h) + t ** (2 * h) - np.abs(t - s) ** (2 * h))


def _increment_gram(nodes: np.ndarray, t: float) -> np.ndarray:
    """Cov(Z^b_t - Z^b_0, Z^g_t - Z^g_0) under a stationary start."""
    b = nodes[:, None]
    g = nodes[None, :]
    return (-np.expm1(-b * t) - np.expm1(-g * t)) / (b + g)


@dataclass(frozen=True, eq=False)
class BetaQuadrature:
    """Discretized beta-integral.

    ``weights`` are dbeta-masses (log-trapezoid, plus the analytic mass of
    (0, beta_min] lumped onto the first node); ``coefficients`` are the full
    multipliers ``c_hat * w_j * beta_j^(-1/2-H)`` applied to Z-increments.
    """

    hurst: float
    nodes: np.ndarray
    weights: np.ndarray
    c_hat: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        check_hurst(self.hurst)
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 2:
            raise ValueError("nodes and weights must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(nodes) <= 0) or nodes[0] <= 0:
            raise ValueError("nodes must be positive and strictly increasing")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if not self.c_hat > 0:
            raise ValueError("c_hat must be positive")
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        coef = self.c_hat * weights * nodes ** (-0.5 - self.hurst)
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def same_as(self, other: "BetaQuadrature") -> bool:
        return self is other or (
            self.hurst == other.hurst
            and self.c_hat == other.c_hat
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )

    def variance(self, t: float) -> float:
        """Var(W^H_t) of the discrete engine under a stationary start."""
        c = self.coefficients
        return float(c @ _increment_gram(self.nodes, t) @ c)

    def covariance(self, s: float, t: float) -> float:
        """Cov(W^H_s, W^H_t) of the discrete engine, stationary start."""
        if s == t:
            return self.variance(s)
        return 0.5 * (self.variance(s) + self.variance(t) - self.variance(abs(t - s)))

    def cross_covariance_w(self, t: float) -> float:
        """E[(W_t - W_0)(W^H_t - W^H_0)] for the discrete engine."""
        return float(self.coefficients @ (-np.expm1(-self.nodes * t) / self.nodes))

    def step_factor(self, dt: float) -> np.ndarray:
        """Cached factor F with F F^T = Cov((dW, I^beta_1..n)) for a step of size dt."""
        key = float(dt)
        f = self._cache.get(key)
        if f is None:
            with self._lock:
                f = self._cache.get(key)
                if f is None:
                    f = _step_factor(self.nodes, key)
                    f.setflags(write=False)
                    self._cache[key] = f
        return f


def _step_factor(nodes: np.ndarray, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    n = nodes.size
    cov = np.empty((n + 1, n + 1))
    cov[0, 0] = dt
    cross = -np.expm1(-nodes * dt) / nodes
    cov[0, 1:] = cross
    cov[1:, 0] = cross
    bb = nodes[:, None] + nodes[None, :]
    cov[1:, 1:] = -np.expm1(-bb * dt) / bb
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    return sd[:, None] * gaussian_factor(corr)


def build_quadrature(
    h: float,
    n_nodes: int = DEFAULT_N_NODES,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    tail_correction: bool = True,
) -> BetaQuadrature:
    h = check_hurst(h)
    if int(n_nodes) != n_nodes or n_nodes < 2:
        raise ValueError(f"need at least two quadrature nodes, got {n_nodes}")
    if not (0.0 < beta_min < beta_max) or not math.isfinite(beta_max):
        raise ValueError(f"need 0 < beta_min < beta_max < inf, got [{beta_min}, {beta_max}]")
    x = np.linspace(math.log(beta_min), math.log(beta_max), int(n_nodes))
    nodes = np.exp(x)
    # drop near-duplicates (relative spacing < 1e-10) before anything is factored
    keep = np.concatenate(([True], np.diff(nodes) / nodes[1:] >= 1e-10))
    nodes, x = nodes[keep], x[keep]
    if nodes.size < 2:
        raise ValueError("beta range collapses to a single node")
    step = x[1] - x[0]
    weights = nodes * step
    weights[0] *= 0.5
    weights[-1] *= 0.5
    if tail_correction:
        # on (0, beta_min] the Z-increments equal those of the first node to O(beta t)
        weights[0] += nodes[0] / (0.5 - h)
    raw = weights * nodes ** (-0.5 - h)
    var1 = float(raw @ _increment_gram(nodes, 1.0) @ raw)
    return BetaQuadrature(h, nodes, weights, 1.0 / math.sqrt(var1))


def continuum_c_h(h: float) -> float:
    """Closed-form constant making the continuum representation a standard fBm."""
    h = check_hurst(h)
    mvn = math.gamma(h + 0.5) ** 2 / (math.gamma(2 * h + 1) * math.sin(math.pi * h))
    return 1.0 / (math.gamma(0.5 - h) * math.sqrt(mvn))


@dataclass
class OUBank:
    """Values of Z^beta at the quadrature nodes; ``z`` has shape (..., n_nodes)."""

    quadrature: BetaQuadrature
    z: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        if self.z.shape[-1:] != (self.quadrature.n_nodes,):
            raise ValueError(
                f"bank has {self.z.shape[-1] if self.z.ndim else 0} values "
                f"but the quadrature has {self.quadrature.n_nodes} nodes"
            )

    @property
    def n_paths(self) -> int:
        return 1 if self.z.ndim == 1 else self.z.shape[0]

    def copy(self) -> "OUBank":
        return OUBank(self.quadrature, self.z.copy(), self.time)

    def select(self, index) -> "OUBank":
        return OUBank(self.quadrature, self.z[index].copy(), self.time)


def init_bank_zero(q: BetaQuadrature, n_paths: int | None = None) -> OUBank:
    shape = (q.n_nodes,) if n_paths is None else (n_paths, q.n_nodes)
    return OUBank(q, np.zeros(shape))


def init_bank_stationary(q: BetaQuadrature, rng, n_paths: int | None = None) -> OUBank:
    """Draw Z from its stationary law, Cov(Z^b, Z^g) = 1/(b+g)."""
    nodes = q.nodes
    sd = 1.0 / np.sqrt(2.0 * nodes)
    corr = 2.0 * np.sqrt(np.outer(nodes, nodes)) / (nodes[:, None] + nodes[None, :])
    try:
        lower = cholesky(corr)
    except FactorizationError as exc:
        raise FactorizationError(
            f"stationary Gram matrix of {nodes.size} nodes is not numerically positive "
            f"definite ({exc}); thin the beta ladder (fewer nodes or a narrower range)",
            pivot=exc.pivot,
        ) from exc
    gen = as_generator(rng)
    m = 1 if n_paths is None else n_paths
    eps = gen.standard_normal((m, nodes.size))
    z = (eps @ lower.T) * sd
    return OUBank(q, z[0] if n_paths is None else z)


def _draw_step(q: BetaQuadrature, dt: float, gen: np.random.Generator, n: int, antithetic: bool):
    f = q.step_factor(dt)
    if antithetic:
        if n % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        half = gen.standard_normal((n // 2, f.shape[1]))
        eps = np.concatenate((half, -half))
    else:
        eps = gen.standard_normal((n, f.shape[1]))
    draw = eps @ f.T
    return draw[:, 0], draw[:, 1:]


def step_bank(bank: OUBank, dt: float, rng, antithetic: bool = False):
    """Advance every Z^beta by dt, exactly in distribution.

    Returns ``(new_bank, dW, innovation)`` where ``innovation`` holds I^beta, the
    part of the new Z values generated inside the step.
    """
    gen = as_generator(rng)
    q = bank.quadrature
    n = bank.n_paths
    dw, innov = _draw_step(q, dt, gen, n, antithetic)
    decay = np.exp(-q.nodes * dt)
    if bank.z.ndim == 1:
        dw, innov = dw[0], innov[0]
    new_z = bank.z * decay + innov
    return OUBank(q, new_z, bank.time + dt), dw, innov


def wh_from_bank(q: BetaQuadrature, bank_now: OUBank, bank_start: OUBank):
    for b in (bank_now, bank_start):
        if not q.same_as(b.quadrature):
            raise ValueError("bank was built on a different quadrature")
    return (bank_now.z - bank_start.z) @ q.coefficients


def lemma_increment(q: BetaQuadrature, z_s: np.ndarray, innovation: np.ndarray, dt: float):
    """W^H_t - W^H_s split into (history term, innovation term)."""
    history = (np.expm1(-q.nodes * dt) * z_s) @ q.coefficients
    return history, innovation @ q.coefficients


def lemma1_decomposition_check(q: BetaQuadrature, bank_s: OUBank, s: float, t: float, rng, wh_s: float = 0.0):
    """Both sides of W^H_t = W^H_s + history(Z_s) + innovation on one draw.

    The left side is computed from the advanced bank, the right side from the
    history/innovation split; they agree up to rounding.
    """
    if t < s:
        raise ValueError(f"need t >= s, got s={s}, t={t}")
    if t == s:
        return wh_s, wh_s
    new_bank, _, innov = step_bank(bank_s, t - s, rng)
    lhs = wh_s + wh_from_bank(q, new_bank, bank_s)
    hist, fresh = lemma_increment(q, bank_s.z, innov, t - s)
    return lhs, wh_s + hist + fresh


def sample_fbm_exact(h: float, times, rng, n_samples: int | None = None) -> np.ndarray:
    """Exact fBm values on ``times`` by Cholesky of the full covariance."""
    h = check_hurst(h)
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a non-empty 1-d grid")
    if t.size > MAX_EXACT_GRID:
        raise ValueError(
            f"exact sampler is limited to {MAX_EXACT_GRID} grid points (got {t.size}); "
            "use the OU engine (simulate_drivers) for long grids"
        )
    if t[0] <= 0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing and start after 0")
    lower = cholesky(fbm_covariance(t[:, None], t[None, :], h))
    gen = as_generator(rng)
    m = 1 if n_samples is None else n_samples
    out = gen.standard_normal((m, t.size)) @ lower.T
    return out[0] if n_samples is None else out


@dataclass
class DriverPath:
    times: np.ndarray
    dW: np.ndarray
    dW_perp: np.ndarray
    wh: np.ndarray
    bank_trace: list | None = None


def simulate_drivers(
    q: BetaQuadrature,
    times,
    n_paths: int,
    rng,
    bank: OUBank | None = None,
    keep_banks: bool = False,
    antithetic: bool = False,
) -> DriverPath:
    """Sample (W, W_perp, W^H) on ``times`` (starting at 0).

    ``bank`` defaults to a stationary draw per path, in which case W^H is (up to
    quadrature error) a standard fractional Brownian motion.
    """
    t = np.asarray(times, dtype=float)
    if t[0] != 0.0 or np.any(np.diff(t) <= 0):
        raise ValueError("times must start at 0 and be strictly increasing")
    gen = as_generator(rng)
    if bank is None:
        bank = init_bank_stationary(q, gen, n_paths)
    elif bank.z.ndim == 1:
        bank = OUBank(q, np.broadcast_to(bank.z, (n_paths, q.n_nodes)).copy(), bank.time)
    m = t.size - 1
    dw = np.empty((n_paths, m))
    dwp = np.empty((n_paths, m))
    wh = np.zeros((n_paths, m + 1))
    trace = [bank.copy()] if keep_banks else None
    for k in range(m):
        dt = t[k + 1] - t[k]
        z_prev = bank.z
        bank, dw[:, k], innov = step_bank(bank, dt, gen, antithetic)
        hist, fresh = lemma_increment(q, z_prev, innov, dt)
        wh[:, k + 1] = wh[:, k] + hist + fresh
        dwp[:, k] = _normals(gen, n_paths, antithetic) * math.sqrt(dt)
        if keep_banks:
            trace.append(bank.copy())
    return DriverPath(t, dw, dwp, wh, trace)


def _normals(gen: np.random.Generator, n: int, antithetic: bool) -> np.ndarray:
    if antithetic:
        half = gen.standard_normal(n // 2)
        return np.concatenate((half, -half))
    return gen.standard_normal(n)


def save_bank(bank: OUBank, path) -> None:
    """Plain-text snapshot: header lines, then ``node weight z`` per line."""
    q = bank.quadrature
    zs = np.atleast_2d(bank.z)
    lines = [
        "# roughskew OU bank snapshot",
        f"version {SNAPSHOT_VERSION}",
        f"hurst {q.hurst!r}",
        f"c_hat {q.c_hat!r}",
        f"time {float(bank.time)!r}",
        f"nodes {q.n_nodes}",
        f"paths {zs.shape[0]}",
    ]
    for i, row in enumerate(zs):
        lines.append(f"path {i}")
        lines.extend(f"{b:.17g} {w:.17g} {z:.17g}" for b, w, z in zip(q.nodes, q.weights, row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_bank(path, quadrature: BetaQuadrature | None = None) -> OUBank:
    header = {}
    rows: list[list[tuple[float, float, float]]] = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "path":
            rows.append([])
        elif len(parts) == 2:
            header[parts[0]] = parts[1]
        else:
            rows[-1].append(tuple(float(p) for p in parts))
    if int(header.get("version", -1)) != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported bank snapshot version {header.get('version')}")
    data = np.array(rows)
    nodes, weights, z = data[0, :, 0], data[0, :, 1], data[:, :, 2]
    if quadrature is None:
        quadrature = BetaQuadrature(float(header["hurst"]), nodes, weights, float(header["c_hat"]))
    elif not (np.array_equal(quadrature.nodes, nodes) and np.array_equal(quadrature.weights, weights)):
        raise ValueError("snapshot quadrature does not match the supplied quadrature")
    if int(header["paths"]) == 1:
        z = z[0]
    return OUBank(quadrature, z, float(header["time"]))
