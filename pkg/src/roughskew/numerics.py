"""Scalar special functions, dense factorizations, OLS and the RNG contract."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.linalg import lapack

__all__ = [
    "FactorizationError",
    "LinFit",
    "RngStream",
    "cholesky",
    "gamma_fn",
    "gaussian_factor",
    "least_squares_line",
    "norm_cdf",
    "norm_inv",
    "norm_pdf",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance matrix is not numerically positive definite."""

    def __init__(self, message: str, pivot: int | None = None):
        super().__init__(message)
        self.pivot = pivot


def norm_pdf(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * np.square(x))


def norm_cdf(x):
    """Standard normal distribution function (erfc based, accurate in both tails)."""
    return special.ndtr(x)


def norm_inv(p):
    return special.ndtri(p)


def gamma_fn(x: float) -> float:
    if not x > 0.0:
        raise ValueError(f"gamma_fn is only defined here for x > 0, got {x!r}")
    return math.gamma(x)


def cholesky(m, pivot_rtol: float = 1e-14) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Pivots below ``pivot_rtol * max(diag(m))`` are treated as a failure; the
    raised :class:`FactorizationError` carries the 0-based index of the
    offending pivot.
    """
    a = np.array(m, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(np.max(np.abs(a)), np.finfo(float).tiny)
    if not np.allclose(a, a.T, rtol=1e-12, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")
    max_diag = float(np.max(np.diag(a)))
    if max_diag <= 0.0:
        raise FactorizationError("matrix has no positive diagonal entry", pivot=0)
    lower, info = lapack.dpotrf(a, lower=1, clean=1)
    if info > 0:
        raise FactorizationError(
            f"matrix is not positive definite: pivot {info - 1} is non-positive",
            pivot=info - 1,
        )
    if info < 0:
        raise ValueError(f"dpotrf rejected argument {-info}")
    pivots = np.diag(lower) ** 2
    bad = np.flatnonzero(pivots < pivot_rtol * max_diag)
    if bad.size:
        raise FactorizationError(
            f"pivot {bad[0]} = {pivots[bad[0]]:.3e} is below {pivot_rtol:g} x max diagonal",
            pivot=int(bad[0]),
        )
    return lower


def gaussian_factor(cov, rtol: float = 1e-13) -> np.ndarray:
    """Rectangular factor ``F`` with ``F @ F.T ~= cov`` for a PSD matrix.

    Uses the symmetric eigendecomposition and drops eigen-directions below
    ``rtol * lambda_max``. Numerically singular covariances (e.g. OU increments of
    nodes with beta*dt << 1, which are indistinguishable from dW) factor without
    error; the result has as many columns as the retained numerical rank.
    """
    c = np.asarray(cov, dtype=float)
    c = 0.5 * (c + c.T)
    w, v = np.linalg.eigh(c)
    top = w[-1]
    if top <= 0.0:
        raise FactorizationError("covariance has no positive eigenvalue")
    if w[0] < -1e-8 * top:
        raise FactorizationError(
            f"covariance is indefinite: eigenvalue {w[0]:.3e} vs max {top:.3e}"
        )
    keep = w > rtol * top
    # Largest eigenvalues first so that truncated draws stay nested.
    w, v = w[keep][::-1], v[:, keep][:, ::-1]
    return v * np.sqrt(w)


@dataclass(frozen=True)
class LinFit:
    slope: float
    intercept: float
    r_squared: float
    residual_stderr: float
    slope_stderr: float = 0.0
    intercept_stderr: float = 0.0
    n: int = 0


def least_squares_line(xs, ys) -> LinFit:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-d sequences of equal length")
    n = x.size
    if n < 2:
        raise ValueError("need at least two points for a line fit")
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx <= 1e-300 or np.ptp(x) == 0.0:
        raise ValueError("degenerate abscissae: all xs are equal")
    slope = float(dx @ (y - ym)) / sxx
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sse = float(resid @ resid)
    dy = y - ym
    sst = float(dy @ dy)
    r2 = 1.0 if sst == 0.0 else max(0.0, min(1.0, 1.0 - sse / sst))
    if n > 2:
        s = math.sqrt(sse / (n - 2))
        slope_se = s / math.sqrt(sxx)
        intercept_se = s * math.sqrt(1.0 / n + xm * xm / sxx)
    else:
        s = slope_se = intercept_se = 0.0
    return LinFit(slope, intercept, r2, s, slope_se, intercept_se, n)


@dataclass(frozen=True)
class RngStream:
    """Reproducible, splittable random stream.

    Draws come from a Philox (counter-based) generator keyed by
    ``(seed, stream_id, *path)``; distinct keys give independent streams.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        for v in (self.seed, self.stream_id, *self.path):
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"stream key components must be unsigned 64-bit, got {v}")

    def split(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (*self.path, int(index)))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept an RngStream, a Generator, or an int seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, (int, np.integer)):
        return RngStream(int(rng)).generator()
    raise TypeError(f"cannot build a generator from {type(rng).__name__}")
