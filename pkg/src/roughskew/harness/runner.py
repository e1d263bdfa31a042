"""Experiment orchestration and run output."""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..asymptotics import (
    McParams,
    PowerLawError,
    PowerLawFit,
    SkewEstimate,
    fit_power_law,
    ks_two_sample,
    regular_skew_limit,
    rough_skew_coefficient,
    skew_estimate,
)
from ..fbm import build_quadrature, init_bank_stationary, init_bank_zero, load_bank, save_bank, simulate_drivers
from ..models import MarketState, RoughSpec, model_zoo, simulate
from ..numerics import RngStream
from ..pricing import PutQuote, implied_vol, mc_put
from .config import ConfigError, ExperimentConfig, format_config

__all__ = [
    "Check",
    "RunReport",
    "build_model",
    "cmd_dynamic_consistency",
    "cmd_price",
    "cmd_simulate_fbm",
    "cmd_skew_term_structure",
    "fmt",
    "require_rough",
]

# stream ids keep the independent random inputs of a run apart
STREAM_STATE = 1
STREAM_SKEW = 2
STREAM_RESTART = 3
STREAM_KS_CONTINUOUS = 4
STREAM_KS_RESTART = 5
STREAM_FBM = 6
STREAM_PRICE = 7


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


@dataclass
class RunReport:
    command: str
    config_text: str = ""
    skews: list = field(default_factory=list)
    fit: PowerLawFit | None = None
    checks: list = field(default_factory=list)
    info: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    paths: int = 0
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> Check:
        c = Check(name, bool(passed), detail)
        self.checks.append(c)
        return c

    def skew_csv(self) -> str:
        rows = ["theta,z,zeta,skew,skew_se"]
        rows += [",".join(fmt(v) for v in (e.theta, e.z, e.zeta, e.value, e.stderr)) for e in self.skews]
        return "\n".join(rows) + "\n"

    def fit_text(self) -> str:
        head = "slope,slope_se,intercept,r2\n"
        if self.fit is None:
            return head
        f = self.fit.fit
        return head + ",".join(fmt(v) for v in (f.slope, f.slope_stderr, f.intercept, f.r_squared)) + "\n"

    def report_text(self, timing: bool = True) -> str:
        out = [f"command: {self.command}"]
        out += self.info
        out += [f"error: {e}" for e in self.errors]
        out += [c.line() for c in self.checks]
        out.append(f"paths_simulated: {self.paths}")
        out.append(f"result: {'PASS' if self.passed else 'FAIL'}")
        if timing:
            out.append(f"wall_clock_seconds: {self.wall_clock:.3f}")
        return "\n".join(out) + "\n"

    def write(self, out_dir) -> Path:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        if self.config_text:
            (d / "config.txt").write_text(self.config_text)
        if self.skews or self.fit is not None:
            (d / "skew.csv").write_text(self.skew_csv())
            (d / "fit.txt").write_text(self.fit_text())
        (d / "report.txt").write_text(self.report_text())
        return d


# ---------------------------------------------------------------------- setup

def build_model(cfg: ExperimentConfig):
    return model_zoo(cfg.model_name, cfg.model_kwargs())


def initial_state(cfg: ExperimentConfig, spec) -> MarketState:
    if isinstance(spec, RoughSpec):
        q = build_quadrature(spec.hurst, cfg.n_nodes, cfg.beta_min, cfg.beta_max)
        if cfg.bank == "zero":
            bank = init_bank_zero(q)
        else:
            bank = init_bank_stationary(q, RngStream(cfg.seed, STREAM_STATE).generator())
        return MarketState(cfg.s0, cfg.y0, bank)
    return MarketState(cfg.s0, np.full(spec.dim_y, cfg.y0))


def _sweep(cfg: ExperimentConfig, spec, state: MarketState, threads: int, report: RunReport) -> list:
    stream = RngStream(cfg.seed, STREAM_SKEW)
    out = []
    for i, theta in enumerate(cfg.theta_grid):
        mc = McParams(cfg.n_paths, cfg.n_steps(theta), threads, cfg.block_size)
        try:
            est = skew_estimate(spec, state, cfg.z, cfg.zeta, float(theta), mc, stream.split(i))
        except Exception as exc:  # surfaced in the report with the maturity identified
            report.errors.append(f"theta={fmt(theta)}: {type(exc).__name__}: {exc}")
            continue
        report.paths += cfg.n_paths
        out.append(est)
    return out


def _assess(cfg: ExperimentConfig, spec, state: MarketState, report: RunReport, label: str = "",
            check_amplitude: bool = True) -> None:
    """Fit the sweep in ``report.skews`` and compare with the short-maturity theory."""
    ests = report.skews
    tag = f"{label} " if label else ""
    if isinstance(spec, RoughSpec):
        q = state.bank.quadrature
        coeff = rough_skew_coefficient(spec, state, q.c_hat)
        target = spec.hurst - 0.5
        report.info.append(f"{tag}regime: rough (H = {fmt(spec.hurst)})")
        report.info.append(f"{tag}c_hat: {fmt(q.c_hat)}")
        report.info.append(f"{tag}theory_coefficient: {fmt(coeff)}")
    else:
        coeff = regular_skew_limit(spec, state)
        target = 0.0
        report.info.append(f"{tag}regime: regular")
        report.info.append(f"{tag}regular_skew_limit: {fmt(coeff)}")
    if not ests:
        report.add(f"{tag}fit", False, "no skew estimates")
        return
    if coeff == 0.0:
        worst = max(abs(e.value) / max(3 * e.stderr, 1e-10) for e in ests)
        report.add(f"{tag}zero-skew", worst <= 1.0, f"max |skew| / max(3 SE, 1e-10) = {worst:.3g}")
        return
    try:
        report.fit = fit_power_law(ests, cfg.max_rel_se)
    except PowerLawError as exc:
        report.add(f"{tag}fit", False, str(exc))
        return
    pf = report.fit
    if pf.excluded:
        report.info.append(f"{tag}excluded_noisy_thetas: {' '.join(fmt(t) for t in pf.excluded)}")
    report.info.append(f"{tag}fitted_slope: {fmt(pf.slope)} +- {fmt(pf.fit.slope_stderr)}")
    report.info.append(f"{tag}fitted_amplitude: {fmt(pf.sign * pf.amplitude)}")
    report.add(f"{tag}sign", pf.sign == math.copysign(1.0, coeff),
               f"skew sign {pf.sign:+.0f}, theory sign {math.copysign(1.0, coeff):+.0f}")
    report.add(f"{tag}slope", abs(pf.slope - target) <= cfg.tol_slope,
               f"slope {pf.slope:.4f} vs {target:.4f} +- {cfg.tol_slope}")
    if isinstance(spec, RoughSpec):
        ratio = pf.amplitude / abs(coeff)
        if not check_amplitude:
            report.info.append(f"{tag}amplitude_ratio_to_theory: {fmt(ratio)}")
            return
        report.add(f"{tag}amplitude", abs(ratio - 1.0) <= cfg.tol_amplitude,
                   f"|A| fitted / theory = {ratio:.4f}, tolerance {cfg.tol_amplitude}")
    else:
        e = min(ests, key=lambda e: e.theta)
        tol = max(3 * e.stderr, 0.1 * math.sqrt(e.theta))
        report.add(f"{tag}level", abs(e.value - coeff) <= tol,
                   f"skew {e.value:.5f} at theta {e.theta:.3g} vs limit {coeff:.5f}, tolerance {tol:.3g}")


# ------------------------------------------------------------------- commands

def cmd_skew_term_structure(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> RunReport:
    """Sweep the maturity grid, fit the power law and compare with theory."""
    t0 = time.perf_counter()
    report = RunReport("skew-term-structure", format_config(cfg))
    spec = build_model(cfg)
    state = initial_state(cfg, spec)
    report.info.append(f"model: {spec.name}")
    report.skews = _sweep(cfg, spec, state, threads, report)
    _assess(cfg, spec, state, report)
    report.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir)
    return report


def require_rough(cfg: ExperimentConfig) -> RoughSpec:
    spec = build_model(cfg)
    if not isinstance(spec, RoughSpec):
        raise ConfigError(
            f"dynamic consistency needs a rough model: {spec.name!r} carries no OU bank, so there is "
            "no history state to snapshot and restart from"
        )
    return spec


def _restart_steps(cfg: ExperimentConfig, horizon: float) -> int:
    return max(1, math.ceil(horizon * cfg.restart_steps_per_unit - 1e-9))


def restart_ks(cfg: ExperimentConfig, spec: RoughSpec, t_restart: float, via_file: bool = True):
    """KS comparison of S_{t+theta}/S_t from one continuous run and from restarted runs.

    Both legs use the same step size; the restarted leg resumes every path from its
    own (S, Y, bank), optionally after a round trip of the banks through a snapshot file.
    """
    init = initial_state(cfg, spec)
    n = cfg.ks_paths
    n1 = _restart_steps(cfg, t_restart)
    dt = t_restart / n1
    n2 = max(1, round(cfg.ks_theta / dt))
    theta = n2 * dt
    cont = simulate(spec, init, t_restart + theta, n1 + n2, RngStream(cfg.seed, STREAM_KS_CONTINUOUS).generator(),
                    n_paths=n, record=True)
    ratio_c = cont.s_path[:, -1] / cont.s_path[:, n1]
    gen = RngStream(cfg.seed, STREAM_KS_RESTART).generator()
    first = simulate(spec, init, t_restart, n1, gen, n_paths=n, record=False)
    bank = first.terminal.bank
    if via_file:
        with tempfile.TemporaryDirectory() as tmp:
            snap = Path(tmp) / "banks.txt"
            save_bank(bank, snap)
            bank = load_bank(snap, bank.quadrature)
    mid = MarketState(first.terminal.s, first.terminal.y, bank, first.terminal.t)
    second = simulate(spec, mid, theta, n2, gen, n_paths=n, record=False)
    ratio_r = second.terminal.s / mid.s
    return ks_two_sample(ratio_c, ratio_r), theta


def cmd_dynamic_consistency(cfg: ExperimentConfig, t_restart: float | None = None, threads: int = 1,
                            out_dir=None) -> RunReport:
    """Restart from a simulated Markov state and rerun the term structure there."""
    t_r = cfg.restart_t if t_restart is None else float(t_restart)
    if t_r < 0:
        raise ConfigError("restart time must be non-negative")
    spec = require_rough(cfg)
    if t_r == 0:
        report = cmd_skew_term_structure(cfg, threads)
        report.command = "dynamic-consistency"
        report.info.insert(0, "t_restart: 0 (restart state is the initial state)")
        if out_dir is not None:
            report.write(out_dir)
        return report
    t0 = time.perf_counter()
    report = RunReport("dynamic-consistency", format_config(cfg))
    report.info.append(f"model: {spec.name}")
    report.info.append(f"t_restart: {fmt(t_r)}")
    init = initial_state(cfg, spec)
    n1 = _restart_steps(cfg, t_r)
    leg = simulate(spec, init, t_r, n1, RngStream(cfg.seed, STREAM_RESTART).generator(), n_paths=1, record=False)
    bank = leg.terminal.bank.select(0)
    snap = None
    if out_dir is not None:
        snap = Path(out_dir) / "bank_snapshot.txt"
        snap.parent.mkdir(parents=True, exist_ok=True)
        save_bank(bank, snap)
        bank = load_bank(snap, bank.quadrature)
    state = MarketState(float(leg.terminal.s[0]), float(leg.terminal.y[0]), bank, t_r)
    report.paths += 1
    report.info.append(f"restart_state: S = {fmt(state.s)}, Y = {fmt(state.y)}")
    q = init.bank.quadrature
    report.info.append(f"theory_coefficient_at_t0: {fmt(rough_skew_coefficient(spec, init, q.c_hat))}")
    report.skews = _sweep(cfg, spec, state, threads, report)
    _assess(cfg, spec, state, report, check_amplitude=False)
    try:
        (d, p), theta = restart_ks(cfg, spec, t_r)
        report.paths += 2 * cfg.ks_paths
        report.add("restart-ks", p >= 0.01, f"S(t+theta)/S(t), theta = {theta:.4g}: D = {d:.4g}, p = {p:.4g}")
    except Exception as exc:
        report.errors.append(f"restart KS: {type(exc).__name__}: {exc}")
    report.wall_clock = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir)
    return report


def cmd_simulate_fbm(cfg: ExperimentConfig, n_paths: int = 4, horizon: float = 1.0, n_steps: int = 100,
                     out_dir=None) -> str:
    """Driver paths (W, W^H) on a uniform grid as CSV text."""
    h = cfg.hurst if cfg.hurst is not None else getattr(build_model(cfg), "hurst", None)
    if h is None:
        raise ConfigError("simulate-fbm needs model.hurst or a rough model")
    q = build_quadrature(h, cfg.n_nodes, cfg.beta_min, cfg.beta_max)
    times = np.linspace(0.0, horizon, n_steps + 1)
    bank = init_bank_zero(q, n_paths) if cfg.bank == "zero" else None
    drv = simulate_drivers(q, times, n_paths, RngStream(cfg.seed, STREAM_FBM).generator(), bank=bank)
    w = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(drv.dW, axis=1)], axis=1)
    rows = ["path,t,W,WH"]
    for i in range(n_paths):
        rows += [f"{i},{fmt(t)},{fmt(w[i, j])},{fmt(drv.wh[i, j])}" for j, t in enumerate(times)]
    text = "\n".join(rows) + "\n"
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "fbm.csv").write_text(text)
        (d / "config.txt").write_text(format_config(cfg))
    return text


def cmd_price(cfg: ExperimentConfig, z: float, theta: float, threads: int = 1, out_dir=None) -> str:
    """One Monte Carlo put and its implied volatility as a CSV row."""
    spec = build_model(cfg)
    state = initial_state(cfg, spec)
    q: PutQuote = mc_put(spec, state, z, theta, cfg.n_paths, cfg.n_steps(theta), RngStream(cfg.seed, STREAM_PRICE),
                         threads, cfg.block_size)
    iv = implied_vol(q)
    text = "theta,z,price,se,iv,iv_se\n" + ",".join(fmt(v) for v in (theta, z, q.price, q.mc_stderr, iv.iv,
                                                                     iv.iv_stderr)) + "\n"
    if out_dir is not None:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "price.csv").write_text(text)
        (d / "config.txt").write_text(format_config(cfg))
    return text
