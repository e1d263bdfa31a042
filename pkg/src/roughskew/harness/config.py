"""Flat ``section.key = value`` experiment configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..models import ZOO, model_zoo

__all__ = ["ConfigError", "ExperimentConfig", "DEFAULTS", "parse_config", "load_config", "format_config"]


class ConfigError(ValueError):
    pass


LSV_ONLY = ("lsv-linear", "heston")

# Per-model parameter defaults filled in when the config leaves them unset. The
# rough tanh model bends on a scale of 5 so that its curvature stays small over
# the O(theta^H) range that Y explores within the maturity grid.
MODEL_DEFAULTS: dict[str, dict[str, str]] = {
    "rough-bounded": {"y_scale": "5"},
}


# Every recognised key with its default; ``model.param.<name>`` keys are free-form.
DEFAULTS: dict[str, str] = {
    "model.name": "rough-bounded",
    "model.hurst": "",
    "state.s0": "1",
    "state.y0": "0",
    "state.bank": "zero",
    "theta.min": "1e-4",
    "theta.max": "1e-1",
    "theta.count": "8",
    "strikes.z": "0.1",
    "strikes.zeta": "-0.1",
    "mc.n_paths": "200000",
    "mc.min_steps": "50",
    "mc.steps_per_theta": "50",
    "mc.seed": "0",
    "mc.block_size": "20000",
    "quadrature.n_nodes": "80",
    "quadrature.beta_min": "1e-8",
    "quadrature.beta_max": "1e16",
    "tolerance.slope": "0.05",
    "tolerance.amplitude": "0.15",
    "tolerance.max_rel_se": "0.2",
    "restart.t": "0.5",
    "restart.steps_per_unit": "200",
    "restart.ks_paths": "20000",
    "restart.ks_theta": "0.1",
    "output.dir": "roughskew-out",
}


@dataclass(frozen=True)
class ExperimentConfig:
    model_name: str
    model_params: dict
    hurst: float | None
    s0: float
    y0: float
    bank: str
    theta_min: float
    theta_max: float
    theta_count: int
    z: float
    zeta: float
    n_paths: int
    min_steps: int
    steps_per_theta: int
    seed: int
    block_size: int
    n_nodes: int
    beta_min: float
    beta_max: float
    tol_slope: float
    tol_amplitude: float
    max_rel_se: float
    restart_t: float
    restart_steps_per_unit: int
    ks_paths: int
    ks_theta: float
    out_dir: str
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def theta_grid(self) -> np.ndarray:
        if self.theta_count == 1:
            return np.array([self.theta_min])
        return np.geomspace(self.theta_min, self.theta_max, self.theta_count)

    def n_steps(self, theta: float) -> int:
        """max(min_steps, ceil(theta / delta_max)) with delta_max = theta / steps_per_theta."""
        delta_max = theta / self.steps_per_theta
        return max(self.min_steps, math.ceil(theta / delta_max * (1 - 1e-12)))

    def model_kwargs(self) -> dict:
        params = dict(self.model_params)
        if self.hurst is not None:
            params["hurst"] = self.hurst
        return params

    def with_values(self, **values) -> "ExperimentConfig":
        raw = dict(self.raw)
        raw.update({k: _fmt(v) for k, v in values.items()})
        return _build(raw)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    raw = dict(DEFAULTS)
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS and not key.startswith("model.param."):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS and not key.startswith("model.param."):
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = _fmt(value)
    return _build(raw)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    text = Path(path).read_text() if path is not None else ""
    return parse_config(text, overrides)


def format_config(cfg: ExperimentConfig) -> str:
    """Resolved configuration, one key per line, sorted; parseable by ``parse_config``."""
    return "".join(f"{k} = {cfg.raw[k]}\n" for k in sorted(cfg.raw))


def _get(raw, key, conv, check=None, what=""):
    try:
        value = conv(raw[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw[key]!r}") from None
    if check is not None and not check(value):
        raise ConfigError(f"{key} = {raw[key]}: {what}")
    return value


def _int(s: str) -> int:
    f = float(s)
    if not f.is_integer():
        raise ValueError
    return int(f)


def _build(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    for key, value in MODEL_DEFAULTS.get(raw["model.name"], {}).items():
        raw.setdefault(f"model.param.{key}", value)
    pos = lambda x: x > 0 and math.isfinite(x)  # noqa: E731
    name = raw["model.name"]
    if name not in ZOO:
        raise ConfigError(f"model.name: unknown model {name!r}; available: {', '.join(sorted(ZOO))}")
    params = {}
    for key, value in raw.items():
        if key.startswith("model.param."):
            params[key[len("model.param."):]] = _get(raw, key, float)
    hurst = None
    if raw["model.hurst"] != "":
        hurst = _get(raw, "model.hurst", float, lambda h: 0 < h < 0.5, "must lie in (0, 1/2)")
        if name in LSV_ONLY:
            raise ConfigError(f"model.hurst is meaningless for the LSV model {name!r}")
    t_min = _get(raw, "theta.min", float, pos, "must be positive")
    t_max = _get(raw, "theta.max", float, pos, "must be positive")
    if t_min > t_max:
        raise ConfigError(f"theta.min = {t_min} exceeds theta.max = {t_max}")
    count = _get(raw, "theta.count", _int, lambda n: n >= 1, "need at least one maturity")
    if count > 1 and t_min == t_max:
        raise ConfigError("theta.min equals theta.max but theta.count > 1")
    z = _get(raw, "strikes.z", float)
    zeta = _get(raw, "strikes.zeta", float)
    if z == zeta:
        raise ConfigError("strikes.z and strikes.zeta must differ")
    bank = raw["state.bank"]
    if bank not in ("zero", "stationary"):
        raise ConfigError(f"state.bank must be 'zero' or 'stationary', got {bank!r}")
    cfg = ExperimentConfig(
        model_name=name,
        model_params=params,
        hurst=hurst,
        s0=_get(raw, "state.s0", float, pos, "spot must be positive"),
        y0=_get(raw, "state.y0", float, math.isfinite, "must be finite"),
        bank=bank,
        theta_min=t_min,
        theta_max=t_max,
        theta_count=count,
        z=z,
        zeta=zeta,
        n_paths=_get(raw, "mc.n_paths", _int, lambda n: n >= 100, "need at least 100 paths"),
        min_steps=_get(raw, "mc.min_steps", _int, lambda n: n >= 1, "must be >= 1"),
        steps_per_theta=_get(raw, "mc.steps_per_theta", _int, lambda n: n >= 1, "must be >= 1"),
        seed=_get(raw, "mc.seed", _int, lambda n: 0 <= n < 2**64, "must be a u64"),
        block_size=_get(raw, "mc.block_size", _int, lambda n: n >= 2, "must be >= 2"),
        n_nodes=_get(raw, "quadrature.n_nodes", _int, lambda n: n >= 4, "need at least 4 nodes"),
        beta_min=_get(raw, "quadrature.beta_min", float, pos, "must be positive"),
        beta_max=_get(raw, "quadrature.beta_max", float, pos, "must be positive"),
        tol_slope=_get(raw, "tolerance.slope", float, pos, "must be positive"),
        tol_amplitude=_get(raw, "tolerance.amplitude", float, pos, "must be positive"),
        max_rel_se=_get(raw, "tolerance.max_rel_se", float, pos, "must be positive"),
        restart_t=_get(raw, "restart.t", float, lambda t: t >= 0, "must be >= 0"),
        restart_steps_per_unit=_get(raw, "restart.steps_per_unit", _int, lambda n: n >= 1, "must be >= 1"),
        ks_paths=_get(raw, "restart.ks_paths", _int, lambda n: n >= 100, "need at least 100 paths"),
        ks_theta=_get(raw, "restart.ks_theta", float, pos, "must be positive"),
        out_dir=raw["output.dir"],
        raw=dict(raw),
    )
    if cfg.beta_min >= cfg.beta_max:
        raise ConfigError("quadrature.beta_min must be below quadrature.beta_max")
    try:
        spec = model_zoo(name, cfg.model_kwargs())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model parameters rejected: {exc}") from exc
    # echo every resolved model parameter, zoo defaults included
    resolved = dict(raw)
    for key, value in spec.params.items():
        if key == "hurst":
            resolved["model.hurst"] = repr(float(value))
        else:
            resolved.setdefault(f"model.param.{key}", repr(float(value)))
    if resolved != raw:
        return _build(resolved)
    return cfg
