"""``roughskew`` command line."""
from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, format_config, load_config
from .runner import (
    cmd_dynamic_consistency,
    cmd_price,
    cmd_simulate_fbm,
    cmd_skew_term_structure,
    require_rough,
)
from .validate import MUTATIONS, cmd_validate


def _threads(arg: int | None) -> int:
    if arg is not None:
        n = arg
    else:
        env = os.environ.get("ROUGHSKEW_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ROUGHSKEW_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="overrides mc.seed")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=int, help="worker threads (fallback: ROUGHSKEW_THREADS)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key; repeatable")

    p = argparse.ArgumentParser(prog="roughskew", description="ATM skew term structures of rough and LSV models.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("skew-term-structure", parents=[common], help="sweep maturities and fit the skew power law")
    v = sub.add_parser("validate", parents=[common], help="run the invariant suites")
    v.add_argument("--level", choices=("quick", "full"), default="quick")
    v.add_argument("--mutate", choices=MUTATIONS, default="none", help="inject a known error (self-test)")
    d = sub.add_parser("dynamic-consistency", parents=[common], help="restart from a simulated state")
    d.add_argument("--t-restart", type=float, help="overrides restart.t")
    f = sub.add_parser("simulate-fbm", parents=[common], help="dump driver paths (W, W^H) as CSV")
    f.add_argument("--paths", type=int, default=4)
    f.add_argument("--horizon", type=float, default=1.0)
    f.add_argument("--steps", type=int, default=100)
    pr = sub.add_parser("price", parents=[common], help="one Monte Carlo put and its implied volatility")
    pr.add_argument("--z", type=float, default=0.0, help="rescaled log-moneyness")
    pr.add_argument("--theta", type=float, default=0.01, help="time to maturity")
    return p


def _config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["mc.seed"] = args.seed
    if args.out is not None:
        overrides["output.dir"] = args.out
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        if args.command == "validate":
            report = cmd_validate(args.level, args.mutate, args.seed or 0, threads, args.out)
            print(report.report_text(), end="")
            return 0 if report.passed else 1
        cfg = _config(args)
        if args.command == "simulate-fbm":
            cmd_simulate_fbm(cfg, args.paths, args.horizon, args.steps, cfg.out_dir)
            print(f"wrote {os.path.join(cfg.out_dir, 'fbm.csv')}")
            return 0
        if args.command == "price":
            print(cmd_price(cfg, args.z, args.theta, threads, cfg.out_dir), end="")
            return 0
        if args.command == "dynamic-consistency":
            require_rough(cfg)
        print(format_config(cfg), end="")
        if args.command == "skew-term-structure":
            report = cmd_skew_term_structure(cfg, threads, cfg.out_dir)
        else:
            report = cmd_dynamic_consistency(cfg, args.t_restart, threads, cfg.out_dir)
    except (ConfigError, KeyError, OSError) as exc:
        print(f"roughskew: error: {exc}", file=sys.stderr)
        return 2
    print(report.report_text(), end="")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
