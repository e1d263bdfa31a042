import numpy as np
import pytest

from roughskew.harness import (
    ConfigError,
    cmd_skew_term_structure,
    format_config,
    load_config,
    parse_config,
)
from roughskew.harness.cli import main
from roughskew.harness.runner import cmd_dynamic_consistency, initial_state, build_model
from roughskew.harness.validate import cmd_validate

SMALL = "mc.n_paths = 2000\nmc.min_steps = 5\nmc.steps_per_theta = 5\ntheta.count = 4\n"


def test_defaults_resolve_and_echo():
    cfg = parse_config("")
    assert cfg.model_name == "rough-bounded"
    assert cfg.hurst == 0.1
    assert cfg.model_params["y_scale"] == 5.0
    assert cfg.theta_grid[0] == pytest.approx(1e-4) and cfg.theta_grid[-1] == pytest.approx(0.1)
    text = format_config(cfg)
    assert "model.param.rho = -0.7" in text
    assert parse_config(text) == cfg
    assert format_config(parse_config(text)) == text


def test_config_comments_overrides_and_with_values():
    cfg = parse_config("theta.count = 3  # short grid\n", {"mc.seed": 9})
    assert cfg.theta_count == 3 and cfg.seed == 9
    assert cfg.with_values(theta_count=5).theta_count == 3
    assert cfg.with_values(**{"theta.count": 5}).theta_count == 5


@pytest.mark.parametrize(
    "text, match",
    [
        ("theta.min = 0.1\ntheta.max = 0.01\n", "exceeds"),
        ("strikes.z = 0.2\nstrikes.zeta = 0.2\n", "differ"),
        ("model.hurst = 0.7\n", r"\(0, 1/2\)"),
        ("model.name = lsv-linear\nmodel.hurst = 0.1\n", "meaningless"),
        ("model.name = sabr\n", "unknown model"),
        ("mc.paths = 10\n", "unknown key"),
        ("mc.n_paths = ten\n", "cannot parse"),
        ("state.bank = random\n", "state.bank"),
        ("model.param.rho = -2\n", "rejected"),
        ("just words\n", "expected"),
    ],
)
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_n_steps_rule():
    cfg = parse_config("mc.min_steps = 50\nmc.steps_per_theta = 80\n")
    assert cfg.n_steps(0.01) == 80
    assert parse_config("").n_steps(0.01) == 50


def test_initial_states():
    cfg = parse_config("state.bank = stationary\n")
    state = initial_state(cfg, build_model(cfg))
    assert state.bank is not None and state.bank.z.shape == (80,)
    lsv = parse_config("model.name = lsv-linear\n")
    assert initial_state(lsv, build_model(lsv)).bank is None


def test_sweep_is_reproducible_across_thread_counts(tmp_path):
    cfg = parse_config(SMALL + "mc.block_size = 500\n")
    one = cmd_skew_term_structure(cfg, threads=1, out_dir=tmp_path / "a")
    two = cmd_skew_term_structure(cfg, threads=3, out_dir=tmp_path / "b")
    assert one.skew_csv() == two.skew_csv()
    for name in ("skew.csv", "fit.txt", "config.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert (tmp_path / "a" / "report.txt").exists()


def test_lsv_sweep_reports_regular_checks():
    cfg = parse_config("model.name = lsv-linear\n" + SMALL + "theta.min = 1e-3\n")
    rep = cmd_skew_term_structure(cfg)
    assert len(rep.skews) == 4
    assert all(e.value < 0 for e in rep.skews)


def test_dynamic_consistency_at_zero_equals_sweep():
    cfg = parse_config(SMALL)
    a = cmd_dynamic_consistency(cfg, t_restart=0.0)
    b = cmd_skew_term_structure(cfg)
    assert a.skew_csv() == b.skew_csv()


def test_dynamic_consistency_refuses_lsv():
    with pytest.raises(ConfigError, match="bank"):
        cmd_dynamic_consistency(parse_config("model.name = lsv-linear\n"))


def test_validate_quick_and_mutation():
    ok = cmd_validate("quick")
    assert ok.passed, ok.report_text()
    bad = cmd_validate("quick", "alpha-sign")
    assert not bad.passed
    failed = {c.name for c in bad.checks if not c.passed}
    assert "theorem1-bs-expansion" in failed
    with pytest.raises(ValueError):
        cmd_validate("medium")


def test_validate_full_detects_mutation():
    rep = cmd_validate("full", "alpha-sign", seed=0)
    failed = {c.name for c in rep.checks if not c.passed}
    assert any(name.startswith("theorem1-consistency") for name in failed)
    assert "fbm-covariance-H0.1" not in failed


def test_cli_exit_codes(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["skew-term-structure", "--out", str(out), "--seed", "1", "--set", "mc.n_paths=2000",
                 "--set", "mc.min_steps=5", "--set", "mc.steps_per_theta=5", "--set", "theta.count=4"]) in (0, 1)
    assert (out / "skew.csv").read_text().startswith("theta,z,zeta,skew,skew_se")
    assert main(["skew-term-structure", "--set", "theta.min=1", "--set", "theta.max=0.1"]) == 2
    assert "exceeds" in capsys.readouterr().err
    assert main(["dynamic-consistency", "--set", "model.name=lsv-linear"]) == 2
    assert main(["validate", "--level", "quick"]) == 0
    assert main(["validate", "--level", "quick", "--mutate", "alpha-sign"]) == 1
    assert main(["skew-term-structure", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_threads_env(monkeypatch):
    monkeypatch.setenv("ROUGHSKEW_THREADS", "zero")
    assert main(["validate"]) == 2


def test_cli_simulate_fbm_and_price(tmp_path, capsys):
    assert main(["simulate-fbm", "--out", str(tmp_path), "--paths", "2", "--steps", "10"]) == 0
    rows = (tmp_path / "fbm.csv").read_text().splitlines()
    assert rows[0] == "path,t,W,WH" and len(rows) == 1 + 2 * 11
    assert main(["price", "--out", str(tmp_path), "--z", "0", "--theta", "0.01",
                 "--set", "mc.n_paths=2000", "--set", "model.name=bs"]) == 0
    line = (tmp_path / "price.csv").read_text().splitlines()[1].split(",")
    assert float(line[4]) == pytest.approx(0.2, abs=1e-9)


def test_load_config_file(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("model.name = bs\nmodel.hurst = 0.2\n")
    cfg = load_config(p, {"mc.seed": 4})
    assert cfg.model_name == "bs" and cfg.hurst == 0.2 and cfg.seed == 4
