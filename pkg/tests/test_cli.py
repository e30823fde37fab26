import csv
import json

import pytest

from pass_opt.cli import main
from pass_opt.config import ConfigError, load_config, parse_sweep


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(args):
    return main([str(a) for a in args])


def test_su_solve_outputs(tmp_path):
    cfg = write(tmp_path, "su.toml", '[scenario]\npreset = "single-user"\nL = 4\n')
    out = tmp_path / "o"
    assert run(["su-solve", "--config", cfg, "--out", out, "--dump-conic", "--dump-channels"]) == 0
    summary = json.loads((out / "summary.txt").read_text())
    assert summary["gap_w"] == 0 and len(summary["L_s"]) == 2
    assert (out / "trace.csv").read_text().startswith("iteration,counts,local_iteration,gub_w,glb_w")
    assert (out / "conic.txt").read_text().startswith("variables")
    rows = list(csv.DictReader((out / "channels.csv").open()))
    assert len(rows) == 2 * 4 * 1


def test_mu_and_match_solve(tmp_path):
    cfg = write(tmp_path, "mu.toml", '[scenario]\npreset = "paper-small"\nL = 3\n')
    assert run(["mu-solve", "--config", cfg, "--out", tmp_path / "mu"]) == 0
    assert (tmp_path / "mu" / "weights.csv").exists()
    assert run(["match-solve", "--config", cfg, "--out", tmp_path / "m"]) == 0
    head = (tmp_path / "m" / "trace.csv").read_text().splitlines()[0]
    assert head == "round,swaps_evaluated,swaps_accepted,power_dbm"


@pytest.mark.parametrize("verb", ["baseline", "exhaustive", "spacing-plan"])
def test_simple_verbs(tmp_path, verb):
    cfg = write(tmp_path, "c.toml", '[scenario]\npreset = "paper-small"\nL = 3\n')
    assert run([verb, "--config", cfg, "--out", tmp_path / verb]) == 0
    for name in ("results.csv", "trace.csv", "summary.txt"):
        assert (tmp_path / verb / name).exists()


def test_spacing_plan_with_flags(tmp_path):
    cfg = write(tmp_path, "c.toml", '[scenario]\npreset = "paper-small"\n[coupling]\nactive = [1, 0, 1, 1, 1, 1]\n')
    assert run(["spacing-plan", "--config", cfg, "--out", tmp_path / "p"]) == 0
    rows = list(csv.DictReader((tmp_path / "p" / "results.csv").open()))
    assert [r["active"] for r in rows] == ["1", "0", "1", "1", "1", "1"]
    assert rows[1]["spacing_mm"] == ""


def test_coupling_fit(tmp_path):
    write(tmp_path, "s.csv", "S_mm,kappa\n0,0.33\n4,0.12308\n")
    assert run(["coupling-fit", "--samples", tmp_path / "s.csv", "--out", tmp_path / "f"]) == 0
    doc = json.loads((tmp_path / "f" / "summary.txt").read_text())
    assert doc["omega0_per_mm"] == pytest.approx(0.33)


def test_experiment_sweep_and_determinism(tmp_path):
    cfg = write(tmp_path, "e.toml", '[scenario]\npreset = "paper-small"\nL = 3\n'
                '[experiment]\nsolvers = ["matching", "baseline-mimo"]\ntrials = 2\nseed = 3\n')
    for d in ("a", "b"):
        assert run(["experiment", "--config", cfg, "--sweep", "sinr_db=10,20", "--out", tmp_path / d]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()
    rows = list(csv.DictReader((tmp_path / "a" / "results.csv").open()))
    assert len(rows) == 2 * 2 * 2


def test_seed_changes_users(tmp_path):
    cfg = write(tmp_path, "e.toml", '[scenario]\npreset = "paper-small"\nL = 3\n[experiment]\nsolvers = ["matching"]\n')
    run(["experiment", "--config", cfg, "--seed", "1", "--out", tmp_path / "a"])
    run(["experiment", "--config", cfg, "--seed", "2", "--out", tmp_path / "b"])
    assert (tmp_path / "a" / "results.csv").read_text() != (tmp_path / "b" / "results.csv").read_text()


def test_errors_exit_2(tmp_path, capsys):
    bad = write(tmp_path, "bad.toml", "[scenario]\nfoo = 1\n")
    assert run(["baseline", "--config", bad, "--out", tmp_path / "x"]) == 2
    assert "unknown keys" in capsys.readouterr().err
    assert run(["coupling-fit", "--out", tmp_path / "y"]) == 2
    with pytest.raises(SystemExit):
        run(["teleport"])


def test_config_parsing(tmp_path):
    cfg = write(tmp_path, "c.toml", '[scenario]\nN = 1\nK = 1\nL = 2\nsinr_db = 10\nnoise_dbm = -90\n'
                'user_positions = [[1.0, 2.0]]\n[solver]\neps = 1e-15\n')
    rc = load_config(cfg)
    assert rc.scenario.sinr_min == pytest.approx(10.0)
    assert rc.scenario.noise_power == pytest.approx(1e-12)
    assert rc.scenario.user_positions == ((1.0, 2.0),)
    assert rc.solver["eps"] == 1e-15
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "d.toml", "[extra]\na = 1\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "e.toml", "[scenario]\nL = 2\n"))


def test_parse_sweep():
    assert parse_sweep("L=4,6") == ("L", (4, 6))
    assert parse_sweep("sinr_db=10.5") == ("sinr_db", (10.5,))
    with pytest.raises(ConfigError):
        parse_sweep("L")
    with pytest.raises(ConfigError):
        parse_sweep("L=a,b")
