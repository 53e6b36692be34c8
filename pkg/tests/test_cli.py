import json
import os

import numpy as np
import pytest
import toml

from fluctuo.cli import main
from fluctuo.config import SCHEMA_VERSION, RunConfig
from fluctuo.errors import ConfigurationError

BASE_CONFIG = {
    "nonlinearity": {"family": "power_law", "m": 2.0, "gamma": 1.0},
    "grid": {"d": 1, "L": 2.0, "N": 64},
    "noise": {"alpha": 0.25, "A": 0.5, "K_a": 8, "seed": 4321},
    "solver": {"dt": 4e-5, "eps": 0.05},
    "run": {"T": 4e-3, "store_every": 10},
    "initial": {"kind": "gaussian_bump", "amplitude": 0.5, "width": 0.3},
}


def write_config(tmp_path, extra=None, name="run.toml"):
    doc = json.loads(json.dumps(BASE_CONFIG))
    for section, keys in (extra or {}).items():
        doc.setdefault(section, {}).update(keys)
    path = tmp_path / name
    with open(path, "w") as fh:
        toml.dump(doc, fh)
    return str(path)


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    summary = json.loads(captured.out) if captured.out.strip() else None
    return code, summary, captured.err


# -- config layer -----------------------------------------------------------------


def test_config_roundtrip(tmp_path):
    cfg = RunConfig.parse(BASE_CONFIG)
    path = tmp_path / "resolved.toml"
    cfg.emit(path)
    reparsed = RunConfig.parse(toml.load(path))
    assert reparsed == cfg


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        RunConfig.parse({"grid": {"d": 1, "bogus": 2}})
    with pytest.raises(ConfigurationError):
        RunConfig.parse({"mystery_section": {}})
    with pytest.raises(ConfigurationError):
        RunConfig.parse({"grid": {"d": "one"}})
    with pytest.raises(ConfigurationError):
        RunConfig.parse({"schema_version": "other/9"})


def test_config_defaults_fill_in():
    cfg = RunConfig.parse({})
    assert cfg.grid.N == 64
    assert cfg.solver.negativity_policy == "clamp_and_log"


# -- CLI end to end -----------------------------------------------------------------


def test_simulate_runs_and_reports(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    out = str(tmp_path / "run1")
    code, summary, _ = run_cli(capsys, "simulate", "--config", cfgp,
                               "--out", out, "--format", "binary")
    assert code == 0
    assert summary["schema_version"] == SCHEMA_VERSION
    assert summary["passed"] is True
    assert summary["data"]["mass_drift_rel"] <= 1e-11
    assert os.path.exists(os.path.join(out, "state_final.bin"))
    assert os.path.exists(os.path.join(out, "diagnostics.csv"))
    assert os.path.exists(os.path.join(out, "resolved_config.toml"))


def test_simulate_deterministic_snapshots(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        code, _, _ = run_cli(capsys, "simulate", "--config", cfgp, "--out",
                             out, "--seed", "7", "--format", "binary")
        assert code == 0
        outs.append(out)
    a = (tmp_path / "a" / "state_final.bin").read_bytes()
    b = (tmp_path / "b" / "state_final.bin").read_bytes()
    assert a == b


def test_simulate_writes_only_under_out(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    out = tmp_path / "only"
    before = set(os.listdir(tmp_path))
    code, _, _ = run_cli(capsys, "simulate", "--config", cfgp, "--out", str(out))
    assert code == 0
    after = set(os.listdir(tmp_path)) - before
    assert after == {"only"}


def test_missing_config_is_usage_error(tmp_path, capsys):
    code, summary, err = run_cli(capsys, "simulate", "--config",
                                 str(tmp_path / "nope.toml"), "--out",
                                 str(tmp_path / "o"))
    assert code == 1
    assert summary is None
    assert "error" in err


def test_unknown_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    with open(path, "w") as fh:
        toml.dump({"grid": {"d": 1, "wat": 3}}, fh)
    code, summary, err = run_cli(capsys, "simulate", "--config", str(path),
                                 "--out", str(tmp_path / "o"))
    assert code == 1 and summary is None


def test_contract_test_command(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "contract": {"n_pairs": 4, "min_pass_fraction": 0.99},
        "initial2": {"kind": "gaussian_bump", "amplitude": 0.3, "width": 0.4,
                     "center": [0.4]},
        "run": {"T": 2e-3, "store_every": 5},
    })
    out = str(tmp_path / "contract")
    code, summary, _ = run_cli(capsys, "contract-test", "--config", cfgp,
                               "--out", out)
    assert code == 0
    assert summary["data"]["max_ratio"] <= summary["data"]["tolerance"]
    assert os.path.exists(os.path.join(out, "contract_pairs.csv"))


def test_noise_qv_command(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "noise": {"alpha": 0.45, "A": 0.9, "K_a": 8, "seed": 5},
        "qv": {"n_samples": 1500, "spread_tol": 0.15, "value_tol": 0.05},
    })
    out = str(tmp_path / "qv")
    code, summary, _ = run_cli(capsys, "noise-qv", "--config", cfgp, "--out", out)
    assert code == 0
    rep = json.load(open(os.path.join(out, "noise_qv.json")))
    assert {"alpha", "A", "K_a", "qv_mean", "qv_spread", "divqv_l1",
            "divqv_linf", "n_samples", "seed"} <= set(rep)


def test_scaling_check_with_sequence_file(tmp_path, capsys):
    seq = tmp_path / "seq.csv"
    with open(seq, "w") as fh:
        fh.write("epsilon,alpha,A,K_a\n")
        for eps in (1e-1, 1e-2, 1e-3):
            fh.write(f"{eps},{eps**0.125},{eps**0.125},{int(1/eps)}\n")
    out = str(tmp_path / "scal")
    code, summary, _ = run_cli(capsys, "scaling-check", "--d", "2",
                               "--sequence", str(seq), "--out", out)
    assert code == 0
    assert summary["data"]["status"] == "pass"
    rows = open(os.path.join(out, "scaling_rows.csv")).read().splitlines()
    assert len(rows) == 4  # header + 3 entries


def test_scaling_check_failing_sequence(tmp_path, capsys):
    seq = tmp_path / "seq.csv"
    with open(seq, "w") as fh:
        fh.write("epsilon,alpha,A,K_a\n")
        for eps in (1e-1, 1e-2, 1e-3):
            fh.write(f"{eps},0.3,0.3,8\n")  # constant-mode term never decays
    code, summary, _ = run_cli(capsys, "scaling-check", "--d", "1",
                               "--sequence", str(seq), "--out",
                               str(tmp_path / "o"))
    assert code == 2
    assert summary["data"]["status"] == "fail"


def test_skeleton_command(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "skeleton": {"control": "sine", "amplitude": 0.3},
        "run": {"T": 2e-3, "store_every": 5},
    })
    out = str(tmp_path / "skel")
    code, summary, _ = run_cli(capsys, "skeleton", "--config", cfgp, "--out", out)
    assert code == 0
    assert summary["data"]["mass_drift_rel"] <= 1e-11
    assert os.path.exists(os.path.join(out, "skeleton_report.json"))


def test_rate_command(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "grid": {"d": 1, "L": 2.0, "N": 128},
        "solver": {"dt": 2e-5, "eps": 0.0},
        "run": {"T": 0.01, "store_every": 10},
        "rate": {"phi_star_amplitude": 0.1, "store_every": 5},
    })
    out = str(tmp_path / "rate")
    code, summary, _ = run_cli(capsys, "rate", "--config", cfgp, "--out", out)
    assert code == 0
    assert summary["data"]["rel_err"] <= 0.02
    assert os.path.exists(os.path.join(out, "control_energy_density.csv"))


def test_mc_ldp_smoke(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "grid": {"d": 1, "L": 2.0, "N": 32},
        "solver": {"dt": 5e-4, "eps": 0.0},
        "run": {"T": 0.01, "store_every": 5},
        "mc": {"eps_levels": [0.02, 0.01], "n_runs": 8, "tube_radius": 0.5,
               "phi_star_amplitude": 0.1},
    })
    out = str(tmp_path / "mc")
    code, summary, _ = run_cli(capsys, "mc-ldp", "--config", cfgp, "--out", out)
    assert code in (0, 2)  # smoke: structure, not the statistical trend
    assert os.path.exists(os.path.join(out, "mc_levels.csv"))
    assert len(summary["data"]["levels"]) == 2


def test_assumptions_command(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    out = str(tmp_path / "asm")
    code, summary, _ = run_cli(capsys, "assumptions", "--config", cfgp,
                               "--out", out)
    assert code == 0
    assert summary["data"]["passed"] is True


def test_entropy_report_command(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "solver": {"dt": 4e-5, "eps": 0.02},
        "entropy": {"ensemble": 3, "divqv_samples": 120},
        "run": {"T": 2e-3, "store_every": 10},
    })
    out = str(tmp_path / "ent")
    code, summary, _ = run_cli(capsys, "entropy-report", "--config", cfgp,
                               "--out", out)
    assert code in (0, 2)
    assert os.path.exists(os.path.join(out, "entropy_report.json"))
    assert len(summary["data"]["fitted_c"]) == 2


def test_figures_flag_renders_png(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    out = str(tmp_path / "figs")
    code, summary, _ = run_cli(capsys, "simulate", "--config", cfgp,
                               "--out", out, "--figures")
    assert code == 0
    assert os.path.exists(os.path.join(out, "trajectory.png"))


def test_threads_flag_result_identical(tmp_path, capsys):
    cfgp = write_config(tmp_path, extra={
        "contract": {"n_pairs": 4},
        "run": {"T": 2e-3, "store_every": 5},
    })
    results = []
    for threads, name in ((1, "t1"), (3, "t3")):
        out = str(tmp_path / name)
        code, summary, _ = run_cli(capsys, "contract-test", "--config", cfgp,
                                   "--out", out, "--threads", str(threads))
        assert code == 0
        results.append(summary["data"]["max_ratio"])
    assert results[0] == results[1]


def test_resolved_config_reparses_equal(tmp_path, capsys):
    cfgp = write_config(tmp_path)
    out = tmp_path / "rc"
    code, _, _ = run_cli(capsys, "simulate", "--config", cfgp, "--out", str(out))
    assert code == 0
    original = RunConfig.load(cfgp)
    resolved = RunConfig.load(str(out / "resolved_config.toml"))
    assert resolved == original
