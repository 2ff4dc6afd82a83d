import subprocess
import sys

import pytest

from canbench.candata import load_dataset
from canbench.cli import CliError, main, parse_cli, parse_grid
from canbench.pipeline import read_manifest

FAST_SWEEP = ["--grid", "1,3", "--budget-s", "0.02", "--max-iter", "3", "--n", "200"]


def run(argv, tmp_path, name="out"):
    out = tmp_path / name
    return main([*argv, "--out", str(out)]), out


# Parsing -------------------------------------------------------------------------------

def test_grid_inclusive_stop():
    g = parse_grid("1:105:5")
    assert g[:3] == (1, 6, 11) and g[-2:] == (101, 105)


def test_grid_comma_list():
    assert parse_grid("5,10,20") == (5, 10, 20)


@pytest.mark.parametrize("bad", ["0:5:1", "5:1:1", "1:5:0", "3,2", "a,b", ""])
def test_grid_rejects(bad):
    with pytest.raises(CliError):
        parse_grid(bad)


def test_sweep_flags():
    cfg = parse_cli(["sweep", "--model", "rf", "--grid", "1:105:5", "--budget-s", "5"], env={})
    assert cfg.command == "sweep" and cfg.model == "RF" and cfg.budget_s == 5.0
    assert cfg.grid[0] == 1 and cfg.grid[-1] == 105 and 101 in cfg.grid


def test_empty_argv_is_error_with_usage():
    with pytest.raises(CliError, match="usage"):
        parse_cli([], env={})


def test_unknown_flag_is_error():
    with pytest.raises(CliError, match="usage"):
        parse_cli(["sweep", "--frobnicate"], env={})


def test_attack_overrides():
    cfg = parse_cli(["attack", "--learning-rate", "0.1", "--max-iter", "50",
                     "--variable-h", "0.2"], env={})
    assert (cfg.zoo.learning_rate, cfg.zoo.max_iter, cfg.zoo.variable_h) == (0.1, 50, 0.2)


def test_defaults_without_config():
    cfg = parse_cli(["sweep"], env={})
    assert cfg.budget_s == 300.0 and cfg.n_target == 92270 and cfg.model == "RF"
    assert cfg.grid == (1,) + tuple(range(5, 106, 5))
    assert cfg.out == "canbench-out"


def test_env_sets_output_root():
    assert parse_cli(["synth"], env={"CANBENCH_OUT": "/x/y"}).out == "/x/y"


def test_flag_beats_config_beats_default(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("budget_s = 7\nmax_iter = 9\nmodel = gb\n")
    cfg = parse_cli(["sweep", "--config", str(conf), "--budget-s", "3"], env={})
    assert cfg.budget_s == 3.0 and cfg.zoo.max_iter == 9 and cfg.model == "GB"
    assert cfg.n_target == 92270


def test_config_unknown_key(tmp_path):
    conf = tmp_path / "c.txt"
    conf.write_text("colour = blue\n")
    with pytest.raises(CliError):
        parse_cli(["sweep", "--config", str(conf)], env={})


def test_missing_paths():
    with pytest.raises(CliError):
        parse_cli(["train", "--dataset", "/no/such/file"], env={})
    with pytest.raises(CliError):
        parse_cli(["sweep", "--config", "/no/such/file"], env={})
    with pytest.raises(CliError):
        parse_cli(["prepare"], env={})


def test_conflicting_flags():
    with pytest.raises(CliError):
        parse_cli(["report", "--impact", "--from-csv", "x.csv"], env={})
    with pytest.raises(CliError):
        parse_cli(["report"], env={})


def test_invalid_zoo_values():
    with pytest.raises(CliError):
        parse_cli(["attack", "--learning-rate", "-1"], env={})


# Commands --------------------------------------------------------------------------------

def test_exit_codes(tmp_path, capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err
    assert main(["train", "--dataset", str(tmp_path / "missing.csv")]) == 1


def test_synth_then_pipeline(tmp_path):
    rc, synth = run(["synth", "--n", "200"], tmp_path, "synth")
    assert rc == 0 and (synth / "dataset.csv").is_file()
    rc, out = run(["pipeline", "--dataset", str(synth / "dataset.csv"), "--n-estimators", "5",
                   "--max-iter", "5"], tmp_path, "pipe")
    assert rc == 0
    for name in ("manifest.txt", "model_a.json", "model_abb.json", "b_prime.csv",
                 "c_prime.csv", "metrics.txt"):
        assert (out / name).is_file(), name
    man = read_manifest(out / "manifest.txt")
    assert man["command"] == "pipeline" and "meta.wall_s" in man
    assert "Ryzen" in man["meta.reference_hardware"] and man["meta.version"]


def test_train_and_attack_saved_model(tmp_path):
    rc, tr = run(["train", "--n", "200", "--n-estimators", "3"], tmp_path, "train")
    assert rc == 0 and (tr / "model_a.json").is_file()
    rc, at = run(["attack", "--n", "200", "--model-file", str(tr / "model_a.json"),
                  "--max-iter", "3"], tmp_path, "attack")
    assert rc == 0 and (at / "b_prime.csv").is_file()
    stats = read_manifest(at / "attack_stats.txt")
    assert int(stats["n"]) == 40


def test_prepare_from_log(tmp_path):
    log = tmp_path / "dos.log"
    log.write_text("Timestamp: 1.000000 ID: 0000 000 DLC: 8 00 00 00 00 00 00 00 00\n"
                   "Timestamp: 1.000300 ID: 0000 000 DLC: 8 00 00 00 00 00 00 00 00\n")
    rc, out = run(["prepare", "--log", f"{log}:DoS"], tmp_path)
    assert rc == 0
    lines = (out / "dataset.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[1].endswith(",DoS")


def test_prepare_include_remote(tmp_path):
    log = tmp_path / "n.log"
    log.write_text("Timestamp: 1.000000 ID: 0316 100 DLC: 0\n")
    rc, out = run(["prepare", "--log", f"{log}:Normal", "--include-remote"], tmp_path)
    assert rc == 0
    assert load_dataset(out / "dataset.csv").n_features == 11


def test_prepare_bad_log_is_user_error(tmp_path):
    log = tmp_path / "bad.log"
    log.write_text("nonsense\n")
    rc, _ = run(["prepare", "--log", f"{log}:DoS"], tmp_path)
    assert rc == 1


def test_sweep_writes_csv_and_svg(tmp_path):
    rc, out = run(["sweep", "--model", "rf", *FAST_SWEEP], tmp_path)
    assert rc == 0
    assert (out / "sweep_rf_attack.csv").is_file() and (out / "sweep_rf_attack.svg").is_file()


def test_report_impact(tmp_path):
    rc, out = run(["report", "--impact"], tmp_path)
    assert rc == 0 and "Improve deterrence" in (out / "impact.txt").read_text()
    rc, out = run(["report", "--impact", "--impact-format", "csv"], tmp_path, "csv")
    assert rc == 0 and (out / "impact.csv").is_file()


def test_report_from_csv(tmp_path):
    rc, sw = run(["sweep", "--model", "gb", *FAST_SWEEP, "--fake-clock-step", "0.01"],
                 tmp_path, "sw")
    rc, out = run(["report", "--from-csv", str(sw / "sweep_gb_attack.csv")], tmp_path, "rep")
    assert rc == 0 and (out / "sweep_gb_attack.svg").is_file()


def test_manifest_replay_is_byte_identical(tmp_path):
    rc, first = run(["sweep", "--model", "gb", *FAST_SWEEP, "--at", "--fake-clock-step", "0.01"],
                    tmp_path, "first")
    assert rc == 0
    rc, second = run(["sweep", "--config", str(first / "manifest.txt")], tmp_path, "second")
    assert rc == 0
    for name in ("sweep_gb_attack.csv", "sweep_gb_at.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "canbench", "report", "--impact", "--out",
                          str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "impact.txt").is_file()
    bad = subprocess.run([sys.executable, "-m", "canbench"], capture_output=True, text=True)
    assert bad.returncode == 1 and "usage" in bad.stderr
