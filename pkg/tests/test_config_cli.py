import csv

import numpy as np
import pytest
import tomli

from penn import config as cfgmod, data_io
from penn.cli import main

TINY = ["simulate.n_trials=3", "simulate.duration=2.0", "train.phase1_max_epochs=3",
        "train.phase2_max_epochs=3", "train.batch_phase2=8", "train.split=0.67"]


def write_cfg(path, text="seed = 5\n"):
    path.write_text(text)
    return path


def sets(extra=()):
    out = []
    for s in list(TINY) + list(extra):
        out += ["--set", s]
    return out


def test_example_config_validates():
    cfg = cfgmod.load(cfgmod.example_path())
    assert cfg["seed"] == 0 and cfg["model"]["window"] == 16
    b = cfgmod.build(cfg)
    assert len(b.muscles.f_max) == 5 and b.sim.stride == 10 and b.train.batch_phase2 == 32


def test_minimal_config_takes_defaults():
    cfg = cfgmod.validate({"seed": 3})
    assert cfg["train"]["patience"] == 30 and cfg["simulate"]["excitation"]["kind"] == "sinusoids"
    assert cfg["simulate"]["stride"] == 1 and cfg["model"]["stride"] == 1
    assert len(cfg["muscles"]["f_max"]) == len(cfg["geometry"]["mtu_coeffs"])


@pytest.mark.parametrize("raw, msg", [
    ({}, "missing required field 'seed'"),
    ({"seed": 1, "bogus": 2}, "unknown key 'bogus'"),
    ({"seed": 1, "train": {"lrr": 0.1}}, "unknown key 'train.lrr'"),
    ({"seed": 1, "train": {"lr": "fast"}}, "train.lr: expected float"),
    ({"seed": 1, "muscles": {"f_max": [1.0]}}, "missing required field 'muscles.l_opt'"),
    ({"seed": 1.5}, "seed: expected int"),
    ({"seed": 1, "model": {"dropout": 1.0}}, "dropout"),
])
def test_config_errors(raw, msg):
    with pytest.raises(cfgmod.ConfigError, match=msg.replace("(", r"\(")):
        cfgmod.validate(raw)


def test_toml_syntax_error_reports_line(tmp_path):
    p = write_cfg(tmp_path / "bad.toml", "seed = 1\n[train]\nlr = = 3\n")
    with pytest.raises(cfgmod.ConfigError, match="line 3"):
        cfgmod.load(p)


def test_overrides():
    assert cfgmod.parse_override("train.lr=0.01") == (["train", "lr"], 0.01)
    assert cfgmod.parse_override("simulate.excitation.kind=random_walk")[1] == "random_walk"
    assert cfgmod.parse_override("model.dropout = 0")[1] == 0
    with pytest.raises(cfgmod.ConfigError):
        cfgmod.parse_override("train.lr")
    raw = cfgmod.apply_overrides({"seed": 1}, ["train.patience=4", "seed=9"])
    assert cfgmod.validate(raw)["train"]["patience"] == 4 and raw["seed"] == 9


def test_exit_codes(tmp_path, capsys):
    assert main(["simulate", "-c", str(tmp_path / "none.toml")]) == 2
    bad = write_cfg(tmp_path / "bad.toml", "seed = 1\nfoo = 2\n")
    assert main(["simulate", "-c", str(bad)]) == 2
    assert "unknown key 'foo'" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    # tendons longer than the whole musculotendon unit violate the rigid-tendon geometry
    slack = write_cfg(tmp_path / "slack.toml", "seed = 1\n[muscles]\n"
                      "f_max = [90.0, 100.0, 75.0, 70.0, 60.0]\n"
                      "l_opt = [0.060, 0.055, 0.065, 0.058, 0.060]\n"
                      "l_tendon_slack = [0.2, 0.2, 0.2, 0.2, 0.2]\n"
                      "phi_opt = [0.05, 0.21, 0.04, 0.16, 0.07]\n")
    assert main(["simulate", "-c", str(slack), "-o", str(tmp_path / "d")] + sets()) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_simulate_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path / "c.toml")
    assert main(["simulate", "-c", str(cfg), "-o", str(tmp_path / "a")] + sets()) == 0
    assert main(["simulate", "-c", str(cfg), "-o", str(tmp_path / "b")] + sets()) == 0
    assert data_io.directory_digest(tmp_path / "a") == data_io.directory_digest(tmp_path / "b")
    assert len(data_io.list_trials(tmp_path / "a")) == 3
    resolved = tomli.loads((tmp_path / "a" / "config.resolved.toml").read_text())
    assert resolved["simulate"]["n_trials"] == 3
    tr = data_io.read_trial(tmp_path / "a" / "trial_000.csv")
    assert tr.fs == 1000.0 and tr.n_channels == 5 and tr.n_samples == 2001


def _raw_dir(tmp_path, emg):
    raw = tmp_path / "raw"
    raw.mkdir()
    from penn.sim import Trial
    data_io.write_trial(raw / "r1.csv", Trial(2000.0, emg, np.zeros(emg.shape[1])))
    return raw


def _mvc(tmp_path, n, skip=None):
    p = tmp_path / "mvc.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "mvc"])
        for i in range(n):
            if i != skip:
                w.writerow([f"emg_{i + 1}", 1.0])
    return p


def test_preprocess_zero_input_and_missing_mvc(tmp_path, capsys):
    raw = _raw_dir(tmp_path, np.zeros((2, 4000)))
    assert main(["preprocess", "--raw", str(raw), "--mvc", str(_mvc(tmp_path, 2, skip=1)),
                 "-o", str(tmp_path / "p")]) == 2
    assert "emg_2" in capsys.readouterr().err
    assert main(["preprocess", "--raw", str(raw), "--mvc", str(_mvc(tmp_path, 2)),
                 "-o", str(tmp_path / "p")]) == 0
    tr = data_io.read_trial(tmp_path / "p" / "r1.csv")
    assert tr.fs == 1000.0 and tr.n_samples == 2000 and np.all(tr.emg == 0.0)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = write_cfg(d / "c.toml")
    assert main(["simulate", "-c", str(cfg), "-o", str(d / "data")] + sets()) == 0
    assert main(["train", "-c", str(cfg), "--data", str(d / "data"), "-o", str(d / "run")] + sets()) == 0
    return d, cfg


def test_train_is_deterministic_and_resumable(trained):
    d, cfg = trained
    assert main(["train", "-c", str(cfg), "--data", str(d / "data"), "-o", str(d / "again")] + sets()) == 0
    for rel in ("phase1/weights.npz", "final/weights.npz", "losses.csv"):
        assert data_io.file_digest(d / "run" / rel) == data_io.file_digest(d / "again" / rel), rel
    assert main(["train", "-c", str(cfg), "--data", str(d / "data"), "-o", str(d / "run"), "--resume"]
                + sets()) == 0
    assert data_io.file_digest(d / "run" / "final/weights.npz") == \
        data_io.file_digest(d / "again" / "final/weights.npz")


def test_evaluate_and_compare(trained, capsys):
    d, _ = trained
    out = d / "eval"
    assert main(["evaluate", "--checkpoint", str(d / "run" / "final"), "--data", str(d / "data"),
                 "-o", str(out), "--compare", str(d / "run" / "phase1")]) == 0
    text = capsys.readouterr().out
    assert "Paired t-test" in text and "Teacher-forced" in text
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert len(rows) == 3 and all(float(r["rmse_deg"]) >= 0 for r in rows)
    assert (out / "trajectories" / "trial_000.csv").is_file()
    assert main(["report", str(out), str(out / "compare")]) == 0
    assert main(["estimate", "--checkpoint", str(d / "run" / "final"), "--data", str(d / "data"),
                 "-o", str(d / "est"), "--trials", "test"]) == 0
    assert len(list((d / "est" / "trajectories").glob("*.csv"))) == 1


def test_zero_error_survives_metric_files(tmp_path):
    from penn.eval import MetricReport, read_metrics_csv, rmse, write_metrics_csv
    th = np.radians(np.linspace(-20, 20, 50))
    rep = MetricReport("id", ["t"], [rmse(th, th)], [1.0])
    write_metrics_csv(tmp_path / "m.csv", rep)
    assert read_metrics_csv(tmp_path / "m.csv", "id").rmse_deg == [0.0]
