import csv
import json

import pytest

from nnoc2po import trainer
from nnoc2po.channel import load_dataset
from nnoc2po.cli import main
from nnoc2po.precoders import PrecoderSchedule


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dataset(tmp_path, capsys):
    p = tmp_path / "train.obpd"
    code, out, _ = run(capsys, "gen-data", "--K", 12, "--U", 2, "--B", 8, "--seed", 5, "--out", p)
    assert code == 0
    return p


def test_gen_data_manifest_and_header(tmp_path, capsys):
    p = tmp_path / "d.obpd"
    code, out, _ = run(capsys, "gen-data", "--K", 500, "--U", 2, "--B", 4, "--seed", 1, "--out", p)
    assert code == 0
    info = json.loads(out)
    assert info["K"] == 500 and info["master_seed"] == 1 and "config_hash" in info
    assert load_dataset(p).K == 500


def test_gen_data_joint(tmp_path, capsys):
    p = tmp_path / "j.obpd"
    code, out, _ = run(capsys, "gen-data", "--kind", "joint", "--K", 500, "--U", 2, "--B", 4, "--out", p)
    assert code == 0
    assert json.loads(out)["sample_kind_counts"] == {"los": 250, "nlos": 250}
    assert load_dataset(p).sample_kinds[:4] == ["los", "nlos", "los", "nlos"]


def test_gen_data_deterministic(tmp_path, capsys):
    for name in "ab":
        run(capsys, "gen-data", "--K", 7, "--U", 2, "--B", 4, "--seed", 3, "--out", tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_gen_data_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"channel": {"kind": "nlos", "U": 2, "B": 4, "num_paths": 3},
                               "K": 4, "seed": 9, "out": str(tmp_path / "c.obpd")}))
    code, out, _ = run(capsys, "gen-data", "--config", cfg, "--K", 6)
    assert code == 0
    ds = load_dataset(tmp_path / "c.obpd")
    assert ds.K == 6 and ds.config.num_paths == 3


def test_gen_data_invalid_config(tmp_path, capsys):
    code, _, err = run(capsys, "gen-data", "--U", 9, "--B", 4, "--out", tmp_path / "x")
    assert code == 1 and "U <= B" in err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1
    code, _, err = run(capsys, "train", "--t-max", 2)
    assert code == 1 and "dataset" in err


def test_train_outputs(dataset, tmp_path, capsys):
    out = tmp_path / "s.json"
    loss = tmp_path / "loss.csv"
    code, stdout, _ = run(capsys, "train", "--dataset", dataset, "--t-max", 4, "--epochs", 5,
                          "--out", out, "--loss-csv", loss)
    assert code == 0
    sched = PrecoderSchedule.load(out)
    assert sched.t_max == 4 and len(sched.tau) == 4 and len(sched.rho) == 4
    prov = sched.training_provenance
    assert prov["channel_kinds"] == ["rayleigh"] and prov["epochs"] == 5 and "config_hash" in prov
    assert len(loss.read_text().splitlines()) == 6


def test_train_tied(dataset, tmp_path, capsys):
    out = tmp_path / "s.json"
    assert run(capsys, "train", "--dataset", dataset, "--t-max", 3, "--epochs", 10, "--tied", "--out", out)[0] == 0
    sched = PrecoderSchedule.load(out)
    assert len(set(sched.tau)) == 1 and len(set(sched.rho)) == 1


def test_train_zero_epochs_gives_init(dataset, tmp_path, capsys):
    out = tmp_path / "s.json"
    assert run(capsys, "train", "--dataset", dataset, "--t-max", 2, "--epochs", 0, "--out", out)[0] == 0
    sched = PrecoderSchedule.load(out)
    assert sched.tau == [2**-8, 2**-8] and sched.rho == [1.25, 1.25]


def test_train_deterministic(dataset, tmp_path, capsys):
    for name in "ab":
        run(capsys, "train", "--dataset", dataset, "--t-max", 2, "--epochs", 8, "--out", tmp_path / name)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_train_divergence_exit_2(dataset, tmp_path, capsys):
    code, _, err = run(capsys, "train", "--dataset", dataset, "--t-max", 2, "--epochs", 50, "--lr", 5,
                       "--out", tmp_path / "s.json")
    assert code == 2 and "epoch" in err


def test_train_missing_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--dataset", tmp_path / "nope", "--t-max", 2, "--out", tmp_path / "s")
    assert code == 1


def test_eval_zf_noiseless(tmp_path, capsys):
    out = tmp_path / "ber.csv"
    code, _, _ = run(capsys, "eval-ber", "--zf", "--U", 2, "--B", 8, "--snr", "inf", "--K-eval", 50,
                     "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and rows[0]["precoder"] == "zf" and float(rows[0]["ber"]) == 0.0
    meta = json.loads((tmp_path / "ber.csv.meta.json").read_text())
    assert "config_hash" in meta and "master_seed" in meta


def test_eval_schedules_deterministic(dataset, tmp_path, capsys):
    sched = tmp_path / "s.json"
    run(capsys, "train", "--dataset", dataset, "--t-max", 2, "--epochs", 3, "--out", sched)
    for name in ("a.csv", "b.csv"):
        code, _, _ = run(capsys, "eval-ber", "--schedule", sched, "--name", "nno", "--zf", "--U", 2,
                         "--B", 8, "--snr", 0, 10, "--K-eval", 30, "--seed", 4, "--out", tmp_path / name)
        assert code == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a.csv")))
    assert [r["precoder"] for r in rows] == ["nno", "nno", "zf", "zf"]


def test_eval_missing_schedule(tmp_path, capsys):
    code, _, err = run(capsys, "eval-ber", "--schedule", tmp_path / "none.json", "--U", 2, "--B", 8,
                       "--snr", 0, "--out", tmp_path / "x.csv")
    assert code == 1 and "not found" in err


def test_sweep_empty_grid(dataset, tmp_path, capsys):
    sched = tmp_path / "s.json"
    run(capsys, "train", "--dataset", dataset, "--t-max", 1, "--epochs", 0, "--out", sched)
    out = tmp_path / "sw.csv"
    code, _, _ = run(capsys, "sweep-iters", "--schedule", sched, "--U", 2, "--B", 8, "--power-grid",
                     "--out", out)
    assert code == 0
    assert out.read_text().splitlines() == ["precoder,channel,power_db,min_tmax"]


def test_sweep_rows(dataset, tmp_path, capsys):
    paths = []
    for t in (1, 2):
        p = tmp_path / f"s{t}.json"
        run(capsys, "train", "--dataset", dataset, "--t-max", t, "--epochs", 0, "--out", p)
        paths += ["--schedule", p]
    out = tmp_path / "sw.csv"
    code, _, _ = run(capsys, "sweep-iters", *paths, "--channel", "nlos", "--U", 2, "--B", 8,
                     "--power-grid", -30, 40, "--K-eval", 40, "--target-ber", 0.2, "--out", out)
    assert code == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["power_db"] for r in rows] == ["-30.0", "40.0"]
    assert rows[0]["min_tmax"] == "-1"
    assert rows[0]["channel"] == "nlos"


def test_gradcheck_default_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    report = json.loads(out.splitlines()[-1])
    assert report["instances"] == 50 and report["passed"]


def test_gradcheck_corrupted_rule_fails(capsys, monkeypatch):
    real = trainer.backward

    def broken(tape, schedule, ds_bar=None):
        g = real(tape, schedule, ds_bar)
        g["tau"] = g["tau"] * 0.9
        return g

    monkeypatch.setattr(trainer, "backward", broken)
    code, out, _ = run(capsys, "gradcheck", "--instances", 5)
    assert code == 2
    assert "FAIL" in out and "analytic=" in out and "numeric=" in out


def test_gradcheck_zero_instances(capsys, caplog):
    code, out, _ = run(capsys, "gradcheck", "--instances", 0)
    assert code == 0
    assert json.loads(out)["passed"]
    assert "vacuously" in caplog.text


def test_eval_meta_independent_of_paths(tmp_path, capsys):
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        data, sched = tmp_path / d / "data.obpd", tmp_path / d / "s.json"
        run(capsys, "gen-data", "--K", 8, "--U", 2, "--B", 8, "--seed", 2, "--out", data)
        run(capsys, "train", "--dataset", data, "--t-max", 2, "--epochs", 3, "--out", sched)
        assert run(capsys, "eval-ber", "--schedule", sched, "--U", 2, "--B", 8, "--snr", 0, "--K-eval", 10,
                   "--out", tmp_path / d / "ber.csv")[0] == 0
    meta = [(tmp_path / d / "ber.csv.meta.json").read_bytes() for d in "ab"]
    assert meta[0] == meta[1]
