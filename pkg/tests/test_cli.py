import csv
import hashlib

import numpy as np
import pytest

from bmdrkit.cli import main, read_predictions
from bmdrkit.cnn import CnnModel, load_model
from bmdrkit.config import ExperimentConfig
from bmdrkit.errors import ConfigError
from bmdrkit.numerics import RngStream

SMALL = ["--config", "channels=20", "--config", "candidate_factor=20", "--config", "n_p=3", "--config", "n_samp=40", "--detector", "lmmse"]


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def test_profiles():
    assert ExperimentConfig.from_profile("paper").get_int("channels") == 10_000
    assert ExperimentConfig.from_profile("desk").get_int("channels") == 2000
    assert ExperimentConfig.from_profile("desk").get_ints("n_seq") == [1, 10, 50, 100]


def test_config_errors_carry_line_numbers():
    cfg = ExperimentConfig.from_profile("desk")
    with pytest.raises(ConfigError, match=":2:"):
        cfg.update_text("a = 1\nbroken line\n", origin="f")
    cfg.set("n_r", "two")
    with pytest.raises(ConfigError):
        cfg.system()


def test_range_parsing():
    cfg = ExperimentConfig({"r": "-10:-4:0.5", "l": "1,2"})
    assert len(cfg.get_range("r")) == 13 and cfg.get_range("l") == [1.0, 2.0]


def test_gen_channels_replays(tmp_path):
    for name in ("a", "b"):
        assert main(["gen-channels", "--out", str(tmp_path / name)] + SMALL) == 0
    assert _sha(tmp_path / "a") == _sha(tmp_path / "b")
    assert main(["gen-channels", "--out", str(tmp_path / "c"), "--seed", "1"] + SMALL) == 0
    assert _sha(tmp_path / "a") != _sha(tmp_path / "c")


def test_pipeline(tmp_path):
    ch, ds, model = tmp_path / "ch.bin", tmp_path / "ds.bin", tmp_path / "m.bin"
    assert main(["gen-channels", "--out", str(ch)] + SMALL) == 0
    assert main(["gen-dataset", "--out", str(ds), "--config", f"channels_file={ch}"] + SMALL) == 0
    assert main(["train", "--out", str(model), "--config", f"dataset_file={ds}", "--config", "max_epochs=2",
                 "--config", "batch_size=16"] + SMALL) == 0
    assert (tmp_path / "m.bin.history.csv").read_text().startswith("# config_hash=")
    preds = tmp_path / "p.csv"
    assert main(["predict", "--out", str(preds), "--config", f"model_file={model}", "--config",
                 f"dataset_file={ds}", "--config", "predict_split=all"] + SMALL) == 0
    labels, pred = read_predictions(preds)
    assert labels.size == 60 and np.all((pred >= 0) & (pred <= 1))
    pct = tmp_path / "pct.csv"
    assert main(["percentiles", "--out", str(pct), "--config", f"predictions_file={preds}"] + SMALL) == 0
    vals = [float(r["error_pct"]) for r in _rows(pct)]
    assert vals == sorted(vals)
    seq = tmp_path / "seq.csv"
    assert main(["seq-errors", "--out", str(seq), "--config", f"predictions_file={preds}", "--config",
                 "n_seq=1,10", "--config", "n_draws=500"] + SMALL) == 0
    assert {r["n_seq"] for r in _rows(seq)} == {"1", "10"}


def test_zero_epoch_train_keeps_initialisation(tmp_path):
    ch, ds, model = tmp_path / "ch.bin", tmp_path / "ds.bin", tmp_path / "m.bin"
    main(["gen-channels", "--out", str(ch)] + SMALL)
    main(["gen-dataset", "--out", str(ds), "--config", f"channels_file={ch}"] + SMALL)
    assert main(["train", "--out", str(model), "--config", f"dataset_file={ds}", "--config", "max_epochs=0"]
                + SMALL) == 0
    init = CnnModel(8, rng=RngStream(0).substream("init"))
    assert np.array_equal(load_model(model).theta, init.theta)


def test_cer_and_snr_table_outputs(tmp_path):
    args = ["cer", "--out", str(tmp_path / "cer"), "--config", "cer_channels=10", "--config", "cer_codewords=4",
            "--config", "cer_rho_db=-12,-4,4", "--config", "cer_detectors=lmmse", "--config", "cer_n_samp=50"]
    assert main(args) == 0
    rows = _rows(tmp_path / "cer_lmmse_user0.csv")
    assert {"cer", "bmdr_mean"} <= set(rows[0])
    b = [float(r["bmdr_mean"]) for r in rows]
    assert b == sorted(b)
    assert main(["snr-table", "--out", str(tmp_path / "t"), "--config", "snr_grid_db=-5:5:1",
                 "--config", "snr_n_samp=500"]) == 0
    assert len(_rows(tmp_path / "t.csv")) == 11


def test_exit_codes(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 1
    assert main(["gen-dataset", "--config", f"channels_file={tmp_path / 'missing.bin'}"]) == 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["gen-dataset", "--config", f"channels_file={bad}"]) == 2
