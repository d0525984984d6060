import configparser
import hashlib
import json

import numpy as np
import pytest

from pdmkit.cli import read_aggregate, run
from pdmkit.features import load_windows

SMALL = """\
[run]
seed = 3
[generate]
farm_days = 4
devices = 22
sensor_types = Temperature,Humidity,SoilNitrate
rpms = 100,200,300,400,500,600
piezo_recordings = 4
piezo_seconds = 0.3
mems_recordings = 4
mems_seconds = 10
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL)
    assert run(["generate", "--config", str(cfg), "--out", str(root / "data")]) == 0
    return root, cfg


def test_generate_layout(corpus):
    root, _ = corpus
    data = root / "data"
    assert len(list((data / "farm").glob("*.csv"))) == 3
    assert len(list((data / "motor/piezo").glob("*.csv"))) == 6 * 3 * 4
    assert (data / "farm/device22_Humidity.csv").read_text().startswith("timestamp,value,is_anomaly\n")
    assert (data / "motor/mems/rpm300_Failure_001.csv").read_text().startswith("t,x,y,z\n")
    man = configparser.ConfigParser(interpolation=None)
    man.read(data / "manifest.ini")
    assert man["run"]["seed"] == "3" and man["run"]["command"] == "generate"
    entry = man["file farm/device22_Humidity.csv"]
    assert entry["samples"] == "384" and entry["sha256"] == sha(data / "farm/device22_Humidity.csv")
    resolved = (data / "resolved_config.ini").read_text()
    assert "farm_days = 4.0" in resolved and "piezo_noise = 0.3" in resolved


def test_generate_is_repeatable(corpus, tmp_path):
    root, cfg = corpus
    assert run(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert sha(tmp_path / "manifest.ini") == sha(root / "data/manifest.ini")


def test_unknown_key_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[generate]\nfarm_dayz = 3\n")
    assert run(["generate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "farm_dayz" in capsys.readouterr().err


def test_invalid_sensor_type_names_key(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[generate]\nsensor_types = Temperature,Barometer\n")
    assert run(["generate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "sensor_types" in err and "Barometer" in err


def test_bad_flags_are_usage_errors(tmp_path):
    assert run(["detect", "--forecaster", "prophet", "--out", str(tmp_path), "x.csv"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["classify", "--out", str(tmp_path)]) == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    assert run(["detect", "--out", str(tmp_path), str(tmp_path / "nope.csv")]) == 2
    assert "nope.csv" in capsys.readouterr().err


@pytest.fixture(scope="module")
def detections(corpus):
    root, cfg = corpus
    out = {}
    for fc in ("arima", "lstm"):
        target = root / f"detect_{fc}"
        assert run(["detect", str(root / "data"), "--config", str(cfg), "--forecaster", fc, "--out",
                    str(target)]) == 0
        out[fc] = target
    return out


def test_aggregate_has_one_row_per_type(detections):
    agg = read_aggregate(detections["arima"] / "aggregate.csv")
    assert sorted(agg) == ["Humidity", "SoilNitrate", "Temperature"]
    assert (detections["arima"] / "figures/aggregate_rmse.png").exists()
    assert (detections["arima"] / "figures/device22_Humidity.png").exists()


def test_model_type_differs_between_forecasters(detections):
    tails = {fc: (d / "reports/device22_Temperature.csv").read_text().splitlines()[-1]
             for fc, d in detections.items()}
    assert "model_type=arima" in tails["arima"] and "model_type=lstm" in tails["lstm"]


def test_plot_data_matches_report_rows(detections):
    lines = (detections["lstm"] / "plot_data/device22_SoilNitrate.csv").read_text().splitlines()
    man = configparser.ConfigParser(interpolation=None)
    man.read(detections["lstm"] / "manifest.ini")
    assert len(lines) - 1 == int(man["file plot_data/device22_SoilNitrate.csv"]["rows"])


def test_detect_is_repeatable(corpus, detections, tmp_path):
    root, cfg = corpus
    assert run(["detect", str(root / "data"), "--config", str(cfg), "--forecaster", "lstm", "--out",
                str(tmp_path)]) == 0
    assert sha(tmp_path / "manifest.ini") == sha(detections["lstm"] / "manifest.ini")


def test_grid_table_layout(corpus, tmp_path):
    root, cfg = corpus
    assert run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/piezo.csv"), "--grid",
                "--out", str(tmp_path), "--no-figures"]) == 0
    lines = (tmp_path / "grid.csv").read_text().splitlines()
    assert lines[0].startswith("Trained RPM,RPM-100,")
    assert len(lines) == 1 + 7 and lines[-1].startswith("Augmented-data model,")
    assert not (tmp_path / "figures").exists()


@pytest.fixture(scope="module")
def source_model(corpus):
    root, cfg = corpus
    out = root / "source"
    assert run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/piezo.csv"),
                "--window-len", "10", "--out", str(out)]) == 0
    return out


def evaluation(path):
    rows = path.read_text().splitlines()[1:]
    return dict(r.split(",", 1) for r in rows)


def test_classify_outputs(source_model):
    ev = evaluation(source_model / "evaluation.csv")
    assert ev["provenance"] == "TrainedFresh"
    rates = np.array([[float(v) for v in r.split(",")[1:]]
                      for r in (source_model / "confusion.csv").read_text().splitlines()[1:]])
    np.testing.assert_allclose(rates.sum(axis=1), 100.0, atol=0.02)
    assert (source_model / "figures/confusion.png").exists()
    assert (source_model / "figures/loss.png").exists()


def test_transfer_without_fine_tune_keeps_weights(corpus, source_model, tmp_path):
    root, cfg = corpus
    assert run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/mems.csv"),
                "--transfer-from", str(source_model / "classifier.pdm"), "--out", str(tmp_path)]) == 0
    src, dst = evaluation(source_model / "evaluation.csv"), evaluation(tmp_path / "evaluation.csv")
    assert dst["provenance"] == "Transferred"
    assert dst["weights_sha256"] == src["weights_sha256"]


def test_transfer_dimension_mismatch(corpus, source_model, tmp_path, capsys):
    root, cfg = corpus
    # 5-sample MEMS windows (dim 15) cannot reach the source dimensionality of 30
    code = run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/mems.csv"), "--window-len",
                "5", "--transfer-from", str(source_model / "classifier.pdm"), "--out", str(tmp_path)])
    assert code == 2
    err = capsys.readouterr().err
    assert "15" in err and "30" in err


def test_transfer_from_non_artifact(corpus, tmp_path, capsys):
    root, cfg = corpus
    code = run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/mems.csv"),
                "--transfer-from", str(root / "data/manifest.ini"), "--out", str(tmp_path)])
    assert code == 2
    assert "manifest.ini" in capsys.readouterr().err


def test_binary_flag(corpus, tmp_path):
    root, cfg = corpus
    assert run(["classify", "--config", str(cfg), "--windows", str(root / "data/windows/piezo.csv"), "--binary",
                "--axes", "XZ", "--out", str(tmp_path), "--no-figures"]) == 0
    assert evaluation(tmp_path / "evaluation.csv")["classes"] == "Normal|NotNormal"


def test_classify_leaves_inputs_alone(corpus, source_model):
    root, _ = corpus
    man = configparser.ConfigParser(interpolation=None)
    man.read(root / "data/manifest.ini")
    assert man["file windows/piezo.csv"]["sha256"] == sha(root / "data/windows/piezo.csv")
    assert len(load_windows(root / "data/windows/piezo.csv")) > 0


def test_inspect(source_model, capsys, tmp_path):
    assert run(["inspect", str(source_model / "classifier.pdm")]) == 0
    header = json.loads(capsys.readouterr().out)
    assert header["type"] == "defect_classifier"
    (tmp_path / "junk").write_bytes(b"\x00\x01")
    assert run(["inspect", str(tmp_path / "junk")]) == 2
