import json
import os

import numpy as np
import pytest

import config
import main
from engines.aml_engine import parse
from engines.dsp_engine import mix
from engines.metrics_engine import SDR_CAP_DB, bucket_of, rmse_mfcc
from main import dispatch
from network.amss_net import ModelParams
from storage import read_dataset, read_stems, read_wav, write_stems
from mocks import get_mock_multitrack


@pytest.fixture
def stems_dir(tmp_path):
    directory = tmp_path / "stems"
    write_stems(str(directory), get_mock_multitrack(seconds=0.3))
    return str(directory)


# --- EXIT CODES ---

def test_usage_errors_exit_with_two():
    assert dispatch(["frobnicate"]) == 2
    assert dispatch(["aml"]) == 2
    assert dispatch(["aml", "enum", "--tasks", "whistle"]) == 2
    assert dispatch(["aml", "render", "{not json"]) == 2


def test_help_exits_cleanly():
    assert dispatch(["--help"]) == 0


def test_domain_error_exits_with_one(capsys):
    assert dispatch(["aml", "parse", "apply loudpass to drums"]) == 1
    assert "error" in capsys.readouterr().err


# --- AML ---

def _json_lines(out):
    return [json.loads(line) for line in out.splitlines()]


def test_enum_lists_every_query(capsys):
    assert dispatch(["aml", "enum"]) == 0
    records = _json_lines(capsys.readouterr().out)
    queries = [r["query"] for r in records]
    assert len(queries) == 450
    assert queries == sorted(queries)
    assert all(r["ast"] == parse(r["query"]).to_dict() for r in records)


def test_enum_from_symbol(capsys):
    assert dispatch(["aml", "enum", "--symbol", "<srcs>"]) == 0
    records = _json_lines(capsys.readouterr().out)
    assert len(records) == 15
    assert all("ast" not in r for r in records)


def test_parse_then_render(capsys):
    assert dispatch(["aml", "parse", "apply lowpass to drums", "--plan"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["canonical"] == "apply medium lowpass to drums"
    assert payload["plan"]["params"]["cutoff_hz"] == 3000.0

    assert dispatch(["aml", "render", json.dumps(payload["description"])]) == 0
    rendered = json.loads(capsys.readouterr().out)
    assert rendered == {"query": "apply medium lowpass to drums", "ast": payload["description"]}


def test_gen_is_seeded(capsys):
    assert dispatch(["--seed", "3", "aml", "gen", "--count", "5"]) == 0
    first = capsys.readouterr().out
    assert dispatch(["--seed", "3", "aml", "gen", "--count", "5"]) == 0
    assert capsys.readouterr().out == first
    records = _json_lines(first)
    assert len(records) == 5
    for record in records:
        assert record["ast"] == parse(record["query"]).to_dict()


# --- DSP ---

def test_dsp_apply_mute(tmp_path, stems_dir):
    out = str(tmp_path / "out.wav")
    assert dispatch(["dsp", "apply", "--stems", stems_dir, "--query", "mute drums", "--out", out]) == 0
    expected = mix(read_stems(stems_dir).restricted_to(["vocals", "bass"]))
    np.testing.assert_allclose(read_wav(out).samples, expected.samples, atol=1e-6)

    with open(out + ".json") as f:
        sidecar = json.load(f)
    assert sidecar["query"] == "mute drums"
    assert sidecar["config_hash"] == config.get_config().config_hash


# --- DATASETS / BENCH ---

def test_triples_then_bench(tmp_path, stems_dir, capsys):
    data = str(tmp_path / "data")
    assert dispatch([
        "triples", "gen", "--stems", stems_dir, "--out", data, "--count", "4",
        "--tasks", "lowpass,decrease_volume", "--segment", "0.1",
    ]) == 0
    assert sorted(f for f in os.listdir(data) if f.endswith(".wav"))[:2] == ["0000_input.wav", "0000_target.wav"]

    report = str(tmp_path / "report.json")
    assert dispatch(["bench", "run", "--data", data, "--system", "oracle", "--out", report, "--table"]) == 0
    assert "reference loss" in capsys.readouterr().out
    with open(report) as f:
        rows = json.load(f)["rows"]
    assert rows and all(row["mean"] == 0.0 for row in rows)


def test_bench_rejects_unknown_system(tmp_path, stems_dir):
    data = str(tmp_path / "data")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", data, "--count", "1", "--tasks", "lowpass",
                     "--segment", "0.1"]) == 0
    assert dispatch(["bench", "run", "--data", data, "--system", "genius", "--out", str(tmp_path / "r.json")]) == 2


# --- MODEL ---

def test_model_init_micro(tmp_path, capsys):
    ckpt = str(tmp_path / "micro.ckpt")
    assert dispatch(["model", "init", "--micro", "--out", ckpt]) == 0
    params = ModelParams.load(ckpt)
    assert params.dims == config.get_config().micro_model
    assert str(params.n_parameters) in capsys.readouterr().out


def test_model_gradcheck_single_op(capsys):
    assert dispatch(["model", "gradcheck", "--op", "pocm"]) == 0
    assert "PASS" in capsys.readouterr().out
    assert dispatch(["model", "gradcheck", "--op", "conv3d"]) == 2


# --- CONFIGURATION ---

@pytest.fixture
def dry_reverb_config(tmp_path):
    path = tmp_path / "dry.json"
    path.write_text(json.dumps({"reverb": {"dry": 1.0, "wet": 0.0}, "seed": 5}))
    return str(path)


def test_config_reaches_triple_generation(tmp_path, stems_dir, dry_reverb_config):
    data = str(tmp_path / "data")
    assert dispatch([
        "--config", dry_reverb_config, "triples", "gen", "--stems", stems_dir, "--out", data,
        "--count", "3", "--tasks", "dereverb", "--no-augment",
    ]) == 0
    triples, manifest = read_dataset(data)
    cfg = config.load_config(dry_reverb_config)
    assert manifest["config_hash"] == cfg.config_hash != config.get_config().config_hash
    assert manifest["augment"] is False
    # A wet level of zero makes the reverb an identity, so removal has nothing to undo.
    for triple in triples:
        assert triple.input.equals(triple.target)


def test_config_reaches_the_benchmark(tmp_path, stems_dir):
    data = str(tmp_path / "data")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", data, "--count", "2",
                     "--tasks", "lowpass", "--segment", "0.1"]) == 0

    path = tmp_path / "mfcc.json"
    path.write_text(json.dumps({"mfcc": {"n_mels": 20, "n_mfcc": 8, "fft_size": 1024, "hop": 512}}))
    cfg = config.load_config(str(path))
    report = str(tmp_path / "report.json")
    assert dispatch(["--config", str(path), "bench", "run", "--data", data, "--system", "identity",
                     "--out", report]) == 0

    with open(report) as f:
        payload = json.load(f)
    assert payload["metadata"]["config_hash"] == cfg.config_hash
    triples, _ = read_dataset(data)
    for row in payload["rows"]:
        bucket = [t for t in triples if bucket_of(t) == (row["task"], row["source"])]
        expected = np.mean([rmse_mfcc(t.target, t.input, cfg.mfcc) for t in bucket])
        assert row["reference_loss"] == pytest.approx(expected)


def test_dispatch_restores_the_process_config(dry_reverb_config):
    before = config.get_config()
    assert dispatch(["--config", dry_reverb_config, "aml", "gen", "--count", "1"]) == 0
    assert config.get_config() is before


# --- FAILURES ---

def test_invalid_config_value_exits_with_one(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"hop": "abc"}))
    assert dispatch(["--config", str(path), "aml", "enum"]) == 1
    err = capsys.readouterr().err
    assert "error" in err
    assert "Traceback" not in err


def test_unexpected_failure_exits_with_one_without_traceback(monkeypatch, capsys):
    def broken(args, cfg):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(main, "cmd_aml_enum", broken)
    assert dispatch(["aml", "enum"]) == 1
    err = capsys.readouterr().err
    assert "disk on fire" in err
    assert "Traceback" not in err

    assert dispatch(["--debug", "aml", "enum"]) == 1
    assert "Traceback" in capsys.readouterr().err


def test_bad_counts_and_paths(tmp_path, stems_dir):
    assert dispatch(["aml", "gen", "--count", "-1"]) == 2
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", str(tmp_path / "d"), "--count", "-2"]) == 2
    assert dispatch(["model", "train-micro", "--data", str(tmp_path), "--steps", "0", "--lr", "1e-3"]) == 2
    assert dispatch(["triples", "gen", "--stems", str(tmp_path / "nowhere"), "--out", str(tmp_path / "d"),
                     "--count", "1"]) == 1

    blocked = os.path.join(stems_dir, "vocals.wav", "out.wav")
    assert dispatch(["dsp", "apply", "--stems", stems_dir, "--query", "mute drums", "--out", blocked]) == 1


def test_learning_rate_outside_range_exits_with_one(tmp_path, stems_dir):
    data = str(tmp_path / "data")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", data, "--count", "1",
                     "--tasks", "mute", "--segment", "0.1"]) == 0
    assert dispatch(["model", "train-micro", "--data", data, "--steps", "1", "--lr", "0.5"]) == 1


# --- ORACLE WITH STEMS ---

def test_oracle_stems_need_an_unaugmented_dataset(tmp_path, stems_dir):
    augmented = str(tmp_path / "augmented")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", augmented, "--count", "2",
                     "--tasks", "lowpass", "--segment", "0.1"]) == 0
    assert dispatch(["bench", "run", "--data", augmented, "--system", "oracle", "--stems", stems_dir,
                     "--out", str(tmp_path / "r1.json")]) == 1

    plain = str(tmp_path / "plain")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", plain, "--count", "3",
                     "--tasks", "lowpass,separate", "--no-augment"]) == 0
    report = str(tmp_path / "r2.json")
    assert dispatch(["bench", "run", "--data", plain, "--system", "oracle", "--stems", stems_dir,
                     "--out", report]) == 0
    with open(report) as f:
        rows = json.load(f)["rows"]
    for row in rows:
        assert row["mean"] == (SDR_CAP_DB if row["metric"] == "sdr" else 0.0)


def test_bench_survives_fully_muted_targets(tmp_path, stems_dir):
    data = str(tmp_path / "data")
    assert dispatch(["triples", "gen", "--stems", stems_dir, "--out", data, "--count", "6",
                     "--tasks", "mute", "--no-augment"]) == 0
    report = str(tmp_path / "report.json")
    assert dispatch(["bench", "run", "--data", data, "--system", "identity", "--out", report, "--table"]) == 0
    with open(report) as f:
        payload = json.load(f)
    triples, _ = read_dataset(data)
    silent = sum(not np.any(t.target.samples) for t in triples)
    assert payload["metadata"]["skipped_silent_references"] == silent
