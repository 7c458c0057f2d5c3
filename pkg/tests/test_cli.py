import json
from pathlib import Path

import pytest

from factprobe.cli import build_parser, main, resolve_config

ROOT = Path(__file__).resolve().parent.parent
FIG_TEXT = "Argentina won the World Cup in the years, 1978, 1986 and 2006."
FIG_FIXTURE = str(ROOT / "fixtures" / "figure1.json")
EVAL_FIXTURE = str(ROOT / "fixtures" / "eval20.json")
EVAL_DATA = str(ROOT / "datasets" / "eval20.jsonl")


def parse(*argv):
    return build_parser().parse_args(list(argv))


def test_detect_json_to_stdout(capsys):
    assert main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["classification"]["label"] == 0
    assert doc["hallucinated_facts"] == ["1978, 1986 and 2006"]
    assert doc["llm_calls"]["detection"] == 7
    assert doc["config"]["endpoint"] == f"fixture://{FIG_FIXTURE}"


def test_detect_runs_are_byte_identical(capsys):
    main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE])
    first = capsys.readouterr().out
    main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE])
    assert capsys.readouterr().out == first


def test_detect_text_format(capsys):
    assert main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE, "--format", "text"]) == 0
    out = capsys.readouterr().out
    assert "FLAGGED" in out
    assert "passage_score" in out


def test_detect_reads_input_file(tmp_path, capsys):
    path = tmp_path / "passage.txt"
    path.write_text(FIG_TEXT, encoding="utf-8")
    assert main(["detect", str(path), "--fixture", FIG_FIXTURE]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["passage"]["text"] == FIG_TEXT


def test_detect_out_file(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE, "--out", str(out)]) == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["schema_version"] == 1
    assert "passage_score" in capsys.readouterr().out


def test_detect_missing_file_is_exit_4(capsys):
    assert main(["detect", "no_such_file.txt", "--file"]) == 4
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["exit_code"] == 4
    assert "no_such_file.txt" in err["error"]["message"]


def test_detect_without_endpoint_is_exit_2(capsys, monkeypatch):
    monkeypatch.delenv("FACTPROBE_ENDPOINT", raising=False)
    assert main(["detect", FIG_TEXT]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"]["type"] == "ConfigError"
    assert "endpoint" in err["error"]["message"]


def test_detect_unreachable_endpoint_is_exit_3(capsys):
    assert main(["detect", FIG_TEXT, "--endpoint", "http://127.0.0.1:1",
                 "--retries", "0", "--timeout", "0.2"]) == 3


def test_detect_timing_flag(capsys):
    main(["detect", FIG_TEXT, "--fixture", FIG_FIXTURE, "--timing"])
    assert "timings" in json.loads(capsys.readouterr().out)


def test_eval_roundtrip(tmp_path, capsys):
    out = tmp_path / "eval.json"
    code = main(["eval", "--dataset", EVAL_DATA, "--fixture", EVAL_FIXTURE,
                 "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["n_items"] == 20
    assert doc["auc_pr"] == pytest.approx(0.84066627816627, abs=1e-9)
    assert "auc_pr" in capsys.readouterr().out


def test_eval_bad_dataset_is_exit_4(tmp_path, capsys):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"generated_answer": ""}\n', encoding="utf-8")
    assert main(["eval", "--dataset", str(path)]) == 4


def test_bad_fixture_is_exit_4(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("[]", encoding="utf-8")
    assert main(["detect", FIG_TEXT, "--fixture", str(path)]) == 4


def test_config_provenance(capsys, monkeypatch):
    monkeypatch.setenv("FACTPROBE_TOP_K", "9")
    monkeypatch.delenv("FACTPROBE_ENDPOINT", raising=False)
    assert main(["config", "--ks-alpha", "0.01"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ks_alpha"] == {"value": 0.01, "source": "flag"}
    assert doc["top_k"] == {"value": 9, "source": "env"}
    assert doc["f1_threshold"]["source"] == "default"


def test_config_file_lowest_written_precedence(tmp_path, monkeypatch, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"ks_alpha": 0.2, "top_k": 6,
                                  "alignment_mode": "f1"}), encoding="utf-8")
    monkeypatch.setenv("FACTPROBE_TOP_K", "9")
    assert main(["config", "--config", str(config), "--ks-alpha", "0.01"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["ks_alpha"] == {"value": 0.01, "source": "flag"}   # flag beats file
    assert doc["top_k"] == {"value": 9, "source": "env"}          # env beats file
    assert doc["alignment_mode"] == {"value": "f1", "source": "file"}


def test_config_file_unknown_key_is_exit_2(tmp_path, capsys):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"api_key": "nope"}), encoding="utf-8")
    assert main(["config", "--config", str(config)]) == 2
    assert "api_key" in capsys.readouterr().err


def test_bad_env_value_is_exit_2(monkeypatch, capsys):
    monkeypatch.setenv("FACTPROBE_TOP_K", "many")
    assert main(["config"]) == 2
    assert "FACTPROBE_TOP_K" in capsys.readouterr().err


def test_config_validation_error_is_exit_2(capsys):
    assert main(["config", "--ks-alpha", "7"]) == 2


def test_credentials_have_no_flag():
    from factprobe.cli import FIELD_SPECS
    assert all("api" not in spec.flag and "key" not in spec.flag
               for spec in FIELD_SPECS)


def test_resolve_config_defaults(monkeypatch):
    import os
    for name in list(os.environ):
        if name.startswith("FACTPROBE_"):
            monkeypatch.delenv(name)
    config, sources = resolve_config(parse("config"))
    assert config.top_k == 5
    assert config.ks_alpha == 0.05
    assert config.f1_threshold == 0.8
    assert config.temperature == 0.0
    assert config.classification_threshold == 0.5
    assert set(sources.values()) == {"default"}
