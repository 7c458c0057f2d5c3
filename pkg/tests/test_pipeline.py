import dataclasses
import json
import math
from pathlib import Path

import pytest

from factprobe.core import (
    AlignmentMode,
    ConfigError,
    DecodingMode,
    ExtractorMode,
    PipelineConfig,
)
from factprobe.mockserver import MockEntry, MockFixture, MockServer
from factprobe.pipeline import detect, report_to_dict, report_to_json
from factprobe.qgen import TemplateQuestionGenerator

ROOT = Path(__file__).resolve().parent.parent
FIG_TEXT = "Argentina won the World Cup in the years, 1978, 1986 and 2006."

SKEW = ((("yes", math.log(0.9)), ("no", math.log(0.025)), ("eh", math.log(0.025)),
         ("um", math.log(0.025)), ("hm", math.log(0.025))),)
FLAT = ((("yes", math.log(0.2)), ("no", math.log(0.2)), ("eh", math.log(0.2)),
         ("um", math.log(0.2)), ("hm", math.log(0.2))),)


def fixture_path(name):
    return ROOT / "fixtures" / name


def config_for(server, **kw):
    return PipelineConfig(endpoint=server.base_url, **kw)


def test_figure1_end_to_end():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        report = detect(FIG_TEXT, config_for(server))
    assert [r.final_flag for r in report.records] == [0, 0, 1]
    assert report.hallucinated_facts == ("1978, 1986 and 2006",)
    assert report.sentence_scores == (pytest.approx(1 / 3),)
    assert report.passage_score == pytest.approx(1 / 3)
    assert report.label == 0
    assert report.llm_call_count == 7  # 2 per fact + 1 judge
    assert report.retry_count == 0


def test_uniform_answers_escalate():
    with MockServer.from_file(fixture_path("uniform_all.json")) as server:
        report = detect(FIG_TEXT, config_for(server))
    assert [r.alignment.flag for r in report.records] == [0, 0, 0]
    assert [r.final_flag for r in report.records] == [1, 1, 1]
    assert all(r.p_value == 1.0 for r in report.records)
    assert report.passage_score == 1.0
    assert report.label == 1


def test_missing_logprobs_keeps_stage_one():
    with MockServer.from_file(fixture_path("nologprobs.json")) as server:
        report = detect(FIG_TEXT, config_for(server))
    assert [r.final_flag for r in report.records] == [0, 0, 1]
    assert report.records[0].uniformity is None
    assert report.records[0].uniformity_skip_reason == "no token distributions"
    assert any("skipped" in note for note in report.notes)


def test_flagged_fact_skips_uniformity():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        report = detect(FIG_TEXT, config_for(server))
    flagged = report.records[2]
    assert flagged.alignment.flag == 1
    assert flagged.uniformity is None
    assert flagged.uniformity_skip_reason == "already flagged by alignment"


def test_report_json_is_deterministic():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        doc1 = report_to_json(detect(FIG_TEXT, config_for(server)))
        doc2 = report_to_json(detect(FIG_TEXT, config_for(server)))
    assert doc1 == doc2
    parsed = json.loads(doc1)
    assert parsed["schema_version"] == 1
    assert "timings" not in parsed
    assert parsed["timestamp"] is None


def test_report_timings_only_when_asked():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        report = detect(FIG_TEXT, config_for(server))
    assert "timings" in report_to_dict(report, include_timings=True)
    assert report.timings.total_s > 0


def test_timestamp_is_injected_not_generated():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        report = detect(FIG_TEXT, config_for(server), timestamp="2024-01-01T00:00:00Z")
    assert report_to_dict(report)["timestamp"] == "2024-01-01T00:00:00Z"


def test_no_facts_no_calls_no_endpoint_needed():
    report = detect("nothing notable happened here.", PipelineConfig())
    assert report.records == ()
    assert report.llm_call_count == 0
    assert report.sentence_scores == (0.0,)
    assert report.label == 0
    assert "no facts extracted" in report.notes


def test_empty_text():
    report = detect("", PipelineConfig())
    assert report.sentence_scores == ()
    assert report.passage_score == 0.0


def test_missing_endpoint_raises_config_error_on_first_call():
    with pytest.raises(ConfigError):
        detect(FIG_TEXT, PipelineConfig())


def test_external_question_generator_costs_f_plus_one():
    passage_facts = ["Argentina", "World Cup", "1978, 1986 and 2006"]
    generator = TemplateQuestionGenerator()
    fixture = MockFixture()
    from factprobe.align import build_judge_prompt
    from factprobe.extract import extract_heuristic
    from factprobe.segment import segment_passage

    sentence = segment_passage(FIG_TEXT).sentences[0]
    pairs = []
    for fact in extract_heuristic(sentence):
        question = generator(fact, sentence, None)
        fixture.exact[f"Question: {question}"] = MockEntry(fact.surface, SKEW)
        pairs.append((fact.surface, fact.surface))
    fixture.exact[build_judge_prompt(pairs)] = MockEntry("[0, 0, 0]")

    with MockServer(fixture) as server:
        report = detect(FIG_TEXT, config_for(server), question_generator=generator)
    assert [r.fact.surface for r in report.records] == passage_facts
    assert [r.final_flag for r in report.records] == [0, 0, 0]
    assert report.llm_call_count == 4  # one regen per fact + one judge


def test_f1_mode_needs_no_judge_call():
    generator = TemplateQuestionGenerator()
    fixture = MockFixture()
    from factprobe.extract import extract_heuristic
    from factprobe.segment import segment_passage

    sentence = segment_passage(FIG_TEXT).sentences[0]
    for fact in extract_heuristic(sentence):
        question = generator(fact, sentence, None)
        fixture.exact[f"Question: {question}"] = MockEntry(fact.surface, SKEW)

    with MockServer(fixture) as server:
        report = detect(FIG_TEXT, config_for(server, alignment_mode=AlignmentMode.F1),
                        question_generator=generator)
    assert report.llm_call_count == 3
    assert [r.final_flag for r in report.records] == [0, 0, 0]
    assert all(r.alignment.detail.startswith("f1=") for r in report.records)


def test_judge_parse_failure_falls_back_to_f1():
    # default mock reply "unknown" never parses as flags
    generator = TemplateQuestionGenerator()
    fixture = MockFixture()
    from factprobe.extract import extract_heuristic
    from factprobe.segment import segment_passage

    sentence = segment_passage(FIG_TEXT).sentences[0]
    for fact in extract_heuristic(sentence):
        question = generator(fact, sentence, None)
        fixture.exact[f"Question: {question}"] = MockEntry(fact.surface, SKEW)

    with MockServer(fixture) as server:
        report = detect(FIG_TEXT, config_for(server), question_generator=generator)
    assert any("fell back to F1" in note for note in report.notes)
    assert all("judge fallback" in r.alignment.detail for r in report.records)
    # regenerations matched exactly, so F1 keeps every fact aligned
    assert [r.alignment.flag for r in report.records] == [0, 0, 0]
    assert report.llm_call_count == 5  # 3 regens + 2 judge attempts


def test_duplicate_surfaces_share_one_probe():
    fixture = MockFixture()
    from factprobe.align import build_judge_prompt
    from factprobe.extract import extract_heuristic
    from factprobe.qgen import build_qg_prompt
    from factprobe.segment import segment_passage

    text = "Paris beat Paris at being Paris."
    sentence = segment_passage(text).sentences[0]
    facts = extract_heuristic(sentence)
    assert len(facts) == 1  # the extractor itself dedupes
    fixture.exact[build_qg_prompt(facts[0], sentence, None)] = MockEntry("What city?")
    fixture.exact["Question: What city?"] = MockEntry("Paris", SKEW)
    fixture.exact[build_judge_prompt([("Paris", "Paris")])] = MockEntry("[0]")
    with MockServer(fixture) as server:
        report = detect(text, config_for(server))
    assert report.llm_call_count == 3


def test_random_extractor_is_reproducible_and_costed():
    fixture = MockFixture(default=MockEntry("an answer?", SKEW))
    with MockServer(fixture) as server:
        config = config_for(server, extractor=ExtractorMode.RANDOM, seed=5,
                            alignment_mode=AlignmentMode.F1)
        r1 = detect(FIG_TEXT, config)
        r2 = detect(FIG_TEXT, config)
    assert [x.fact.surface for x in r1.records] == [x.fact.surface for x in r2.records]
    assert len(r1.records) == 3  # same count as the heuristic


def test_beam_decoding_warns_and_notes():
    fixture = MockFixture(default=MockEntry("an answer?", SKEW))
    with MockServer(fixture) as server:
        config = config_for(server, decoding=DecodingMode.BEAM,
                            alignment_mode=AlignmentMode.F1)
        with pytest.warns(UserWarning, match="beam"):
            report = detect(FIG_TEXT, config)
    assert any("beam" in note for note in report.notes)


def test_config_snapshot_lands_in_report():
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        url = server.base_url
        report = detect(FIG_TEXT, config_for(server, ks_alpha=0.1))
    doc = report_to_dict(report)
    assert doc["config"]["ks_alpha"] == 0.1
    assert doc["config"]["endpoint"] == url


def test_shared_gateway_accounting_is_per_run():
    from factprobe.gateway import GatewayClient
    with MockServer.from_file(fixture_path("figure1.json")) as server:
        shared = GatewayClient(server.base_url)
        config = PipelineConfig()
        r1 = detect(FIG_TEXT, config, gateway=shared)
        r2 = detect(FIG_TEXT, config, gateway=shared)
    assert r1.llm_call_count == 7
    assert r2.llm_call_count == 7
    assert shared.call_count == 14
