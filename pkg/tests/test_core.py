import math
import random

import pytest

from factprobe.core import (
    AlignmentVerdict,
    ConfigError,
    KeyFact,
    Passage,
    PipelineConfig,
    Sentence,
    Stage,
    TokenDistribution,
    classify,
    passage_score,
    sentence_score,
)


def test_sentence_rejects_untrimmed_or_empty():
    Sentence(index=0, text="Fine.", char_span=(0, 5))
    with pytest.raises(ValueError):
        Sentence(index=0, text=" padded", char_span=(0, 7))
    with pytest.raises(ValueError):
        Sentence(index=0, text="", char_span=(0, 0))
    with pytest.raises(ValueError):
        Sentence(index=0, text="Fine.", char_span=(5, 0))


def test_passage_tiling_is_checked():
    text = "One. Two."
    sentences = (Sentence(0, "One.", (0, 4)), Sentence(1, "Two.", (5, 9)))
    Passage(text=text, sentences=sentences, separators=("", " ", ""))
    with pytest.raises(ValueError):
        Passage(text=text, sentences=sentences, separators=("", "", ""))
    with pytest.raises(ValueError):
        Passage(text=text, sentences=sentences, separators=("", " "))
    with pytest.raises(ValueError):
        Passage(text="not empty", sentences=(), separators=("not empty",))


def test_keyfact_key_and_validation():
    fact = KeyFact(surface="Argentina", sentence_index=2, fact_index=1, char_span=(0, 9))
    assert fact.key == (2, 1)
    with pytest.raises(ValueError):
        KeyFact(surface="", sentence_index=0, fact_index=0, char_span=(0, 0))
    with pytest.raises(ValueError):
        KeyFact(surface="x", sentence_index=0, fact_index=0, char_span=(3, 1))


def test_token_distribution_validation():
    dist = TokenDistribution(token_texts=("a", "b"), logprobs=(-0.1, -2.5))
    assert dist.k == 2
    with pytest.raises(ValueError):
        TokenDistribution(token_texts=("a",), logprobs=(-0.1,))
    with pytest.raises(ValueError):
        TokenDistribution(token_texts=("a", "b"), logprobs=(-0.1,))
    with pytest.raises(ValueError):
        TokenDistribution(token_texts=("a", "b"), logprobs=(-2.5, -0.1))
    with pytest.raises(ValueError):
        TokenDistribution(token_texts=("a", "b"), logprobs=(-0.1, math.nan))


def test_verdict_flag_must_be_binary():
    AlignmentVerdict(fact_key=(0, 0), stage=Stage.FACT_ALIGNMENT, flag=1, detail="")
    with pytest.raises(ValueError):
        AlignmentVerdict(fact_key=(0, 0), stage=Stage.FACT_ALIGNMENT, flag=2, detail="")


def test_sentence_score_is_mean_of_flags():
    assert sentence_score([0, 0, 1]) == pytest.approx(1 / 3)
    assert sentence_score([]) == 0.0
    assert sentence_score([1, 1]) == 1.0
    with pytest.raises(ValueError):
        sentence_score([0, 2])


def test_passage_score_is_mean_of_sentence_scores():
    assert passage_score([0.5, 1.0]) == 0.75
    assert passage_score([]) == 0.0
    with pytest.raises(ValueError):
        passage_score([1.5])
    with pytest.raises(ValueError):
        passage_score([math.nan])


def test_classify_ties_go_to_one():
    assert classify(0.5, 0.5) == 1
    assert classify(0.49999, 0.5) == 0
    assert classify(1.0, 0.5) == 1
    with pytest.raises(ValueError):
        classify(math.inf, 0.5)


def test_classify_monotone_in_score():
    rng = random.Random(7)
    for _ in range(500):
        threshold = rng.random()
        a, b = sorted((rng.random(), rng.random()))
        assert classify(a, threshold) <= classify(b, threshold)


def test_config_validation_and_snapshot():
    config = PipelineConfig(endpoint="http://x", judge_model=None)
    assert config.resolved_judge_model == config.probe_model
    snap = config.snapshot()
    assert snap["alignment_mode"] == "judge"
    assert snap["extractor"] == "heuristic"
    for bad in (dict(ks_alpha=0.0), dict(ks_alpha=1.0), dict(top_k=1), dict(top_k=21),
                dict(f1_threshold=1.5), dict(temperature=-1.0), dict(concurrency=0),
                dict(max_retries=-1), dict(backoff_factor=0.5), dict(beam_size=0)):
        with pytest.raises(ConfigError):
            PipelineConfig(**bad)


def test_config_judge_model_override():
    config = PipelineConfig(probe_model="p", judge_model="j")
    assert config.resolved_judge_model == "j"
