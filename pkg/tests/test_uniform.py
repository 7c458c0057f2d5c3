import math
import random

import numpy as np
import pytest

from factprobe.core import KeyFact, ProbeResult, TokenDistribution, TokenMode
from factprobe.uniform import (
    InvalidDistribution,
    NoDistributions,
    NonFiniteInput,
    escalate,
    ks_uniform_pvalue,
    normalize_topk,
    pooled_pvalue,
    uniformity_verdict,
)


def dist(*probs):
    logs = tuple(math.log(p) for p in probs)
    return TokenDistribution(token_texts=tuple(f"t{i}" for i in range(len(probs))),
                             logprobs=logs)


def test_exact_uniform_gives_zero_statistic_and_p_one():
    d, p = ks_uniform_pvalue([0.2] * 5)
    assert d == 0.0
    assert p == 1.0


def test_skewed_distribution_rejects_uniformity():
    d, p = ks_uniform_pvalue([0.9, 0.025, 0.025, 0.025, 0.025])
    assert d == pytest.approx(0.7, abs=1e-9)
    assert p == pytest.approx(0.0148932, abs=1e-6)
    assert p < 0.05


def test_moderate_distribution_keeps_uniformity():
    d, p = ks_uniform_pvalue([0.4, 0.3, 0.15, 0.1, 0.05])
    assert d == pytest.approx(0.30, abs=1e-9)
    assert p == pytest.approx(0.759098, abs=1e-6)
    assert p >= 0.05


def test_statistic_is_order_invariant():
    rng = random.Random(5)
    for _ in range(200):
        raw = [rng.random() + 1e-6 for _ in range(5)]
        total = sum(raw)
        probs = [v / total for v in raw]
        d1, p1 = ks_uniform_pvalue(probs)
        shuffled = probs[:]
        rng.shuffle(shuffled)
        d2, p2 = ks_uniform_pvalue(shuffled)
        assert d1 == d2
        assert p1 == p2


def test_input_validation():
    with pytest.raises(InvalidDistribution):
        ks_uniform_pvalue([1.0])
    with pytest.raises(InvalidDistribution):
        ks_uniform_pvalue([0.5, 0.4])  # sums to 0.9
    with pytest.raises(InvalidDistribution):
        ks_uniform_pvalue([1.2, -0.2])
    with pytest.raises(NonFiniteInput):
        ks_uniform_pvalue([math.nan, 1.0])


def test_normalize_topk_softmax():
    probs = normalize_topk([2.0, 0.0, 0.0, 0.0, 0.0])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert probs[0] == pytest.approx(0.6487, abs=1e-4)
    assert probs[1] == pytest.approx(0.0878, abs=1e-4)


def test_normalize_topk_equal_inputs_exactly_uniform():
    probs = normalize_topk([-3.2] * 5)
    assert np.all(probs == 0.2)


def test_normalize_topk_shift_invariant():
    rng = random.Random(13)
    for _ in range(200):
        logits = [rng.uniform(-5, 5) for _ in range(5)]
        c = rng.uniform(-10, 10)
        base = normalize_topk(logits)
        moved = normalize_topk([x + c for x in logits])
        assert np.max(np.abs(base - moved)) < 1e-9


def test_normalize_topk_validation():
    with pytest.raises(InvalidDistribution):
        normalize_topk([1.0])
    with pytest.raises(NonFiniteInput):
        normalize_topk([1.0, math.inf])


def test_pooled_modes():
    sure = dist(0.9, 0.025, 0.025, 0.025, 0.025)
    flat = dist(0.2, 0.2, 0.2, 0.2, 0.2)
    assert pooled_pvalue([sure, flat], TokenMode.FIRST) < 0.05
    assert pooled_pvalue([flat, sure], TokenMode.FIRST) == 1.0
    assert pooled_pvalue([flat, sure], TokenMode.MIN_P) < 0.05
    mean = pooled_pvalue([flat, sure], TokenMode.MEAN_P)
    assert 0.4 < mean < 0.6
    with pytest.raises(NoDistributions):
        pooled_pvalue([], TokenMode.FIRST)


def test_uniformity_verdict_flags():
    fact = KeyFact(surface="x", sentence_index=0, fact_index=0, char_span=(0, 1))
    sure = ProbeResult(fact=fact, question="q", regenerated="x",
                       token_distributions=(dist(0.9, 0.025, 0.025, 0.025, 0.025),))
    flat = ProbeResult(fact=fact, question="q", regenerated="x",
                       token_distributions=(dist(0.2, 0.2, 0.2, 0.2, 0.2),))
    assert uniformity_verdict(sure, alpha=0.05).flag == 0
    assert uniformity_verdict(flat, alpha=0.05).flag == 1
    bare = ProbeResult(fact=fact, question="q", regenerated="x")
    with pytest.raises(NoDistributions):
        uniformity_verdict(bare, alpha=0.05)


def test_escalate_never_lowers():
    assert escalate(0, 0) == 0
    assert escalate(0, 1) == 1
    assert escalate(1, 0) == 1
    assert escalate(1, 1) == 1
    with pytest.raises(ValueError):
        escalate(2, 0)


def test_alpha_monotonicity_of_flag():
    # lowering alpha can only flag more, never less
    rng = random.Random(21)
    for _ in range(300):
        raw = [rng.random() + 1e-6 for _ in range(5)]
        total = sum(raw)
        _, p = ks_uniform_pvalue([v / total for v in raw])
        a1, a2 = sorted((rng.random(), rng.random()))
        flag1 = 0 if p < a1 else 1
        flag2 = 0 if p < a2 else 1
        assert flag1 >= flag2
