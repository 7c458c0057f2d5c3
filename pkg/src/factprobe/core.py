"""Core domain types and scoring rules for the detection pipeline.

Everything downstream (segmentation, extraction, probing, alignment,
the uniformity check, reports) speaks in terms of these types. They are
frozen dataclasses: pipeline stages may run concurrently and share them
freely, so nothing here is mutable after construction.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class FactProbeError(Exception):
    """Base class for every error this package raises on purpose."""


class ConfigError(FactProbeError):
    """Invalid configuration value, from any source (flag, env, file)."""


class Stage(str, Enum):
    """Which pipeline stage produced a verdict."""

    FACT_ALIGNMENT = "fact_alignment"
    UNIFORMITY = "uniformity"


class AlignmentMode(str, Enum):
    JUDGE = "judge"
    F1 = "f1"


class TokenMode(str, Enum):
    """How per-token p-values are pooled into one confidence signal."""

    FIRST = "first"
    MIN_P = "minp"
    MEAN_P = "meanp"


class ExtractorMode(str, Enum):
    HEURISTIC = "heuristic"
    POS = "pos"
    RANDOM = "random"
    LLM = "llm"


class DecodingMode(str, Enum):
    GREEDY = "greedy"
    BEAM = "beam"


@dataclass(frozen=True)
class Sentence:
    """One sentence of a passage.

    Attributes:
        index: zero-based position within the passage.
        text: sentence text, whitespace-trimmed, never empty.
        char_span: [start, end) offsets into the passage text.
    """

    index: int
    text: str
    char_span: tuple[int, int]

    def __post_init__(self):
        if not self.text or self.text != self.text.strip():
            raise ValueError("sentence text must be non-empty and trimmed")
        start, end = self.char_span
        if start < 0 or end <= start:
            raise ValueError("invalid sentence span")


@dataclass(frozen=True)
class Passage:
    """A unit of generated text under inspection.

    Attributes:
        text: the original passage text, byte for byte.
        sentences: ordered sentences; empty iff text is all whitespace.
        separators: the non-sentence slices around and between sentences,
            len(sentences) + 1 of them. Interleaving separators with
            sentence texts reconstructs `text` exactly.
        question: the question that elicited the passage, when known.
    """

    text: str
    sentences: tuple[Sentence, ...]
    separators: tuple[str, ...]
    question: Optional[str] = None

    def __post_init__(self):
        if len(self.separators) != len(self.sentences) + 1:
            raise ValueError("need len(sentences) + 1 separators")
        rebuilt = self.separators[0]
        for sent, sep in zip(self.sentences, self.separators[1:]):
            if self.text[sent.char_span[0]:sent.char_span[1]] != sent.text:
                raise ValueError("sentence span does not match passage text")
            rebuilt += sent.text + sep
        if rebuilt != self.text:
            raise ValueError("sentences + separators do not tile the passage")
        if bool(self.sentences) != bool(self.text.strip()):
            raise ValueError("sentence list must be non-empty iff text has content")


@dataclass(frozen=True)
class KeyFact:
    """A candidate fact span extracted from one sentence.

    Attributes:
        surface: verbatim span text.
        sentence_index: index of the owning sentence.
        fact_index: zero-based position among the sentence's facts.
        char_span: [start, end) offsets into the sentence text.
    """

    surface: str
    sentence_index: int
    fact_index: int
    char_span: tuple[int, int]

    def __post_init__(self):
        start, end = self.char_span
        if start < 0 or end <= start:
            raise ValueError("invalid fact span")
        if not self.surface:
            raise ValueError("fact surface must be non-empty")

    @property
    def key(self) -> tuple[int, int]:
        return (self.sentence_index, self.fact_index)


@dataclass(frozen=True)
class TokenDistribution:
    """Top-k alternatives for one generated token position.

    Attributes:
        token_texts: the k candidate token strings.
        logprobs: their log probabilities, sorted descending, all finite.
    """

    token_texts: tuple[str, ...]
    logprobs: tuple[float, ...]

    def __post_init__(self):
        if len(self.token_texts) != len(self.logprobs):
            raise ValueError("token_texts and logprobs must have equal length")
        if len(self.logprobs) < 2:
            raise ValueError("need at least two alternatives per position")
        for lp in self.logprobs:
            if not math.isfinite(lp):
                raise ValueError("logprobs must be finite")
        if any(a < b for a, b in zip(self.logprobs, self.logprobs[1:])):
            raise ValueError("logprobs must be sorted descending")

    @property
    def k(self) -> int:
        return len(self.logprobs)


@dataclass(frozen=True)
class ProbeResult:
    """Everything the probe round-trip produced for one fact."""

    fact: KeyFact
    question: str
    regenerated: str
    token_distributions: Optional[tuple[TokenDistribution, ...]] = None
    llm_calls_used: int = 0


@dataclass(frozen=True)
class AlignmentVerdict:
    """A binary verdict on one fact from one stage.

    detail carries the stage's evidence as text: the judge label, the
    F1 value, or the KS p-value.
    """

    fact_key: tuple[int, int]
    stage: Stage
    flag: int
    detail: str = ""

    def __post_init__(self):
        if self.flag not in (0, 1):
            raise ValueError("flag must be 0 or 1")


@dataclass(frozen=True)
class FactRecord:
    """Per-fact summary assembled into the detection report.

    uniformity is None when the second stage did not run for this fact;
    uniformity_skip_reason says why ("already flagged", "no distributions").
    """

    fact: KeyFact
    question: str
    regenerated: str
    alignment: AlignmentVerdict
    uniformity: Optional[AlignmentVerdict]
    uniformity_skip_reason: Optional[str]
    final_flag: int
    p_value: Optional[float] = None


@dataclass(frozen=True)
class StageTimings:
    """Wall-clock breakout per pipeline stage, seconds."""

    qg_s: float = 0.0
    regeneration_s: float = 0.0
    judge_s: float = 0.0
    ks_s: float = 0.0
    total_s: float = 0.0


@dataclass(frozen=True)
class DetectionReport:
    """Full outcome of running detection on one passage.

    verdicts is the flat list of every stage verdict (alignment first,
    then uniformity where it ran), in fact order. records groups the
    same information per fact. llm_call_count covers detection calls
    only; retries are tallied separately.
    """

    passage: Passage
    records: tuple[FactRecord, ...]
    verdicts: tuple[AlignmentVerdict, ...]
    sentence_scores: tuple[float, ...]
    passage_score: float
    fact_mean_score: float
    label: int
    llm_call_count: int
    retry_count: int
    config_snapshot: dict
    notes: tuple[str, ...] = ()
    timestamp: Optional[str] = None
    timings: Optional[StageTimings] = None

    @property
    def hallucinated_facts(self) -> tuple[str, ...]:
        return tuple(r.fact.surface for r in self.records if r.final_flag == 1)


@dataclass(frozen=True)
class PipelineConfig:
    """Tunable knobs for the whole pipeline, with their defaults.

    probe_model answers the targeted questions, judge_model compares
    fact pairs, generator_model names the model that produced the
    passage (recorded in reports; cross-model evaluation is just three
    different values here). judge_model of None means "same as probe".
    """

    endpoint: Optional[str] = None
    probe_model: str = "probe-model"
    judge_model: Optional[str] = None
    generator_model: Optional[str] = None
    alignment_mode: AlignmentMode = AlignmentMode.JUDGE
    f1_threshold: float = 0.8
    ks_alpha: float = 0.05
    ks_token_mode: TokenMode = TokenMode.FIRST
    top_k: int = 5
    extractor: ExtractorMode = ExtractorMode.HEURISTIC
    temperature: float = 0.0
    classification_threshold: float = 0.5
    seed: int = 0
    max_tokens: int = 128
    decoding: DecodingMode = DecodingMode.GREEDY
    beam_size: int = 5
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_factor: float = 2.0
    concurrency: int = 8
    flat_fact_passage_score: bool = False

    def __post_init__(self):
        if not 0.0 < self.ks_alpha < 1.0:
            raise ConfigError("ks_alpha must be in (0, 1)")
        if not 0.0 <= self.f1_threshold <= 1.0:
            raise ConfigError("f1_threshold must be in [0, 1]")
        if not 0.0 <= self.classification_threshold <= 1.0:
            raise ConfigError("classification_threshold must be in [0, 1]")
        if not 2 <= self.top_k <= 20:
            raise ConfigError("top_k must be in [2, 20]")
        if self.temperature < 0.0:
            raise ConfigError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ConfigError("max_tokens must be >= 1")
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.timeout_s <= 0.0:
            raise ConfigError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.backoff_factor < 1.0:
            raise ConfigError("backoff_factor must be >= 1")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

    @property
    def resolved_judge_model(self) -> str:
        return self.judge_model if self.judge_model else self.probe_model

    def snapshot(self) -> dict:
        """JSON-safe dict of every field, enums as their string values."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, Enum):
                value = value.value
            out[f.name] = value
        return out


def sentence_score(flags) -> float:
    """Mean of a sentence's final fact flags; 0.0 when it has no facts."""
    flags = list(flags)
    for flag in flags:
        if flag not in (0, 1):
            raise ValueError("fact flags must be 0 or 1")
    if not flags:
        return 0.0
    return sum(flags) / len(flags)


def passage_score(sentence_scores) -> float:
    """Mean of per-sentence scores; 0.0 for a passage with no sentences."""
    scores = list(sentence_scores)
    for s in scores:
        if not (isinstance(s, (int, float)) and math.isfinite(s) and 0.0 <= s <= 1.0):
            raise ValueError("sentence scores must be finite and in [0, 1]")
    if not scores:
        return 0.0
    return sum(scores) / len(scores)


def classify(score: float, threshold: float) -> int:
    """Binary passage label: 1 (hallucinated) iff score >= threshold.

    The tie goes to 1 on purpose: at the decision boundary we prefer
    the costlier miss to be a false alarm, not a silent pass.
    """
    if not (math.isfinite(score) and math.isfinite(threshold)):
        raise ValueError("score and threshold must be finite")
    return 1 if score >= threshold else 0
