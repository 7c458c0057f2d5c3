"""End-to-end detection: segment, extract, probe, align, escalate, score.

The flow for one passage:

  1. split into sentences (after the pluggable coreference pass)
  2. extract key facts per sentence
  3. per unique fact surface: generate a targeted question, ask the
     probe model to regenerate the fact (logprobs requested)
  4. stage one, fact alignment: judge or F1 over all pairs
  5. stage two, uniformity: facts that passed stage one get their
     top-k distribution tested; a uniform-looking answer escalates
     the flag from 0 to 1 (never the other way)
  6. fold flags into sentence scores, the passage score, and a label

Fan-out across facts is threaded; every result is keyed by the fact's
(sentence, fact) index so assembly order never depends on completion
order, and the per-run call counter wraps the gateway so accounting
stays exact even when one gateway serves many concurrent runs.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from . import extract, qgen, uniform
from .align import JudgeParseError, f1_align, judge_align
from .assets import load_prompt
from .core import (
    AlignmentMode,
    AlignmentVerdict,
    ConfigError,
    DecodingMode,
    DetectionReport,
    ExtractorMode,
    FactRecord,
    KeyFact,
    PipelineConfig,
    ProbeResult,
    Stage,
    StageTimings,
    classify,
    passage_score,
    sentence_score,
)
from .gateway import ChatRequest, GatewayClient, GatewayError, GatewayErrorKind
from .segment import segment_passage

SCHEMA_VERSION = 1


class _LazyGateway:
    """Builds the real client on first use, so a passage that needs no
    calls never demands an endpoint."""

    def __init__(self, config: "PipelineConfig"):
        self._config = config
        self._client = None
        self._lock = threading.Lock()

    def complete(self, request):
        with self._lock:
            if self._client is None:
                self._client = build_gateway(self._config)
            client = self._client
        return client.complete(request)

    @property
    def retry_count(self) -> int:
        client = self._client
        return client.retry_count if client is not None else 0


class _CountingGateway:
    """Per-run view over a shared gateway; counts this run's calls."""

    def __init__(self, inner):
        self.inner = inner
        self._lock = threading.Lock()
        self._count = 0
        self._retry_base = getattr(inner, "retry_count", 0)

    def complete(self, request):
        with self._lock:
            self._count += 1
        return self.inner.complete(request)

    @property
    def count(self) -> int:
        with self._lock:
            return self._count

    @property
    def retries_observed(self) -> int:
        return max(0, getattr(self.inner, "retry_count", 0) - self._retry_base)


def build_gateway(config: PipelineConfig) -> GatewayClient:
    """Gateway client from config; the endpoint must be set."""
    if not config.endpoint:
        raise ConfigError("no endpoint configured: pass --endpoint, set "
                          "FACTPROBE_ENDPOINT, or use a mock fixture")
    return GatewayClient(
        base_url=config.endpoint,
        timeout_s=config.timeout_s,
        max_retries=config.max_retries,
        backoff_factor=config.backoff_factor,
        concurrency_limit=config.concurrency,
    )


def _sentence_facts(sentence, config: PipelineConfig, gateway, tagger, notes: list) -> list[KeyFact]:
    if config.extractor == ExtractorMode.HEURISTIC:
        return extract.extract_heuristic(sentence)
    if config.extractor == ExtractorMode.POS:
        try:
            return extract.extract_pos_list(sentence, tagger)
        except extract.TaggerUnavailable as exc:
            note = f"POS tagger unavailable ({exc}); fell back to heuristic extraction"
            if note not in notes:
                notes.append(note)
            return extract.extract_heuristic(sentence)
    if config.extractor == ExtractorMode.RANDOM:
        n = len(extract.extract_heuristic(sentence))
        if n == 0:
            return []
        return extract.extract_random(sentence, n, config.seed + sentence.index)
    if config.extractor == ExtractorMode.LLM:
        return extract.extract_llm(sentence, gateway, config.probe_model)
    raise ConfigError(f"unknown extractor: {config.extractor!r}")


class _Timing:
    def __init__(self):
        self._lock = threading.Lock()
        self.buckets = {"qg": 0.0, "regeneration": 0.0, "judge": 0.0, "ks": 0.0}

    def add(self, bucket: str, seconds: float):
        with self._lock:
            self.buckets[bucket] += seconds


def _probe_one(fact: KeyFact, sentence, config: PipelineConfig, gateway,
               passage_question, question_generator, timing: _Timing,
               regen_system: str) -> tuple[ProbeResult, Optional[str]]:
    """QG plus regeneration for one unique fact surface."""
    t0 = time.perf_counter()
    if question_generator is not None:
        question = question_generator(fact, sentence, passage_question)
        if not question:
            raise qgen.EmptyQuestion(f"external generator gave no question for {fact.surface!r}")
    else:
        question = qgen.generate_question(fact, sentence, gateway, config.probe_model,
                                          passage_question=passage_question,
                                          max_tokens=config.max_tokens)
    timing.add("qg", time.perf_counter() - t0)

    extra = {"beam_size": config.beam_size} if config.decoding == DecodingMode.BEAM else None
    request = ChatRequest(
        model=config.probe_model,
        messages=(("system", regen_system), ("user", f"Question: {question}")),
        temperature=config.temperature,
        max_tokens=config.max_tokens,
        want_logprobs=True,
        top_k=config.top_k,
        extra=extra,
    )
    note = None
    t1 = time.perf_counter()
    try:
        response = gateway.complete(request)
        text, dists = response.text, response.token_distributions
    except GatewayError as exc:
        if exc.kind is GatewayErrorKind.MISSING_LOGPROBS and exc.response is not None:
            text, dists = exc.response.text, None
            note = f"backend served no usable logprobs for {fact.surface!r}"
        else:
            raise
    timing.add("regeneration", time.perf_counter() - t1)
    return ProbeResult(fact=fact, question=question, regenerated=text,
                       token_distributions=dists), note


def detect(text: str, config: Optional[PipelineConfig] = None, *,
           question: Optional[str] = None, gateway=None,
           question_generator: Optional[Callable] = None, tagger=None,
           coref_resolver: Optional[Callable[[str], str]] = None,
           timestamp: Optional[str] = None) -> DetectionReport:
    """Run the full two-stage pipeline on one passage.

    question is the prompt that elicited the passage, when known (QA
    mode). gateway may be shared across concurrent runs; without one it
    is built from config.endpoint. question_generator switches to
    external question generation (no per-fact QG calls), and tagger
    backs the POS extractor.
    """
    config = config or PipelineConfig()
    notes: list[str] = []
    timing = _Timing()
    t_start = time.perf_counter()

    if config.decoding == DecodingMode.BEAM:
        message = (f"beam decoding (beam_size={config.beam_size}) is a backend extension; "
                   "standard chat-completion backends ignore it")
        warnings.warn(message)
        notes.append(message)

    passage = segment_passage(text, question=question, resolver=coref_resolver)
    cgw = _CountingGateway(gateway if gateway is not None else _LazyGateway(config))

    facts: list[KeyFact] = []
    for sentence in passage.sentences:
        facts.extend(_sentence_facts(sentence, config, cgw, tagger, notes))

    if not facts:
        notes.append("no facts extracted")
        sentence_scores = tuple(0.0 for _ in passage.sentences)
        score = passage_score(sentence_scores)
        return DetectionReport(
            passage=passage, records=(), verdicts=(),
            sentence_scores=sentence_scores, passage_score=score,
            fact_mean_score=0.0, label=classify(score, config.classification_threshold),
            llm_call_count=cgw.count, retry_count=cgw.retries_observed,
            config_snapshot=config.snapshot(), notes=tuple(notes),
            timestamp=timestamp,
            timings=StageTimings(total_s=time.perf_counter() - t_start),
        )

    # duplicate surfaces within a sentence share one probe and verdict
    groups: list[list[KeyFact]] = []
    group_index: dict[tuple[int, str], int] = {}
    for fact in facts:
        key = (fact.sentence_index, fact.surface)
        if key in group_index:
            groups[group_index[key]].append(fact)
        else:
            group_index[key] = len(groups)
            groups.append([fact])

    regen_system = load_prompt("regeneration_system").strip()
    sentences = passage.sentences
    probes: list[Optional[ProbeResult]] = [None] * len(groups)
    workers = min(config.concurrency, len(groups))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {
            pool.submit(_probe_one, group[0], sentences[group[0].sentence_index],
                        config, cgw, passage.question, question_generator,
                        timing, regen_system): g
            for g, group in enumerate(groups)
        }
        for future, g in futures.items():
            probes[g], note = future.result()
            if note and note not in notes:
                notes.append(note)

    # stage one: fact alignment over all pairs at once
    pairs = [(p.fact.surface, p.regenerated) for p in probes]
    t_judge = time.perf_counter()
    if config.alignment_mode == AlignmentMode.JUDGE:
        try:
            flags = judge_align(pairs, cgw, config.resolved_judge_model)
            details = [f"judge={flag}" for flag in flags]
        except JudgeParseError:
            scored = [f1_align(a, f, config.f1_threshold) for a, f in pairs]
            flags = [flag for _, flag in scored]
            details = [f"f1={value:.6g} (judge fallback)" for value, _ in scored]
            notes.append("judge reply unparseable after one re-prompt; fell back to F1 alignment")
    else:
        scored = [f1_align(a, f, config.f1_threshold) for a, f in pairs]
        flags = [flag for _, flag in scored]
        details = [f"f1={value:.6g}" for value, _ in scored]
    timing.add("judge", time.perf_counter() - t_judge)

    # stage two: uniformity check for facts that passed alignment
    stage2: list[tuple[Optional[int], Optional[float], Optional[str]]] = []
    t_ks = time.perf_counter()
    for probe, stage1_flag in zip(probes, flags):
        if stage1_flag == 1:
            stage2.append((None, None, "already flagged by alignment"))
            continue
        if not probe.token_distributions:
            stage2.append((None, None, "no token distributions"))
            continue
        p = uniform.pooled_pvalue(probe.token_distributions, config.ks_token_mode)
        stage2.append((0 if p < config.ks_alpha else 1, p, None))
    timing.add("ks", time.perf_counter() - t_ks)
    if any(reason == "no token distributions" for _, _, reason in stage2):
        notes.append("uniformity check skipped where the backend served no logprobs")

    # assemble per-fact records; facts in one group share their probe outcome
    records: list[FactRecord] = []
    for fact in facts:
        g = group_index[(fact.sentence_index, fact.surface)]
        probe = probes[g]
        stage1_flag = flags[g]
        flag2, p_value, skip_reason = stage2[g]
        alignment = AlignmentVerdict(fact_key=fact.key, stage=Stage.FACT_ALIGNMENT,
                                     flag=stage1_flag, detail=details[g])
        uniformity = None
        final = stage1_flag
        if flag2 is not None:
            uniformity = AlignmentVerdict(fact_key=fact.key, stage=Stage.UNIFORMITY,
                                          flag=flag2, detail=f"p={p_value:.6g}")
            final = uniform.escalate(stage1_flag, flag2)
        records.append(FactRecord(fact=fact, question=probe.question,
                                  regenerated=probe.regenerated, alignment=alignment,
                                  uniformity=uniformity, uniformity_skip_reason=skip_reason,
                                  final_flag=final, p_value=p_value))

    by_sentence: dict[int, list[int]] = {}
    for record in records:
        by_sentence.setdefault(record.fact.sentence_index, []).append(record.final_flag)
    sentence_scores = tuple(
        sentence_score(by_sentence.get(s.index, [])) for s in passage.sentences)
    fact_mean = sum(r.final_flag for r in records) / len(records)
    score = fact_mean if config.flat_fact_passage_score else passage_score(sentence_scores)

    verdicts = tuple(r.alignment for r in records) + tuple(
        r.uniformity for r in records if r.uniformity is not None)
    timings = StageTimings(
        qg_s=timing.buckets["qg"], regeneration_s=timing.buckets["regeneration"],
        judge_s=timing.buckets["judge"], ks_s=timing.buckets["ks"],
        total_s=time.perf_counter() - t_start)
    return DetectionReport(
        passage=passage, records=tuple(records), verdicts=verdicts,
        sentence_scores=sentence_scores, passage_score=score,
        fact_mean_score=fact_mean,
        label=classify(score, config.classification_threshold),
        llm_call_count=cgw.count, retry_count=cgw.retries_observed,
        config_snapshot=config.snapshot(), notes=tuple(notes),
        timestamp=timestamp, timings=timings)


def report_to_dict(report: DetectionReport, include_timings: bool = False) -> dict:
    """JSON-safe dict of the report.

    Timings are excluded unless asked for: the canonical report must be
    byte-identical across reruns against the same backend state.
    """
    facts = []
    for r in report.records:
        facts.append({
            "surface": r.fact.surface,
            "sentence_index": r.fact.sentence_index,
            "fact_index": r.fact.fact_index,
            "char_span": list(r.fact.char_span),
            "question": r.question,
            "regenerated": r.regenerated,
            "alignment": {"flag": r.alignment.flag, "detail": r.alignment.detail},
            "uniformity": None if r.uniformity is None else {
                "flag": r.uniformity.flag,
                "detail": r.uniformity.detail,
                "p_value": r.p_value,
            },
            "uniformity_skipped": r.uniformity_skip_reason,
            "final_flag": r.final_flag,
        })
    out = {
        "schema_version": SCHEMA_VERSION,
        "passage": {
            "text": report.passage.text,
            "question": report.passage.question,
            "sentences": [
                {"index": s.index, "text": s.text, "char_span": list(s.char_span)}
                for s in report.passage.sentences
            ],
        },
        "facts": facts,
        "sentence_scores": list(report.sentence_scores),
        "passage_score": report.passage_score,
        "fact_mean_score": report.fact_mean_score,
        "classification": {
            "label": report.label,
            "threshold": report.config_snapshot.get("classification_threshold"),
        },
        "hallucinated_facts": list(report.hallucinated_facts),
        "llm_calls": {"detection": report.llm_call_count, "retries": report.retry_count},
        "notes": list(report.notes),
        "config": dict(report.config_snapshot),
        "timestamp": report.timestamp,
    }
    if include_timings and report.timings is not None:
        out["timings"] = dataclasses.asdict(report.timings)
    return out


def report_to_json(report: DetectionReport, include_timings: bool = False) -> str:
    return json.dumps(report_to_dict(report, include_timings),
                      sort_keys=True, ensure_ascii=False, indent=2) + "\n"
