"""Dataset evaluation: run detection over labeled items and score it.

QA mode treats each item's passage score as the prediction and the
item's golden label as truth. Summarization mode pools per-sentence
scores against per-sentence labels across all items (passage-level
numbers are reported alongside, with a passage counted hallucinated
when any of its sentences is). Ranking quality is summarized as
average precision with hallucination (label 1) as the positive class.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .align import judge_align
from .core import FactProbeError, PipelineConfig
from .pipeline import SCHEMA_VERSION, _CountingGateway, _LazyGateway, detect

ABORT_FAILURE_RATIO = 0.10


class EvalMode(str, Enum):
    QA = "qa"
    SUMMARIZATION = "summarization"


class ParseError(FactProbeError):
    """A dataset line is malformed; the message names the line."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class NoPositives(FactProbeError):
    """No positive labels: average precision is undefined, refuse to score."""


class EvalAborted(FactProbeError):
    """Too many items failed; no partial report is produced."""

    def __init__(self, message: str, failures: Sequence[tuple[str, str]]):
        super().__init__(message)
        self.failures = tuple(failures)


@dataclass(frozen=True)
class EvalItem:
    """One labeled dataset record.

    At least one of golden_label, golden_answer, sentence_labels must
    be present. golden_label wins over golden_answer when both exist.
    """

    item_id: str
    generated_answer: str
    question: Optional[str] = None
    golden_answer: Optional[str] = None
    golden_label: Optional[int] = None
    sentence_labels: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class ItemResult:
    item_id: str
    score: float
    label: int
    fact_mean_score: float
    llm_calls: int
    label_calls: int
    wall_time_s: float
    sentence_scores: tuple[float, ...] = ()
    sentence_labels: tuple[int, ...] = ()


@dataclass(frozen=True)
class EvalResult:
    """Aggregated evaluation outcome.

    auc_pr is the canonical number: passage scores in QA mode, pooled
    sentence scores in summarization mode. The companions are reported
    for comparison, None when their label set has no positives.
    """

    mode: EvalMode
    items: tuple[ItemResult, ...]
    failures: tuple[tuple[str, str], ...]
    auc_pr: float
    auc_pr_fact_mean: Optional[float]
    auc_pr_passage: Optional[float]
    n_items: int
    mean_llm_calls: float
    golden_label_calls: int
    mean_wall_time: float
    total_retries: int
    config_snapshot: dict


def _binary(value, what: str, line: int) -> int:
    if value not in (0, 1):
        raise ParseError(f"{what} must be 0 or 1, got {value!r}", line)
    return int(value)


def load_dataset(path) -> list[EvalItem]:
    """Read JSON Lines records; every problem names its line number."""
    items = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read dataset: {exc}")
    with fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno)
            if not isinstance(record, dict):
                raise ParseError("record must be a JSON object", lineno)
            answer = record.get("generated_answer")
            if not isinstance(answer, str) or not answer.strip():
                raise ParseError("'generated_answer' must be a non-empty string", lineno)
            question = record.get("question")
            if question is not None and not isinstance(question, str):
                raise ParseError("'question' must be a string", lineno)
            golden_answer = record.get("golden_answer")
            if golden_answer is not None and not isinstance(golden_answer, str):
                raise ParseError("'golden_answer' must be a string", lineno)
            golden = record.get("golden_label")
            if golden is not None:
                golden = _binary(golden, "'golden_label'", lineno)
            sentence_labels = record.get("sentence_labels")
            if sentence_labels is not None:
                if not isinstance(sentence_labels, list) or not sentence_labels:
                    raise ParseError("'sentence_labels' must be a non-empty list", lineno)
                sentence_labels = tuple(
                    _binary(v, "'sentence_labels' entry", lineno) for v in sentence_labels)
            if golden is None and golden_answer is None and sentence_labels is None:
                raise ParseError(
                    "need golden_label, golden_answer, or sentence_labels", lineno)
            item_id = record.get("id")
            if item_id is None:
                item_id = f"line{lineno}"
            elif not isinstance(item_id, str):
                raise ParseError("'id' must be a string", lineno)
            items.append(EvalItem(item_id=item_id, generated_answer=answer,
                                  question=question, golden_answer=golden_answer,
                                  golden_label=golden, sentence_labels=sentence_labels))
    return items


def golden_label(item: EvalItem, gateway, judge_model: str) -> int:
    """The item's truth label; judged from the golden answer when the
    dataset does not carry an explicit label (no calls when it does)."""
    if item.golden_label is not None:
        return item.golden_label
    if item.golden_answer is None:
        raise FactProbeError(f"item {item.item_id}: no golden_label and no golden_answer")
    return judge_align([(item.golden_answer, item.generated_answer)],
                       gateway, judge_model)[0]


def average_precision(scores, labels) -> float:
    """AP over the ranking induced by the scores, descending, with ties
    kept in input order. Positive class is label 1."""
    s = np.asarray(list(scores), dtype=float)
    l = np.asarray(list(labels))
    if s.size == 0 or s.shape != l.shape:
        raise ValueError("scores and labels must be equal-length and non-empty")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.all((l == 0) | (l == 1)):
        raise ValueError("labels must be 0 or 1")
    positives = int(l.sum())
    if positives == 0:
        raise NoPositives("no positive labels in the evaluation set")
    order = np.argsort(-s, kind="stable")
    ranked = l[order].astype(float)
    tp = np.cumsum(ranked)
    precision = tp / np.arange(1, s.size + 1)
    recall = tp / positives
    previous = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - previous) * precision))


def _eval_one(item: EvalItem, config: PipelineConfig, mode: EvalMode, gateway,
              question_generator, tagger) -> ItemResult:
    t0 = time.perf_counter()
    report = detect(item.generated_answer, config, question=item.question,
                    gateway=gateway, question_generator=question_generator,
                    tagger=tagger)
    label_calls = 0
    if mode == EvalMode.QA:
        counter = _CountingGateway(gateway)
        label = golden_label(item, counter, config.resolved_judge_model)
        label_calls = counter.count
        sentence_scores: tuple[float, ...] = ()
        sentence_labels: tuple[int, ...] = ()
    else:
        if item.sentence_labels is None:
            raise FactProbeError(f"item {item.item_id}: summarization mode needs sentence_labels")
        if len(item.sentence_labels) != len(report.sentence_scores):
            raise FactProbeError(
                f"item {item.item_id}: {len(item.sentence_labels)} sentence_labels "
                f"vs {len(report.sentence_scores)} split sentences")
        sentence_scores = report.sentence_scores
        sentence_labels = item.sentence_labels
        label = 1 if any(sentence_labels) else 0
    return ItemResult(item_id=item.item_id, score=report.passage_score, label=label,
                      fact_mean_score=report.fact_mean_score,
                      llm_calls=report.llm_call_count, label_calls=label_calls,
                      wall_time_s=time.perf_counter() - t0,
                      sentence_scores=sentence_scores, sentence_labels=sentence_labels)


def run_eval(dataset: Sequence[EvalItem], config: Optional[PipelineConfig] = None,
             mode: EvalMode = EvalMode.QA, gateway=None, question_generator=None,
             tagger=None) -> EvalResult:
    """Evaluate every item, concurrently, and aggregate.

    Items run under config.concurrency workers; results are assembled
    in dataset order no matter how the scheduling goes. If more than
    10% of items fail the whole run aborts with the aggregated errors
    instead of emitting a partial report.
    """
    items = list(dataset)
    if not items:
        raise ValueError("dataset is empty")
    config = config or PipelineConfig()
    mode = EvalMode(mode)
    gw = gateway if gateway is not None else _LazyGateway(config)
    retry_base = getattr(gw, "retry_count", 0)
    allowed_failures = int(ABORT_FAILURE_RATIO * len(items))

    results: dict[int, ItemResult] = {}
    errors: dict[int, tuple[str, str]] = {}
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        futures = {
            pool.submit(_eval_one, item, config, mode, gw, question_generator, tagger): i
            for i, item in enumerate(items)
        }
        for future in list(futures):
            i = futures[future]
            try:
                results[i] = future.result()
            except Exception as exc:
                errors[i] = (items[i].item_id, f"{type(exc).__name__}: {exc}")
                if len(errors) > allowed_failures:
                    pool.shutdown(wait=False, cancel_futures=True)
                    ordered = [errors[j] for j in sorted(errors)]
                    shown = "; ".join(f"{iid}: {msg}" for iid, msg in ordered[:3])
                    raise EvalAborted(
                        f"{len(errors)} of {len(items)} items failed "
                        f"(more than {ABORT_FAILURE_RATIO:.0%}): {shown}", ordered) from exc

    ordered_results = [results[i] for i in sorted(results)]
    failures = tuple(errors[i] for i in sorted(errors))

    if mode == EvalMode.QA:
        scores = [r.score for r in ordered_results]
        labels = [r.label for r in ordered_results]
        auc_pr = average_precision(scores, labels)
        try:
            aux_fact_mean = average_precision([r.fact_mean_score for r in ordered_results], labels)
        except NoPositives:
            aux_fact_mean = None
        aux_passage = None
    else:
        pooled_scores = [s for r in ordered_results for s in r.sentence_scores]
        pooled_labels = [l for r in ordered_results for l in r.sentence_labels]
        auc_pr = average_precision(pooled_scores, pooled_labels)
        aux_fact_mean = None
        try:
            aux_passage = average_precision([r.score for r in ordered_results],
                                            [r.label for r in ordered_results])
        except NoPositives:
            aux_passage = None

    n_done = len(ordered_results)
    return EvalResult(
        mode=mode, items=tuple(ordered_results), failures=failures,
        auc_pr=auc_pr, auc_pr_fact_mean=aux_fact_mean, auc_pr_passage=aux_passage,
        n_items=len(items),
        mean_llm_calls=sum(r.llm_calls for r in ordered_results) / n_done,
        golden_label_calls=sum(r.label_calls for r in ordered_results),
        mean_wall_time=sum(r.wall_time_s for r in ordered_results) / n_done,
        total_retries=max(0, getattr(gw, "retry_count", 0) - retry_base),
        config_snapshot=config.snapshot())


def eval_to_dict(result: EvalResult) -> dict:
    """JSON-safe report, deterministic: wall time stays out of it."""
    items = []
    for r in result.items:
        entry = {"id": r.item_id, "score": r.score, "label": r.label,
                 "fact_mean_score": r.fact_mean_score, "llm_calls": r.llm_calls}
        if result.mode == EvalMode.SUMMARIZATION:
            entry["sentence_scores"] = list(r.sentence_scores)
            entry["sentence_labels"] = list(r.sentence_labels)
        items.append(entry)
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": result.mode.value,
        "n_items": result.n_items,
        "n_failed": len(result.failures),
        "auc_pr": result.auc_pr,
        "auc_pr_fact_mean": result.auc_pr_fact_mean,
        "auc_pr_passage": result.auc_pr_passage,
        "items": items,
        "failures": [{"id": iid, "error": msg} for iid, msg in result.failures],
        "llm_calls": {
            "detection_total": sum(r.llm_calls for r in result.items),
            "golden_label": result.golden_label_calls,
            "retries": result.total_retries,
        },
        "config": dict(result.config_snapshot),
        "timestamp": None,
    }


def eval_to_json(result: EvalResult) -> str:
    return json.dumps(eval_to_dict(result), sort_keys=True,
                      ensure_ascii=False, indent=2) + "\n"


def eval_summary_text(result: EvalResult) -> str:
    """Human-facing summary table; this is where the timing lives."""
    lines = [
        f"mode                {result.mode.value}",
        f"items               {result.n_items}",
        f"failed              {len(result.failures)}",
        f"auc_pr              {result.auc_pr:.6f}",
    ]
    if result.auc_pr_fact_mean is not None:
        lines.append(f"auc_pr_fact_mean    {result.auc_pr_fact_mean:.6f}")
    if result.auc_pr_passage is not None:
        lines.append(f"auc_pr_passage      {result.auc_pr_passage:.6f}")
    lines += [
        f"mean_llm_calls      {result.mean_llm_calls:.3f}",
        f"golden_label_calls  {result.golden_label_calls}",
        f"mean_wall_time_s    {result.mean_wall_time:.4f}",
        f"retries             {result.total_retries}",
    ]
    return "\n".join(lines) + "\n"
