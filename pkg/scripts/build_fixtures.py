#!/usr/bin/env python3
"""Regenerate the committed mock fixtures and the demo dataset.

Run from anywhere:

    python scripts/build_fixtures.py

Prompt keys are produced by the package's own prompt builders, so the
mock server's exact-match lookup always sees byte-identical prompts no
matter how the templates evolve. Output is deterministic; rerunning
must leave git clean.
"""

import json
import math
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from factprobe.align import build_judge_prompt          # noqa: E402
from factprobe.extract import extract_heuristic         # noqa: E402
from factprobe.qgen import build_qg_prompt              # noqa: E402
from factprobe.segment import segment_passage           # noqa: E402

FIXTURES = ROOT / "fixtures"
DATASETS = ROOT / "datasets"

# one skewed and one flat top-5 profile; softmax over ln(p) recovers p
SKEW = (0.9, 0.025, 0.025, 0.025, 0.025)
UNIFORM = (0.2, 0.2, 0.2, 0.2, 0.2)
ALT_TOKENS = ("maybe", "perhaps", "possibly", "unclear")


def top_logprobs(text: str, probs) -> list:
    head = text.split()[0] if text.split() else "?"
    tokens = (head,) + ALT_TOKENS
    return [[[tok, math.log(p)] for tok, p in zip(tokens, probs)]]


def response(text: str, probs=None) -> dict:
    if probs is None:
        return {"text": text}
    return {"text": text, "top_logprobs": top_logprobs(text, probs)}


def exact(prompt: str, resp: dict) -> dict:
    return {"match": {"mode": "exact", "prompt": prompt}, "response": resp}


def fact_entries(sentence, facts, questions, regens, probs, passage_question):
    """QG and regeneration entries for one sentence's facts."""
    entries = []
    for fact in facts:
        question = questions[fact.surface]
        entries.append(exact(build_qg_prompt(fact, sentence, passage_question),
                             response(question)))
        entries.append(exact(f"Question: {question}",
                             response(regens[fact.surface], probs)))
    return entries


def write_json(path: Path, doc):
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
                    encoding="utf-8")
    print(f"wrote {path.relative_to(ROOT)}")


# --- the running example: one passage, one wrong year list ---------------

FIG_PASSAGE = "Argentina won the World Cup in the years, 1978, 1986 and 2006."
FIG_QUESTIONS = {
    "Argentina": "Who won the World Cup in the years 1978, 1986 and 2006?",
    "World Cup": "Which tournament did Argentina win in the years 1978, 1986 and 2006?",
    "1978, 1986 and 2006": "In which years did Argentina win the World Cup?",
}
FIG_REGENS = {
    "Argentina": "Argentina",
    "World Cup": "FIFA World Cup",
    "1978, 1986 and 2006": "1978, 1986 and 2022",
}


def build_figure1() -> dict:
    passage = segment_passage(FIG_PASSAGE)
    sentence = passage.sentences[0]
    facts = extract_heuristic(sentence)
    assert [f.surface for f in facts] == list(FIG_QUESTIONS), \
        f"extractor drifted: {[f.surface for f in facts]}"
    entries = fact_entries(sentence, facts, FIG_QUESTIONS, FIG_REGENS, SKEW, None)
    pairs = [(f.surface, FIG_REGENS[f.surface]) for f in facts]
    entries.append(exact(build_judge_prompt(pairs), response("[0, 0, 1]")))
    return {"serve_logprobs": True, "entries": entries}


def build_nologprobs() -> dict:
    doc = build_figure1()
    doc["serve_logprobs"] = False
    return doc


def build_uniform_all() -> dict:
    # every fact regenerates correctly but with guessing-flat confidence
    passage = segment_passage(FIG_PASSAGE)
    sentence = passage.sentences[0]
    facts = extract_heuristic(sentence)
    regens = {f.surface: f.surface for f in facts}
    regens["World Cup"] = "FIFA World Cup"
    entries = fact_entries(sentence, facts, FIG_QUESTIONS, regens, UNIFORM, None)
    pairs = [(f.surface, regens[f.surface]) for f in facts]
    entries.append(exact(build_judge_prompt(pairs), response("[0, 0, 0]")))
    return {"serve_logprobs": True, "entries": entries}


# --- QA-mode walkthrough with the eliciting question given ----------------

STEP_QUESTION = "Who won the FIFA World Cup in 2022?"
STEP_PASSAGE = "The FIFA World Cup in 2022 was won by Argentina."
STEP_QUESTIONS = {
    "FIFA World Cup": "Which tournament did Argentina win in 2022?",
    "2022": "When did Argentina win the FIFA World Cup?",
    "Argentina": "Who won the FIFA World Cup in 2022?",
}
STEP_REGENS = {
    "FIFA World Cup": "FIFA World Cup",
    "2022": "1978, 1986 and 2022",
    "Argentina": "Argentina",
}


def build_stepbystep() -> dict:
    passage = segment_passage(STEP_PASSAGE, question=STEP_QUESTION)
    sentence = passage.sentences[0]
    facts = extract_heuristic(sentence)
    assert [f.surface for f in facts] == list(STEP_QUESTIONS), \
        f"extractor drifted: {[f.surface for f in facts]}"
    entries = fact_entries(sentence, facts, STEP_QUESTIONS, STEP_REGENS,
                           SKEW, STEP_QUESTION)
    pairs = [(f.surface, STEP_REGENS[f.surface]) for f in facts]
    entries.append(exact(build_judge_prompt(pairs), response("[0, 1, 0]")))
    return {"serve_logprobs": True, "entries": entries}


# --- 20-item synthetic benchmark ------------------------------------------

GOLDEN_LABELS = (0, 1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1)
UNIFORM_ITEMS = frozenset({3, 10, 17})  # backend answers flat on these


def item_passage(i: int) -> str:
    a, b, c, year = f"North{i}", f"Star{i}", f"Lake{i}", 1900 + i
    r = i % 3
    if r == 0:
        return f"{a} visited {b}."
    if r == 1:
        return f"{a} founded {b} in {year}."
    return f"{a} met {b} in {c} in {year}."


def planted_flags(count: int, i: int) -> list:
    p = i % 5
    if p == 0:
        return [0] * count
    if p == 1:
        return [1] + [0] * (count - 1)
    if p == 2:
        return [1 if j % 2 == 0 else 0 for j in range(count)]
    if p == 3:
        return [1] * (count - 1) + [0]
    return [1] * count


def expected_item_score(i: int) -> float:
    flags = planted_flags(2 + i % 3, i)
    if i in UNIFORM_ITEMS:
        flags = [1] * len(flags)
    return sum(flags) / len(flags)


def build_eval20() -> tuple:
    entries = []
    records = []
    for i in range(20):
        question = f"What happened involving North{i}?"
        text = item_passage(i)
        passage = segment_passage(text, question=question)
        sentence = passage.sentences[0]
        facts = extract_heuristic(sentence)
        assert len(facts) == 2 + i % 3, \
            f"item {i}: expected {2 + i % 3} facts, got {[f.surface for f in facts]}"
        flags = planted_flags(len(facts), i)
        probs = UNIFORM if i in UNIFORM_ITEMS else SKEW
        pairs = []
        for j, fact in enumerate(facts):
            fact_question = f"What is fact {j} of item {i:02d}?"
            regen = fact.surface if flags[j] == 0 else "mystery value"
            entries.append(exact(build_qg_prompt(fact, sentence, question),
                                 response(fact_question)))
            entries.append(exact(f"Question: {fact_question}", response(regen, probs)))
            pairs.append((fact.surface, regen))
        entries.append(exact(build_judge_prompt(pairs), response(str(flags))))
        records.append({"id": f"item{i:02d}", "question": question,
                        "generated_answer": text, "golden_label": GOLDEN_LABELS[i]})
    return {"serve_logprobs": True, "entries": entries}, records


def main():
    FIXTURES.mkdir(exist_ok=True)
    DATASETS.mkdir(exist_ok=True)
    write_json(FIXTURES / "figure1.json", build_figure1())
    write_json(FIXTURES / "nologprobs.json", build_nologprobs())
    write_json(FIXTURES / "uniform_all.json", build_uniform_all())
    write_json(FIXTURES / "stepbystep.json", build_stepbystep())
    fixture, records = build_eval20()
    write_json(FIXTURES / "eval20.json", fixture)
    lines = "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n"
                    for r in records)
    (DATASETS / "eval20.jsonl").write_text(lines, encoding="utf-8")
    print(f"wrote {(DATASETS / 'eval20.jsonl').relative_to(ROOT)}")
    scores = [round(expected_item_score(i), 6) for i in range(20)]
    print("expected eval20 passage scores:", scores)


if __name__ == "__main__":
    main()
