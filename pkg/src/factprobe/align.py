"""Fact alignment: does the regenerated answer agree with the original span?

Two interchangeable matchers:

  * judge_align sends every (extracted, regenerated) pair of a passage
    to a judge model in one batched few-shot call and parses the
    returned list of binary flags.
  * f1_align scores token overlap and thresholds it, no model needed.

Flag convention everywhere: 0 = consistent, 1 = mismatch.
"""

from __future__ import annotations

import re
import string
from collections import Counter
from typing import Optional, Sequence

from .assets import load_prompt
from .core import FactProbeError
from .gateway import ChatRequest

_FLAG_LIST = re.compile(r"\[\s*(?:[01]\s*(?:,\s*[01]\s*)*)?\]")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class JudgeParseError(FactProbeError):
    """The judge's reply could not be parsed as n binary flags, twice.

    Callers are expected to fall back to f1_align and say so in the
    report.
    """

    def __init__(self, message: str, last_reply: Optional[str] = None):
        super().__init__(message)
        self.last_reply = last_reply


def normalize_for_f1(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


def token_f1(extracted: str, regenerated: str) -> float:
    """Token-multiset F1 between the two spans.

    Precision counts against the regenerated tokens, recall against the
    extracted ones. Two empty token lists are a perfect match; exactly
    one empty list is a total miss.
    """
    a = Counter(normalize_for_f1(extracted))
    f = Counter(normalize_for_f1(regenerated))
    if not a and not f:
        return 1.0
    if not a or not f:
        return 0.0
    overlap = sum((a & f).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(f.values())
    recall = overlap / sum(a.values())
    return 2 * precision * recall / (precision + recall)


def f1_align(extracted: str, regenerated: str, threshold: float = 0.8) -> tuple[float, int]:
    """(F1, flag): flag is 0 iff F1 reaches the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    value = token_f1(extracted, regenerated)
    return value, 0 if value >= threshold else 1


def render_pairs(pairs: Sequence[tuple[str, str]]) -> str:
    """Python-style list of (extracted, regenerated) tuples for the prompt."""
    return repr([(a, f) for a, f in pairs])


def build_judge_prompt(pairs: Sequence[tuple[str, str]]) -> str:
    return load_prompt("fact_alignment").format(n=len(pairs), pairs=render_pairs(pairs))


def parse_judge_reply(reply: str, expected: int) -> Optional[list[int]]:
    """First bracketed binary list in the reply, or None if absent or
    the wrong length."""
    m = _FLAG_LIST.search(reply)
    if not m:
        return None
    inner = m.group(0).strip("[]").strip()
    flags = [int(tok) for tok in inner.split(",")] if inner else []
    if len(flags) != expected:
        return None
    return flags


def judge_align(pairs: Sequence[tuple[str, str]], gateway, model: str,
                max_tokens: int = 0) -> list[int]:
    """Batched judge call over all pairs; one flag per pair.

    The identical prompt is re-sent once if the reply does not parse;
    after the second failure JudgeParseError carries the last reply.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    prompt = build_judge_prompt(pairs)
    budget = max_tokens if max_tokens > 0 else max(64, 8 * len(pairs) + 16)
    request = ChatRequest(model=model, messages=(("user", prompt),),
                          temperature=0.0, max_tokens=budget)
    reply = ""
    for _ in range(2):
        reply = gateway.complete(request).text
        flags = parse_judge_reply(reply, len(pairs))
        if flags is not None:
            return flags
    raise JudgeParseError(
        f"judge did not return {len(pairs)} binary flags", last_reply=reply)
