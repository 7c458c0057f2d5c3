"""Passage segmentation: coreference hook plus a rule-based sentence splitter.

The splitter is deliberately simple. A boundary is a run of terminal
punctuation (. ! ?) followed by whitespace and an uppercase letter or
digit, unless the token in front of the punctuation is a known
abbreviation ("Dr.", "U.S.", single initials, ...). That is enough for
the factual QA and summary text this pipeline inspects; anything
smarter belongs behind the same interface.
"""

from __future__ import annotations

import re
from importlib import resources
from typing import Callable, Iterable, Optional

from .core import Passage, Sentence

_BOUNDARY = re.compile(r"[.!?]+")
# dotted initials and acronyms: J., U.S., e.g., Ph.D. (but not "so.")
_DOTTED = re.compile(r"^(?:[^\W\d_]\.|(?:[^\W\d_]{1,2}\.){2,})$")


def _default_abbreviations() -> frozenset[str]:
    text = resources.files("factprobe").joinpath("data/abbreviations.txt").read_text("utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


_DEFAULT_ABBREVIATIONS: Optional[frozenset[str]] = None


def load_abbreviations(path) -> frozenset[str]:
    """Load an abbreviation guard list, one token per line, case-insensitive."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def resolve_coreference(text: str, resolver: Optional[Callable[[str], str]] = None) -> str:
    """Apply a pluggable coreference resolver; the default is identity."""
    if resolver is None:
        return text
    return resolver(text)


def _guard_set(abbreviations) -> frozenset[str]:
    global _DEFAULT_ABBREVIATIONS
    if abbreviations is not None:
        return frozenset(a.lower() for a in abbreviations)
    if _DEFAULT_ABBREVIATIONS is None:
        _DEFAULT_ABBREVIATIONS = _default_abbreviations()
    return _DEFAULT_ABBREVIATIONS


def _is_abbreviation(token: str, guard: frozenset[str]) -> bool:
    if token.lower() in guard:
        return True
    return bool(_DOTTED.match(token))


def _boundaries(text: str, guard: frozenset[str]) -> list[int]:
    """End offsets (exclusive) of every sentence found inside text."""
    ends = []
    for m in _BOUNDARY.finditer(text):
        end = m.end()
        if end >= len(text):
            continue
        # must be followed by whitespace, then an uppercase letter or digit
        after = text[end:]
        if not after or not after[0].isspace():
            continue
        stripped = after.lstrip()
        if not stripped:
            continue
        first = stripped[0]
        if not (first.isupper() or first.isdigit()):
            continue
        token_start = end
        while token_start > 0 and not text[token_start - 1].isspace():
            token_start -= 1
        if _is_abbreviation(text[token_start:end], guard):
            continue
        ends.append(end)
    return ends


def split_sentences(text: str, abbreviations: Optional[Iterable[str]] = None) -> list[Sentence]:
    """Split text into Sentence objects whose spans index into text.

    Sentences are trimmed; zero sentences come back only for whitespace
    or empty input. Splitting the text of any returned sentence again
    yields that sentence alone.
    """
    guard = _guard_set(abbreviations)
    sentences: list[Sentence] = []
    cursor = 0
    for end in _boundaries(text, guard) + [len(text)]:
        chunk = text[cursor:end]
        start = cursor + (len(chunk) - len(chunk.lstrip()))
        stop = cursor + len(chunk.rstrip())
        if stop > start:
            sentences.append(Sentence(index=len(sentences), text=text[start:stop], char_span=(start, stop)))
        cursor = end
    return sentences


def segment_passage(
    text: str,
    question: Optional[str] = None,
    abbreviations: Optional[Iterable[str]] = None,
    resolver: Optional[Callable[[str], str]] = None,
) -> Passage:
    """Build a Passage: coreference pass, then sentence split.

    The separators stored on the Passage are the exact slices of text
    between (and around) the sentence spans, so the original text can
    always be reassembled byte for byte.
    """
    resolved = resolve_coreference(text, resolver)
    sentences = split_sentences(resolved, abbreviations)
    separators = []
    prev_end = 0
    for sent in sentences:
        separators.append(resolved[prev_end:sent.char_span[0]])
        prev_end = sent.char_span[1]
    separators.append(resolved[prev_end:])
    return Passage(
        text=resolved,
        sentences=tuple(sentences),
        separators=tuple(separators),
        question=question,
    )
