"""Key fact extraction strategies.

Four interchangeable ways to pick the spans worth probing:

  * extract_heuristic: capitalization and number patterns, no deps.
    The default, and the reference the others are measured against.
  * extract_pos_list: filter by POS tags from an external tagger.
  * extract_random: uniformly sampled tokens (a surprisingly strong
    baseline for confidence probing).
  * extract_llm: ask the probe model itself to list factual spans.

Every returned KeyFact is a verbatim slice of its sentence: the
char_span always reproduces the surface exactly.
"""

from __future__ import annotations

import random
import re
import string
import subprocess
from typing import Iterable, Optional, Sequence, Union

import requests

from .assets import load_prompt
from .core import FactProbeError, KeyFact, Sentence
from .gateway import ChatRequest

KEPT_POS_TAGS = ("NNP", "NNPS", "CD", "RB")

_PUNCT = set(string.punctuation) | {"“", "”", "‘", "’", "«", "»"}
_NUMERIC = re.compile(r"^\d[\d.,]*$")
_LIST_CONNECTORS = frozenset({"and", "&", ","})

# words that are capitalized only by position, never facts on their own
_FUNCTION_WORDS = frozenset("""
    the a an this that these those there here
    he she it they we you i his her its their our your my me him them us
    in on at by to from with within without during after before between among
    over under into onto about above below against along around through
    and or nor but so yet for as of if whether
    when while since because although though unless until once
    one some many most few several each every all both any no not none
    is are was were be been being has have had do does did
    will would can could may might must shall should
    however moreover furthermore nevertheless nonetheless meanwhile
    additionally finally first second third next then thus hence therefore
    also now today yesterday tomorrow soon later earlier
    what who whom whose which why how where
    i'm i'll i've i'd it's he's she's that's there's what's let's
    they're we're you're don't doesn't didn't isn't aren't wasn't weren't
    won't can't couldn't wouldn't shouldn't
    yes well oh instead despite still just only even again
""".split())


class TaggerUnavailable(FactProbeError):
    """The configured POS tagger cannot be used; fall back to the heuristic."""


class InsufficientTokens(FactProbeError):
    """Asked to sample more tokens than the sentence contains."""


def _sentence_parts(sentence: Union[Sentence, str]) -> tuple[str, int]:
    if isinstance(sentence, Sentence):
        return sentence.text, sentence.index
    return sentence, 0


def _tokens_with_cores(text: str):
    """Whitespace tokens with punctuation-stripped core spans.

    Yields (core, start, end) where text[start:end] == core. Tokens that
    are pure punctuation produce nothing.
    """
    out = []
    for m in re.finditer(r"\S+", text):
        start, end = m.start(), m.end()
        while start < end and text[start] in _PUNCT:
            start += 1
        while end > start and text[end - 1] in _PUNCT:
            end -= 1
        if end > start:
            out.append((text[start:end], start, end))
    return out


def _is_capword(core: str) -> bool:
    return core[0].isupper() and any(ch.isalpha() for ch in core)


def _is_numeric(core: str) -> bool:
    return bool(_NUMERIC.match(core))


def _build_facts(text: str, spans: Sequence[tuple[int, int]], sentence_index: int) -> list[KeyFact]:
    """Sort spans, drop duplicate surfaces, assign fact indexes."""
    seen = set()
    facts = []
    for start, end in sorted(spans):
        surface = text[start:end]
        if surface in seen:
            continue
        seen.add(surface)
        facts.append(KeyFact(surface=surface, sentence_index=sentence_index,
                             fact_index=len(facts), char_span=(start, end)))
    return facts


def extract_heuristic(sentence: Union[Sentence, str]) -> list[KeyFact]:
    """Capitalized spans plus numbers, with number lists merged.

    Runs of capitalized words become one span each; a sentence-initial
    function word ("The", "He", ...) is dropped from its run since it is
    capitalized by position, not by being a name. Numeric tokens become
    spans too, and numbers joined by commas or "and" merge into a single
    span ("1978, 1986 and 2006"). Duplicate surfaces are kept once.
    """
    text, sentence_index = _sentence_parts(sentence)
    tokens = _tokens_with_cores(text)
    if not tokens:
        return []

    numeric = [_is_numeric(core) for core, _, _ in tokens]
    capword = [_is_capword(core) for core, _, _ in tokens]
    spans: list[tuple[int, int]] = []

    i = 0
    while i < len(tokens):
        if numeric[i]:
            j = i
            while True:
                if j + 1 < len(tokens) and numeric[j + 1]:
                    j += 1
                elif (j + 2 < len(tokens) and tokens[j + 1][0].lower() in _LIST_CONNECTORS
                      and numeric[j + 2]):
                    j += 2
                else:
                    break
            spans.append((tokens[i][1], tokens[j][2]))
            i = j + 1
        else:
            i += 1

    i = 0
    while i < len(tokens):
        if capword[i] and not numeric[i]:
            j = i
            while j + 1 < len(tokens) and capword[j + 1] and not numeric[j + 1]:
                j += 1
            first = i
            if i == 0 and tokens[i][0].lower() in _FUNCTION_WORDS:
                first = i + 1
            if first <= j:
                spans.append((tokens[first][1], tokens[j][2]))
            i = j + 1
        else:
            i += 1

    return _build_facts(text, spans, sentence_index)


class StaticTagger:
    """In-memory tagger: maps sentence text to a fixed list of (token, tag)."""

    def __init__(self, table: dict):
        self.table = dict(table)

    def tag(self, text: str):
        if text not in self.table:
            raise TaggerUnavailable(f"no tagging for: {text!r}")
        return list(self.table[text])


class SubprocessTagger:
    """Adapter for a tagger spoken to over a pipe.

    The command receives the sentence on stdin and must print one
    "token<TAB>tag" pair per line.
    """

    def __init__(self, command: Sequence[str], timeout: float = 30.0):
        self.command = list(command)
        self.timeout = timeout

    def tag(self, text: str):
        try:
            proc = subprocess.run(self.command, input=text, capture_output=True,
                                  text=True, timeout=self.timeout, check=True)
        except (OSError, subprocess.SubprocessError) as exc:
            raise TaggerUnavailable(f"tagger command failed: {exc}") from exc
        return _parse_tagged_lines(proc.stdout)


class HttpTagger:
    """Adapter for a tagger behind an HTTP endpoint.

    POSTs the sentence as text/plain and expects "token<TAB>tag" lines back.
    """

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def tag(self, text: str):
        try:
            resp = requests.post(self.url, data=text.encode("utf-8"),
                                 headers={"Content-Type": "text/plain; charset=utf-8"},
                                 timeout=self.timeout)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise TaggerUnavailable(f"tagger endpoint failed: {exc}") from exc
        return _parse_tagged_lines(resp.text)


def _parse_tagged_lines(payload: str):
    pairs = []
    for line in payload.splitlines():
        if not line.strip():
            continue
        token, sep, tag = line.partition("\t")
        if not sep or not token or not tag.strip():
            raise TaggerUnavailable(f"malformed tagger line: {line!r}")
        pairs.append((token, tag.strip()))
    return pairs


def facts_from_tagged(sentence: Union[Sentence, str], tagged: Iterable[tuple[str, str]],
                      keep_tags: Sequence[str] = KEPT_POS_TAGS) -> list[KeyFact]:
    """Turn (token, tag) pairs into facts, merging adjacent same-tag tokens.

    Tokens are located left to right in the sentence text so the spans
    stay verbatim; a token the text does not contain is skipped.
    """
    text, sentence_index = _sentence_parts(sentence)
    keep = set(keep_tags)
    located = []  # (position_in_pair_list, tag, start, end)
    cursor = 0
    for pos, (token, tag) in enumerate(tagged):
        found = text.find(token, cursor)
        if found < 0:
            found = text.find(token)
            if found < 0:
                continue
        cursor = found + len(token)
        if tag in keep:
            located.append((pos, tag, found, found + len(token)))

    spans = []
    i = 0
    while i < len(located):
        j = i
        while (j + 1 < len(located)
               and located[j + 1][0] == located[j][0] + 1
               and located[j + 1][1] == located[i][1]):
            j += 1
        spans.append((located[i][2], located[j][3]))
        i = j + 1
    return _build_facts(text, spans, sentence_index)


def extract_pos_list(sentence: Union[Sentence, str], tagger,
                     keep_tags: Sequence[str] = KEPT_POS_TAGS) -> list[KeyFact]:
    """Facts whose POS tags mark them as probe-worthy (NNP/NNPS/CD/RB)."""
    if tagger is None:
        raise TaggerUnavailable("no POS tagger configured")
    text, _ = _sentence_parts(sentence)
    tag = getattr(tagger, "tag", None)
    try:
        tagged = tag(text) if callable(tag) else tagger(text)
    except TaggerUnavailable:
        raise
    except Exception as exc:
        raise TaggerUnavailable(f"tagger adapter failed: {exc}") from exc
    return facts_from_tagged(sentence, tagged, keep_tags)


def extract_random(sentence: Union[Sentence, str], n: int, seed: int) -> list[KeyFact]:
    """Sample n distinct token positions uniformly, deterministically.

    Returns exactly n facts in left-to-right order. Identical surfaces
    from different positions are kept; deduplication happens at probe
    time, not here.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    text, sentence_index = _sentence_parts(sentence)
    tokens = _tokens_with_cores(text)
    if n > len(tokens):
        raise InsufficientTokens(f"asked for {n} tokens, sentence has {len(tokens)}")
    rng = random.Random(seed)
    chosen = sorted(rng.sample(range(len(tokens)), n))
    facts = []
    for fact_index, token_index in enumerate(chosen):
        core, start, end = tokens[token_index]
        facts.append(KeyFact(surface=core, sentence_index=sentence_index,
                             fact_index=fact_index, char_span=(start, end)))
    return facts


def extract_llm(sentence: Union[Sentence, str], gateway, model: str,
                max_tokens: int = 256) -> list[KeyFact]:
    """Ask the model for factual spans; keep only verbatim matches.

    The model's suggestions are split on ";" and newlines, then each
    candidate must occur in the sentence exactly or it is dropped.
    Gateway errors propagate unchanged.
    """
    text, sentence_index = _sentence_parts(sentence)
    if not text.strip():
        return []
    prompt = load_prompt("fact_extraction").format(sentence=text)
    response = gateway.complete(ChatRequest(
        model=model,
        messages=(("user", prompt),),
        temperature=0.0,
        max_tokens=max_tokens,
    ))
    spans = []
    for raw in re.split(r"[;\n]", response.text):
        candidate = raw.strip().strip("\"'`").strip()
        if not candidate:
            continue
        found = text.find(candidate)
        if found < 0:
            continue
        spans.append((found, found + len(candidate)))
    return _build_facts(text, spans, sentence_index)
