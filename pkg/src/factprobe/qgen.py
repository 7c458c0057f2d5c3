"""Targeted question generation for extracted facts.

Each fact becomes one question whose answer should be exactly that
fact. Questions come from prompting the probe model itself, which
costs one extra call per fact; callers that have a local question
generator can pass any callable with the TemplateQuestionGenerator
signature instead and skip those calls entirely.
"""

from __future__ import annotations

from typing import Optional, Union

from .assets import load_prompt
from .core import FactProbeError, KeyFact, Sentence
from .gateway import ChatRequest

_NO_QUESTION = "(none)"


class EmptyQuestion(FactProbeError):
    """The model produced no usable question, even after one retry."""


def build_qg_prompt(fact: Union[KeyFact, str], sentence: Union[Sentence, str],
                    passage_question: Optional[str] = None) -> str:
    surface = fact.surface if isinstance(fact, KeyFact) else fact
    text = sentence.text if isinstance(sentence, Sentence) else sentence
    return load_prompt("question_generation").format(
        fact=surface, sentence=text,
        question=passage_question if passage_question else _NO_QUESTION)


def normalize_question(raw: str) -> str:
    """Trim the reply down to one question ending in '?'.

    Takes the first non-empty line, drops wrapping quotes, and appends
    the question mark if the model forgot it. Empty input stays empty.
    """
    line = ""
    for candidate in raw.splitlines():
        if candidate.strip():
            line = candidate.strip()
            break
    line = line.strip("\"'`").strip()
    if not line:
        return ""
    if not line.endswith("?"):
        line += "?"
    return line


def generate_question(fact: Union[KeyFact, str], sentence: Union[Sentence, str],
                      gateway, model: str, passage_question: Optional[str] = None,
                      max_tokens: int = 128) -> str:
    """One targeted question for the fact, generated at temperature 0.

    An empty reply is retried once with the identical request; a second
    empty reply raises EmptyQuestion. Gateway errors propagate.
    """
    prompt = build_qg_prompt(fact, sentence, passage_question)
    request = ChatRequest(model=model, messages=(("user", prompt),),
                          temperature=0.0, max_tokens=max_tokens)
    for _ in range(2):
        question = normalize_question(gateway.complete(request).text)
        if question:
            return question
    surface = fact.surface if isinstance(fact, KeyFact) else fact
    raise EmptyQuestion(f"no question produced for fact {surface!r}")


class TemplateQuestionGenerator:
    """Offline question generator: fills a fixed pattern, no model calls.

    A stand-in for deployments that run their own question generation
    model locally; anything callable as (fact, sentence, passage_question)
    -> str plugs into the pipeline the same way.
    """

    def __init__(self, pattern: str = 'In the context "{sentence}", what is "{fact}"?'):
        self.pattern = pattern

    def __call__(self, fact: Union[KeyFact, str], sentence: Union[Sentence, str],
                 passage_question: Optional[str] = None) -> str:
        surface = fact.surface if isinstance(fact, KeyFact) else fact
        text = sentence.text if isinstance(sentence, Sentence) else sentence
        question = self.pattern.format(fact=surface, sentence=text,
                                       question=passage_question or _NO_QUESTION)
        return normalize_question(question)
