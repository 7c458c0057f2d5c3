import pytest

from factprobe.qgen import (
    EmptyQuestion,
    TemplateQuestionGenerator,
    build_qg_prompt,
    generate_question,
    normalize_question,
)


def test_prompt_mentions_fact_and_sentence():
    prompt = build_qg_prompt("Argentina", "Argentina won in 1978.", None)
    assert "Argentina" in prompt
    assert "Argentina won in 1978." in prompt


def test_prompt_includes_original_question_when_given():
    prompt = build_qg_prompt("2022", "It was 2022.", "When was it?")
    assert "When was it?" in prompt


def test_normalize_question():
    assert normalize_question("Who won?") == "Who won?"
    assert normalize_question("Who won") == "Who won?"
    assert normalize_question('"Who won?"') == "Who won?"
    assert normalize_question("\n\nWho won?\nExtra line") == "Who won?"
    assert normalize_question("   ") == ""


class _ScriptedGateway:
    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        class R:
            pass
        r = R()
        r.text = self.replies.pop(0)
        r.token_distributions = None
        return r


def test_generate_question_retries_empty_once():
    gateway = _ScriptedGateway(["", "Who won the cup?"])
    assert generate_question("cup", "The cup was won.", gateway, "m") == "Who won the cup?"
    assert gateway.calls == 2


def test_generate_question_gives_up_after_two_empties():
    gateway = _ScriptedGateway(["", "  "])
    with pytest.raises(EmptyQuestion):
        generate_question("cup", "The cup was won.", gateway, "m")
    assert gateway.calls == 2


def test_template_generator_is_offline():
    generator = TemplateQuestionGenerator()
    question = generator("Argentina", "Argentina won.", None)
    assert question.endswith("?")
    assert "Argentina" in question
