from __future__ import annotations

import json

import httpx
import pytest

from actowl.dialogue import (
    BackendError,
    EnvironmentContext,
    InterpretationError,
    LlmHttpBackend,
    MockBackend,
    ObjectRow,
    QuestionRecord,
    classify_shared_owned,
    generate_question,
    interpret_answer,
    render_classify_prompt,
    render_interpret_prompt,
    render_question_prompt,
    serialize_row,
)
from actowl.model import AnswerLabel
from conftest import FIXTURES

USERS = ["anna", "ben", "hashimoto"]
HOME = EnvironmentContext("home")


def row(object_id, class_name, x, y, observed="unknown", color="red"):
    return ObjectRow(object_id, class_name, (1, 0, 0), x, y, observed, color)


class TestClassify:
    def test_paper_table_examples(self):
        shared, owned = classify_shared_owned(["Clock", "Backpack"], HOME, MockBackend())
        assert shared == {"Clock"}
        assert owned == {"Backpack"}

    def test_empty_input(self):
        assert classify_shared_owned([], HOME, MockBackend()) == (set(), set())

    def test_unlisted_class_defaults_owned(self):
        shared, owned = classify_shared_owned(["Widget"], HOME, MockBackend())
        assert shared == set() and owned == {"Widget"}

    def test_default_policy_configurable(self):
        backend = MockBackend(default_classification="shared")
        shared, owned = classify_shared_owned(["Widget"], HOME, backend)
        assert shared == {"Widget"} and owned == set()

    def test_overrides_force_misclassification(self):
        context = EnvironmentContext("home", overrides={"Box": "shared"})
        shared, owned = classify_shared_owned(["Box", "Cup"], context, MockBackend())
        assert "Box" in shared and "Cup" in owned

    def test_laboratory_table(self):
        context = EnvironmentContext("laboratory")
        shared, owned = classify_shared_owned(
            ["Printer", "Desk", "Potted Plant", "Laptop"], context, MockBackend())
        assert shared == {"Printer", "Potted Plant"}
        assert owned == {"Desk", "Laptop"}

    def test_partition_property(self):
        classes = ["Clock", "Cup", "Box", "Printer", "Widget", "Desk"]
        shared, owned = classify_shared_owned(classes, HOME, MockBackend())
        assert shared | owned == set(classes)
        assert shared & owned == set()


class TestGenerateQuestion:
    def test_neighbor_template(self):
        target = row(0, "Cup", 1.0, 1.0, color="red")
        others = [row(1, "Backpack", 1.2, 1.1, observed="hashimoto"),
                  row(2, "Book", 6.5, 2.6)]
        record = generate_question(target, others, MockBackend())
        assert record.question_text == "Whose red Cup is this, the one near the Backpack?"
        assert record.target_object_id == 0
        assert len(record.context_objects) == 2

    def test_fallback_without_labeled_neighbors(self):
        target = row(0, "Cup", 1.0, 1.0, color="red")
        record = generate_question(target, [row(2, "Book", 6.5, 2.6)], MockBackend())
        assert record.question_text == "Whose red Cup is this?"

    def test_no_coordinates_in_text(self):
        target = row(0, "Cup", 1.234, 5.678)
        others = [row(1, "Backpack", 1.3, 5.7, observed="ben")]
        record = generate_question(target, others, MockBackend())
        assert "1.234" not in record.question_text
        assert "5.678" not in record.question_text

    def test_mock_referentially_transparent(self):
        target = row(0, "Cup", 1.0, 1.0)
        others = [row(1, "Backpack", 1.2, 1.1, observed="ben")]
        first = generate_question(target, others, MockBackend())
        second = generate_question(target, others, MockBackend())
        assert first == second


class TestInterpretAnswer:
    QUESTION = QuestionRecord(0, "Whose cup is this?")

    def interpret(self, text, responder, backend=None, users=USERS):
        return interpret_answer(self.QUESTION, text, responder, users,
                                backend or MockBackend())

    def test_possessive_maps_to_responder(self):
        assert self.interpret("It's mine", "hashimoto") == AnswerLabel.owner("hashimoto")

    def test_shared_phrasing(self):
        assert self.interpret("That's shared by everyone", "anna") == AnswerLabel.shared()

    def test_direct_name(self):
        assert self.interpret("It's ben's", "anna") == AnswerLabel.owner("ben")

    def test_case_insensitive_name(self):
        assert self.interpret("That one is Hashimoto's cup", "anna") == AnswerLabel.owner("hashimoto")

    def test_typo_resolved_by_edit_distance(self):
        assert self.interpret("It's hashimotto's", "anna") == AnswerLabel.owner("hashimoto")

    def test_referential_resolved_via_relation_table(self):
        backend = MockBackend(relations={"ben": {"sister": "anna"}})
        assert self.interpret("It's my sister's", "ben", backend) == AnswerLabel.owner("anna")

    def test_referential_without_table_errors(self):
        with pytest.raises(InterpretationError):
            self.interpret("It's my father's", "ben")

    def test_bare_my_maps_to_responder(self):
        assert self.interpret("that is my cup", "anna") == AnswerLabel.owner("anna")

    def test_gibberish_errors_with_raw_text(self):
        with pytest.raises(InterpretationError) as info:
            self.interpret("blorp qwerty", "anna")
        assert info.value.raw_text == "blorp qwerty"

    def test_unknown_responder_rejected(self):
        with pytest.raises(InterpretationError):
            self.interpret("It's mine", "stranger")

    def test_never_fabricates_a_user(self):
        # ambiguous near-matches and non-user names must error, not invent
        with pytest.raises(InterpretationError):
            self.interpret("It's dave's", "anna", users=["anna", "ben"])

    def test_mock_deterministic(self):
        a = self.interpret("It's ben's", "anna")
        b = self.interpret("It's ben's", "anna")
        assert a == b


class TestPromptGoldenFiles:
    def test_classify_home(self):
        rendered = render_classify_prompt(["Clock", "Backpack"], EnvironmentContext("home"))
        assert rendered == (FIXTURES / "prompt_classify_home.golden.txt").read_text(encoding="utf-8")

    def test_classify_laboratory(self):
        rendered = render_classify_prompt(["Clock", "Backpack"], EnvironmentContext("laboratory"))
        assert rendered == (FIXTURES / "prompt_classify_laboratory.golden.txt").read_text(encoding="utf-8")

    def test_question(self):
        target = ObjectRow(0, "Cup", (0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0),
                           1.0, 1.0, "unknown", "red")
        others = [
            ObjectRow(1, "Backpack", (1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0),
                      1.2, 1.1, "hashimoto", "blue"),
            ObjectRow(2, "Book", (0, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1),
                      6.5, 2.6, "unknown", "yellow"),
        ]
        rendered = render_question_prompt(target, others)
        assert rendered == (FIXTURES / "prompt_question.golden.txt").read_text(encoding="utf-8")

    def test_interpret(self):
        rendered = render_interpret_prompt(
            "Whose red Cup is this, the one near the Backpack?",
            "It's mine", ["anna", "ben", "hashimoto"], "hashimoto")
        assert rendered == (FIXTURES / "prompt_interpret.golden.txt").read_text(encoding="utf-8")

    def test_serialization_format(self):
        line = serialize_row(ObjectRow(3, "Refrigerator", (0, 0, 1), 0.736902236, 3.799175403))
        assert line == "-Refrigerator, [0,0,1], 0.736902236, 3.799175403, unknown"


def _transport(handler):
    return httpx.MockTransport(handler)


def _completion(content):
    return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})


class TestLlmHttpBackend:
    def test_classify_parses_owned_list(self):
        def handler(request):
            body = json.loads(request.content)
            assert body["model"] == "gpt-4-0613"
            assert "existing_object = [Clock, Backpack]" in body["messages"][0]["content"]
            return _completion("Owned_object = [Backpack]")

        backend = LlmHttpBackend("http://llm.test/v1/chat", transport=_transport(handler))
        shared, owned = classify_shared_owned(["Clock", "Backpack"], HOME, backend)
        assert shared == {"Clock"} and owned == {"Backpack"}

    def test_classify_retries_once_then_errors(self):
        calls = []

        def handler(request):
            calls.append(1)
            return _completion("no brackets here")

        backend = LlmHttpBackend("http://llm.test/v1/chat", transport=_transport(handler))
        with pytest.raises(BackendError) as info:
            classify_shared_owned(["Clock"], HOME, backend)
        assert len(calls) == 2
        assert info.value.payload == "no brackets here"

    def test_transport_failure_wrapped(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        backend = LlmHttpBackend("http://llm.test/v1/chat", transport=_transport(handler))
        with pytest.raises(BackendError):
            classify_shared_owned(["Clock"], HOME, backend)

    def test_question_generation_returns_completion(self):
        backend = LlmHttpBackend("http://llm.test/v1/chat",
                                 transport=_transport(lambda r: _completion("Whose cup is this?")))
        record = generate_question(row(0, "Cup", 1.0, 1.0), [], backend)
        assert record.question_text == "Whose cup is this?"

    def test_empty_question_errors(self):
        backend = LlmHttpBackend("http://llm.test/v1/chat",
                                 transport=_transport(lambda r: _completion("  ")))
        with pytest.raises(BackendError):
            generate_question(row(0, "Cup", 1.0, 1.0), [], backend)

    def test_interpret_parses_answer_output(self):
        backend = LlmHttpBackend("http://llm.test/v1/chat",
                                 transport=_transport(lambda r: _completion('answer_output = "hashimoto"')))
        label = interpret_answer(QuestionRecord(0, "Whose?"), "It's mine", "hashimoto",
                                 USERS, backend)
        assert label == AnswerLabel.owner("hashimoto")

    def test_interpret_shared_output(self):
        backend = LlmHttpBackend("http://llm.test/v1/chat",
                                 transport=_transport(lambda r: _completion('answer_output = "Shared"')))
        label = interpret_answer(QuestionRecord(0, "Whose?"), "everyone's", "anna",
                                 USERS, backend)
        assert label == AnswerLabel.shared()

    def test_auth_header_from_environment(self, monkeypatch):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            return _completion("Owned_object = [Cup]")

        monkeypatch.setenv("ACTOWL_LLM_TOKEN", "secret-token")
        backend = LlmHttpBackend("http://llm.test/v1/chat", transport=_transport(handler))
        classify_shared_owned(["Cup"], HOME, backend)
        assert seen["auth"] == "Bearer secret-token"
