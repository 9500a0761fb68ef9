"""Language-facing capabilities behind a pluggable backend.

Three operations: shared/owned pre-classification of object classes,
natural-language question generation, and answer interpretation. The
default backend is a deterministic mock (rule tables and templates); the
HTTP backend renders the versioned prompt templates against a
chat-completion endpoint. No test requires the HTTP backend.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import httpx

from .model import AnswerLabel

LLM_TOKEN_ENV = "ACTOWL_LLM_TOKEN"

CONTEXT_HOME = "home"
CONTEXT_LABORATORY = "laboratory"

# Responder sentinel used when a scripted shared answer has no natural speaker.
SHARED_RESPONDER = "Shared"

_UNKNOWN_USER = "unknown"


class BackendError(RuntimeError):
    """Transport or parse failure from a dialogue backend."""

    def __init__(self, message: str, payload: str | None = None):
        super().__init__(message)
        self.payload = payload


class InterpretationError(ValueError):
    """An answer could not be mapped to the closed vocabulary."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class EnvironmentContext:
    """Selects the classification prompt variant and mock rule table.

    ``overrides`` force individual classes to "shared" or "owned"
    regardless of the table (used for scripted misclassification runs).
    """

    kind: str = CONTEXT_HOME
    overrides: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (CONTEXT_HOME, CONTEXT_LABORATORY):
            raise ValueError(f"unknown environment context {self.kind!r}")
        for cls, val in self.overrides.items():
            if val not in ("shared", "owned"):
                raise ValueError(f"override for {cls!r} must be 'shared' or 'owned'")


@dataclass(frozen=True)
class ObjectRow:
    """One object as serialized into prompts: class, attributes, position, label."""

    object_id: int
    class_name: str
    attributes: tuple[int, ...]
    x: float
    y: float
    observed_user: str = _UNKNOWN_USER
    color: str = ""


@dataclass(frozen=True)
class QuestionRecord:
    target_object_id: int
    question_text: str
    context_objects: tuple[str, ...] = ()


def serialize_row(row: ObjectRow) -> str:
    attrs = ",".join(str(v) for v in row.attributes)
    return f"-{row.class_name}, [{attrs}], {row.x}, {row.y}, {row.observed_user}"


def _read_prompt(name: str) -> str:
    return (resources.files("actowl") / "prompts" / name).read_text(encoding="utf-8")


def render_classify_prompt(classes: Sequence[str], context: EnvironmentContext) -> str:
    template = _read_prompt(f"classify_{context.kind}.txt")
    return template.replace("OBJECT_LIST", ", ".join(classes))


def render_question_prompt(target: ObjectRow, others: Sequence[ObjectRow]) -> str:
    template = _read_prompt("question.txt")
    other_list = "\n".join(serialize_row(r) for r in others)
    return (template
            .replace("OTHER_OBJECT_LIST", other_list)
            .replace("TARGET_OBJECT_LIST", serialize_row(target)))


def render_interpret_prompt(question_text: str, answer_text: str,
                            users: Sequence[str], responding_user: str) -> str:
    template = _read_prompt("interpret.txt")
    return (template
            .replace("QUESTION_TEXT", question_text)
            .replace("USER_ANSWER", answer_text)
            .replace("USER_LIST", "[" + ", ".join(users) + "]")
            .replace("RESPONDING_USER", responding_user))


def render_predict_owners_prompt(rows: Sequence[ObjectRow], users: Sequence[str]) -> str:
    template = _read_prompt("predict_owners.txt")
    return (template
            .replace("USER_LIST", "[" + ", ".join(users) + "]")
            .replace("OBJECT_LIST", "\n".join(serialize_row(r) for r in rows)))


# ---------------------------------------------------------------------------
# Shared/owned rule tables for the mock backend
# ---------------------------------------------------------------------------

_LAB_SHARED = {"Clock", "Dining Table", "Printer", "Potted Plant", "Refrigerator", "Trash bin Can"}
_LAB_OWNED = {"Backpack", "Bed", "Book", "Bottle", "Chair", "Cup", "Desk",
              "Handbag/Satchel", "Laptop", "Monitor/TV", "Mouse", "Pillow"}

_CLASS_TABLES = {
    CONTEXT_LABORATORY: {**{c: "shared" for c in _LAB_SHARED}, **{c: "owned" for c in _LAB_OWNED}},
    CONTEXT_HOME: {**{c: "shared" for c in _LAB_SHARED},
                   **{c: "owned" for c in _LAB_OWNED | {"Box"}},
                   # desks are personal in the lab but family furniture at home
                   "Desk": "shared", "Bed": "owned"},
}

_SHARED_PHRASES = ("shared", "everyone", "everybody", "common", "all of us")

_NAME_STOPWORDS = {
    "it", "its", "is", "the", "a", "an", "my", "mine", "that", "this",
    "one", "of", "to", "by", "s", "no", "not", "yes",
}


def _levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1,
                               previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


@dataclass
class MockBackend:
    """Deterministic stand-in: rule tables plus string templates.

    ``relations`` maps a responding user to relation words and the user
    each resolves to, e.g. ``{"ben": {"sister": "anna"}}`` so that ben
    saying "It's my sister's" means anna.
    """

    default_classification: str = "owned"
    relations: dict[str, dict[str, str]] = field(default_factory=dict)

    def classify(self, classes: Sequence[str], context: EnvironmentContext) -> tuple[set[str], set[str]]:
        table = _CLASS_TABLES[context.kind]
        shared, owned = set(), set()
        for cls in classes:
            kind = context.overrides.get(cls, table.get(cls, self.default_classification))
            (shared if kind == "shared" else owned).add(cls)
        return shared, owned

    def generate_question(self, target: ObjectRow, others: Sequence[ObjectRow]) -> str:
        labeled = [r for r in others
                   if r.observed_user not in (_UNKNOWN_USER, "") and r.object_id != target.object_id]
        subject = " ".join(p for p in (target.color, target.class_name) if p)
        if not labeled:
            return f"Whose {subject} is this?"
        nearest = min(labeled, key=lambda r: ((r.x - target.x) ** 2 + (r.y - target.y) ** 2, r.object_id))
        return f"Whose {subject} is this, the one near the {nearest.class_name}?"

    def interpret(self, answer_text: str, responding_user: str, users: Sequence[str]) -> AnswerLabel:
        text = answer_text.lower()
        users = list(users)

        # "my father's" style relational possessives, resolved via the table
        relation_words = re.findall(r"\bmy\s+([a-z]+)'s?\b", text)
        if relation_words:
            table = self.relations.get(responding_user, {})
            for word in relation_words:
                if word in table:
                    return AnswerLabel.owner(table[word])
            raise InterpretationError(
                f"unresolvable relation {relation_words[0]!r}", answer_text)

        if re.search(r"\bmine\b|\bmy own\b", text):
            if responding_user not in users:
                raise InterpretationError(
                    "possessive answer from a non-user responder", answer_text)
            return AnswerLabel.owner(responding_user)

        if any(phrase in text for phrase in _SHARED_PHRASES):
            return AnswerLabel.shared()

        if re.search(r"\bmy\b", text):
            if responding_user not in users:
                raise InterpretationError(
                    "possessive answer from a non-user responder", answer_text)
            return AnswerLabel.owner(responding_user)

        tokens = re.findall(r"[a-z]+", text)
        lowered = {u.lower(): u for u in users}
        for token in tokens:
            if token in lowered:
                return AnswerLabel.owner(lowered[token])

        # typo tolerance: closest user within edit distance 2, ties are errors
        best: tuple[int, str] | None = None
        tied = False
        for token in tokens:
            if token in _NAME_STOPWORDS or len(token) < 3:
                continue
            for low, user in lowered.items():
                d = _levenshtein(token, low)
                if d <= 2:
                    if best is None or d < best[0]:
                        best, tied = (d, user), False
                    elif d == best[0] and user != best[1]:
                        tied = True
        if best is not None and tied:
            raise InterpretationError("ambiguous near-match to several users", answer_text)
        if best is not None:
            return AnswerLabel.owner(best[1])
        raise InterpretationError("no owner or shared marker found", answer_text)

    def predict_owners(self, rows: Sequence[ObjectRow], users: Sequence[str]) -> list[str]:
        """Nearest-labeled-neighbor heuristic with a same-class bonus."""
        labeled = [r for r in rows if r.observed_user not in (_UNKNOWN_USER, "")]
        if not labeled:
            return ["Shared"] * len(rows)
        out = []
        for row in rows:
            if row.observed_user not in (_UNKNOWN_USER, ""):
                out.append(row.observed_user)
                continue
            def score(cand: ObjectRow):
                d2 = (cand.x - row.x) ** 2 + (cand.y - row.y) ** 2
                bonus = 0.0 if cand.class_name == row.class_name else 1.0
                return (bonus, d2, cand.object_id)
            out.append(min(labeled, key=score).observed_user)
        return out


@dataclass
class LlmHttpBackend:
    """Chat-completion HTTP backend; auth token from the environment."""

    endpoint: str
    model: str = "gpt-4-0613"
    temperature: float = 0.0
    timeout: float = 60.0
    transport: httpx.BaseTransport | None = None

    def complete(self, prompt: str) -> str:
        headers = {}
        token = os.environ.get(LLM_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        try:
            with httpx.Client(transport=self.transport, timeout=self.timeout) as client:
                response = client.post(self.endpoint, json=body, headers=headers)
                response.raise_for_status()
                payload = response.json()
        except httpx.HTTPError as exc:
            raise BackendError(f"LLM request failed: {exc}") from exc
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("malformed LLM response", payload=repr(payload)) from exc

    def classify(self, classes: Sequence[str], context: EnvironmentContext) -> tuple[set[str], set[str]]:
        prompt = render_classify_prompt(classes, context)
        completion = self.complete(prompt)
        owned = _parse_bracket_list(completion, "Owned_object")
        if owned is None:  # one retry on unparsable output
            completion = self.complete(prompt)
            owned = _parse_bracket_list(completion, "Owned_object")
        if owned is None:
            raise BackendError("could not parse classification output", payload=completion)
        matched = _match_classes(owned, classes)
        return set(classes) - matched, matched

    def generate_question(self, target: ObjectRow, others: Sequence[ObjectRow]) -> str:
        completion = self.complete(render_question_prompt(target, others)).strip()
        if not completion:
            raise BackendError("empty question completion")
        return completion

    def interpret(self, answer_text: str, responding_user: str, users: Sequence[str],
                  question_text: str = "") -> AnswerLabel:
        prompt = render_interpret_prompt(question_text, answer_text, users, responding_user)
        completion = self.complete(prompt)
        name = _parse_answer_output(completion)
        if name is None:
            completion = self.complete(prompt)
            name = _parse_answer_output(completion)
        if name is None:
            raise BackendError("could not parse interpretation output", payload=completion)
        if name.lower() == "shared":
            return AnswerLabel.shared()
        resolved = _resolve_user(name, users)
        if resolved is None:
            raise InterpretationError(f"LLM produced unknown user {name!r}", answer_text)
        return AnswerLabel.owner(resolved)

    def predict_owners(self, rows: Sequence[ObjectRow], users: Sequence[str]) -> list[str]:
        completion = self.complete(render_predict_owners_prompt(rows, users))
        names = _parse_bracket_list(completion, "owner_output")
        if names is None or len(names) != len(rows):
            raise BackendError("could not parse owner predictions", payload=completion)
        out = []
        for name in names:
            if name.lower() == "shared":
                out.append("Shared")
                continue
            resolved = _resolve_user(name, users)
            out.append(resolved if resolved is not None else "Shared")
        return out


DialogueBackend = MockBackend | LlmHttpBackend


def _parse_bracket_list(completion: str, marker: str) -> list[str] | None:
    match = re.search(rf"{marker}\s*=\s*\[(.*?)\]", completion, re.DOTALL)
    if not match:
        return None
    inner = match.group(1).strip()
    if not inner:
        return []
    return [part.strip().strip("\"'") for part in inner.split(",")]


def _parse_answer_output(completion: str) -> str | None:
    match = re.search(r"answer_output\s*=\s*[\"']?([^\"'\n]+)[\"']?", completion)
    return match.group(1).strip() if match else None


def _match_classes(names: Iterable[str], classes: Sequence[str]) -> set[str]:
    lowered = {c.lower(): c for c in classes}
    return {lowered[n.lower()] for n in names if n.lower() in lowered}


def _resolve_user(name: str, users: Sequence[str]) -> str | None:
    lowered = {u.lower(): u for u in users}
    if name.lower() in lowered:
        return lowered[name.lower()]
    candidates = [(u, _levenshtein(name.lower(), u.lower())) for u in users]
    best_user, best_d = min(candidates, key=lambda t: t[1])
    if best_d <= 2 and sum(1 for _, d in candidates if d == best_d) == 1:
        return best_user
    return None


# ---------------------------------------------------------------------------
# Module operations (validate contracts, delegate to the backend)
# ---------------------------------------------------------------------------


def classify_shared_owned(classes: Sequence[str], context: EnvironmentContext,
                          backend: DialogueBackend) -> tuple[set[str], set[str]]:
    """Partition object classes into (shared, owned)."""
    classes = list(dict.fromkeys(classes))
    if not classes:
        return set(), set()
    shared, owned = backend.classify(classes, context)
    if shared & owned or shared | owned != set(classes):
        raise BackendError("classification did not partition the input classes")
    return shared, owned


def generate_question(target: ObjectRow, others: Sequence[ObjectRow],
                      backend: DialogueBackend) -> QuestionRecord:
    """Produce the natural-language ownership question for one object."""
    text = backend.generate_question(target, others)
    if not text:
        raise BackendError("empty question")
    return QuestionRecord(
        target_object_id=target.object_id,
        question_text=text,
        context_objects=tuple(serialize_row(r) for r in others),
    )


def interpret_answer(question: QuestionRecord, answer_text: str, responding_user: str,
                     users: Sequence[str], backend: DialogueBackend) -> AnswerLabel:
    """Map a free-form answer to Owner(name in users) or Shared."""
    if responding_user not in users and responding_user != SHARED_RESPONDER:
        raise InterpretationError(f"unknown responding user {responding_user!r}", answer_text)
    if isinstance(backend, LlmHttpBackend):
        label = backend.interpret(answer_text, responding_user, users,
                                  question_text=question.question_text)
    else:
        label = backend.interpret(answer_text, responding_user, users)
    if label.kind == AnswerLabel.OWNER and label.owner_name not in users:
        raise InterpretationError(f"resolved to unknown user {label.owner_name!r}", answer_text)
    return label
