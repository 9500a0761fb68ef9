"""Scenario ingestion, scripted users, the question-answer session loop,
baselines and ablations, ARI evaluation, and multi-trial aggregation.

A scenario file is the ground-truth world: users, objects with class,
attributes, 2-D position and true owner, hyperparameters, and the persona
configuration for the scripted answerer. Trials run the full loop:
post-exploration update (step -1), shared/owned classification (step 0),
then one question per step until no candidates remain.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dialogue
from .dialogue import (
    EnvironmentContext,
    InterpretationError,
    MockBackend,
    ObjectRow,
    classify_shared_owned,
    generate_question,
    interpret_answer,
)
from .inference import derive_rng, map_assignments, update_model
from .model import AnswerLabel, AttributeVector, Hyperparameters, Observation
from .selector import (
    STRATEGY_IG_MAX,
    STRATEGY_IG_MIN,
    STRATEGY_RANDOM,
    Strategy,
    select_next,
)

COLORS = ("red", "blue", "yellow", "green", "black", "white")
SIZES = ("large", "medium", "small")
SHAPES = ("round", "square", "triangle")

SHARED_LABEL = "Shared"
SCHEMA_VERSION = 1

PERSONA_DIRECT = "direct"
PERSONA_POSSESSIVE = "possessive"
PERSONA_REFERENTIAL = "referential"
PERSONA_MIXED = "mixed"
_PERSONAS = (PERSONA_DIRECT, PERSONA_POSSESSIVE, PERSONA_REFERENTIAL)

ABLATION_NONE = "none"
ABLATION_COLOR_ONLY = "color-only"
ABLATION_POSITION_ONLY = "position-only"
ABLATION_ATTRIBUTE_ONLY = "attribute-only"
ABLATIONS = (ABLATION_NONE, ABLATION_COLOR_ONLY, ABLATION_POSITION_ONLY, ABLATION_ATTRIBUTE_ONLY)

STRATEGY_NO_LLM = "no-llm"
STRATEGY_LLM_ONLY = "llm-only"
ALL_STRATEGIES = (STRATEGY_IG_MAX, STRATEGY_IG_MIN, STRATEGY_RANDOM, STRATEGY_NO_LLM, STRATEGY_LLM_ONLY)

CSV_HEADER = ["trial", "step", "strategy", "selected_object", "ig_value",
              "question", "answer", "ari", "n_questions"]

_TAG_UPDATE = 10
_TAG_SELECT = 11
_TAG_RESPONDER = 12
_TAG_PERSONA = 13
_TAG_RANDOM_STRATEGY = 14


class TrialAborted(RuntimeError):
    """Raised when the abort policy stops a trial on an interpretation error."""


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    class_name: str
    color: str
    size: str
    shape: str
    x: float
    y: float
    owner: str
    position_component: int
    observed_user: str | None = None


@dataclass(frozen=True)
class PersonaConfig:
    mode: str = PERSONA_POSSESSIVE
    relations: dict[str, dict[str, str]] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    users: list[str]
    objects: list[SceneObject]
    hyperparameters: Hyperparameters
    personas: PersonaConfig = field(default_factory=PersonaConfig)
    context: EnvironmentContext = field(default_factory=EnvironmentContext)

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise KeyError(f"no object with id {object_id}")

    def true_labels(self) -> list[str]:
        return [obj.owner for obj in self.objects]


@dataclass(frozen=True)
class TrialConfig:
    n_particles: int = 100
    n_pseudo: int = 10
    ig_mode: str = "sampled"
    clamp_positions: bool = True
    ablation: str = ABLATION_NONE
    classification_overrides: dict[str, str] = field(default_factory=dict)
    interpretation_policy: str = "requeue"  # or "abort"
    ess_threshold: float = 0.5

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.interpretation_policy not in ("requeue", "abort"):
            raise ValueError("interpretation_policy must be 'requeue' or 'abort'")


@dataclass(frozen=True)
class StepMetrics:
    trial: int
    step: int
    strategy: str
    selected_object: int | None
    ig_value: float | None
    question_text: str | None
    answer: str | None
    ari: float
    n_questions: int


@dataclass
class SessionState:
    """Loop state of one teaching session.

    Step -1 precedes classification, step 0 follows it; answered objects
    and open candidates never overlap.
    """

    step: int = -1
    answers: dict[int, AnswerLabel] = field(default_factory=dict)
    candidates: list[int] = field(default_factory=list)
    particle_state: object | None = None
    history: list[StepMetrics] = field(default_factory=list)

    @property
    def answered(self) -> set[int]:
        return set(self.answers)

    def check_invariants(self):
        overlap = self.answered & set(self.candidates)
        if overlap:
            raise AssertionError(f"answered objects still candidates: {sorted(overlap)}")


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------


def packaged_scenario_names() -> list[str]:
    root = resources.files("actowl") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _read_scenario_text(name_or_path: str | Path) -> str:
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        return path.read_text(encoding="utf-8")
    packaged = resources.files("actowl") / "scenarios" / f"{name_or_path}.json"
    if not packaged.is_file():
        raise FileNotFoundError(f"unknown scenario {name_or_path!r}")
    return packaged.read_text(encoding="utf-8")


def load_scenario(name_or_path: str | Path) -> Scenario:
    data = json.loads(_read_scenario_text(name_or_path))
    violations = validate_scenario_dict(data)
    if violations:
        raise ValueError(f"invalid scenario: {'; '.join(violations)}")
    return scenario_from_dict(data)


def scenario_from_dict(data: dict) -> Scenario:
    h = _hyperparameters_from_dict(data["hyperparameters"])
    objects = [
        SceneObject(
            object_id=int(o["id"]),
            class_name=o["class"],
            color=o["color"],
            size=o["size"],
            shape=o["shape"],
            x=float(o["x"]),
            y=float(o["y"]),
            owner=o["owner"],
            position_component=int(o["position_component"]),
            observed_user=o.get("observed_user"),
        )
        for o in data["objects"]
    ]
    personas_raw = data.get("personas", {})
    personas = PersonaConfig(
        mode=personas_raw.get("mode", PERSONA_POSSESSIVE),
        relations=personas_raw.get("relations", {}),
    )
    return Scenario(
        name=data["name"],
        users=list(data["users"]),
        objects=objects,
        hyperparameters=h,
        personas=personas,
        context=EnvironmentContext(kind=data.get("context", dialogue.CONTEXT_HOME)),
    )


def _hyperparameters_from_dict(d: Mapping) -> Hyperparameters:
    kwargs = dict(d)
    if "lambda" in kwargs:
        kwargs["lambda_"] = kwargs.pop("lambda")
    return Hyperparameters(**kwargs)


def validate_scenario_dict(data: dict) -> list[str]:
    """All scenario invariants; returns human-readable violations."""
    problems: list[str] = []
    if data.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version must be {SCHEMA_VERSION}")
    if not data.get("name"):
        problems.append("missing scenario name")
    users = data.get("users") or []
    if not users:
        problems.append("users list is empty")
    if len(set(users)) != len(users):
        problems.append("duplicate user names")

    try:
        h = _hyperparameters_from_dict(data.get("hyperparameters", {}))
    except (ValueError, TypeError) as exc:
        problems.append(f"hyperparameters: {exc}")
        h = None

    objects = data.get("objects") or []
    if not objects:
        problems.append("objects list is empty")
    ids = [o.get("id") for o in objects]
    if len(set(ids)) != len(ids):
        problems.append("duplicate object ids")
    owners = set()
    for o in objects:
        oid = o.get("id")
        if o.get("color") not in COLORS:
            problems.append(f"object {oid}: unknown color {o.get('color')!r}")
        if o.get("size") not in SIZES:
            problems.append(f"object {oid}: unknown size {o.get('size')!r}")
        if o.get("shape") not in SHAPES:
            problems.append(f"object {oid}: unknown shape {o.get('shape')!r}")
        owner = o.get("owner")
        owners.add(owner)
        if owner != SHARED_LABEL and owner not in users:
            problems.append(f"object {oid}: owner {owner!r} not in users")
        for coord in ("x", "y"):
            value = o.get(coord)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                problems.append(f"object {oid}: non-finite {coord}")
        if h is not None:
            pc = o.get("position_component")
            if not isinstance(pc, int) or not 0 <= pc < h.n_components:
                problems.append(f"object {oid}: position_component out of range")
        observed = o.get("observed_user")
        if observed is not None and observed not in users:
            problems.append(f"object {oid}: observed_user {observed!r} not in users")
    if h is not None and len(owners) > h.n_concepts:
        problems.append(
            f"n_concepts={h.n_concepts} is below the {len(owners)} distinct ownership labels")

    personas = data.get("personas", {})
    mode = personas.get("mode", PERSONA_POSSESSIVE)
    if mode not in _PERSONAS + (PERSONA_MIXED,):
        problems.append(f"unknown persona mode {mode!r}")
    for responder, table in (personas.get("relations") or {}).items():
        if responder not in users:
            problems.append(f"relations: responder {responder!r} not in users")
        for word, owner in table.items():
            if owner not in users:
                problems.append(f"relations: {responder}/{word} maps to non-user {owner!r}")

    context = data.get("context", dialogue.CONTEXT_HOME)
    if context not in (dialogue.CONTEXT_HOME, dialogue.CONTEXT_LABORATORY):
        problems.append(f"unknown context {context!r}")
    return problems


# ---------------------------------------------------------------------------
# Observations and prompt rows
# ---------------------------------------------------------------------------


def class_vocabulary(scenario: Scenario) -> list[str]:
    return sorted({obj.class_name for obj in scenario.objects})


def build_attribute_vector(obj: SceneObject, vocab: Sequence[str],
                           ablation: str = ABLATION_NONE) -> AttributeVector:
    color = np.zeros(len(COLORS), dtype=np.int64)
    color[COLORS.index(obj.color)] = 1
    if ablation == ABLATION_COLOR_ONLY:
        return AttributeVector(color)
    class_block = np.zeros(len(vocab), dtype=np.int64)
    class_block[list(vocab).index(obj.class_name)] = 1
    size = np.zeros(len(SIZES), dtype=np.int64)
    size[SIZES.index(obj.size)] = 1
    shape = np.zeros(len(SHAPES), dtype=np.int64)
    shape[SHAPES.index(obj.shape)] = 1
    return AttributeVector(np.concatenate([class_block, color, size, shape]))


def build_observations(scenario: Scenario, config: TrialConfig) -> list[Observation]:
    vocab = class_vocabulary(scenario)
    return [
        Observation(
            object_id=obj.object_id,
            position=np.array([obj.x, obj.y]),
            attributes=build_attribute_vector(obj, vocab, config.ablation),
            answer=AnswerLabel.unknown(),
            fixed_position_component=obj.position_component if config.clamp_positions else None,
        )
        for obj in scenario.objects
    ]


def effective_hyperparameters(scenario: Scenario, config: TrialConfig) -> Hyperparameters:
    h = scenario.hyperparameters
    if config.ablation == ABLATION_POSITION_ONLY:
        return replace(h, w_attribute=0.0)
    if config.ablation == ABLATION_ATTRIBUTE_ONLY:
        return replace(h, w_position=0.0)
    return h


def object_rows(scenario: Scenario,
                answers: Mapping[int, AnswerLabel] | None = None) -> dict[int, ObjectRow]:
    """Prompt-facing rows; known answers become the observed-user column."""
    answers = answers or {}
    vocab = class_vocabulary(scenario)
    rows = {}
    for obj in scenario.objects:
        if obj.object_id in answers:
            observed = answers[obj.object_id].text()
        elif obj.observed_user:
            observed = obj.observed_user
        else:
            observed = "unknown"
        rows[obj.object_id] = ObjectRow(
            object_id=obj.object_id,
            class_name=obj.class_name,
            attributes=tuple(int(v) for v in build_attribute_vector(obj, vocab).values),
            x=obj.x,
            y=obj.y,
            observed_user=observed,
            color=obj.color,
        )
    return rows


def mock_backend_for(scenario: Scenario) -> MockBackend:
    return MockBackend(relations=scenario.personas.relations)


# ---------------------------------------------------------------------------
# Scripted answers
# ---------------------------------------------------------------------------


def scripted_answer(scenario: Scenario, object_id: int, persona: str,
                    seed: int) -> tuple[str, str]:
    """Deterministic (answer text, responding user) for one object.

    Round-trips through the mock interpreter to the object's true label.
    Shared objects answer "It's shared" under every persona; referential
    degrades to direct when no relation reaches the owner.
    """
    obj = scenario.object_by_id(object_id)
    rng = derive_rng(seed, _TAG_RESPONDER, object_id)
    bystander = scenario.users[int(rng.integers(len(scenario.users)))]
    if obj.owner == SHARED_LABEL:
        return "It's shared", bystander
    if persona == PERSONA_POSSESSIVE:
        return "It's mine", obj.owner
    if persona == PERSONA_REFERENTIAL:
        matches = [
            (responder, word)
            for responder in sorted(scenario.personas.relations)
            for word, owner in sorted(scenario.personas.relations[responder].items())
            if owner == obj.owner
        ]
        if matches:
            responder, word = matches[int(rng.integers(len(matches)))]
            return f"It's my {word}'s", responder
        persona = PERSONA_DIRECT
    if persona == PERSONA_DIRECT:
        return f"It's {obj.owner}'s", bystander
    raise ValueError(f"unknown persona {persona!r}")


def _resolve_persona(scenario: Scenario, seed: int, step: int) -> str:
    mode = scenario.personas.mode
    if mode != PERSONA_MIXED:
        return mode
    options = [PERSONA_DIRECT, PERSONA_POSSESSIVE]
    if scenario.personas.relations:
        options.append(PERSONA_REFERENTIAL)
    rng = derive_rng(seed, _TAG_PERSONA, step)
    return options[int(rng.integers(len(options)))]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def adjusted_rand_index(predicted: Sequence, truth: Sequence) -> float:
    """Chance-corrected partition agreement from the pair-counting table."""
    if len(predicted) != len(truth):
        raise ValueError("label lists must have equal length")
    n = len(predicted)
    if n < 2:
        raise ValueError("need at least two items")
    table: dict[tuple, int] = {}
    row_sums: dict = {}
    col_sums: dict = {}
    for p, t in zip(predicted, truth):
        table[(p, t)] = table.get((p, t), 0) + 1
        row_sums[p] = row_sums.get(p, 0) + 1
        col_sums[t] = col_sums.get(t, 0) + 1
    paired = sum(math.comb(v, 2) for v in table.values())
    rows = sum(math.comb(v, 2) for v in row_sums.values())
    cols = sum(math.comb(v, 2) for v in col_sums.values())
    expected = rows * cols / math.comb(n, 2)
    max_index = (rows + cols) / 2
    if max_index == expected:
        return 1.0
    return (paired - expected) / (max_index - expected)


def _current_ari(state, scenario: Scenario) -> float:
    predicted = map_assignments(state).tolist()
    return adjusted_rand_index(predicted, scenario.true_labels())


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------


def llm_only_predict(scenario: Scenario, backend) -> dict[int, str]:
    """One-shot ownership prediction for every object (no generative model)."""
    rows = object_rows(scenario)
    ordered = [rows[obj.object_id] for obj in scenario.objects]
    labels = backend.predict_owners(ordered, scenario.users)
    return {obj.object_id: label for obj, label in zip(scenario.objects, labels)}


def run_trial(scenario: Scenario, strategy_name: str, backend, config: TrialConfig,
              seed: int, trial: int = 0) -> list[StepMetrics]:
    """One full session; deterministic for a fixed seed."""
    if strategy_name not in ALL_STRATEGIES:
        raise ValueError(f"unknown strategy {strategy_name!r}")
    if strategy_name == STRATEGY_LLM_ONLY:
        return _run_llm_only(scenario, backend, config, seed, trial)

    h = effective_hyperparameters(scenario, config)
    users = scenario.users
    observations = build_observations(scenario, config)
    session = SessionState()

    def update():
        session.particle_state = update_model(
            session.answers, observations, h, users, config.n_particles,
            seed=_compose(seed, _TAG_UPDATE, session.step + 1),
            ess_threshold=config.ess_threshold)

    def record(selected=None, ig=None, question=None, answer=None):
        session.history.append(StepMetrics(
            trial, session.step, strategy_name, selected, ig, question, answer,
            _current_ari(session.particle_state, scenario), max(session.step, 0)))

    update()
    record()

    if strategy_name == STRATEGY_NO_LLM:
        session.candidates = [obj.object_id for obj in scenario.objects]
    else:
        context = EnvironmentContext(kind=scenario.context.kind,
                                     overrides=dict(config.classification_overrides))
        shared_classes, owned_classes = classify_shared_owned(
            class_vocabulary(scenario), context, backend)
        session.answers = {
            obj.object_id: AnswerLabel.shared()
            for obj in scenario.objects if obj.class_name in shared_classes
        }
        session.step = 0
        update()
        record()
        session.candidates = [obj.object_id for obj in scenario.objects
                              if obj.class_name in owned_classes]
    session.check_invariants()

    selection = _selection_strategy(strategy_name, seed)
    attempts: dict[int, int] = {}
    while session.candidates:
        session.step = max(session.step, 0) + 1
        step = session.step
        target_id, estimates = select_next(
            session.particle_state, session.candidates, selection,
            ig_mode=config.ig_mode, n_samples=config.n_pseudo,
            seed=_compose(seed, _TAG_SELECT, step))
        ig_value = next((e.value for e in estimates if e.object_id == target_id), None)

        rows = object_rows(scenario, session.answers)
        others = [rows[i] for i in sorted(rows) if i != target_id]
        question = generate_question(rows[target_id], others, backend)
        persona = _resolve_persona(scenario, seed, step)
        answer_text, responder = scripted_answer(scenario, target_id, persona,
                                                 seed=_compose(seed, _TAG_RESPONDER, step))
        try:
            label = interpret_answer(question, answer_text, responder, users, backend)
        except InterpretationError:
            if config.interpretation_policy == "abort":
                raise TrialAborted(f"uninterpretable answer at step {step}") from None
            session.candidates.remove(target_id)
            attempts[target_id] = attempts.get(target_id, 0) + 1
            if attempts[target_id] < 2:
                session.candidates.append(target_id)  # requeue once
            record(selected=target_id, ig=ig_value, question=question.question_text)
            continue

        session.answers[target_id] = label
        session.candidates.remove(target_id)
        update()
        record(selected=target_id, ig=ig_value, question=question.question_text,
               answer=label.text())
        session.check_invariants()
    return session.history


def _run_llm_only(scenario, backend, config, seed, trial) -> list[StepMetrics]:
    # A single prediction replicated across the step axis for plotting
    # parity with the questioning strategies; no questions are asked.
    predictions = llm_only_predict(scenario, backend)
    predicted = [predictions[obj.object_id] for obj in scenario.objects]
    ari = adjusted_rand_index(predicted, scenario.true_labels())
    _, owned_classes = classify_shared_owned(
        class_vocabulary(scenario), scenario.context, backend)
    n_steps = sum(1 for obj in scenario.objects if obj.class_name in owned_classes)
    return [
        StepMetrics(trial, step, STRATEGY_LLM_ONLY, None, None, None, None, ari, 0)
        for step in range(-1, n_steps + 1)
    ]


def _selection_strategy(strategy_name: str, seed: int) -> Strategy:
    if strategy_name == STRATEGY_RANDOM:
        return Strategy(STRATEGY_RANDOM, seed=_compose(seed, _TAG_RANDOM_STRATEGY, 0))
    if strategy_name == STRATEGY_IG_MIN:
        return Strategy(STRATEGY_IG_MIN)
    return Strategy(STRATEGY_IG_MAX)  # ig-max and no-llm


def _compose(seed: int, tag: int, step: int) -> int:
    # Distinct deterministic stream per (seed, tag, step).
    return (seed * 1_000_003 + tag) * 1_000 + step


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _trial_task(args) -> list[StepMetrics]:
    scenario, strategy_name, backend, config, seed, trial = args
    return run_trial(scenario, strategy_name, backend, config, seed, trial)


def run_experiment(scenario: Scenario, strategy_names: Sequence[str], trials: int,
                   base_seed: int, config: TrialConfig, backend=None,
                   jobs: int = 1) -> tuple[list[StepMetrics], dict]:
    """Run ``trials`` seeded trials per strategy and aggregate per step."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if backend is None:
        backend = mock_backend_for(scenario)
    tasks = [
        (scenario, name, backend, config, base_seed + t, t)
        for name in strategy_names
        for t in range(trials)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_trial_task, tasks))
    else:
        results = [_trial_task(task) for task in tasks]
    rows = [row for result in results for row in result]
    return rows, aggregate_metrics(rows)


def aggregate_metrics(rows: Sequence[StepMetrics]) -> dict:
    """Per-strategy, per-step mean/std ARI and mean selected IG."""
    out: dict[str, list[dict]] = {}
    strategies = list(dict.fromkeys(row.strategy for row in rows))
    for name in strategies:
        strategy_rows = [r for r in rows if r.strategy == name]
        steps = sorted({r.step for r in strategy_rows})
        table = []
        for step in steps:
            aris = [r.ari for r in strategy_rows if r.step == step]
            igs = [r.ig_value for r in strategy_rows if r.step == step and r.ig_value is not None]
            table.append({
                "step": step,
                "mean_ari": float(np.mean(aris)),
                "std_ari": float(np.std(aris)),
                "mean_ig": float(np.mean(igs)) if igs else None,
            })
        out[name] = table
    return out


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------


def metrics_csv_string(rows: Sequence[StepMetrics]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([
            r.trial, r.step, r.strategy,
            "" if r.selected_object is None else r.selected_object,
            "" if r.ig_value is None else repr(float(r.ig_value)),
            "" if r.question_text is None else r.question_text,
            "" if r.answer is None else r.answer,
            repr(float(r.ari)),
            r.n_questions,
        ])
    return buffer.getvalue()


def write_metrics_csv(rows: Sequence[StepMetrics], path: str | Path):
    Path(path).write_text(metrics_csv_string(rows), encoding="utf-8", newline="")


def write_aggregate_json(aggregate: dict, path: str | Path):
    Path(path).write_text(json.dumps(aggregate, indent=2) + "\n", encoding="utf-8")
