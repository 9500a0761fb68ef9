"""HTTP JSON API for live teaching sessions.

One session runs the question-answer loop against a human answerer: the
service performs the exploration update and shared/owned classification
at creation, then alternates ask (select by information gain + generate a
question) and answer (interpret + model update). Reads are served from an
immutable snapshot reference so they never observe a half-applied write;
writes for one session are serialized by a lock.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel, Field

from .dialogue import InterpretationError, MockBackend, generate_question, interpret_answer
from .harness import (
    Scenario,
    StepMetrics,
    TrialConfig,
    adjusted_rand_index,
    build_observations,
    class_vocabulary,
    classify_shared_owned,
    effective_hyperparameters,
    load_scenario,
    metrics_csv_string,
    mock_backend_for,
    object_rows,
)
from .inference import map_assignments, update_model
from .model import AnswerLabel, StatsBatch, batch_answer_predictive_mixture
from .selector import NoCandidatesError, Strategy, select_next


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


# -- request / response models ----------------------------------------------


class SessionConfig(BaseModel):
    n_particles: int = Field(default=100, ge=1)
    n_pseudo: int = Field(default=10, ge=1)
    ig_mode: str = Field(default="sampled", pattern="^(sampled|exact)$")
    seed: int = 0
    clamp_positions: bool = True


class SessionCreateRequest(BaseModel):
    scenario: str
    config: SessionConfig = SessionConfig()


class SessionHandleModel(BaseModel):
    session_id: str
    scenario: str
    created_at: datetime
    step: int
    candidates: list[int]


class CandidateModel(BaseModel):
    object_id: int
    ig_value: float | None = None


class QuestionModel(BaseModel):
    target_object_id: int
    question_text: str


class ObjectSummaryModel(BaseModel):
    object_id: int
    class_name: str
    color: str
    x: float
    y: float
    map_concept: int
    answer_entropy: float
    answer: str | None = None
    is_candidate: bool


class StepMetricsModel(BaseModel):
    trial: int
    step: int
    strategy: str
    selected_object: int | None
    ig_value: float | None
    question_text: str | None
    answer: str | None
    ari: float
    n_questions: int

    @classmethod
    def from_metrics(cls, m: StepMetrics) -> "StepMetricsModel":
        return cls(**{f: getattr(m, f) for f in cls.model_fields})


class StateSnapshotModel(BaseModel):
    session_id: str
    scenario: str
    users: list[str]
    step: int
    completed: bool
    candidates: list[CandidateModel]
    question: QuestionModel | None = None
    objects: list[ObjectSummaryModel]
    history: list[StepMetricsModel]


class AnswerRequest(BaseModel):
    text: str
    responding_user: str


# -- session bookkeeping ------------------------------------------------------


@dataclass(frozen=True)
class _Core:
    """Immutable session state; every write swaps in a new instance."""

    step: int
    answers: dict[int, AnswerLabel]
    candidates: tuple[int, ...]
    particle_state: object
    history: tuple[StepMetrics, ...]
    question: QuestionModel | None
    last_estimates: tuple[tuple[int, float], ...]


@dataclass
class _Session:
    session_id: str
    scenario: Scenario
    config: SessionConfig
    backend: MockBackend
    created_at: datetime
    core: _Core
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionStore:
    def __init__(self, snapshot_dir: str | Path | None = None):
        self._sessions: dict[str, _Session] = {}
        self._lock = threading.Lock()
        self.snapshot_dir = Path(snapshot_dir) if snapshot_dir else None

    def add(self, session: _Session):
        with self._lock:
            self._sessions[session.session_id] = session

    def get(self, session_id: str) -> _Session:
        with self._lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise ApiError(404, "session_not_found", f"no session {session_id!r}")
        return session

    def persist(self, session: _Session):
        if self.snapshot_dir is None:
            return
        self.snapshot_dir.mkdir(parents=True, exist_ok=True)
        core = session.core
        payload = {
            "session_id": session.session_id,
            "scenario": session.scenario.name,
            "config": session.config.model_dump(),
            "step": core.step,
            "answers": {str(k): v.text() for k, v in core.answers.items()},
            "candidates": list(core.candidates),
            "history": [StepMetricsModel.from_metrics(m).model_dump() for m in core.history],
        }
        path = self.snapshot_dir / f"{session.session_id}.json"
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")


# -- core session transitions -------------------------------------------------


def _run_update(scenario: Scenario, config: SessionConfig,
                answers: dict[int, AnswerLabel], step: int):
    trial_config = TrialConfig(n_particles=config.n_particles,
                               n_pseudo=config.n_pseudo,
                               ig_mode=config.ig_mode,
                               clamp_positions=config.clamp_positions)
    h = effective_hyperparameters(scenario, trial_config)
    observations = build_observations(scenario, trial_config)
    return update_model(answers, observations, h, scenario.users,
                        config.n_particles, seed=_seed(config.seed, step))


def _seed(base: int, step: int) -> int:
    return base * 100_000 + (step + 1)


def _metrics_row(scenario: Scenario, state, step: int, selected=None, ig=None,
                 question=None, answer=None) -> StepMetrics:
    predicted = map_assignments(state).tolist()
    ari = adjusted_rand_index(predicted, scenario.true_labels())
    return StepMetrics(
        trial=0, step=step, strategy="ig-max", selected_object=selected,
        ig_value=ig, question_text=question, answer=answer,
        ari=float(ari), n_questions=max(step, 0),
    )


def create_session_state(scenario: Scenario, config: SessionConfig,
                         backend: MockBackend) -> _Core:
    """Exploration update (step -1) plus classification update (step 0)."""
    state = _run_update(scenario, config, {}, -1)
    history = [_metrics_row(scenario, state, -1)]

    shared_classes, owned_classes = classify_shared_owned(
        class_vocabulary(scenario), scenario.context, backend)
    answers = {
        obj.object_id: AnswerLabel.shared()
        for obj in scenario.objects if obj.class_name in shared_classes
    }
    state = _run_update(scenario, config, answers, 0)
    history.append(_metrics_row(scenario, state, 0))
    candidates = tuple(obj.object_id for obj in scenario.objects
                       if obj.class_name in owned_classes)
    return _Core(step=0, answers=answers, candidates=candidates,
                 particle_state=state, history=tuple(history),
                 question=None, last_estimates=())


def _answer_entropy(state, obs) -> float:
    """Entropy (nats) of the weight-mixed answer predictive for one object."""
    batch = StatsBatch.from_stats([p.stats for p in state.particles])
    query = obs.with_answer(AnswerLabel.unknown())
    predictives = batch_answer_predictive_mixture(batch, state.h, query, state.users)
    mixed = np.asarray(state.normalized_weights) @ predictives
    mixed = mixed[mixed > 0]
    return float(-(mixed * np.log(mixed)).sum())


def build_snapshot(session: _Session) -> StateSnapshotModel:
    core = session.core
    state = core.particle_state
    scenario = session.scenario
    concepts = map_assignments(state).tolist()
    estimates = dict(core.last_estimates)
    objects = []
    for obj, concept in zip(scenario.objects, concepts):
        answer = core.answers.get(obj.object_id)
        objects.append(ObjectSummaryModel(
            object_id=obj.object_id,
            class_name=obj.class_name,
            color=obj.color,
            x=obj.x,
            y=obj.y,
            map_concept=int(concept),
            answer_entropy=_answer_entropy(state, state.observation_by_id(obj.object_id)),
            answer=answer.text() if answer is not None else None,
            is_candidate=obj.object_id in core.candidates,
        ))
    return StateSnapshotModel(
        session_id=session.session_id,
        scenario=scenario.name,
        users=list(scenario.users),
        step=core.step,
        completed=not core.candidates and core.question is None,
        candidates=[CandidateModel(object_id=c, ig_value=estimates.get(c))
                    for c in sorted(core.candidates)],
        question=core.question,
        objects=objects,
        history=[StepMetricsModel.from_metrics(m) for m in core.history],
    )


def ask_next(session: _Session) -> QuestionModel:
    with session.lock:
        core = session.core
        if core.question is not None:
            raise ApiError(409, "question_in_flight", "answer the current question first")
        if not core.candidates:
            raise ApiError(409, "session_complete", "no candidates remain")
        try:
            target_id, estimates = select_next(
                core.particle_state, list(core.candidates), Strategy("ig-max"),
                ig_mode=session.config.ig_mode, n_samples=session.config.n_pseudo,
                seed=_seed(session.config.seed, 1000 + core.step))
        except NoCandidatesError:  # pragma: no cover - guarded above
            raise ApiError(409, "session_complete", "no candidates remain")
        rows = object_rows(session.scenario, core.answers)
        others = [rows[i] for i in sorted(rows) if i != target_id]
        record = generate_question(rows[target_id], others, session.backend)
        question = QuestionModel(target_object_id=target_id,
                                 question_text=record.question_text)
        session.core = replace(
            core, question=question,
            last_estimates=tuple((e.object_id, float(e.value)) for e in estimates))
        return question


def submit_answer(session: _Session, text: str, responding_user: str,
                  store: SessionStore) -> StepMetricsModel:
    with session.lock:
        core = session.core
        if core.question is None:
            raise ApiError(409, "no_question", "ask a question first")
        target_id = core.question.target_object_id
        from .dialogue import QuestionRecord
        record = QuestionRecord(target_id, core.question.question_text)
        try:
            label = interpret_answer(record, text, responding_user,
                                     session.scenario.users, session.backend)
        except InterpretationError as exc:
            # question stays in flight so the user can rephrase
            raise ApiError(422, "interpretation_error", str(exc), detail=exc.raw_text)
        answers = {**core.answers, target_id: label}
        step = core.step + 1
        state = _run_update(session.scenario, session.config, answers, step)
        estimates = dict(core.last_estimates)
        row = _metrics_row(session.scenario, state, step, selected=target_id,
                           ig=estimates.get(target_id),
                           question=core.question.question_text, answer=label.text())
        session.core = replace(
            core,
            step=step,
            answers=answers,
            candidates=tuple(c for c in core.candidates if c != target_id),
            particle_state=state,
            history=core.history + (row,),
            question=None,
        )
        store.persist(session)
        return StepMetricsModel.from_metrics(row)


# -- application ---------------------------------------------------------------


def create_app(backend_kind: str = "mock", snapshot_dir: str | Path | None = None,
               llm_endpoint: str | None = None) -> FastAPI:
    app = FastAPI(title="actowl session service")
    store = SessionStore(snapshot_dir=snapshot_dir)
    app.state.store = store
    app.state.backend_kind = backend_kind
    app.state.llm_endpoint = llm_endpoint

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={
            "code": exc.code, "message": exc.message, "detail": exc.detail,
        })

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        # keep the error envelope uniform for malformed request bodies too
        return JSONResponse(status_code=422, content={
            "code": "validation_error", "message": "invalid request body",
            "detail": str(exc.errors()),
        })

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions", response_model=SessionHandleModel, status_code=201)
    def create_session(body: SessionCreateRequest):
        try:
            scenario = load_scenario(body.scenario)
        except FileNotFoundError:
            raise ApiError(404, "scenario_not_found", f"unknown scenario {body.scenario!r}")
        backend = _make_backend(app, scenario)
        core = create_session_state(scenario, body.config, backend)
        session = _Session(
            session_id=uuid.uuid4().hex,
            scenario=scenario,
            config=body.config,
            backend=backend,
            created_at=datetime.now(timezone.utc),
            core=core,
        )
        store.add(session)
        store.persist(session)
        return SessionHandleModel(
            session_id=session.session_id,
            scenario=scenario.name,
            created_at=session.created_at,
            step=core.step,
            candidates=sorted(core.candidates),
        )

    @app.get("/sessions/{session_id}/state", response_model=StateSnapshotModel)
    def get_state(session_id: str):
        return build_snapshot(store.get(session_id))

    @app.post("/sessions/{session_id}/ask", response_model=QuestionModel)
    def ask(session_id: str):
        return ask_next(store.get(session_id))

    @app.post("/sessions/{session_id}/answer", response_model=StepMetricsModel)
    def answer(session_id: str, body: AnswerRequest):
        return submit_answer(store.get(session_id), body.text, body.responding_user, store)

    @app.get("/sessions/{session_id}/metrics.csv")
    def metrics_csv(session_id: str):
        session = store.get(session_id)
        return Response(content=metrics_csv_string(list(session.core.history)),
                        media_type="text/csv; charset=utf-8")

    return app


def _make_backend(app: FastAPI, scenario: Scenario):
    if app.state.backend_kind == "llm":
        from .dialogue import LlmHttpBackend
        if not app.state.llm_endpoint:
            raise ApiError(400, "backend_misconfigured", "llm backend needs an endpoint")
        return LlmHttpBackend(app.state.llm_endpoint)
    return mock_backend_for(scenario)


app = create_app()
