"""Information-gain query selection.

For a candidate object, each particle induces a predictive distribution
over the user's answer; the spread of those predictives (weighted by the
particle weights) is the expected information gain of asking. Selection
strategies: maximize IG, minimize IG, or ignore it and pick at random.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inference import ParticleState, derive_rng
from .model import AnswerLabel, Observation, StatsBatch, batch_answer_predictive_mixture

_TAG_PSEUDO = 3
_TAG_RANDOM = 4

IG_SAMPLED = "sampled"
IG_EXACT = "exact"

STRATEGY_IG_MAX = "ig-max"
STRATEGY_IG_MIN = "ig-min"
STRATEGY_RANDOM = "random"


class NoCandidatesError(Exception):
    """Selection requested with an empty candidate set (session complete)."""


@dataclass(frozen=True)
class Strategy:
    """Question-selection policy; ``seed`` drives only the random policy."""

    kind: str
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in (STRATEGY_IG_MAX, STRATEGY_IG_MIN, STRATEGY_RANDOM):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if (self.kind == STRATEGY_RANDOM) != (self.seed is not None):
            raise ValueError("seed must be present exactly for the random strategy")


@dataclass
class IGEstimate:
    object_id: int
    value: float
    mode: str
    n_samples: int | None = None
    per_particle_predictives: np.ndarray | None = None


def predictive_answer_distribution(
    particle,
    h,
    users: Sequence[str],
    obs: Observation,
    known_answers=None,
) -> np.ndarray:
    """Predictive over the answer vocabulary for an unanswered candidate.

    Mixture over concepts of the concept answer predictive, mixed by the
    candidate's assignment posterior given its position and attributes.
    """
    if known_answers and obs.object_id in known_answers:
        raise ValueError(f"candidate {obs.object_id} already answered")
    if not obs.answer.is_unknown:
        raise ValueError("candidate observation must have an unknown answer")
    batch = StatsBatch.from_stats([particle.stats])
    return batch_answer_predictive_mixture(batch, h, obs, users)[0]


def sample_pseudo_answers(
    particle,
    h,
    users: Sequence[str],
    obs: Observation,
    n_samples: int,
    seed: int,
) -> list[AnswerLabel]:
    """I.i.d. draws from the particle's predictive answer distribution."""
    if n_samples < 1:
        raise ValueError("need at least one pseudo-answer")
    probs = predictive_answer_distribution(particle, h, users, obs)
    rng = derive_rng(seed, _TAG_PSEUDO, obs.object_id)
    indices = _categorical_rows(probs[None, :].repeat(n_samples, axis=0),
                                rng.random(n_samples))
    return [_label_for_index(int(v), users) for v in indices]


def _label_for_index(v: int, users: Sequence[str]) -> AnswerLabel:
    return AnswerLabel.shared() if v == len(users) else AnswerLabel.owner(users[v])


def _categorical_rows(probs: np.ndarray, draws: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(probs, axis=-1)
    return (cumulative >= (draws * cumulative[..., -1])[..., None]).argmax(axis=-1)


def ig_from_predictives(
    weights: np.ndarray,
    predictives: np.ndarray,
    mode: str = IG_EXACT,
    n_samples: int | None = None,
    seed: int = 0,
    stream_id: int = 0,
) -> float:
    """Information gain of one question from per-particle answer predictives.

    ``predictives`` is (R, V). Exact mode computes the mutual information
    between the particle mixture and the answer directly; sampled mode
    replaces each particle's inner expectation with the mean over
    ``n_samples`` pseudo-answers drawn from that particle's predictive.
    """
    weights = np.asarray(weights, dtype=float)
    predictives = np.asarray(predictives, dtype=float)
    if np.all(predictives == predictives[0]):
        return 0.0  # no disagreement between particles, exactly zero gain
    mixture = weights @ predictives                                    # (V,)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(predictives) - np.log(mixture)[None, :]
        if mode == IG_EXACT:
            inner = np.where(predictives > 0, predictives * log_ratio, 0.0).sum(axis=1)
            return float(np.where(weights > 0, weights * inner, 0.0).sum())
    if mode != IG_SAMPLED:
        raise ValueError(f"unknown IG mode {mode!r}")
    if not n_samples or n_samples < 1:
        raise ValueError("sampled mode needs n_samples >= 1")
    R = predictives.shape[0]
    draws = derive_rng(seed, _TAG_PSEUDO, stream_id).random((R, n_samples))
    sampled = _categorical_rows(predictives[:, None, :].repeat(n_samples, axis=1), draws)
    picked = np.take_along_axis(log_ratio, sampled, axis=1)           # (R, J)
    assert np.all(np.isfinite(picked)), "sampled a zero-probability answer"
    return float(weights @ picked.mean(axis=1))


def information_gain(
    state: ParticleState,
    obs: Observation,
    mode: str = IG_SAMPLED,
    n_samples: int = 10,
    seed: int = 0,
) -> IGEstimate:
    """Estimate the IG of asking about ``obs`` under the current ensemble."""
    if not obs.answer.is_unknown:
        raise ValueError("IG is defined for unanswered candidates only")
    batch = StatsBatch.from_stats([p.stats for p in state.particles])
    predictives = batch_answer_predictive_mixture(batch, state.h, obs, state.users)
    value = ig_from_predictives(
        state.normalized_weights, predictives, mode=mode,
        n_samples=n_samples if mode == IG_SAMPLED else None,
        seed=seed, stream_id=obs.object_id,
    )
    return IGEstimate(
        object_id=obs.object_id,
        value=value,
        mode=mode,
        n_samples=n_samples if mode == IG_SAMPLED else None,
        per_particle_predictives=predictives,
    )


def select_next(
    state: ParticleState,
    candidates: Sequence[int],
    strategy: Strategy,
    ig_mode: str = IG_SAMPLED,
    n_samples: int = 10,
    seed: int = 0,
) -> tuple[int, list[IGEstimate]]:
    """Pick the next object to ask about; returns the IG table for logging.

    Ties break toward the lowest object id. The random strategy draws
    uniformly from the candidates and computes no estimates.
    """
    ordered = sorted(candidates)
    if not ordered:
        raise NoCandidatesError("no remaining candidates")

    if strategy.kind == STRATEGY_RANDOM:
        rng = derive_rng(strategy.seed, _TAG_RANDOM, seed)
        return ordered[int(rng.integers(len(ordered)))], []

    estimates = [
        information_gain(state, state.observation_by_id(object_id),
                         mode=ig_mode, n_samples=n_samples, seed=seed)
        for object_id in ordered
    ]
    values = [e.value for e in estimates]
    best = max(values) if strategy.kind == STRATEGY_IG_MAX else min(values)
    chosen = next(e.object_id for e, v in zip(estimates, values) if v == best)
    return chosen, estimates
