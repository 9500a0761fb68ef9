from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from actowl.model import (
    AnswerLabel,
    AttributeVector,
    Hyperparameters,
    Observation,
    SufficientStats,
)

FIXTURES = Path(__file__).parent / "fixtures"


def one_hot(j: int, dim: int) -> AttributeVector:
    values = np.zeros(dim, dtype=np.int64)
    values[j] = 1
    return AttributeVector(values)


def make_observation(object_id=0, position=(0.0, 0.0), hot=0, dim=4,
                     answer=None, component=None) -> Observation:
    return Observation(
        object_id=object_id,
        position=np.asarray(position, dtype=float),
        attributes=one_hot(hot, dim),
        answer=answer or AnswerLabel.unknown(),
        fixed_position_component=component,
    )


def random_stats(rng: np.random.Generator, h: Hyperparameters,
                 attr_dim: int, vocab: int) -> SufficientStats:
    """Internally consistent stats from a random assignment history."""
    stats = SufficientStats.empty(h, attr_dim, vocab)
    users = [f"u{i}" for i in range(vocab - 1)]
    for i in range(int(rng.integers(0, 12))):
        answer = AnswerLabel.unknown()
        draw = rng.integers(3)
        if draw == 1:
            answer = AnswerLabel.shared()
        elif draw == 2:
            answer = AnswerLabel.owner(users[int(rng.integers(len(users)))])
        obs = Observation(
            object_id=i,
            position=rng.normal(size=2) * 2.0,
            attributes=one_hot(int(rng.integers(attr_dim)), attr_dim),
            answer=answer,
        )
        stats.add(obs, users, int(rng.integers(h.n_concepts)), int(rng.integers(h.n_components)))
    return stats


@pytest.fixture
def small_h() -> Hyperparameters:
    return Hyperparameters(n_concepts=2, n_components=2)


@pytest.fixture
def default_h() -> Hyperparameters:
    return Hyperparameters()
