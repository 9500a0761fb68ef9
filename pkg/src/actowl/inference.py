"""Online posterior inference with a Rao-Blackwellized particle filter.

Each particle carries discrete (concept, component) assignments plus the
collapsed sufficient statistics; continuous parameters never appear.
``update_model`` re-runs the full sequential pass with the current answer
overlay, sampling assignments from the locally optimal proposal and
accumulating the proposal normalizer as the weight increment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .model import (
    AnswerLabel,
    Hyperparameters,
    Observation,
    StatsBatch,
    SufficientStats,
    batch_assignment_log_table,
)

# Tags for deriving independent, reproducible RNG streams.
_TAG_ASSIGN = 1
_TAG_RESAMPLE = 2


def derive_rng(*parts: int) -> np.random.Generator:
    """Deterministic generator keyed by a tuple of integers."""
    entropy = [int(p) % (1 << 63) for p in parts]  # SeedSequence wants non-negatives
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


@dataclass
class Particle:
    """One hypothesis: per-object assignments, their folded stats, a log weight."""

    assignments: list[tuple[int, int]]
    stats: SufficientStats
    log_weight: float

    def concept_vector(self) -> np.ndarray:
        return np.array([c for c, _ in self.assignments], dtype=np.int64)


@dataclass
class ParticleState:
    """The full ensemble after a sequential pass."""

    particles: list[Particle]
    normalized_weights: np.ndarray
    rng_seed: int
    h: Hyperparameters
    users: list[str]
    processed: list[Observation]

    @property
    def n_particles(self) -> int:
        return len(self.particles)

    def observation_by_id(self, object_id: int) -> Observation:
        for obs in self.processed:
            if obs.object_id == object_id:
                return obs
        raise KeyError(f"no observation with id {object_id}")


def effective_sample_size(weights: np.ndarray) -> float:
    """ESS = 1 / sum(w^2) of a normalized weight vector."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_ancestor_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Systematic resampling: one stratified uniform per output slot."""
    w = np.asarray(weights, dtype=float)
    R = w.shape[0]
    positions = (rng.random() + np.arange(R)) / R
    cumulative = np.cumsum(w)
    idx = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(idx, R - 1)


def _normalized(log_weights: np.ndarray) -> np.ndarray:
    return np.exp(log_weights - logsumexp(log_weights))


def update_model(
    answers: Mapping[int, AnswerLabel],
    observations: Sequence[Observation],
    h: Hyperparameters,
    users: Sequence[str],
    n_particles: int,
    seed: int,
    ess_threshold: float = 0.5,
) -> ParticleState:
    """Run the full sequential pass with an answer overlay.

    For every observation (in scenario order) and particle, an assignment
    is drawn from the collapsed posterior table; the table's normalizer is
    the particle's marginal-evidence increment. Systematic resampling
    triggers whenever ESS drops below ``ess_threshold * R``. Deterministic
    for a fixed seed.
    """
    if not observations:
        raise ValueError("empty observation list")
    if n_particles < 1:
        raise ValueError("need at least one particle")
    known_ids = {obs.object_id for obs in observations}
    for object_id, answer in answers.items():
        if object_id not in known_ids:
            raise ValueError(f"answer for unknown object {object_id}")
        if answer.kind == AnswerLabel.OWNER and answer.owner_name not in users:
            raise ValueError(f"answer references unknown user {answer.owner_name!r}")

    overlaid = [
        obs.with_answer(answers[obs.object_id]) if obs.object_id in answers else obs
        for obs in observations
    ]
    users = list(users)
    attr_dim = overlaid[0].attributes.dim
    vocab = len(users) + 1
    R = n_particles

    batch = StatsBatch.empty(h, attr_dim, vocab, R)
    log_weights = np.zeros(R)
    n_obs = len(overlaid)
    assignments = np.empty((R, n_obs, 2), dtype=np.int64)
    K = h.n_components

    for n, obs in enumerate(overlaid):
        table = batch_assignment_log_table(batch, h, obs, users, n_assigned=n)
        flat = table.reshape(R, -1)
        marginal = logsumexp(flat, axis=1)
        log_weights = log_weights + marginal

        probs = np.exp(flat - marginal[:, None])
        cumulative = np.cumsum(probs, axis=1)
        draws = derive_rng(seed, _TAG_ASSIGN, n).random(R)
        idx = (cumulative >= (draws * cumulative[:, -1])[:, None]).argmax(axis=1)
        concepts, components = np.divmod(idx, K)
        assignments[:, n, 0] = concepts
        assignments[:, n, 1] = components
        batch.add_assignments(obs, users, concepts, components)

        weights = _normalized(log_weights)
        if effective_sample_size(weights) < ess_threshold * R:
            ancestors = systematic_ancestor_indices(weights, derive_rng(seed, _TAG_RESAMPLE, n))
            batch = batch.select(ancestors)
            assignments = assignments[ancestors]
            log_weights = np.zeros(R)

    weights = _normalized(log_weights)
    particles = [
        Particle(
            assignments=[(int(c), int(k)) for c, k in assignments[r]],
            stats=batch.row(r),
            log_weight=float(log_weights[r]),
        )
        for r in range(R)
    ]
    return ParticleState(
        particles=particles,
        normalized_weights=weights,
        rng_seed=seed,
        h=h,
        users=users,
        processed=overlaid,
    )


def resample(state: ParticleState, seed: int) -> ParticleState:
    """Systematic resampling of a whole state; output weights are uniform."""
    weights = state.normalized_weights
    if not np.all(np.isfinite(weights)) or weights.sum() <= 0:
        raise ValueError("degenerate particle weights")
    ancestors = systematic_ancestor_indices(weights, derive_rng(seed, _TAG_RESAMPLE))
    R = state.n_particles
    particles = [
        Particle(
            assignments=list(state.particles[a].assignments),
            stats=state.particles[a].stats.copy(),
            log_weight=0.0,
        )
        for a in ancestors
    ]
    return ParticleState(
        particles=particles,
        normalized_weights=np.full(R, 1.0 / R),
        rng_seed=state.rng_seed,
        h=state.h,
        users=state.users,
        processed=state.processed,
    )


def map_assignments(state: ParticleState) -> np.ndarray:
    """Concept vector of the highest-weight particle (ties: lowest index)."""
    if not state.particles:
        raise ValueError("empty particle state")
    best = int(np.argmax(state.normalized_weights))
    return state.particles[best].concept_vector()


def rebuild_stats(particle: Particle, observations: Sequence[Observation],
                  h: Hyperparameters, users: Sequence[str]) -> SufficientStats:
    """Fresh fold of a particle's assignment list, for integrity checks."""
    if len(particle.assignments) != len(observations):
        raise ValueError("assignment/observation length mismatch")
    attr_dim = observations[0].attributes.dim
    stats = SufficientStats.empty(h, attr_dim, len(users) + 1)
    for obs, (concept, component) in zip(observations, particle.assignments):
        stats.add(obs, users, concept, component)
    return stats
