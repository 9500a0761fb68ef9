"""Generative model of object ownership.

Objects carry three observation channels: a 2-D position, a multi-hot
attribute count vector, and (once the user has been asked) an ownership
answer. Each object belongs to a latent ownership concept; each concept
mixes over a shared pool of Gaussian position components. All continuous
parameters are conjugate and integrated out, so model state reduces to
count-style sufficient statistics and every predictive density has a
closed form:

* position: Normal-inverse-Wishart posterior predictive (Student-t),
* attributes: Dirichlet-multinomial,
* answers: symmetric-Dirichlet categorical.

Assignment scoring and particle weighting both run in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

POSITION_DIM = 2

# Scale-matrix jitter added when a Cholesky factorization fails.
_CHOLESKY_JITTER = 1e-9


class NumericalError(RuntimeError):
    """Raised when accumulated statistics become numerically degenerate."""


@dataclass(frozen=True)
class Hyperparameters:
    """Concentrations, position priors, truncations and modality weights.

    Defaults follow the reference experiment configuration; ``w_*`` are
    exponents applied to the per-channel likelihoods (1.0 = neutral).
    """

    alpha: float = 1.0
    beta: float = 0.01
    gamma: float = 5.0
    lambda_: float = 1.0
    m0: np.ndarray = field(default_factory=lambda: np.zeros(POSITION_DIM))
    kappa0: float = 1.0
    v0: np.ndarray = field(default_factory=lambda: np.diag([0.1, 0.1]))
    nu0: float = 5.0
    n_concepts: int = 4
    n_components: int = 4
    w_answer: float = 1.0
    w_attribute: float = 1.0
    w_position: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "m0", np.asarray(self.m0, dtype=float))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float))
        for name in ("alpha", "beta", "gamma", "lambda_", "kappa0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.nu0 > POSITION_DIM + 1:
            raise ValueError("nu0 must exceed dim + 1 for a finite prior predictive")
        if self.m0.shape != (POSITION_DIM,):
            raise ValueError("m0 must be a 2-vector")
        if self.v0.shape != (POSITION_DIM, POSITION_DIM):
            raise ValueError("v0 must be 2x2")
        if not np.allclose(self.v0, self.v0.T):
            raise ValueError("v0 must be symmetric")
        if np.linalg.eigvalsh(self.v0)[0] <= 0:
            raise ValueError("v0 must be positive definite")
        if self.n_concepts < 1 or self.n_components < 1:
            raise ValueError("n_concepts and n_components must be >= 1")
        for name in ("w_answer", "w_attribute", "w_position"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class AttributeVector:
    """Non-negative integer count vector over attribute dimensions.

    Scenario objects are multi-hot (one 1 per class/color/size/shape
    block) but the math accepts arbitrary counts.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.ndim != 1:
            raise ValueError("attribute vector must be 1-D")
        if np.any(values < 0):
            raise ValueError("attribute counts must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class AnswerLabel:
    """User answer: unknown (missing), shared, or a named owner."""

    kind: str
    owner_name: str | None = None

    UNKNOWN = "unknown"
    SHARED = "shared"
    OWNER = "owner"

    def __post_init__(self):
        if self.kind not in (self.UNKNOWN, self.SHARED, self.OWNER):
            raise ValueError(f"bad answer kind: {self.kind!r}")
        if (self.kind == self.OWNER) != (self.owner_name is not None):
            raise ValueError("owner_name is required exactly for owner answers")

    @classmethod
    def unknown(cls) -> "AnswerLabel":
        return cls(cls.UNKNOWN)

    @classmethod
    def shared(cls) -> "AnswerLabel":
        return cls(cls.SHARED)

    @classmethod
    def owner(cls, name: str) -> "AnswerLabel":
        return cls(cls.OWNER, name)

    @property
    def is_unknown(self) -> bool:
        return self.kind == self.UNKNOWN

    def vocab_index(self, users: Sequence[str]) -> int:
        """Index in the answer vocabulary ``users + [shared]``."""
        if self.kind == self.UNKNOWN:
            raise ValueError("unknown answers have no vocabulary index")
        if self.kind == self.SHARED:
            return len(users)
        try:
            return list(users).index(self.owner_name)
        except ValueError:
            raise ValueError(f"answer references unknown user {self.owner_name!r}") from None

    def text(self) -> str:
        if self.kind == self.OWNER:
            return str(self.owner_name)
        return "Shared" if self.kind == self.SHARED else "Unknown"


def answer_vocab_size(users: Sequence[str]) -> int:
    """Owners plus the shared label; unknown is missing data, not a word."""
    return len(users) + 1


@dataclass(frozen=True)
class Observation:
    """One object's evidence triple plus an optional clamped component."""

    object_id: int
    position: np.ndarray
    attributes: AttributeVector
    answer: AnswerLabel = field(default_factory=AnswerLabel.unknown)
    fixed_position_component: int | None = None

    def __post_init__(self):
        position = np.asarray(self.position, dtype=float)
        if position.shape != (POSITION_DIM,):
            raise ValueError("position must be a 2-vector")
        if not np.all(np.isfinite(position)):
            raise ValueError("position must be finite")
        object.__setattr__(self, "position", position)

    def with_answer(self, answer: AnswerLabel) -> "Observation":
        return Observation(
            object_id=self.object_id,
            position=self.position,
            attributes=self.attributes,
            answer=answer,
            fixed_position_component=self.fixed_position_component,
        )


# ---------------------------------------------------------------------------
# Sufficient statistics
# ---------------------------------------------------------------------------


@dataclass
class SufficientStats:
    """Counts and moments of the collapsed model for one particle.

    ``position_scatter`` holds the uncentered sum of outer products so
    add/remove are exact inverses.
    """

    concept_counts: np.ndarray          # (L,) int64
    concept_component_counts: np.ndarray  # (L, K) int64
    attribute_counts: np.ndarray        # (L, D) int64
    answer_counts: np.ndarray           # (L, V) int64
    position_counts: np.ndarray         # (K,) int64
    position_sum: np.ndarray            # (K, 2) float64
    position_scatter: np.ndarray        # (K, 2, 2) float64

    @classmethod
    def empty(cls, h: Hyperparameters, attr_dim: int, vocab_size: int) -> "SufficientStats":
        L, K = h.n_concepts, h.n_components
        return cls(
            concept_counts=np.zeros(L, dtype=np.int64),
            concept_component_counts=np.zeros((L, K), dtype=np.int64),
            attribute_counts=np.zeros((L, attr_dim), dtype=np.int64),
            answer_counts=np.zeros((L, vocab_size), dtype=np.int64),
            position_counts=np.zeros(K, dtype=np.int64),
            position_sum=np.zeros((K, POSITION_DIM)),
            position_scatter=np.zeros((K, POSITION_DIM, POSITION_DIM)),
        )

    @property
    def n_assigned(self) -> int:
        return int(self.concept_counts.sum())

    def copy(self) -> "SufficientStats":
        return SufficientStats(
            self.concept_counts.copy(),
            self.concept_component_counts.copy(),
            self.attribute_counts.copy(),
            self.answer_counts.copy(),
            self.position_counts.copy(),
            self.position_sum.copy(),
            self.position_scatter.copy(),
        )

    def _apply(self, obs: Observation, users: Sequence[str], concept: int, component: int, sign: int):
        self.concept_counts[concept] += sign
        self.concept_component_counts[concept, component] += sign
        self.attribute_counts[concept] += sign * obs.attributes.values
        if not obs.answer.is_unknown:
            self.answer_counts[concept, obs.answer.vocab_index(users)] += sign
        x = obs.position
        self.position_counts[component] += sign
        self.position_sum[component] += sign * x
        self.position_scatter[component] += sign * np.outer(x, x)

    def add(self, obs: Observation, users: Sequence[str], concept: int, component: int):
        self._apply(obs, users, concept, component, +1)

    def remove(self, obs: Observation, users: Sequence[str], concept: int, component: int):
        self._apply(obs, users, concept, component, -1)
        if np.any(self.concept_counts < 0) or np.any(self.position_counts < 0):
            raise ValueError("removed an observation that was never added")


class StatsBatch:
    """Stacked sufficient statistics for R particles (leading axis R).

    The particle filter keeps all particles' counts in shared arrays so
    per-observation scoring vectorizes across the ensemble; a single
    ``SufficientStats`` is the R=1 special case.
    """

    __slots__ = (
        "concept_counts", "concept_component_counts", "attribute_counts",
        "answer_counts", "position_counts", "position_sum", "position_scatter",
    )

    def __init__(self, concept_counts, concept_component_counts, attribute_counts,
                 answer_counts, position_counts, position_sum, position_scatter):
        self.concept_counts = concept_counts
        self.concept_component_counts = concept_component_counts
        self.attribute_counts = attribute_counts
        self.answer_counts = answer_counts
        self.position_counts = position_counts
        self.position_sum = position_sum
        self.position_scatter = position_scatter

    @classmethod
    def empty(cls, h: Hyperparameters, attr_dim: int, vocab_size: int, n_particles: int) -> "StatsBatch":
        L, K = h.n_concepts, h.n_components
        R = n_particles
        return cls(
            np.zeros((R, L), dtype=np.int64),
            np.zeros((R, L, K), dtype=np.int64),
            np.zeros((R, L, attr_dim), dtype=np.int64),
            np.zeros((R, L, vocab_size), dtype=np.int64),
            np.zeros((R, K), dtype=np.int64),
            np.zeros((R, K, POSITION_DIM)),
            np.zeros((R, K, POSITION_DIM, POSITION_DIM)),
        )

    @classmethod
    def from_stats(cls, stats: Sequence[SufficientStats]) -> "StatsBatch":
        return cls(
            np.stack([s.concept_counts for s in stats]),
            np.stack([s.concept_component_counts for s in stats]),
            np.stack([s.attribute_counts for s in stats]),
            np.stack([s.answer_counts for s in stats]),
            np.stack([s.position_counts for s in stats]),
            np.stack([s.position_sum for s in stats]),
            np.stack([s.position_scatter for s in stats]),
        )

    @property
    def n_particles(self) -> int:
        return self.concept_counts.shape[0]

    def row(self, r: int) -> SufficientStats:
        return SufficientStats(
            self.concept_counts[r].copy(),
            self.concept_component_counts[r].copy(),
            self.attribute_counts[r].copy(),
            self.answer_counts[r].copy(),
            self.position_counts[r].copy(),
            self.position_sum[r].copy(),
            self.position_scatter[r].copy(),
        )

    def add_assignments(self, obs: Observation, users: Sequence[str],
                        concepts: np.ndarray, components: np.ndarray):
        """Fold one observation into every particle at its sampled pair."""
        R = self.n_particles
        rows = np.arange(R)
        np.add.at(self.concept_counts, (rows, concepts), 1)
        np.add.at(self.concept_component_counts, (rows, concepts, components), 1)
        self.attribute_counts[rows, concepts] += obs.attributes.values
        if not obs.answer.is_unknown:
            v = obs.answer.vocab_index(users)
            np.add.at(self.answer_counts, (rows, concepts, v), 1)
        x = obs.position
        np.add.at(self.position_counts, (rows, components), 1)
        self.position_sum[rows, components] += x
        self.position_scatter[rows, components] += np.outer(x, x)

    def select(self, indices: np.ndarray) -> "StatsBatch":
        return StatsBatch(
            self.concept_counts[indices].copy(),
            self.concept_component_counts[indices].copy(),
            self.attribute_counts[indices].copy(),
            self.answer_counts[indices].copy(),
            self.position_counts[indices].copy(),
            self.position_sum[indices].copy(),
            self.position_scatter[indices].copy(),
        )


# ---------------------------------------------------------------------------
# Posterior predictive densities (batched kernels + per-particle wrappers)
# ---------------------------------------------------------------------------


def _batch_position_logdensity(batch: StatsBatch, h: Hyperparameters, x: np.ndarray) -> np.ndarray:
    """Log Student-t posterior predictive of ``x`` per (particle, component).

    Returns an (R, K) array. The NIW posterior for component k folds in
    the component's accumulated points; zero-count components reduce to
    the prior predictive.
    """
    n = batch.position_counts.astype(float)                      # (R, K)
    kappa_n = h.kappa0 + n
    nu_n = h.nu0 + n
    safe_n = np.where(n > 0, n, 1.0)
    mean = batch.position_sum / safe_n[..., None]                # (R, K, 2)
    mean = np.where(n[..., None] > 0, mean, 0.0)
    m_n = (h.kappa0 * h.m0 + batch.position_sum) / kappa_n[..., None]
    # centered scatter: sum(x x^T) - n * mean mean^T
    centered = batch.position_scatter - n[..., None, None] * (mean[..., :, None] * mean[..., None, :])
    dev = mean - h.m0
    shrink = (h.kappa0 * n / kappa_n)[..., None, None]
    v_n = h.v0 + centered + shrink * (dev[..., :, None] * dev[..., None, :])

    dof = nu_n - POSITION_DIM + 1
    scale = v_n * ((kappa_n + 1) / (kappa_n * dof))[..., None, None]
    delta = x - m_n                                              # (R, K, 2)
    return _student_t_logpdf_2d(delta, dof, scale)


def _student_t_logpdf_2d(delta: np.ndarray, dof: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Batched bivariate Student-t log density via 2x2 Cholesky."""
    quad, logdet = _cholesky_quad_2d(delta, scale)
    if not np.all(np.isfinite(logdet)):
        scale = scale + _CHOLESKY_JITTER * np.eye(POSITION_DIM)
        quad, logdet = _cholesky_quad_2d(delta, scale)
        if not np.all(np.isfinite(logdet)):
            raise NumericalError("position scale matrix is not positive definite")
    half = (dof + POSITION_DIM) / 2.0
    return (
        gammaln(half) - gammaln(dof / 2.0)
        - (POSITION_DIM / 2.0) * np.log(dof * np.pi)
        - 0.5 * logdet
        - half * np.log1p(quad / dof)
    )

def _cholesky_quad_2d(delta: np.ndarray, scale: np.ndarray):
    """Quadratic form delta^T S^-1 delta and log|S| for stacked 2x2 S."""
    with np.errstate(invalid="ignore", divide="ignore"):
        l00 = np.sqrt(scale[..., 0, 0])
        l10 = scale[..., 1, 0] / l00
        l11 = np.sqrt(scale[..., 1, 1] - l10 * l10)
        y0 = delta[..., 0] / l00
        y1 = (delta[..., 1] - l10 * y0) / l11
        quad = y0 * y0 + y1 * y1
        logdet = 2.0 * (np.log(l00) + np.log(l11))
    return quad, logdet


def _batch_attribute_loglik(batch: StatsBatch, h: Hyperparameters, o: AttributeVector) -> np.ndarray:
    """Dirichlet-multinomial log likelihood of count vector ``o`` per (particle, concept).

    Includes the multinomial coefficient (constant across concepts).
    Returns an (R, L) array.
    """
    counts = o.values
    total = int(counts.sum())
    D = o.dim
    if batch.attribute_counts.shape[-1] != D:
        raise ValueError("attribute dimension mismatch")
    base = batch.attribute_counts.sum(axis=-1) + D * h.alpha      # (R, L)
    out = gammaln(base) - gammaln(base + total)
    nz = np.nonzero(counts)[0]
    if nz.size:
        prior = batch.attribute_counts[..., nz] + h.alpha          # (R, L, nnz)
        out = out + (gammaln(prior + counts[nz]) - gammaln(prior)).sum(axis=-1)
    # multinomial coefficient: total! / prod(o_j!)
    coeff = gammaln(total + 1) - gammaln(counts[nz] + 1).sum() if nz.size else 0.0
    return out + coeff


def _batch_answer_predictive(batch: StatsBatch, h: Hyperparameters) -> np.ndarray:
    """Posterior predictive over the answer vocabulary per (particle, concept)."""
    counts = batch.answer_counts.astype(float)
    V = counts.shape[-1]
    return (counts + h.beta) / (counts.sum(axis=-1, keepdims=True) + V * h.beta)


def batch_assignment_log_table(batch: StatsBatch, h: Hyperparameters, obs: Observation,
                               users: Sequence[str], n_assigned: int) -> np.ndarray:
    """Unnormalized log joint p(concept, component, data | past) per particle.

    Returns an (R, L, K) table whose per-particle logsumexp is the marginal
    evidence of ``obs`` (the particle weight increment); renormalizing the
    table gives the assignment sampling distribution. A clamped position
    component zeroes out (-inf) every other column. Modality weights act
    as exponents on their likelihood factor; a zero weight drops the factor.
    """
    L, K = h.n_concepts, h.n_components
    gam, lam = h.gamma, h.lambda_
    cc = batch.concept_counts.astype(float)                       # (R, L)
    table = np.log(cc + gam)[..., None] - math.log(n_assigned + L * gam)
    table = table + np.log(batch.concept_component_counts + lam / K) - np.log(cc + lam)[..., None]

    if h.w_position != 0.0:
        pos = _batch_position_logdensity(batch, h, obs.position)  # (R, K)
        table = table + h.w_position * pos[:, None, :]
    if h.w_attribute != 0.0:
        attr = _batch_attribute_loglik(batch, h, obs.attributes)  # (R, L)
        table = table + h.w_attribute * attr[..., None]
    if h.w_answer != 0.0 and not obs.answer.is_unknown:
        v = obs.answer.vocab_index(users)
        ans = _batch_answer_predictive(batch, h)[..., v]          # (R, L)
        table = table + h.w_answer * np.log(ans)[..., None]

    k_fix = obs.fixed_position_component
    if k_fix is not None:
        if not 0 <= k_fix < K:
            raise ValueError(f"fixed position component {k_fix} out of range")
        mask = np.full(K, -np.inf)
        mask[k_fix] = 0.0
        table = table + mask
    return table


def batch_answer_predictive_mixture(batch: StatsBatch, h: Hyperparameters, obs: Observation,
                                    users: Sequence[str]) -> np.ndarray:
    """Predictive answer distribution for a candidate object per particle.

    Mixes each concept's answer predictive by the candidate's assignment
    posterior (position + attributes only), returning an (R, V) simplex.
    """
    query = obs if obs.answer.is_unknown else obs.with_answer(AnswerLabel.unknown())
    n_assigned = int(batch.concept_counts[0].sum())
    table = batch_assignment_log_table(batch, h, query, users, n_assigned)
    flat = table.reshape(batch.n_particles, -1)
    log_post = flat - logsumexp(flat, axis=1, keepdims=True)
    post_concept = np.exp(log_post).reshape(table.shape).sum(axis=2)   # (R, L)
    ans = _batch_answer_predictive(batch, h)                           # (R, L, V)
    return np.einsum("rl,rlv->rv", post_concept, ans)


# -- per-particle wrappers ---------------------------------------------------


def _single(stats: SufficientStats) -> StatsBatch:
    return StatsBatch.from_stats([stats])


def position_predictive_logdensity(stats: SufficientStats, h: Hyperparameters,
                                   k: int, x: np.ndarray) -> float:
    """Log posterior predictive density of position ``x`` under component ``k``."""
    if not 0 <= k < h.n_components:
        raise ValueError(f"component {k} out of range")
    x = np.asarray(x, dtype=float)
    if x.shape != (POSITION_DIM,) or not np.all(np.isfinite(x)):
        raise ValueError("x must be a finite 2-vector")
    return float(_batch_position_logdensity(_single(stats), h, x)[0, k])


def attribute_predictive_loglik(stats: SufficientStats, h: Hyperparameters,
                                l: int, o: AttributeVector) -> float:
    """Log Dirichlet-multinomial predictive of count vector ``o`` under concept ``l``."""
    if not 0 <= l < h.n_concepts:
        raise ValueError(f"concept {l} out of range")
    return float(_batch_attribute_loglik(_single(stats), h, o)[0, l])


def answer_predictive(stats: SufficientStats, h: Hyperparameters, l: int) -> np.ndarray:
    """Predictive probability vector over the answer vocabulary under concept ``l``."""
    if not 0 <= l < h.n_concepts:
        raise ValueError(f"concept {l} out of range")
    return _batch_answer_predictive(_single(stats), h)[0, l]


def assignment_posterior(stats: SufficientStats, h: Hyperparameters, obs: Observation,
                         users: Sequence[str]) -> np.ndarray:
    """Normalized (L, K) posterior over (concept, component) pairs for ``obs``."""
    table = batch_assignment_log_table(_single(stats), h, obs, users, stats.n_assigned)[0]
    norm = logsumexp(table)
    if not np.isfinite(norm):
        raise NumericalError("assignment table has no probability mass")
    return np.exp(table - norm)
