"""First training step: translation-style embeddings over evolution triples.

Every attribute value and every attribute gets a dense vector. A directed
value change (v, u, a) is scored by how well u sits at v + the attribute's
translation vector; training pushes real changes closer than corrupted ones
by a margin, using plain stochastic subgradient descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ekg import EvolutionKG, EvolutionTriple
from .errors import ConfigError, DomainError, TrainingError
from .ingest import ValueDictionary


@dataclass
class EmbeddingStore:
    """Dense vectors for values and attributes, indexed by their ids."""

    value_vectors: np.ndarray  # (n_values, dim)
    attribute_vectors: np.ndarray  # (n_attributes, dim)
    dim: int

    def __post_init__(self):
        if self.value_vectors.shape[1] != self.dim:
            raise ConfigError("value_vectors dimension does not match dim")
        if self.attribute_vectors.shape[1] != self.dim:
            raise ConfigError("attribute_vectors dimension does not match dim")
        if not (
            np.all(np.isfinite(self.value_vectors))
            and np.all(np.isfinite(self.attribute_vectors))
        ):
            raise TrainingError("non-finite embedding entries")

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(
            self.value_vectors.copy(), self.attribute_vectors.copy(), self.dim
        )


@dataclass(frozen=True)
class EmbedHyperparams:
    dim: int = 50
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 500
    batch_size: int = 128
    negatives: int = 1
    norm: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim: must be >= 1")
        if self.margin <= 0:
            raise ConfigError("margin: must be > 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate: must be > 0")
        if self.epochs < 0:
            raise ConfigError("epochs: must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives: must be >= 1")
        if self.norm not in (1, 2):
            raise ConfigError("norm: must be 1 or 2")


def init_embeddings(ekg: EvolutionKG, hp: EmbedHyperparams) -> EmbeddingStore:
    """Uniform init in [-6/sqrt(d), 6/sqrt(d)]; value vectors unit-normalized."""
    rng = np.random.default_rng(hp.seed)
    bound = 6.0 / math.sqrt(hp.dim)
    value_vectors = rng.uniform(-bound, bound, size=(len(ekg.values), hp.dim))
    norms = np.linalg.norm(value_vectors, axis=1, keepdims=True)
    value_vectors /= np.maximum(norms, 1e-12)
    attribute_vectors = rng.uniform(
        -bound, bound, size=(ekg.values.n_attributes, hp.dim)
    )
    return EmbeddingStore(value_vectors, attribute_vectors, hp.dim)


def _distances(residual: np.ndarray, p: int) -> np.ndarray:
    if p == 1:
        return np.abs(residual).sum(axis=1)
    return np.sqrt((residual * residual).sum(axis=1))


def _unit_gradients(residual: np.ndarray, distance: np.ndarray, p: int) -> np.ndarray:
    """d distance / d residual, rowwise; zero where non-differentiable."""
    if p == 1:
        return np.sign(residual)
    safe = np.maximum(distance, 1e-12)[:, None]
    grad = residual / safe
    grad[distance < 1e-12] = 0.0
    return grad


def ea_score(
    v: int,
    u: int,
    a: int,
    store: EmbeddingStore,
    p: int = 2,
    dictionary: ValueDictionary | None = None,
) -> float:
    """Plausibility of attribute a's value evolving from v to u.

    Returns minus the p-norm of (vector(v) + vector(a) - vector(u)); zero is
    the maximum. When a dictionary is supplied, v and u are checked against
    attribute a's domain.
    """
    if dictionary is not None:
        for value in (v, u):
            if dictionary.attribute_of(value) != a:
                raise DomainError(
                    f"value {value} is outside attribute {a}'s domain"
                )
    residual = store.value_vectors[v] + store.attribute_vectors[a] - store.value_vectors[u]
    if p == 1:
        return -float(np.abs(residual).sum())
    return -float(np.sqrt((residual * residual).sum()))


def train_embeddings(
    ekg: EvolutionKG, hp: EmbedHyperparams
) -> tuple[EmbeddingStore, list[float]]:
    """Minimize the margin loss over positive and corrupted evolution triples.

    Each positive triple is paired per epoch with freshly sampled corrupted
    tails drawn from its attribute domain minus the tails already observed
    for its head. Updates are batched subgradient steps; value vectors are
    projected back into the unit ball after every update. Positives whose
    candidate pool is empty are dropped. Fully deterministic given the seed.
    """
    positives = sorted(ekg.evolution)
    if not positives:
        raise TrainingError("no evolution triples to train on")

    pools: list[np.ndarray] = []
    kept: list[EvolutionTriple] = []
    pool_cache: dict[tuple[int, int], np.ndarray] = {}
    for t in positives:
        key = (t.attribute, t.head_value)
        pool = pool_cache.get(key)
        if pool is None:
            observed = ekg.observed_tails(*key)
            pool = np.array(
                [v for v in ekg.values.values_of(t.attribute) if v not in observed],
                dtype=np.int64,
            )
            pool_cache[key] = pool
        if len(pool):
            kept.append(t)
            pools.append(pool)
    if not kept:
        raise TrainingError("every evolution triple has an empty negative pool")

    heads = np.array([t.head_value for t in kept], dtype=np.int64)
    tails = np.array([t.tail_value for t in kept], dtype=np.int64)
    attrs = np.array([t.attribute for t in kept], dtype=np.int64)
    pool_sizes = np.array([len(p) for p in pools], dtype=np.int64)

    store = init_embeddings(ekg, hp)
    values = store.value_vectors
    attributes = store.attribute_vectors
    value_grad = np.zeros_like(values)
    attr_grad = np.zeros_like(attributes)

    rng = np.random.default_rng([hp.seed, 1])
    n = len(kept)
    history: list[float] = []

    # non-finite intermediates are caught by the per-epoch loss check
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(hp.epochs):
            perm = rng.permutation(n)
            total = 0.0
            for start in range(0, n, hp.batch_size):
                batch = perm[start : start + hp.batch_size]
                reps = np.repeat(batch, hp.negatives)
                if hp.negatives == 1:
                    draw = rng.integers(0, pool_sizes[batch])
                    neg_tails = np.fromiter(
                        (pools[j][d] for j, d in zip(batch, draw)),
                        dtype=np.int64,
                        count=len(batch),
                    )
                else:
                    # per positive, draw without replacement while the pool allows
                    chunks = []
                    for j in batch:
                        size = pool_sizes[j]
                        idx = rng.choice(
                            size, size=hp.negatives, replace=hp.negatives > size
                        )
                        chunks.append(pools[j][idx])
                    neg_tails = np.concatenate(chunks)
                h, t, a = heads[reps], tails[reps], attrs[reps]

                r_pos = values[h] + attributes[a] - values[t]
                r_neg = values[h] + attributes[a] - values[neg_tails]
                d_pos = _distances(r_pos, hp.norm)
                d_neg = _distances(r_neg, hp.norm)
                violation = hp.margin + d_pos - d_neg
                total += float(np.maximum(violation, 0.0).sum())
                active = violation > 0.0
                if not active.any():
                    continue

                g_pos = _unit_gradients(r_pos, d_pos, hp.norm)
                g_neg = _unit_gradients(r_neg, d_neg, hp.norm)
                g_pos[~active] = 0.0
                g_neg[~active] = 0.0
                diff = g_pos - g_neg

                np.add.at(value_grad, h, diff)
                np.add.at(value_grad, t, -g_pos)
                np.add.at(value_grad, neg_tails, g_neg)
                np.add.at(attr_grad, a, diff)

                touched_values = np.unique(np.concatenate([h, t, neg_tails]))
                touched_attrs = np.unique(a)
                values[touched_values] -= hp.learning_rate * value_grad[touched_values]
                attributes[touched_attrs] -= hp.learning_rate * attr_grad[touched_attrs]
                value_grad[touched_values] = 0.0
                attr_grad[touched_attrs] = 0.0

                norms = np.linalg.norm(values[touched_values], axis=1)
                over = norms > 1.0
                if over.any():
                    rows = touched_values[over]
                    values[rows] /= norms[over, None]

            mean_loss = total / (n * hp.negatives)
            if not math.isfinite(mean_loss):
                raise TrainingError(
                    "non-finite embedding loss; the learning rate is likely too high"
                )
            history.append(mean_loss)

    return store, history


class GradientCheckResult(NamedTuple):
    max_relative_error: float
    checked: int
    skipped: int


def margin_loss(
    store: EmbeddingStore,
    positive: EvolutionTriple,
    negative: EvolutionTriple,
    margin: float,
    p: int = 2,
) -> float:
    """Hinge on (margin + distance(positive) - distance(negative))."""
    d_pos = -ea_score(positive.head_value, positive.tail_value, positive.attribute, store, p)
    d_neg = -ea_score(negative.head_value, negative.tail_value, negative.attribute, store, p)
    return max(0.0, margin + d_pos - d_neg)


def gradient_check(
    store: EmbeddingStore,
    positive: EvolutionTriple,
    negative: EvolutionTriple,
    margin: float,
    p: int = 2,
    epsilon: float = 1e-5,
) -> GradientCheckResult:
    """Compare the analytic margin-loss subgradient with central differences.

    Checks every coordinate of every distinct vector the pair touches.
    Coordinates where the loss is not differentiable (hinge boundary, a
    zero-norm residual under p=2, or a residual coordinate tie under p=1)
    are skipped and counted rather than checked.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError("epsilon: must be in [1e-7, 1e-3]")

    variables: list[tuple[str, int]] = []
    for kind, idx in (
        ("value", positive.head_value),
        ("value", positive.tail_value),
        ("value", negative.head_value),
        ("value", negative.tail_value),
        ("attr", positive.attribute),
        ("attr", negative.attribute),
    ):
        if (kind, idx) not in variables:
            variables.append((kind, idx))

    def loss() -> float:
        return margin_loss(store, positive, negative, margin, p)

    r_pos = (
        store.value_vectors[positive.head_value]
        + store.attribute_vectors[positive.attribute]
        - store.value_vectors[positive.tail_value]
    )
    r_neg = (
        store.value_vectors[negative.head_value]
        + store.attribute_vectors[negative.attribute]
        - store.value_vectors[negative.tail_value]
    )
    d_pos = float(_distances(r_pos[None, :], p)[0])
    d_neg = float(_distances(r_neg[None, :], p)[0])
    activation = margin + d_pos - d_neg
    slack = 4.0 * epsilon

    total_coords = len(variables) * store.dim
    if abs(activation) <= slack:
        return GradientCheckResult(0.0, 0, total_coords)
    if p == 2 and activation > 0 and (d_pos <= slack or d_neg <= slack):
        return GradientCheckResult(0.0, 0, total_coords)

    if activation <= 0:
        g_pos = np.zeros(store.dim)
        g_neg = np.zeros(store.dim)
    else:
        g_pos = _unit_gradients(r_pos[None, :], np.array([d_pos]), p)[0]
        g_neg = _unit_gradients(r_neg[None, :], np.array([d_neg]), p)[0]

    def analytic(kind: str, idx: int) -> np.ndarray:
        grad = np.zeros(store.dim)
        if kind == "value":
            if idx == positive.head_value:
                grad += g_pos
            if idx == positive.tail_value:
                grad -= g_pos
            if idx == negative.head_value:
                grad -= g_neg
            if idx == negative.tail_value:
                grad += g_neg
        else:
            if idx == positive.attribute:
                grad += g_pos
            if idx == negative.attribute:
                grad -= g_neg
        return grad

    def involves(kind: str, idx: int, triple: EvolutionTriple) -> bool:
        if kind == "value":
            return idx in (triple.head_value, triple.tail_value)
        return idx == triple.attribute

    max_err = 0.0
    checked = 0
    skipped = 0
    for kind, idx in variables:
        grad = analytic(kind, idx)
        matrix = store.value_vectors if kind == "value" else store.attribute_vectors
        for coord in range(store.dim):
            if p == 1 and activation > 0:
                tie = (
                    involves(kind, idx, positive) and abs(r_pos[coord]) <= slack
                ) or (involves(kind, idx, negative) and abs(r_neg[coord]) <= slack)
                if tie:
                    skipped += 1
                    continue
            original = matrix[idx, coord]
            matrix[idx, coord] = original + epsilon
            up = loss()
            matrix[idx, coord] = original - epsilon
            down = loss()
            matrix[idx, coord] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = grad[coord]
            if max(abs(a), abs(numeric)) < 1e-7:
                err = 0.0
            else:
                err = abs(a - numeric) / max(abs(a), abs(numeric))
            max_err = max(max_err, err)
            checked += 1

    return GradientCheckResult(max_err, checked, skipped)
