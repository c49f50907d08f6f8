"""Aggregation of mention vectors into concept embeddings, plus the
embedding-geometry analyses: anisotropy histogram of random-pair cosines,
nearest-neighbour listings, and discovery of mention pairs whose similarity
rank shifted between two spaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simsearch import cosine, knn_all
from .store import ConceptEmbeddingTable, MentionStore


@dataclass
class AggregateResult:
    table: ConceptEmbeddingTable
    fallback_concepts: list[int]  # concepts whose every mention was filtered


def aggregate(store: MentionStore, kept: set[int] | None = None) -> AggregateResult:
    """Mean of each concept's (kept) mention vectors, accumulated in 64-bit.

    A concept whose mentions were all filtered out falls back to the
    unfiltered mean and is reported in ``fallback_concepts``; downstream
    evaluation needs an embedding for every benchmark word.
    """
    if len(store) == 0:
        raise ValueError("empty store")
    concept_ids, vectors, fallback = [], [], []
    for concept in range(len(store.vocab)):
        members = store.mentions_of(concept)
        if len(members) == 0:
            continue
        if kept is not None:
            filtered = [i for i in members if i in kept]
            if not filtered:
                fallback.append(concept)
                filtered = list(members)
        else:
            filtered = list(members)
        mean = store.vectors[filtered].astype(np.float64).mean(axis=0)
        concept_ids.append(concept)
        vectors.append(mean.astype(np.float32))
    table = ConceptEmbeddingTable(
        store.dim,
        store.vocab,
        np.asarray(concept_ids, dtype=np.uint32),
        np.asarray(vectors, dtype=np.float32).reshape(len(concept_ids), store.dim),
    )
    return AggregateResult(table, fallback)


@dataclass
class Histogram:
    """Pairwise-cosine histogram over [-1, 1] with summary moments."""

    bin_edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    samples: int

    def lines(self):
        for k in range(len(self.counts)):
            yield f"{self.bin_edges[k]:.6f}\t{self.bin_edges[k + 1]:.6f}\t{int(self.counts[k])}"


def anisotropy_histogram(
    table: ConceptEmbeddingTable, samples: int, bins: int = 50, rng=None
) -> Histogram:
    """Cosines of randomly sampled distinct concept pairs, binned over [-1, 1].

    When ``samples`` covers all C(n, 2) pairs the computation is exhaustive
    (each pair exactly once); otherwise pairs are drawn uniformly, with
    repetition possible across draws.
    """
    n = len(table)
    if n < 2:
        raise ValueError("need at least 2 concepts")
    vec = table.vectors.astype(np.float64)
    norms = np.linalg.norm(vec, axis=1)
    unit = vec / np.where(norms == 0.0, 1.0, norms)[:, None]
    total_pairs = n * (n - 1) // 2

    if samples >= total_pairs:
        sims = (unit @ unit.T)[np.triu_indices(n, k=1)]
        zero = norms == 0.0
        if zero.any():  # cosine convention: zero-norm rows score 0 everywhere
            mask = zero[:, None] | zero[None, :]
            sims = np.where(mask[np.triu_indices(n, k=1)], 0.0, sims)
    else:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        sims = np.empty(samples)
        for s in range(samples):
            i = int(rng.integers(n))
            j = int(rng.integers(n - 1))
            if j >= i:
                j += 1
            sims[s] = 0.0 if (norms[i] == 0.0 or norms[j] == 0.0) else unit[i] @ unit[j]

    sims = np.clip(sims, -1.0, 1.0)
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    return Histogram(edges, counts, float(sims.mean()), float(sims.std()), len(sims))


def neighbor_shift(
    base: MentionStore,
    tuned: MentionStore,
    top_in: int = 100,
    top_out: int = 1000,
    threads: int | None = None,
) -> list[tuple[int, int]]:
    """Mention pairs (i, j) with j inside the tuned-space top ``top_in`` of i
    but outside the base-space top ``top_out`` of i."""
    if len(base) != len(tuned) or not (
        np.array_equal(base.concepts, tuned.concepts)
        and np.array_equal(base.sentences, tuned.sentences)
    ):
        raise ValueError("stores do not carry the same record identities")
    n = len(base)
    tuned_nn = knn_all(tuned, min(top_in, n - 1), threads=threads)
    base_nn = knn_all(base, min(top_out, n - 1), threads=threads)
    shifted = []
    for i in range(n):
        base_set = set(int(x) for x in base_nn[i].indices)
        for j in tuned_nn[i].indices:
            if int(j) not in base_set:
                shifted.append((i, int(j)))
    return sorted(shifted)


def concept_neighbors(
    table: ConceptEmbeddingTable, word: str, k: int
) -> list[tuple[str, float]]:
    """Top-k other concepts by cosine to ``word``; ties by ascending id."""
    concept = table.vocab.id(word)
    if concept not in table:
        raise KeyError(f"no embedding for {word!r}")
    query = table.vector(concept)
    scored = []
    for pos, other in enumerate(table.concept_ids):
        if int(other) == concept:
            continue
        scored.append((cosine(query, table.vectors[pos]), int(other)))
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[: min(k, len(scored))]
    return [(table.vocab.word(cid), float(sim)) for sim, cid in top]
