"""Positive-pair mining from the neighbourhood structure of mention vectors.

Two mentions are compatible when their k-nearest-neighbour sets point at the
same concepts: the compatibility degree is the multiset Jaccard overlap of
neighbour-concept frequencies,

    pi(x, y) = sum_c min(freq(c, neigh(x)), freq(c, neigh(y)))
             / sum_c max(freq(c, neigh(x)), freq(c, neigh(y)))

computed and thresholded in exact rational arithmetic so that boundary cases
like pi == theta are never subject to float rounding.  Candidate pairs are
generated from an inverted index (concept -> records whose neighbourhood
contains it); pairs sharing no bucket have pi = 0, so for theta > 0 this is
exactly equivalent to scoring all pairs.

Also here: the word-identity pairing ablation (same concept, different
sentence) and the idiosyncratic-mention filter (a mention whose k nearest
neighbours all carry its own concept is dropped from averaging).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .simsearch import NeighborList, knn_all
from .store import MentionStore

PAIRS_HEADER_PREFIX = "#condist-pairs v1"


def as_fraction(value) -> Fraction:
    """Exact rational from Fraction/int/str; floats go through their shortest
    decimal repr, so 0.2 means 1/5 rather than the nearest binary float."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("theta must be numeric")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as an exact rational")


@dataclass
class MiningConfig:
    """Neighbour counts and threshold for pair mining and filtering.

    k_compat: neighbours per mention when scoring compatibility (default 5).
    theta: inclusion threshold on the compatibility degree, in (0, 1].
    k_filter: neighbours consulted by the idiosyncrasy filter (5 or 50
    depending on the benchmark family).
    """

    k_compat: int = 5
    theta: Fraction = Fraction(1, 2)
    k_filter: int = 5

    def __post_init__(self):
        self.theta = as_fraction(self.theta)
        if self.k_compat < 1:
            raise ValueError("k_compat must be >= 1")
        if self.k_filter < 1:
            raise ValueError("k_filter must be >= 1")
        if not 0 < self.theta <= 1:
            raise ValueError("theta must be in (0, 1]")


@dataclass
class PairSet:
    """Unordered positive record-index pairs, optionally labelled by group.

    Pairs are kept as (i, j) tuples with i < j, sorted; both endpoints are
    guaranteed by the constructors to come from different sentences.
    """

    pairs: list[tuple[int, int]]
    groups: dict[tuple[int, int], str] = field(default_factory=dict)
    k: int = 0
    theta: Fraction = Fraction(0)

    @classmethod
    def from_pairs(cls, pairs, groups=None, k=0, theta=Fraction(0)) -> "PairSet":
        norm = set()
        for i, j in pairs:
            if i == j:
                raise ValueError(f"self-pair {i}")
            norm.add((min(i, j), max(i, j)))
        glabels = {}
        if groups:
            for (i, j), g in groups.items():
                glabels[(min(i, j), max(i, j))] = g
        return cls(sorted(norm), glabels, k, as_fraction(theta))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair) -> bool:
        i, j = pair
        return (min(i, j), max(i, j)) in self._index

    def __iter__(self):
        return iter(self.pairs)

    @property
    def _index(self) -> frozenset:
        if not hasattr(self, "_index_cache"):
            object.__setattr__(self, "_index_cache", frozenset(self.pairs))
        return self._index_cache

    def validate(self, store: MentionStore) -> None:
        """Assert the type invariants against a store (used by tests)."""
        seen = set()
        for i, j in self.pairs:
            assert i < j, (i, j)
            assert (i, j) not in seen
            seen.add((i, j))
            assert store.sentences[i] != store.sentences[j], (i, j)


def freq(concept_id: int, records, store: MentionStore) -> int:
    """Number of the given record indices whose concept is ``concept_id``."""
    n = len(store)
    total = 0
    for r in records:
        if not 0 <= r < n:
            raise IndexError(f"record index {r} out of range")
        if int(store.concepts[r]) == concept_id:
            total += 1
    return total


def _neighbor_counter(nl: NeighborList, store: MentionStore) -> Counter:
    return Counter(int(store.concepts[i]) for i in nl.indices)


def compatibility(
    x: int, y: int, neighbors: list[NeighborList], store: MentionStore
) -> Fraction:
    """Compatibility degree of two mentions as an exact rational in [0, 1]."""
    cx = _neighbor_counter(neighbors[x], store)
    cy = _neighbor_counter(neighbors[y], store)
    return _compat_from_counters(cx, len(neighbors[x]), cy, len(neighbors[y]))


def _compat_from_counters(cx: Counter, lx: int, cy: Counter, ly: int) -> Fraction:
    min_sum = sum((cx & cy).values())
    denom = lx + ly - min_sum  # sum of per-concept maxima
    if denom == 0:
        return Fraction(1)  # two empty neighbourhoods are identical
    return Fraction(min_sum, denom)


def mine_neighborhood_pairs(
    store: MentionStore,
    config: MiningConfig,
    neighbors: list[NeighborList] | None = None,
    threads: int | None = None,
) -> PairSet:
    """All unordered record pairs with pi >= theta and distinct sentences."""
    if len(store) < 2:
        raise ValueError("store must hold at least 2 records")
    if neighbors is None:
        neighbors = knn_all(store, config.k_compat, threads=threads)
    counters = [_neighbor_counter(nl, store) for nl in neighbors]
    lengths = [len(nl) for nl in neighbors]

    buckets: dict[int, list[int]] = {}
    for rec, counter in enumerate(counters):
        for concept in counter:
            buckets.setdefault(concept, []).append(rec)

    candidates: set[tuple[int, int]] = set()
    for members in buckets.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                candidates.add((members[a], members[b]))

    theta = config.theta
    sentences = store.sentences
    kept = []
    for i, j in candidates:
        if sentences[i] == sentences[j]:
            continue
        pi = _compat_from_counters(counters[i], lengths[i], counters[j], lengths[j])
        if pi >= theta:
            kept.append((i, j))
    return PairSet.from_pairs(kept, k=config.k_compat, theta=theta)


def mine_word_identity_pairs(store: MentionStore) -> PairSet:
    """All pairs of mentions of the same concept with different sentences."""
    pairs = []
    for concept in range(len(store.vocab)):
        members = store.mentions_of(concept)
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = int(members[a]), int(members[b])
                if store.sentences[i] != store.sentences[j]:
                    pairs.append((i, j))
    return PairSet.from_pairs(pairs)


def filter_idiosyncratic(
    store: MentionStore,
    k_filter: int,
    neighbors: list[NeighborList] | None = None,
    threads: int | None = None,
) -> set[int]:
    """Record indices to keep for averaging.

    A record is dropped when all of its k_filter nearest neighbours carry its
    own concept; kept records have at least one different-concept neighbour.
    """
    if len(store) <= k_filter:
        raise ValueError("store must hold more than k_filter records")
    if neighbors is None:
        neighbors = knn_all(store, k_filter, threads=threads)
    kept = set()
    for rec, nl in enumerate(neighbors):
        own = int(store.concepts[rec])
        if any(int(store.concepts[i]) != own for i in nl.indices):
            kept.add(rec)
    return kept


def write_pairs(pairset: PairSet, path) -> None:
    """Text export: header then ``i<TAB>j[<TAB>group]`` lines, ascending."""
    theta = pairset.theta
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{PAIRS_HEADER_PREFIX} k={pairset.k} "
            f"theta={theta.numerator}/{theta.denominator}\n"
        )
        for i, j in pairset.pairs:
            group = pairset.groups.get((i, j))
            if group is None:
                fh.write(f"{i}\t{j}\n")
            else:
                fh.write(f"{i}\t{j}\t{group}\n")


def read_pairs(path) -> PairSet:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith(PAIRS_HEADER_PREFIX):
            raise ValueError(f"bad pairs header: {header!r}")
        meta = dict(part.split("=", 1) for part in header.split()[2:])
        k = int(meta.get("k", 0))
        theta = Fraction(meta.get("theta", "0/1"))
        pairs, groups = [], {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"malformed pair at line {lineno}: {line!r}")
            i, j = int(parts[0]), int(parts[1])
            pairs.append((i, j))
            if len(parts) == 3:
                groups[(i, j)] = parts[2]
    return PairSet.from_pairs(pairs, groups, k=k, theta=theta)


def write_kept_indices(kept: set[int], k_filter: int, path) -> None:
    """Kept-record export for the filter stage: one index per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#condist-kept v1 k_filter={k_filter}\n")
        for i in sorted(kept):
            fh.write(f"{i}\n")


def read_kept_indices(path) -> set[int]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#condist-kept v1"):
            raise ValueError(f"bad kept-index header: {header!r}")
        return {int(line) for line in fh if line.strip()}
