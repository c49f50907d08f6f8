"""Exact cosine k-nearest-neighbour search over a mention store.

Two paths compute the same thing: ``knn``/``knn_all`` normalise once and use
blocked float64 matrix products (the batch path distributes query blocks over
a thread pool), while ``knn_naive`` is a deliberately simple per-pair scan
kept as the testing oracle.  Results are exact, ties broken by ascending
record index, and the query's own record is always excluded (other mentions
of the same concept are not).

Output is a pure function of (store, k): query blocks have a fixed size, so
the thread count never changes which numbers are computed.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .store import MentionStore, StoreFormatError

MAGIC_KNN = b"CKNN"
_KNN_HEADER = struct.Struct("<4sIIQ")

_BLOCK = 256  # queries per work unit; fixed so results ignore thread count


def cosine(a, b) -> float:
    """Cosine similarity in 64-bit; 0.0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dim mismatch: {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input to cosine")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


@dataclass(frozen=True)
class NeighborList:
    """k nearest record indices of one query record, similarities non-increasing."""

    query: int
    indices: np.ndarray
    similarities: np.ndarray

    @property
    def neighbors(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.indices, self.similarities)]

    def __len__(self) -> int:
        return len(self.indices)


def _normalized(store: MentionStore) -> np.ndarray:
    vec = store.vectors.astype(np.float64)
    norms = np.linalg.norm(vec, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return vec / safe[:, None]


def _top_k_row(sims: np.ndarray, query: int, k: int):
    """Exact top-k of one similarity row, boundary ties resolved by index."""
    sims = sims.copy()
    sims[query] = -np.inf
    n = sims.shape[0]
    keep = min(k, n - 1)
    if keep <= 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.float64)
    if keep < n - 1:
        kth = np.partition(sims, n - 1 - keep)[n - 1 - keep]
        cand = np.flatnonzero(sims >= kth)
    else:
        cand = np.flatnonzero(sims > -np.inf)
    order = cand[np.lexsort((cand, -sims[cand]))][:keep]
    return order.astype(np.int64), sims[order]


def knn(store: MentionStore, query: int, k: int) -> NeighborList:
    """k nearest records to ``query`` by cosine, excluding the query itself.

    k beyond |M|-1 degrades to |M|-1 neighbours.
    """
    n = len(store)
    if n < 2:
        raise ValueError("store must hold at least 2 records")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= query < n:
        raise IndexError(f"record index {query} out of range")
    norm = _normalized(store)
    idx, vals = _top_k_row(_query_sims(norm, query), query, k)
    return NeighborList(query, idx, vals)


def _query_sims(norm: np.ndarray, query: int) -> np.ndarray:
    # one matvec per query: knn and knn_all share the exact same kernel, so
    # batch results are bit-identical to single-query results
    return np.clip(norm @ norm[query], -1.0, 1.0)


def knn_all(store: MentionStore, k: int, threads: int | None = None) -> list[NeighborList]:
    """``knn`` for every record; query blocks run on a thread pool."""
    n = len(store)
    if n < 2:
        raise ValueError("store must hold at least 2 records")
    if k < 1:
        raise ValueError("k must be >= 1")
    norm = _normalized(store)
    keep = min(k, n - 1)
    out_idx = np.empty((n, keep), dtype=np.int64)
    out_sim = np.empty((n, keep), dtype=np.float64)

    def work(start: int):
        stop = min(start + _BLOCK, n)
        for q in range(start, stop):
            idx, vals = _top_k_row(_query_sims(norm, q), q, keep)
            out_idx[q] = idx
            out_sim[q] = vals

    starts = range(0, n, _BLOCK)
    if threads is not None and threads <= 1:
        for s in starts:
            work(s)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    return [NeighborList(q, out_idx[q], out_sim[q]) for q in range(n)]


def knn_naive(store: MentionStore, query: int, k: int) -> NeighborList:
    """Oracle path: score every record with the scalar cosine, full sort."""
    n = len(store)
    if n < 2:
        raise ValueError("store must hold at least 2 records")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= query < n:
        raise IndexError(f"record index {query} out of range")
    scored = [
        (cosine(store.vectors[query], store.vectors[j]), j)
        for j in range(n)
        if j != query
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    top = scored[: min(k, n - 1)]
    return NeighborList(
        query,
        np.asarray([j for _, j in top], dtype=np.int64),
        np.asarray([s for s, _ in top], dtype=np.float64),
    )


def write_neighbor_cache(neighbors: list[NeighborList], path) -> None:
    """CKNN cache: header then per record k x [neighbor u32][similarity f32]."""
    if not neighbors:
        raise ValueError("empty neighbor list")
    k = len(neighbors[0])
    if any(len(nl) != k for nl in neighbors):
        raise ValueError("neighbor lists with unequal lengths")
    with open(path, "wb") as fh:
        fh.write(_KNN_HEADER.pack(MAGIC_KNN, 1, k, len(neighbors)))
        for nl in neighbors:
            for i, s in zip(nl.indices, nl.similarities):
                fh.write(struct.pack("<If", int(i), float(s)))


def read_neighbor_cache(path) -> list[NeighborList]:
    with open(path, "rb") as fh:
        header = fh.read(_KNN_HEADER.size)
        if len(header) != _KNN_HEADER.size:
            raise StoreFormatError("truncated neighbor cache header")
        magic, version, k, count = _KNN_HEADER.unpack(header)
        if magic != MAGIC_KNN:
            raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC_KNN!r}")
        if version != 1:
            raise StoreFormatError(f"unsupported cache version {version}")
        out = []
        entry = struct.Struct("<If")
        for q in range(count):
            raw = fh.read(entry.size * k)
            if len(raw) != entry.size * k:
                raise StoreFormatError(f"truncated neighbor cache at record {q}")
            pairs = list(entry.iter_unpack(raw))
            out.append(
                NeighborList(
                    q,
                    np.asarray([p[0] for p in pairs], dtype=np.int64),
                    np.asarray([p[1] for p in pairs], dtype=np.float64),
                )
            )
        if fh.read(1):
            raise StoreFormatError("trailing bytes after neighbor cache")
    return out
