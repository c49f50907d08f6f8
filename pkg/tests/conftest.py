"""Shared fixtures and independent oracle implementations.

Oracles here deliberately re-derive results by the most literal method
available (full scans, nested loops, per-pair scalar arithmetic) and never
call the optimised code paths they are used to check.
"""

import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from condist import build_store
from condist.simsearch import cosine as scalar_cosine


def make_random_store(rng, n_records, dim, n_concepts, shared_sentences=False):
    """Random float32 store; sentence ids unique unless shared_sentences."""
    words = [f"w{i}" for i in range(n_concepts)]
    records = []
    for i in range(n_records):
        word = words[int(rng.integers(n_concepts))]
        sentence = int(rng.integers(max(2, n_records // 2))) if shared_sentences else i
        records.append((word, sentence, rng.normal(size=dim)))
    return build_store(dim, records)


def angled_record(word, sentence, degrees, radius=1.0):
    rad = math.radians(degrees)
    return (word, sentence, [radius * math.cos(rad), radius * math.sin(rad)])


@pytest.fixture
def reef_store():
    """Two tight mention clusters in 2-D.

    The query at 0 degrees has exactly the four 3..9-degree records as its
    4 nearest neighbours (one mention each of diver, shark, submarine,
    coral); the query at 90 degrees sees diver, shark and coral twice.
    """
    return build_store(
        2,
        [
            angled_record("submarine", 0, 0.0),
            angled_record("diver", 1, 3.0),
            angled_record("shark", 2, 5.0),
            angled_record("submarine", 3, 7.0),
            angled_record("coral", 4, 9.0),
            angled_record("whale", 5, 90.0),
            angled_record("diver", 6, 93.0),
            angled_record("shark", 7, 95.0),
            angled_record("coral", 8, 97.0),
            angled_record("coral", 9, 99.0),
        ],
    )


# --- oracles -----------------------------------------------------------------


def knn_oracle(store, query, k):
    """Full scan with scalar cosine, stable sort, self excluded."""
    scored = [
        (scalar_cosine(store.vectors[query], store.vectors[j]), j)
        for j in range(len(store))
        if j != query
    ]
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[: min(k, len(store) - 1)]


def neighbor_concepts_oracle(store, query, k):
    return Counter(int(store.concepts[j]) for _, j in knn_oracle(store, query, k))


def compatibility_oracle(store, x, y, k):
    cx = neighbor_concepts_oracle(store, x, k)
    cy = neighbor_concepts_oracle(store, y, k)
    concepts = set(cx) | set(cy)
    num = sum(min(cx[c], cy[c]) for c in concepts)
    den = sum(max(cx[c], cy[c]) for c in concepts)
    return Fraction(num, den) if den else Fraction(1)


def mine_pairs_oracle(store, k, theta):
    """All-pairs compatibility scan."""
    theta = Fraction(theta)
    out = []
    for i in range(len(store)):
        for j in range(i + 1, len(store)):
            if store.sentences[i] == store.sentences[j]:
                continue
            if compatibility_oracle(store, i, j, k) >= theta:
                out.append((i, j))
    return sorted(out)


def filter_oracle(store, k_filter):
    """Per-record naive re-derivation of the idiosyncrasy rule."""
    kept = set()
    for i in range(len(store)):
        own = int(store.concepts[i])
        neighbor_concepts = [int(store.concepts[j]) for _, j in knn_oracle(store, i, k_filter)]
        if any(c != own for c in neighbor_concepts):
            kept.add(i)
    return kept


def word_pairs_oracle(store):
    out = []
    for i in range(len(store)):
        for j in range(i + 1, len(store)):
            if (
                store.concepts[i] == store.concepts[j]
                and store.sentences[i] != store.sentences[j]
            ):
                out.append((i, j))
    return sorted(out)


def make_property_fixture(seed=0, n_props=4, mentions_per_prop=40, dim=32, concepts_per_prop=5):
    """Mentions with one of four orthogonal property directions in the first
    four coordinates, a strong shared component and nuisance noise in the
    remaining ones.  Returns (store, property id per record)."""
    rng = np.random.default_rng(seed)
    bias_dir = np.zeros(dim)
    bias_dir[4:] = rng.normal(size=dim - 4)
    bias_dir /= np.linalg.norm(bias_dir)
    records, prop_of = [], []
    for p in range(n_props):
        for i in range(mentions_per_prop):
            vec = np.zeros(dim)
            vec[p] = 1.0
            vec += 3.0 * bias_dir
            vec[4:] += 0.8 * rng.normal(size=dim - 4)
            vec[:4] += 0.05 * rng.normal(size=4)
            records.append((f"p{p}c{i % concepts_per_prop}", len(records), vec))
            prop_of.append(p)
    return build_store(dim, records), np.asarray(prop_of)


def property_pairs(store, prop_of):
    from condist import PairSet

    n = len(store)
    return PairSet.from_pairs(
        (i, j) for i in range(n) for j in range(i + 1, n) if prop_of[i] == prop_of[j]
    )


def property_separation(store, prop_of):
    """(mean within-property cosine, mean cross-property cosine)."""
    vec = store.vectors.astype(np.float64)
    unit = vec / np.linalg.norm(vec, axis=1, keepdims=True)
    sims = unit @ unit.T
    iu = np.triu_indices(len(store), 1)
    same = prop_of[iu[0]] == prop_of[iu[1]]
    return float(sims[iu][same].mean()), float(sims[iu][~same].mean())


def make_rare_signal_fixture(seed=0, n_pos=150, n_neg=150, mentions=20, dim=16, spike=4.5):
    """Concepts whose class signal sits in a single mention's coordinate 0:
    visible to a max-pooled mention classifier, washed out by averaging."""
    rng = np.random.default_rng(seed)
    records, labels = [], {}
    for c in range(n_pos + n_neg):
        name = f"k{c}"
        labels[name] = c < n_pos
        vecs = rng.normal(size=(mentions, dim))
        if labels[name]:
            vecs[int(rng.integers(mentions)), 0] = spike
        for v in vecs:
            records.append((name, len(records), v))
    return build_store(dim, records), labels


def concept_split_items(store, labels, seed=1, ratios=(0.6, 0.2)):
    """Shuffle concepts into train/dev/test item lists of (concept, label)."""
    concepts = list(store.vocab)
    rng = np.random.default_rng(seed)
    shuffled = [concepts[i] for i in rng.permutation(len(concepts))]
    n = len(shuffled)
    cut1, cut2 = int(ratios[0] * n), int((ratios[0] + ratios[1]) * n)
    split_of = {
        name: ("train" if p < cut1 else "dev" if p < cut2 else "test")
        for p, name in enumerate(shuffled)
    }
    out = {"train": [], "dev": [], "test": []}
    for name in concepts:
        out[split_of[name]].append((store.vocab.id(name), labels[name]))
    return out["train"], out["dev"], out["test"]


def pegasos_reference(X, y, C, iters=100000):
    """Full-batch subgradient descent on the same hinge objective, averaged
    iterate; the independent check for the dual coordinate descent fit."""
    n = len(y)
    Xa = np.hstack([X, np.ones((n, 1))])
    lam = 1.0 / (n * C)
    w = np.zeros(Xa.shape[1])
    avg = np.zeros_like(w)
    for t in range(1, iters + 1):
        eta = 1.0 / (lam * t)
        margins = y * (Xa @ w)
        viol = margins < 1.0
        grad = lam * w - (y[viol, None] * Xa[viol]).sum(axis=0) / n
        w = w - eta * grad
        avg += w
    return avg / iters


def oracle_neighbors_vec(store, k):
    """Vectorised but independently coded full-scan oracle: raw dot over
    norm product per query, python sort with explicit tie key."""
    vec = store.vectors.astype(np.float64)
    norms = np.sqrt((vec * vec).sum(axis=1))
    out = []
    for q in range(len(store)):
        denom = norms * norms[q]
        with np.errstate(invalid="ignore", divide="ignore"):
            sims = np.where(denom > 0.0, vec @ vec[q] / denom, 0.0)
        sims = np.minimum(1.0, np.maximum(-1.0, sims))
        order = sorted(
            (j for j in range(len(store)) if j != q), key=lambda j: (-sims[j], j)
        )
        top = order[: min(k, len(store) - 1)]
        out.append((top, [float(sims[j]) for j in top]))
    return out


def oracle_mine_vec(store, k, theta):
    """All-pairs compatibility scan on top of the vectorised kNN oracle."""
    theta = Fraction(theta)
    hoods = oracle_neighbors_vec(store, k)
    counters = [Counter(int(store.concepts[j]) for j in top) for top, _ in hoods]
    pairs = []
    for i in range(len(store)):
        for j in range(i + 1, len(store)):
            if store.sentences[i] == store.sentences[j]:
                continue
            ci, cj = counters[i], counters[j]
            num = sum((ci & cj).values())
            den = sum((ci | cj).values())
            if den and Fraction(num, den) >= theta:
                pairs.append((i, j))
    return pairs


def sup_con_loss_oracle(embeddings, positives, tau):
    """Straight transcription of the loss without the log-sum-exp trick."""
    emb = np.asarray(embeddings, dtype=np.float64)
    total = 0.0
    for i, pos in enumerate(positives):
        if not pos:
            continue
        for p in pos:
            numer = math.exp(scalar_cosine(emb[i], emb[p]) / tau)
            denom = sum(
                math.exp(scalar_cosine(emb[i], emb[j]) / tau)
                for j in range(len(emb))
                if j != i
            )
            total += (-1.0 / len(pos)) * math.log(numer / denom)
    return total
