"""Evaluation protocols for concept embeddings.

Lexical classification: one binary linear classifier per class over concept
embeddings, L2-regularised hinge loss fit by dual coordinate descent, C tuned
on the dev split, macro-averaged F1 over classes.  A mention-set classifier
(shared dense layer + ReLU, coordinatewise max over a concept's mentions,
logistic output) covers properties that are visible in only a few mentions
and would be washed out by averaging.  Clustering quality is k-means purity
averaged over seeded restarts.

Benchmark ingestion is a neutral TSV (``word<TAB>class[<TAB>split]``);
positives are split 60/20/20 per class and each concept draws 5 negative
classes it does not belong to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .store import ConceptEmbeddingTable, MentionStore, Vocabulary

SPLITS = ("train", "dev", "test")
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True)
class Item:
    concept: int
    cls: int
    positive: bool
    split: str


@dataclass
class LabeledDataset:
    items: list[Item]
    classes: dict[int, str]
    skipped_classes: list[str] = field(default_factory=list)
    no_negative_concepts: list[int] = field(default_factory=list)
    excluded_words: list[str] = field(default_factory=list)

    def of_class(self, cls: int, split: str | None = None) -> list[Item]:
        return [
            it
            for it in self.items
            if it.cls == cls and (split is None or it.split == split)
        ]


def _split_sizes(n: int, ratios) -> tuple[int, int, int]:
    """60/20/20 with every part >= 1; caller skips classes with n < 3."""
    n_train = max(1, round(n * ratios[0]))
    n_dev = max(1, round(n * ratios[1]))
    n_test = n - n_train - n_dev
    while n_test < 1:
        if n_train > n_dev and n_train > 1:
            n_train -= 1
        else:
            n_dev -= 1
        n_test = n - n_train - n_dev
    return n_train, n_dev, n_test


def split_and_negatives(
    positives: dict[str, list[int]],
    ratios=(0.6, 0.2, 0.2),
    negatives_per_concept: int = 5,
    rng=None,
) -> LabeledDataset:
    """Per-class splits of the positive concepts plus sampled negatives.

    Negatives are (concept, class) items for classes the concept does not
    belong to; their split assignment is drawn at the same ratios.  Classes
    with fewer than 3 positives cannot give every split a member and are
    skipped (reported on the dataset).
    """
    if len(positives) < 2:
        raise ValueError("need at least 2 classes to sample negatives")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    class_names = sorted(positives)
    classes = {cid: name for cid, name in enumerate(class_names)}
    membership = {cid: set(positives[name]) for cid, name in classes.items()}

    items: list[Item] = []
    skipped = []
    for cid, name in classes.items():
        members = sorted(positives[name])
        if len(members) < 3:
            skipped.append(name)
            continue
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        n_train, n_dev, _ = _split_sizes(len(members), ratios)
        for pos, concept in enumerate(shuffled):
            split = "train" if pos < n_train else "dev" if pos < n_train + n_dev else "test"
            items.append(Item(concept, cid, True, split))

    kept_classes = [cid for cid in classes if classes[cid] not in skipped]
    no_negatives = []
    all_concepts = sorted({c for name in class_names for c in positives[name]})
    for concept in all_concepts:
        candidates = [cid for cid in kept_classes if concept not in membership[cid]]
        if not candidates:
            no_negatives.append(concept)
            continue
        take = min(negatives_per_concept, len(candidates))
        picked = [candidates[i] for i in rng.permutation(len(candidates))[:take]]
        for cid in picked:
            split = SPLITS[rng.choice(3, p=list(ratios))]
            items.append(Item(concept, cid, False, split))
    return LabeledDataset(items, classes, skipped, no_negatives)


def load_benchmark_tsv(path, vocab: Vocabulary):
    """Read ``word<TAB>class[<TAB>split]`` lines.

    Returns (positives by class name, fixed split map or None, words outside
    the vocabulary).  A split column, when present, must be present on every
    line.
    """
    positives: dict[str, list[int]] = {}
    fixed: dict[tuple[int, str], str] = {}
    missing: list[str] = []
    saw_split = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise ValueError(f"malformed dataset line {lineno}: {line!r}")
            has_split = len(parts) == 3
            if saw_split is None:
                saw_split = has_split
            elif saw_split != has_split:
                raise ValueError(f"inconsistent split column at line {lineno}")
            word, cls = parts[0].strip(), parts[1].strip()
            if word not in vocab:
                missing.append(word)
                continue
            concept = vocab.id(word)
            positives.setdefault(cls, []).append(concept)
            if has_split:
                if parts[2] not in SPLITS:
                    raise ValueError(f"unknown split {parts[2]!r} at line {lineno}")
                fixed[(concept, cls)] = parts[2]
    return positives, (fixed if saw_split else None), missing


@dataclass
class LinearClassifier:
    """L2-regularised hinge-loss linear model (weights, bias, chosen C)."""

    weights: np.ndarray
    bias: float
    C: float

    def decision(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.decision(features) > 0.0


def _dual_cd(X, y, C, tol=1e-4, max_passes=1000, seed=0, balanced=False):
    """Dual coordinate descent on the L1-hinge SVM, bias as an augmented
    always-one feature.  Returns (weights incl. bias, alphas, kkt residual)."""
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    q_diag = np.einsum("ij,ij->i", Xa, Xa)
    if balanced:
        counts = {1: int((y > 0).sum()), -1: int((y < 0).sum())}
        upper = np.asarray([C * n / (2.0 * counts[int(v)]) for v in y])
    else:
        upper = np.full(n, C)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)
    residual = np.inf
    for _ in range(max_passes):
        max_pg = 0.0
        for i in rng.permutation(n):
            g = y[i] * (Xa[i] @ w) - 1.0
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == upper[i]:
                pg = max(g, 0.0)
            else:
                pg = g
            max_pg = max(max_pg, abs(pg))
            if pg != 0.0:
                old = alpha[i]
                alpha[i] = min(max(old - g / q_diag[i], 0.0), upper[i])
                delta = alpha[i] - old
                if delta != 0.0:
                    w += delta * y[i] * Xa[i]
        residual = max_pg
        if max_pg < tol:
            break
    return w, alpha, residual


def dual_objective(X, y, alpha) -> float:
    """0.5 ||w||^2 - sum(alpha); <= 0 at any feasible optimum path point."""
    Xa = np.hstack([X, np.ones((len(y), 1))])
    w = Xa.T @ (alpha * y)
    return 0.5 * float(w @ w) - float(alpha.sum())


def train_linear(
    train: list[tuple[int, bool]],
    dev: list[tuple[int, bool]],
    table: ConceptEmbeddingTable,
    c_grid=DEFAULT_C_GRID,
    seed: int = 0,
    balanced: bool = False,
) -> LinearClassifier:
    """Fit per C in the grid, keep the classifier with the best dev F1
    (ties to the smaller C)."""
    labels = {lab for _, lab in train}
    if labels != {True, False}:
        raise ValueError("training data must contain both labels")
    X = np.asarray([table.vector(c) for c, _ in train], dtype=np.float64)
    y = np.asarray([1.0 if lab else -1.0 for _, lab in train])
    dev_X = np.asarray(
        [table.vector(c) for c, _ in dev], dtype=np.float64
    ) if dev else np.empty((0, table.dim))
    dev_y = np.asarray([lab for _, lab in dev], dtype=bool)

    best = None
    for C in sorted(c_grid):
        w, _, _ = _dual_cd(X, y, C, seed=seed, balanced=balanced)
        clf = LinearClassifier(w[:-1], float(w[-1]), C)
        score = binary_f1(clf.predict(dev_X), dev_y) if len(dev) else 0.0
        if best is None or score > best[0] + 1e-12:
            best = (score, clf)
    return best[1]


def binary_f1(predicted, actual) -> float:
    """F1 of the positive class; 0 when precision + recall is 0."""
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def precision_recall_f1(predicted, actual) -> tuple[float, float, float]:
    predicted = np.asarray(predicted, dtype=bool)
    actual = np.asarray(actual, dtype=bool)
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def macro_f1(predictions: dict[tuple[int, int], bool], dataset: LabeledDataset, split: str) -> float:
    """Unweighted mean of per-class F1 over the given split."""
    scores = []
    for cls in sorted(dataset.classes):
        items = dataset.of_class(cls, split)
        if not items:
            continue
        predicted = [predictions[(it.concept, it.cls)] for it in items]
        actual = [it.positive for it in items]
        scores.append(binary_f1(predicted, actual))
    if not scores:
        raise ValueError(f"no items in split {split!r}")
    return float(np.mean(scores))


@dataclass
class ClassReport:
    name: str
    precision: float
    recall: float
    f1: float


@dataclass
class ClassificationReport:
    per_class: list[ClassReport]
    macro: float
    skipped: list[str] = field(default_factory=list)

    def lines(self):
        yield "class\tprecision\trecall\tf1"
        for cr in self.per_class:
            yield f"{cr.name}\t{cr.precision:.4f}\t{cr.recall:.4f}\t{cr.f1:.4f}"
        yield f"MACRO\t\t\t{self.macro:.4f}"


def evaluate_linear_classification(
    dataset: LabeledDataset,
    table: ConceptEmbeddingTable,
    c_grid=DEFAULT_C_GRID,
    seed: int = 0,
    balanced: bool = False,
) -> ClassificationReport:
    """Full per-class protocol on the test split."""
    reports, skipped, scores = [], [], []
    for cls in sorted(dataset.classes):
        train = [(it.concept, it.positive) for it in dataset.of_class(cls, "train")]
        dev = [(it.concept, it.positive) for it in dataset.of_class(cls, "dev")]
        test = dataset.of_class(cls, "test")
        if {lab for _, lab in train} != {True, False} or not test:
            skipped.append(dataset.classes[cls])
            continue
        clf = train_linear(train, dev, table, c_grid, seed=seed, balanced=balanced)
        X = np.asarray([table.vector(it.concept) for it in test], dtype=np.float64)
        predicted = clf.predict(X)
        actual = [it.positive for it in test]
        p, r, f1 = precision_recall_f1(predicted, actual)
        reports.append(ClassReport(dataset.classes[cls], p, r, f1))
        scores.append(f1)
    if not scores:
        raise ValueError("no class could be evaluated")
    return ClassificationReport(reports, float(np.mean(scores)), skipped)


# --- mention-set classifier ------------------------------------------------


@dataclass
class MentionClassifierConfig:
    hidden: int = 64
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0


@dataclass
class MentionSetClassifier:
    """Shared per-mention dense layer + ReLU, coordinatewise max over a
    concept's mentions, affine + logistic output."""

    w1: np.ndarray  # (hidden, dim)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: float

    def score(self, mentions: np.ndarray) -> float:
        """Probability that the concept holds the class property."""
        act = self.w1 @ np.asarray(mentions, dtype=np.float64).T + self.b1[:, None]
        pooled = np.maximum(act, 0.0).max(axis=1)
        z = self.w2 @ pooled + self.b2
        return float(1.0 / (1.0 + math.exp(-z)))

    def predict(self, mentions: np.ndarray) -> bool:
        return self.score(mentions) >= 0.5


def _mention_forward_backward(params: MentionSetClassifier, bags, labels):
    """Mean binary cross-entropy over bags and its exact gradient.

    Max-pool gradients are routed to the first maximising mention per hidden
    unit; units pooled at 0 (all activations non-positive) get no gradient.
    """
    gw1 = np.zeros_like(params.w1)
    gb1 = np.zeros_like(params.b1)
    gw2 = np.zeros_like(params.w2)
    gb2 = 0.0
    total = 0.0
    inv = 1.0 / len(bags)
    for bag, label in zip(bags, labels):
        X = np.asarray(bag, dtype=np.float64)
        act = params.w1 @ X.T + params.b1[:, None]
        hidden = np.maximum(act, 0.0)
        winner = hidden.argmax(axis=1)
        pooled = hidden[np.arange(len(hidden)), winner]
        z = params.w2 @ pooled + params.b2
        p = 1.0 / (1.0 + math.exp(-z))
        eps = 1e-12
        total -= math.log(p + eps) if label else math.log(1.0 - p + eps)

        dz = (p - (1.0 if label else 0.0)) * inv
        gw2 += dz * pooled
        gb2 += dz
        dpool = dz * params.w2
        live = pooled > 0.0
        dact = np.where(live, dpool, 0.0)
        np.add.at(gw1, np.arange(len(dact)), dact[:, None] * X[winner])
        gb1 += dact
    return total * inv, (gw1, gb1, gw2, gb2)


def train_mention_classifier(
    train: list[tuple[int, bool]],
    dev: list[tuple[int, bool]],
    store: MentionStore,
    config: MentionClassifierConfig | None = None,
) -> MentionSetClassifier:
    """Adam on binary cross-entropy, early stopping on dev F1."""
    config = config or MentionClassifierConfig()
    for concept, _ in train:
        if len(store.mentions_of(concept)) == 0:
            raise ValueError(f"concept {concept} has no mentions")
    rng = np.random.default_rng(config.seed)
    dim = store.dim
    h = config.hidden
    params = MentionSetClassifier(
        rng.uniform(-math.sqrt(6 / (h + dim)), math.sqrt(6 / (h + dim)), (h, dim)),
        np.zeros(h),
        rng.uniform(-math.sqrt(6 / (h + 1)), math.sqrt(6 / (h + 1)), h),
        0.0,
    )
    bags = {c: store.vectors[store.mentions_of(c)].astype(np.float64) for c, _ in train + dev}

    moments = [
        (np.zeros_like(params.w1), np.zeros_like(params.w1)),
        (np.zeros_like(params.b1), np.zeros_like(params.b1)),
        (np.zeros_like(params.w2), np.zeros_like(params.w2)),
        (0.0, 0.0),
    ]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0

    def dev_f1() -> float:
        if not dev:
            return 0.0
        predicted = [params.score(bags[c]) >= 0.5 for c, _ in dev]
        return binary_f1(predicted, [lab for _, lab in dev])

    best_f1 = dev_f1()
    best = _copy_params(params)
    stale = 0
    order_idx = np.arange(len(train))
    for _ in range(config.max_epochs):
        rng.shuffle(order_idx)
        for start in range(0, len(train), config.batch_size):
            chunk = [train[i] for i in order_idx[start : start + config.batch_size]]
            batch_bags = [bags[c] for c, _ in chunk]
            batch_labels = [lab for _, lab in chunk]
            loss, grads = _mention_forward_backward(params, batch_bags, batch_labels)
            if not math.isfinite(loss):
                raise RuntimeError("mention classifier diverged")
            t += 1
            updated = []
            for (m, v), g, value in zip(
                moments, grads, (params.w1, params.b1, params.w2, params.b2)
            ):
                m = beta1 * m + (1 - beta1) * g
                v = beta2 * v + (1 - beta2) * np.square(g)
                mhat = m / (1 - beta1**t)
                vhat = v / (1 - beta2**t)
                value = value - config.lr * mhat / (np.sqrt(vhat) + eps)
                updated.append(((m, v), value))
            moments = [u[0] for u in updated]
            params.w1, params.b1, params.w2 = (
                updated[0][1],
                updated[1][1],
                updated[2][1],
            )
            params.b2 = float(updated[3][1])
        score = dev_f1()
        if score > best_f1 + 1e-12:
            best_f1 = score
            best = _copy_params(params)
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best


def _copy_params(p: MentionSetClassifier) -> MentionSetClassifier:
    return MentionSetClassifier(p.w1.copy(), p.b1.copy(), p.w2.copy(), float(p.b2))


def evaluate_mention_classification(
    dataset: LabeledDataset,
    store: MentionStore,
    config: MentionClassifierConfig | None = None,
) -> ClassificationReport:
    reports, skipped, scores = [], [], []
    base = config or MentionClassifierConfig()
    for cls in sorted(dataset.classes):
        train = [(it.concept, it.positive) for it in dataset.of_class(cls, "train")]
        dev = [(it.concept, it.positive) for it in dataset.of_class(cls, "dev")]
        test = dataset.of_class(cls, "test")
        if {lab for _, lab in train} != {True, False} or not test:
            skipped.append(dataset.classes[cls])
            continue
        clf = train_mention_classifier(train, dev, store, base)
        predicted = [
            clf.predict(store.vectors[store.mentions_of(it.concept)]) for it in test
        ]
        actual = [it.positive for it in test]
        p, r, f1 = precision_recall_f1(predicted, actual)
        reports.append(ClassReport(dataset.classes[cls], p, r, f1))
        scores.append(f1)
    if not scores:
        raise ValueError("no class could be evaluated")
    return ClassificationReport(reports, float(np.mean(scores)), skipped)


# --- clustering ------------------------------------------------------------


@dataclass
class KMeansRun:
    labels: np.ndarray
    inertia_trace: list[float]
    initial_centers: np.ndarray
    purity: float


@dataclass
class ClusteringReport:
    runs: list[KMeansRun]

    @property
    def purities(self) -> list[float]:
        return [r.purity for r in self.runs]

    @property
    def mean_purity(self) -> float:
        return float(np.mean(self.purities))

    @property
    def std_purity(self) -> float:
        return float(np.std(self.purities))

    def lines(self):
        for i, p in enumerate(self.purities):
            yield f"restart_{i}\t{p:.4f}"
        yield f"mean\t{self.mean_purity:.4f}"
        yield f"std\t{self.std_purity:.4f}"


def _plusplus_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    """Each new center drawn with probability proportional to squared
    distance from the centers chosen so far."""
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    dist = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = dist.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=dist / total))
        centers[c] = points[idx]
        dist = np.minimum(dist, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def lloyd_iterations(points: np.ndarray, centers: np.ndarray, max_iter=300, tol=1e-6):
    """Assignment/update loop; returns (labels, inertia trace).

    Ties in assignment go to the lowest center index; an emptied cluster is
    re-seeded with the point farthest from its current center.
    """
    centers = centers.copy()
    k = len(centers)
    prev_labels = None
    prev_inertia = None
    trace = []
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(len(points)), labels].sum())
        trace.append(inertia)
        if prev_labels is not None and np.array_equal(labels, prev_labels):
            break
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = points[members].mean(axis=0)
            else:
                farthest = int(d2[np.arange(len(points)), labels].argmax())
                centers[c] = points[farthest]
        if prev_inertia is not None and prev_inertia - inertia <= tol * prev_inertia:
            break
        prev_labels, prev_inertia = labels, inertia
    return labels, trace


def purity(labels: np.ndarray, gold: np.ndarray) -> float:
    total = 0
    for c in np.unique(labels):
        members = gold[labels == c]
        _, counts = np.unique(members, return_counts=True)
        total += int(counts.max())
    return total / len(gold)


def kmeans_purity(
    table: ConceptEmbeddingTable,
    gold: dict[int, str],
    k: int,
    restarts: int = 10,
    seed: int = 0,
) -> ClusteringReport:
    """Mean purity of seeded k-means restarts (k = number of categories)."""
    concepts = sorted(c for c in gold if c in table)
    if k < 1:
        raise ValueError("k must be >= 1")
    if not concepts:
        raise ValueError("no labelled concepts with embeddings")
    if k > len(concepts):
        raise ValueError("k exceeds the number of concepts")
    points = np.asarray([table.vector(c) for c in concepts], dtype=np.float64)
    categories = sorted({gold[c] for c in concepts})
    cat_ids = np.asarray([categories.index(gold[c]) for c in concepts])
    runs = []
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        centers = _plusplus_init(points, k, rng)
        labels, trace = lloyd_iterations(points, centers)
        runs.append(KMeansRun(labels, trace, centers, purity(labels, cat_ids)))
    return ClusteringReport(runs)
