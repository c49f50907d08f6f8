"""Supervised contrastive training of a linear projection over mention vectors.

The projection A (m x n) is trained so that cosine(A x, A y) is high exactly
for mined positive pairs.  Per batch element i with in-batch positive
positions P_i, the loss is

    sum_i  -1/|P_i|  sum_{p in P_i}  log  exp(cos(e_i, e_p)/tau)
                                         -------------------------------
                                         sum_{j != i} exp(cos(e_i, e_j)/tau)

Anchors with empty P_i contribute nothing (the -1/|P_i| weight is undefined
there).  Log-sum-exp is max-subtracted; every accumulation runs in float64.
The gradient with respect to A is analytic (chain rule through the cosine of
projected vectors) and is checked against central finite differences in the
test suite.  Optimisation is decoupled-weight-decay Adam with a cosine
warm-up for the first epochs followed by cosine decay, early stopping on a
held-out validation split, best-checkpoint semantics.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .distsup import PropertyGroup
from .mining import PairSet
from .store import MentionStore, StoreFormatError

MAGIC_PROJECTION = b"CPRJ"
_PRJ_HEADER = struct.Struct("<4sIII")


@dataclass
class ProjectionModel:
    """Linear map from mention space (n) to concept space (m), row-major."""

    matrix: np.ndarray  # (m, n) float64

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise ValueError("projection matrix must be 2-D with m >= 1")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("non-finite projection entry")

    @property
    def m(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]


def save_projection(model: ProjectionModel, path) -> None:
    """CPRJ file: magic, version, m, n, then row-major f32 entries."""
    with open(path, "wb") as fh:
        fh.write(_PRJ_HEADER.pack(MAGIC_PROJECTION, 1, model.m, model.n))
        fh.write(model.matrix.astype("<f4").tobytes())


def load_projection(path) -> ProjectionModel:
    with open(path, "rb") as fh:
        header = fh.read(_PRJ_HEADER.size)
        if len(header) != _PRJ_HEADER.size:
            raise StoreFormatError("truncated projection header")
        magic, version, m, n = _PRJ_HEADER.unpack(header)
        if magic != MAGIC_PROJECTION:
            raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC_PROJECTION!r}")
        if version != 1:
            raise StoreFormatError(f"unsupported projection version {version}")
        raw = fh.read(4 * m * n)
        if len(raw) != 4 * m * n:
            raise StoreFormatError("truncated projection payload")
        if fh.read(1):
            raise StoreFormatError("trailing bytes after projection")
    matrix = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(m, n)
    if not np.all(np.isfinite(matrix)):
        raise StoreFormatError("non-finite float in projection")
    return ProjectionModel(matrix)


@dataclass
class TrainConfig:
    """Contrastive-training hyperparameters.

    Defaults follow the reference recipe: temperature 0.05, learning rate
    2e-4 with cosine warm-up over the first 2 epochs, early stopping with
    patience 10 and minimum improvement 1e-10, 1024 pairs per batch for the
    neighbourhood strategy and 50 sentences per sampled property for the
    distant-supervision strategy.  ``batch_pairs`` doubles as the element
    budget of a group batch.  lr = 0 is legal and leaves the model at its
    initialisation.
    """

    out_dim: int = 256
    tau: float = 0.05
    lr: float = 2e-4
    warmup_epochs: int = 2
    patience: int = 10
    min_delta: float = 1e-10
    batch_pairs: int = 1024
    group_sample: int = 50
    max_epochs: int = 100
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")


@dataclass
class Batch:
    """Record indices plus, per element, the positions of its positives."""

    elements: list[int]
    positives: list[frozenset[int]]

    def __post_init__(self):
        if len(self.elements) != len(self.positives):
            raise ValueError("elements/positives length mismatch")
        for i, pos in enumerate(self.positives):
            if i in pos:
                raise ValueError(f"element {i} is its own positive")
            for j in pos:
                if i not in self.positives[j]:
                    raise ValueError(f"positive sets not symmetric at ({i}, {j})")

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def has_positives(self) -> bool:
        return any(self.positives)


def _unit_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms == 0.0, 1.0, norms)
    return vectors / safe[:, None], norms


def _loss_terms(similarity: np.ndarray, batch: Batch, tau: float):
    """Per-anchor loss pieces from a (B, B) cosine matrix.

    Returns (loss, active anchor indices, softmax matrix q with zeroed
    diagonal, positive-indicator weights).  q rows for inactive anchors are
    still computed; callers mask them.
    """
    b = similarity.shape[0]
    logits = similarity / tau
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1)
    shifted = np.exp(logits - row_max[:, None])
    denom = shifted.sum(axis=1)
    lse = row_max + np.log(denom)
    q = shifted / denom[:, None]

    loss = 0.0
    pos_weight = np.zeros((b, b))
    active = []
    for i, pos in enumerate(batch.positives):
        if not pos:
            continue
        active.append(i)
        inv = 1.0 / len(pos)
        for p in pos:
            loss += inv * (lse[i] - logits[i, p])
            pos_weight[i, p] = inv
    return loss, active, q, pos_weight


def sup_con_loss(embeddings, batch: Batch, tau: float) -> float:
    """Supervised contrastive loss of given embeddings under a batch layout."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.shape[0] != len(batch):
        raise ValueError("embedding count does not match batch size")
    if len(batch) < 2:
        raise ValueError("batch must hold at least 2 elements")
    if not batch.has_positives:
        raise ValueError("every positive set in the batch is empty")
    unit, _ = _unit_rows(emb)
    similarity = unit @ unit.T
    loss, _, _, _ = _loss_terms(similarity, batch, tau)
    return float(loss)


def loss_and_gradient(
    store: MentionStore, batch: Batch, model: ProjectionModel, tau: float
) -> tuple[float, np.ndarray]:
    """Loss and exact dLoss/dA for a batch of projected mention vectors."""
    if len(batch) < 2:
        raise ValueError("batch must hold at least 2 elements")
    if not batch.has_positives:
        raise ValueError("every positive set in the batch is empty")
    if model.n != store.dim:
        raise ValueError(f"model expects dim {model.n}, store has {store.dim}")
    vectors = store.vectors[batch.elements].astype(np.float64)
    projected = vectors @ model.matrix.T
    unit, norms = _unit_rows(projected)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise RuntimeError(
            f"projected vector of record {batch.elements[bad]} has zero norm; "
            "the projection collapsed - re-seed the initialisation or lower the "
            "learning rate"
        )
    similarity = unit @ unit.T
    loss, active, q, pos_weight = _loss_terms(similarity, batch, tau)

    grad_s = np.zeros_like(q)
    if active:
        act = np.asarray(active)
        grad_s[act] = (q[act] - pos_weight[act]) / tau
    np.fill_diagonal(grad_s, 0.0)

    d_unit = (grad_s + grad_s.T) @ unit
    radial = np.einsum("ij,ij->i", d_unit, unit)
    d_proj = (d_unit - radial[:, None] * unit) / norms[:, None]
    grad = d_proj.T @ vectors
    return float(loss), grad


def init_projection(out_dim: int, in_dim: int, seed) -> ProjectionModel:
    """Fan-balanced uniform init: entries in +-sqrt(6 / (m + n))."""
    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (out_dim + in_dim))
    return ProjectionModel(rng.uniform(-bound, bound, size=(out_dim, in_dim)))


def project_store(store: MentionStore, model: ProjectionModel) -> MentionStore:
    """New store with every vector replaced by A @ vector (identities kept)."""
    if model.n != store.dim:
        raise ValueError(f"model expects dim {model.n}, store has {store.dim}")
    projected = (store.vectors.astype(np.float64) @ model.matrix.T).astype(np.float32)
    return MentionStore(model.m, store.vocab, store.concepts, store.sentences, projected)


def sample_batch_pairs(pairs: PairSet, batch_pairs: int, rng) -> Batch:
    """Batch from sampled pairs; positives are closed under the full pair set
    restricted to the batch, not only the sampled pairs."""
    if len(pairs) == 0:
        raise ValueError("empty pair set")
    if len(pairs) > batch_pairs:
        chosen = [pairs.pairs[i] for i in rng.permutation(len(pairs))[:batch_pairs]]
    else:
        chosen = list(pairs.pairs)
    elements = sorted({i for pair in chosen for i in pair})
    position = {rec: pos for pos, rec in enumerate(elements)}
    adjacency = _pair_adjacency(pairs)
    positives = []
    for rec in elements:
        partners = adjacency.get(rec, ())
        positives.append(frozenset(position[p] for p in partners if p in position))
    return Batch(elements, positives)


def _pair_adjacency(pairs: PairSet) -> dict[int, set[int]]:
    cached = getattr(pairs, "_adjacency_cache", None)
    if cached is not None:
        return cached
    adjacency: dict[int, set[int]] = {}
    for i, j in pairs.pairs:
        adjacency.setdefault(i, set()).add(j)
        adjacency.setdefault(j, set()).add(i)
    object.__setattr__(pairs, "_adjacency_cache", adjacency)
    return adjacency


@dataclass
class ResolvedGroups:
    """Property groups resolved to record indices for batch assembly."""

    names: list[str]
    records: list[list[int]]
    record_props: dict[int, set[int]]  # record -> indices of groups holding it
    dropped_members: int = 0


def resolve_groups(groups: list[PropertyGroup], store: MentionStore) -> ResolvedGroups:
    names, recs = [], []
    record_props: dict[int, set[int]] = {}
    dropped = 0
    for group in sorted(groups, key=lambda g: g.property):
        members = []
        for sentence_id, concept_id in group.members:
            hits = store.records_for(concept_id, sentence_id)
            if hits:
                members.append(hits[0])
            else:
                dropped += 1
        if members:
            gi = len(names)
            names.append(group.property)
            recs.append(members)
            for r in members:
                record_props.setdefault(r, set()).add(gi)
    return ResolvedGroups(names, recs, record_props, dropped)


def _group_positives(elements: list[int], resolved: ResolvedGroups, store: MentionStore):
    position = {rec: pos for pos, rec in enumerate(elements)}
    positives: list[set[int]] = [set() for _ in elements]
    for gi in {g for rec in elements for g in resolved.record_props.get(rec, ())}:
        members = [r for r in resolved.records[gi] if r in position]
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                i, j = members[a], members[b]
                if store.sentences[i] != store.sentences[j]:
                    positives[position[i]].add(position[j])
                    positives[position[j]].add(position[i])
    return [frozenset(p) for p in positives]


def iter_group_batches(
    resolved: ResolvedGroups,
    store: MentionStore,
    group_sample: int,
    target_size: int,
    rng,
):
    """One epoch pass: properties shuffled and consumed without replacement,
    up to ``group_sample`` members per property, batches of ``target_size``."""
    order = rng.permutation(len(resolved.names))
    elements: list[int] = []
    seen: set[int] = set()
    for gi in order:
        members = resolved.records[gi]
        take = min(group_sample, len(members))
        if take < len(members):
            picked = [members[i] for i in rng.permutation(len(members))[:take]]
        else:
            picked = list(members)
        for rec in picked:
            if len(elements) >= target_size:
                break
            if rec not in seen:
                seen.add(rec)
                elements.append(rec)
        if len(elements) >= target_size:
            batch = Batch(elements, _group_positives(elements, resolved, store))
            if len(batch) >= 2 and batch.has_positives:
                yield batch
            elements, seen = [], set()
    if len(elements) >= 2:
        batch = Batch(elements, _group_positives(elements, resolved, store))
        if batch.has_positives:
            yield batch


def sample_batch_groups(
    groups: list[PropertyGroup],
    group_sample: int,
    target_size: int,
    rng,
    store: MentionStore,
) -> Batch:
    """A single group-strategy batch (first batch of a fresh epoch pass)."""
    if not groups:
        raise ValueError("no property groups")
    resolved = resolve_groups(groups, store)
    for batch in iter_group_batches(resolved, store, group_sample, target_size, rng):
        return batch
    raise ValueError("groups yield no batch with positives")


def _stable_hash(*parts) -> int:
    digest = hashlib.blake2b(chr(0).join(map(str, parts)).encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def _split_pairs(pairs: PairSet) -> tuple[PairSet, PairSet]:
    """Deterministic 90/10 train/validation split by pair hash."""
    train, val = [], []
    for i, j in pairs.pairs:
        (val if _stable_hash(i, j) % 10 == 0 else train).append((i, j))
    if not val and train:
        train.sort(key=lambda p: _stable_hash(*p))
        val.append(train.pop())
    if not train:
        raise ValueError("too few pairs to split off a validation set")
    meta = dict(k=pairs.k, theta=pairs.theta)
    return PairSet.from_pairs(train, **meta), PairSet.from_pairs(val, **meta)


def _split_groups(groups: list[PropertyGroup]):
    """Hold out whole properties by hash; degrade to member-level splitting
    when only one property exists."""
    train, val = [], []
    for g in sorted(groups, key=lambda g: g.property):
        (val if _stable_hash(g.property) % 10 == 0 else train).append(g)
    if not val and len(train) > 1:
        train.sort(key=lambda g: _stable_hash(g.property))
        val.append(train.pop(0))
        train.sort(key=lambda g: g.property)
    if not train and len(val) > 1:
        val.sort(key=lambda g: _stable_hash(g.property))
        train.append(val.pop(0))
        val.sort(key=lambda g: g.property)
    if not val or not train:
        if len(groups) != 1:
            raise ValueError("cannot split groups into train and validation")
        only = groups[0]
        vm = [m for m in only.members if _stable_hash(*m) % 10 == 0] or [only.members[0]]
        tm = [m for m in only.members if m not in set(vm)]
        if len(tm) < 2:
            raise ValueError("single group too small to split")
        train = [PropertyGroup(only.property, tm)]
        val = [PropertyGroup(only.property, vm + tm[: max(0, 2 - len(vm))])]
    return train, val


class _Adam:
    """Decoupled-weight-decay adaptive-moment step on a single matrix."""

    def __init__(self, shape, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grad, lr, weight_decay):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1**self.t)
        vhat = self.v / (1 - self.beta2**self.t)
        params -= lr * (mhat / (np.sqrt(vhat) + self.eps) + weight_decay * params)


def cosine_warmup_lr(base_lr, epoch_frac, warmup_epochs, max_epochs) -> float:
    """Cosine warm-up to base_lr over ``warmup_epochs`` then cosine decay."""
    if warmup_epochs > 0 and epoch_frac < warmup_epochs:
        return base_lr * 0.5 * (1.0 - math.cos(math.pi * epoch_frac / warmup_epochs))
    span = max(max_epochs - warmup_epochs, 1e-9)
    progress = min((epoch_frac - warmup_epochs) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_projection(
    store: MentionStore,
    pairs_or_groups,
    config: TrainConfig,
    log_path=None,
) -> ProjectionModel:
    """Train the projection on mined pairs or property groups.

    Validation data is split off deterministically (10% by stable hash) and
    never trained on; early stopping watches the validation loss and the
    returned model is the checkpoint with the lowest one seen.
    """
    grouped = not isinstance(pairs_or_groups, PairSet)
    rng = np.random.default_rng((config.seed, 1))
    val_rng = np.random.default_rng((config.seed, 2))

    if grouped:
        train_groups, val_groups = _split_groups(list(pairs_or_groups))
        train_res = resolve_groups(train_groups, store)
        val_res = resolve_groups(val_groups, store)
        val_batches = list(
            iter_group_batches(
                val_res, store, config.group_sample, config.batch_pairs, val_rng
            )
        )
        steps_per_epoch = max(
            1, math.ceil(sum(len(r) for r in train_res.records) / config.batch_pairs)
        )
    else:
        train_pairs, val_pairs = _split_pairs(pairs_or_groups)
        val_batches = [
            sample_batch_pairs(val_pairs, config.batch_pairs, val_rng)
            for _ in range(max(1, math.ceil(len(val_pairs) / config.batch_pairs)))
        ]
        steps_per_epoch = max(1, math.ceil(len(train_pairs) / config.batch_pairs))
    if not val_batches:
        raise ValueError("validation split produced no usable batch")

    model = init_projection(config.out_dim, store.dim, (config.seed, 0))
    optimizer = _Adam(model.matrix.shape)

    def val_loss() -> float:
        total = 0.0
        for batch in val_batches:
            loss, _ = loss_and_gradient(store, batch, model, config.tau)
            total += loss
        return total / len(val_batches)

    best_val = val_loss()
    best_matrix = model.matrix.copy()
    stale = 0
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        step = 0
        for epoch in range(1, config.max_epochs + 1):
            epoch_train = 0.0
            batches = 0
            if grouped:
                batch_iter = iter_group_batches(
                    train_res, store, config.group_sample, config.batch_pairs, rng
                )
            else:
                batch_iter = (
                    sample_batch_pairs(train_pairs, config.batch_pairs, rng)
                    for _ in range(steps_per_epoch)
                )
            lr_now = 0.0
            for batch in batch_iter:
                lr_now = cosine_warmup_lr(
                    config.lr, step / steps_per_epoch, config.warmup_epochs, config.max_epochs
                )
                loss, grad = loss_and_gradient(store, batch, model, config.tau)
                if not math.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged at epoch {epoch}: loss {loss}"
                    )
                optimizer.step(model.matrix, grad, lr_now, config.weight_decay)
                epoch_train += loss
                batches += 1
                step += 1
            current = val_loss()
            if not math.isfinite(current):
                raise RuntimeError(f"validation loss diverged at epoch {epoch}")
            if log:
                avg = epoch_train / max(batches, 1)
                log.write(f"{epoch}\t{avg:.10g}\t{current:.10g}\t{lr_now:.10g}\n")
            if current < best_val - config.min_delta:
                best_val = current
                best_matrix = model.matrix.copy()
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    finally:
        if log:
            log.close()
    return ProjectionModel(best_matrix)
