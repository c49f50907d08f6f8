"""Loss values, analytic gradients, batch samplers and the training loop."""

import math

import numpy as np
import pytest

from condist import (
    Batch,
    PairSet,
    ProjectionModel,
    TrainConfig,
    build_store,
    init_projection,
    load_projection,
    loss_and_gradient,
    project_store,
    sample_batch_groups,
    sample_batch_pairs,
    save_projection,
    sup_con_loss,
    train_projection,
)
from condist.distsup import PropertyGroup
from conftest import (
    make_property_fixture,
    make_random_store,
    property_pairs,
    property_separation,
    sup_con_loss_oracle,
)


def random_batch(rng, size, n_pairs):
    positives = [set() for _ in range(size)]
    while not any(positives):
        for _ in range(n_pairs):
            i, j = rng.integers(size, size=2)
            if i != j:
                positives[int(i)].add(int(j))
                positives[int(j)].add(int(i))
    return Batch(list(range(size)), [frozenset(p) for p in positives])


def test_two_element_mutual_positive_loss_is_zero():
    emb = [[1.0, 0.0], [0.0, 1.0]]
    batch = Batch([0, 1], [frozenset({1}), frozenset({0})])
    assert sup_con_loss(emb, batch, 0.05) == 0.0


def test_three_orthogonal_one_pair_tau_one():
    emb = np.eye(3)
    batch = Batch([0, 1, 2], [frozenset({1}), frozenset({0}), frozenset()])
    loss = sup_con_loss(emb, batch, 1.0)
    assert abs(loss - 2.0 * math.log(2.0)) < 1e-12


def test_identical_embeddings_closed_form():
    b = 6
    emb = np.tile([0.3, -0.7, 0.9], (b, 1))
    positives = [frozenset({(i + 1) % b, (i + 2) % b}) - {i} for i in range(b)]
    # make symmetric: j in pos[i] <=> i in pos[j]
    sym = [set() for _ in range(b)]
    for i, pos in enumerate(positives):
        for j in pos:
            sym[i].add(j)
            sym[j].add(i)
    batch = Batch(list(range(b)), [frozenset(s) for s in sym])
    active = sum(1 for s in sym if s)
    loss = sup_con_loss(emb, batch, 0.05)
    assert abs(loss - active * math.log(b - 1)) < 1e-9
    oracle = sup_con_loss_oracle(emb, sym, 0.05)
    assert abs(loss - oracle) < 1e-10


def test_matches_naive_oracle_random_batches():
    rng = np.random.default_rng(30)
    for _ in range(10):
        size = int(rng.integers(3, 9))
        emb = rng.normal(size=(size, 5))
        batch = random_batch(rng, size, int(rng.integers(1, 8)))
        mine = sup_con_loss(emb, batch, 0.05)
        theirs = sup_con_loss_oracle(emb, [set(p) for p in batch.positives], 0.05)
        assert abs(mine - theirs) <= 1e-10 * max(1.0, abs(theirs))


def test_loss_non_negative():
    rng = np.random.default_rng(31)
    for _ in range(20):
        size = int(rng.integers(2, 10))
        emb = rng.normal(size=(size, 4))
        batch = random_batch(rng, size, 5)
        assert sup_con_loss(emb, batch, 0.05) >= 0.0


def test_numerator_appears_in_denominator():
    # single-anchor batch whose positive is its most similar partner: if the
    # positive's own exp term were missing from the denominator the anchor
    # term would be log(exp(s01)/exp(s02)) < 0; with it the term is the
    # softmax log-probability and must equal the hand-built value
    emb = np.asarray([[1.0, 0.0], [0.99, 0.14], [0.0, 1.0]])
    batch = Batch([0, 1, 2], [frozenset({1}), frozenset({0}), frozenset()])
    tau = 1.0
    unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    s = unit @ unit.T
    expected = -np.log(np.exp(s[0, 1]) / (np.exp(s[0, 1]) + np.exp(s[0, 2])))
    expected += -np.log(np.exp(s[1, 0]) / (np.exp(s[1, 0]) + np.exp(s[1, 2])))
    loss = sup_con_loss(emb, batch, tau)
    assert loss >= 0.0
    assert abs(loss - expected) < 1e-12


def test_loss_errors():
    with pytest.raises(ValueError, match="at least 2"):
        sup_con_loss([[1.0]], Batch([0], [frozenset()]), 0.05)
    batch = Batch([0, 1], [frozenset(), frozenset()])
    with pytest.raises(ValueError, match="positive"):
        sup_con_loss([[1.0, 0.0], [0.0, 1.0]], batch, 0.05)


def test_loss_invariant_under_store_scaling():
    rng = np.random.default_rng(32)
    emb = rng.normal(size=(6, 4))
    batch = random_batch(rng, 6, 4)
    base = sup_con_loss(emb, batch, 0.05)
    scaled = sup_con_loss(emb * 2.0, batch, 0.05)
    assert abs(base - scaled) < 1e-12


def test_batch_symmetry_enforced():
    with pytest.raises(ValueError, match="symmetric"):
        Batch([0, 1], [frozenset({1}), frozenset()])
    with pytest.raises(ValueError, match="own positive"):
        Batch([0, 1], [frozenset({0, 1}), frozenset({0})])


def finite_difference(store, batch, matrix, tau, h=1e-4):
    grad = np.zeros_like(matrix)
    for r in range(matrix.shape[0]):
        for c in range(matrix.shape[1]):
            plus, minus = matrix.copy(), matrix.copy()
            plus[r, c] += h
            minus[r, c] -= h
            lp, _ = loss_and_gradient(store, batch, ProjectionModel(plus), tau)
            lm, _ = loss_and_gradient(store, batch, ProjectionModel(minus), tau)
            grad[r, c] = (lp - lm) / (2 * h)
    return grad


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(33)
    for _ in range(6):
        n, m = int(rng.integers(3, 12)), int(rng.integers(2, 8))
        size = int(rng.integers(3, 12))
        st = build_store(n, [(f"c{i % 3}", i, rng.normal(size=n)) for i in range(size)])
        batch = random_batch(rng, size, 6)
        A = rng.normal(size=(m, n))
        _, grad = loss_and_gradient(st, batch, ProjectionModel(A), 0.05)
        fd = finite_difference(st, batch, A, 0.05)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert (np.abs(grad - fd) / denom).max() < 1e-5


def test_loss_unchanged_gradient_shrinks_when_matrix_scaled():
    rng = np.random.default_rng(34)
    st = build_store(5, [(f"c{i % 2}", i, rng.normal(size=5)) for i in range(6)])
    batch = random_batch(rng, 6, 4)
    A = rng.normal(size=(4, 5))
    gamma = 8.0
    loss1, grad1 = loss_and_gradient(st, batch, ProjectionModel(A), 0.05)
    loss2, grad2 = loss_and_gradient(st, batch, ProjectionModel(gamma * A), 0.05)
    assert abs(loss1 - loss2) < 1e-9
    assert np.allclose(grad2, grad1 / gamma, rtol=1e-7, atol=1e-12)


def test_zero_projection_aborts_with_diagnostic():
    st = build_store(3, [("a", 0, [1, 0, 0]), ("b", 1, [0, 1, 0])])
    batch = Batch([0, 1], [frozenset({1}), frozenset({0})])
    with pytest.raises(RuntimeError, match="zero norm"):
        loss_and_gradient(st, batch, ProjectionModel(np.zeros((2, 3))), 0.05)


def test_sample_single_pair_batch():
    ps = PairSet.from_pairs([(3, 7)])
    batch = sample_batch_pairs(ps, 10, np.random.default_rng(0))
    assert batch.elements == [3, 7]
    assert batch.positives == [frozenset({1}), frozenset({0})]


def test_sample_batch_closure_over_full_pairset():
    ps = PairSet.from_pairs([(0, 1), (1, 2), (0, 2), (3, 4)])
    rng = np.random.default_rng(0)
    batch = sample_batch_pairs(ps, 4, rng)
    pos = {batch.elements[i]: {batch.elements[j] for j in batch.positives[i]} for i in range(len(batch))}
    # 0-2 is in the full set, so whenever 0 and 2 are both in the batch they
    # must be mutual positives even if only {0,1} and {1,2} were sampled
    assert 2 in pos[0] and 0 in pos[2]


def test_sample_batch_determinism():
    rng = np.random.default_rng(77)
    big = PairSet.from_pairs(
        [(i, j) for i in range(30) for j in range(i + 1, 30) if (i + j) % 3]
    )
    a = sample_batch_pairs(big, 12, np.random.default_rng(5))
    b = sample_batch_pairs(big, 12, np.random.default_rng(5))
    assert a.elements == b.elements
    assert a.positives == b.positives
    c = sample_batch_pairs(big, 12, np.random.default_rng(6))
    assert a.elements != c.elements or a.positives != c.positives


def test_sample_batch_empty_pairset():
    with pytest.raises(ValueError, match="empty"):
        sample_batch_pairs(PairSet.from_pairs([]), 4, np.random.default_rng(0))


def group_store(n):
    rng = np.random.default_rng(40)
    return build_store(3, [(f"g{i}", i, rng.normal(size=3)) for i in range(n)])


def test_group_batch_single_group_all_mutual():
    st = group_store(4)
    groups = [PropertyGroup("wet", [(i, i) for i in range(4)])]
    batch = sample_batch_groups(groups, 50, 4, np.random.default_rng(0), st)
    assert sorted(batch.elements) == [0, 1, 2, 3]
    for i in range(4):
        assert batch.positives[i] == frozenset(range(4)) - {i}


def test_group_batch_no_cross_group_positives():
    st = group_store(6)
    groups = [
        PropertyGroup("wet", [(i, i) for i in (0, 1, 2)]),
        PropertyGroup("dry", [(i, i) for i in (3, 4, 5)]),
    ]
    batch = sample_batch_groups(groups, 50, 6, np.random.default_rng(1), st)
    pos = {batch.elements[i]: {batch.elements[j] for j in batch.positives[i]} for i in range(6)}
    for i in (0, 1, 2):
        assert pos[i] <= {0, 1, 2}
    for i in (3, 4, 5):
        assert pos[i] <= {3, 4, 5}


def test_group_batch_same_sentence_not_positive():
    rng = np.random.default_rng(41)
    st = build_store(2, [("a", 9, rng.normal(size=2)), ("b", 9, rng.normal(size=2)), ("c", 1, rng.normal(size=2))])
    groups = [PropertyGroup("p", [(9, 0), (9, 1), (1, 2)])]
    batch = sample_batch_groups(groups, 50, 3, np.random.default_rng(0), st)
    pos = {batch.elements[i]: {batch.elements[j] for j in batch.positives[i]} for i in range(len(batch))}
    assert 1 not in pos[0]  # same sentence id 9
    assert 2 in pos[0] and 2 in pos[1]


def test_group_batch_seeded_reproducible():
    st = group_store(30)
    groups = [
        PropertyGroup(f"p{g}", [(i, i) for i in range(g * 10, g * 10 + 10)])
        for g in range(3)
    ]
    a = sample_batch_groups(groups, 4, 8, np.random.default_rng(3), st)
    b = sample_batch_groups(groups, 4, 8, np.random.default_rng(3), st)
    assert a.elements == b.elements and a.positives == b.positives


def test_project_identity_keeps_store():
    rng = np.random.default_rng(42)
    st = make_random_store(rng, 10, 4, 3)
    out = project_store(st, ProjectionModel(np.eye(4)))
    assert out == st


def test_project_zero_matrix_is_legal():
    rng = np.random.default_rng(43)
    st = make_random_store(rng, 5, 3, 2)
    out = project_store(st, ProjectionModel(np.zeros((2, 3))))
    assert np.all(out.vectors == 0.0)


def test_project_matches_matvec_oracle():
    rng = np.random.default_rng(44)
    st = make_random_store(rng, 20, 6, 4)
    A = rng.normal(size=(3, 6))
    out = project_store(st, ProjectionModel(A))
    for i in range(len(st)):
        expected = A @ st.vectors[i].astype(np.float64)
        assert np.allclose(out.vectors[i], expected, atol=1e-6)


def test_projection_linearity():
    rng = np.random.default_rng(45)
    A = ProjectionModel(rng.normal(size=(4, 5)))
    v, w = rng.normal(size=5), rng.normal(size=5)
    lhs = A.matrix @ (2.5 * v + w)
    rhs = 2.5 * (A.matrix @ v) + A.matrix @ w
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_project_dim_mismatch():
    rng = np.random.default_rng(46)
    st = make_random_store(rng, 4, 3, 2)
    with pytest.raises(ValueError, match="dim"):
        project_store(st, ProjectionModel(np.zeros((2, 7))))


def test_projection_file_roundtrip(tmp_path):
    model = init_projection(4, 6, seed=9)
    path = tmp_path / "proj.cprj"
    save_projection(model, path)
    back = load_projection(path)
    # entries are stored as f32; a loaded model re-saves bit-identically
    save_projection(back, tmp_path / "again.cprj")
    assert path.read_bytes() == (tmp_path / "again.cprj").read_bytes()
    assert back.m == 4 and back.n == 6
    assert np.allclose(back.matrix, model.matrix, atol=1e-7)


def test_lr_zero_leaves_initialisation():
    store, prop_of = make_property_fixture(mentions_per_prop=10)
    pairs = property_pairs(store, prop_of)
    cfg = TrainConfig(out_dim=6, lr=0.0, max_epochs=3, batch_pairs=64, seed=5)
    model = train_projection(store, pairs, cfg)
    init = init_projection(6, store.dim, (5, 0))
    assert np.array_equal(model.matrix, init.matrix)


def test_training_deterministic_across_runs(tmp_path):
    store, prop_of = make_property_fixture(mentions_per_prop=8)
    pairs = property_pairs(store, prop_of)
    cfg = TrainConfig(out_dim=6, lr=1e-3, max_epochs=4, batch_pairs=64, seed=7)
    a = train_projection(store, pairs, cfg, log_path=tmp_path / "a.log")
    b = train_projection(store, pairs, cfg, log_path=tmp_path / "b.log")
    assert np.array_equal(a.matrix, b.matrix)
    assert (tmp_path / "a.log").read_bytes() == (tmp_path / "b.log").read_bytes()
    for line in (tmp_path / "a.log").read_text().splitlines():
        epoch, train_loss, val_loss, lr = line.split("\t")
        assert int(epoch) >= 1
        float(train_loss), float(val_loss), float(lr)


def test_training_separates_properties():
    store, prop_of = make_property_fixture()
    pairs = property_pairs(store, prop_of)
    cfg = TrainConfig(out_dim=16, lr=1e-2, max_epochs=80, batch_pairs=256, seed=1)
    model = train_projection(store, pairs, cfg)
    projected = project_store(store, model)
    within, cross = property_separation(projected, prop_of)
    assert within - cross >= 0.3


def test_training_on_groups_runs():
    rng = np.random.default_rng(50)
    store, prop_of = make_property_fixture(mentions_per_prop=12)
    groups = [
        PropertyGroup(
            f"prop{p}",
            [(int(store.sentences[i]), int(store.concepts[i]))
             for i in range(len(store)) if prop_of[i] == p],
        )
        for p in range(4)
    ]
    cfg = TrainConfig(out_dim=8, lr=5e-3, max_epochs=6, batch_pairs=32, group_sample=8, seed=2)
    model = train_projection(store, groups, cfg)
    assert model.m == 8 and model.n == store.dim
