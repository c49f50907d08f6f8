# Walk through the mention-vector data model and neighbourhood-based pair
# mining on a tiny hand-built scene: two clusters of mentions in 2-D whose
# neighbour concepts overlap even though the vectors themselves do not.
#
# Run:  python demos/01_mine_and_inspect.py

import math

from condist import (
    MiningConfig,
    build_store,
    compatibility,
    filter_idiosyncratic,
    freq,
    knn,
    knn_all,
    mine_neighborhood_pairs,
    mine_word_identity_pairs,
)


def at_angle(word, sentence, degrees):
    rad = math.radians(degrees)
    return (word, sentence, [math.cos(rad), math.sin(rad)])


store = build_store(
    2,
    [
        at_angle("submarine", 0, 0.0),   # record 0: the first query
        at_angle("diver", 1, 3.0),
        at_angle("shark", 2, 5.0),
        at_angle("submarine", 3, 7.0),
        at_angle("coral", 4, 9.0),
        at_angle("whale", 5, 90.0),      # record 5: the second query
        at_angle("diver", 6, 93.0),
        at_angle("shark", 7, 95.0),
        at_angle("coral", 8, 97.0),
        at_angle("coral", 9, 99.0),
    ],
)
print(f"store: {len(store)} mention vectors over {len(store.vocab)} concepts\n")

# ─── nearest neighbours of the two queries ───
for query in (0, 5):
    nl = knn(store, query, 4)
    words = [store.vocab.word(int(store.concepts[i])) for i in nl.indices]
    print(f"neigh(record {query}) -> {words}")

# ─── neighbour-concept frequencies and the compatibility degree ───
neighbors = knn_all(store, 4)
print("\nper-concept frequencies in the two neighbourhoods:")
for word in ("diver", "shark", "submarine", "coral"):
    cid = store.vocab.id(word)
    fx = freq(cid, [int(i) for i in neighbors[0].indices], store)
    fy = freq(cid, [int(i) for i in neighbors[5].indices], store)
    print(f"  {word:<10} query0: {fx}   query5: {fy}")

pi = compatibility(0, 5, neighbors, store)
print(f"\ncompatibility(record 0, record 5) = {pi}  (exact rational)")

# ─── mining positive pairs ───
pairs = mine_neighborhood_pairs(store, MiningConfig(k_compat=4, theta="1/2"))
print(f"\nmined {len(pairs)} pairs at theta=1/2:")
for i, j in pairs:
    wi = store.vocab.word(int(store.concepts[i]))
    wj = store.vocab.word(int(store.concepts[j]))
    print(f"  ({i:>2}, {j:>2})  {wi} ~ {wj}")

# the word-identity ablation pairs mentions of the same concept instead
word_pairs = mine_word_identity_pairs(store)
print(f"\nword-identity pairing would give {len(word_pairs)} pairs instead")

# ─── idiosyncratic mentions ───
kept = filter_idiosyncratic(store, 3)
dropped = sorted(set(range(len(store))) - kept)
print(f"\nidiosyncrasy filter (k=3) keeps {len(kept)} records, drops {dropped}")
