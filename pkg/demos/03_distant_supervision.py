# Distant supervision from a knowledge-base style concept-property table:
# prune rare properties, match sentences that mention both a concept and one
# of its properties, group them per property, and derive labelled positive
# pairs for training.
#
# Run:  python demos/03_distant_supervision.py

import tempfile
from pathlib import Path

import numpy as np

from condist import (
    build_store,
    load_concept_property_table,
    match_corpus,
    pairs_from_groups,
)

workdir = Path(tempfile.mkdtemp())

(workdir / "props.tsv").write_text(
    "gun\tdangerous\n"
    "knife\tdangerous\n"
    "fire\tdangerous\n"
    "storm\tdangerous\n"
    "lemon\tyellow\n"
    "banana\tyellow\n"
    "sun\tyellow\n"
    "cliff\tsteep\n"      # "steep" appears for 2 concepts only: pruned
    "hill\tsteep\n"
)

sentences = [
    "a gun is dangerous",
    "every knife is dangerous when sharp",
    "the fire was dangerous last night",
    "the gunship is dangerous",          # gunship != gun: no match
    "a lemon is yellow and sour",
    "the sun looks yellow at noon",
    "bananas are yellow",                # plural: unmatched without folding
    "a steep cliff",
]
(workdir / "corpus.txt").write_text("\n".join(sentences) + "\n")

table = load_concept_property_table(workdir / "props.tsv")
print("retained properties:", table.properties)

# mention store: one record per (concept, sentence) occurrence we care about
rng = np.random.default_rng(0)
concepts = ("gun", "knife", "fire", "lemon", "sun", "banana", "storm")
records = []
for sid, sentence in enumerate(sentences):
    for word in sentence.split():
        singular = word[:-1] if word.endswith("s") and word[:-1] in concepts else word
        if singular in concepts:
            records.append((singular, sid, rng.normal(size=4)))
store = build_store(4, records)

groups = match_corpus(workdir / "corpus.txt", table, store.vocab)
for group in groups:
    members = [(sid, store.vocab.word(cid)) for sid, cid in group.members]
    print(f"S_{group.property} = {members}")

pairs = pairs_from_groups(groups, store)
print(f"\n{len(pairs)} positive pairs:")
for i, j in pairs:
    wi = store.vocab.word(int(store.concepts[i]))
    wj = store.vocab.word(int(store.concepts[j]))
    print(f"  ({wi} in s{int(store.sentences[i])}) ~ ({wj} in s{int(store.sentences[j])})"
          f"   [{pairs.groups[(i, j)]}]")

# plural folding picks up "bananas" for concept "banana"
folded = match_corpus(workdir / "corpus.txt", table, store.vocab, plural_fold=True)
yellow = next(g for g in folded if g.property == "yellow")
print("\nwith plural folding, S_yellow gains:",
      [(sid, store.vocab.word(cid)) for sid, cid in yellow.members])
