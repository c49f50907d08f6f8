"""Distant supervision from concept-property triples.

A knowledge-base style table of (concept, property) pairs is pruned of rare
properties, then a sentence corpus is scanned: a sentence that mentions both
a concept and one of its known properties is assumed to express that
property.  Sentences grouped by property yield positive pairs for training.

Matching is deliberately conservative: sentences are lowercased and split on
non-alphanumeric boundaries, and a multi-word concept or property must occur
as a contiguous token run ("gunship" never matches "gun").  Optional naive
plural folding strips one trailing "s" when there is no exact token match.

Sentence ids are 0-based corpus line numbers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .mining import PairSet
from .store import MentionStore, Vocabulary

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

MIN_CONCEPTS_PER_PROPERTY = 3  # properties seen with <= 2 concepts are pruned


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def _fold(token: str) -> str:
    return token[:-1] if len(token) > 1 and token.endswith("s") else token


def _tokens_match(a: str, b: str, plural_fold: bool) -> bool:
    if a == b:
        return True
    return plural_fold and _fold(a) == _fold(b)


def contains_phrase(tokens: list[str], phrase: list[str], plural_fold=False) -> bool:
    """Whole-token contiguous subsequence test."""
    if not phrase or len(phrase) > len(tokens):
        return False
    for start in range(len(tokens) - len(phrase) + 1):
        if all(
            _tokens_match(tokens[start + k], phrase[k], plural_fold)
            for k in range(len(phrase))
        ):
            return True
    return False


@dataclass
class ConceptPropertyTable:
    """Pruned (concept, property) pairs plus the property -> concepts index."""

    entries: set[tuple[str, str]]
    property_index: dict[str, set[str]]
    malformed_lines: list[int] = field(default_factory=list)

    @property
    def properties(self) -> list[str]:
        return sorted(self.property_index)


@dataclass
class PropertyGroup:
    """Sentence-concept pairs whose sentence mentions both the concept and
    the group's property."""

    property: str
    members: list[tuple[int, int]]  # (sentence id, concept id), sorted


def load_concept_property_table(path) -> ConceptPropertyTable:
    """Read ``concept<TAB>property`` lines; drop properties with fewer than
    three distinct concepts.  Malformed lines are skipped and their numbers
    recorded on the returned table."""
    raw: set[tuple[str, str]] = set()
    malformed: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                malformed.append(lineno)
                continue
            raw.add((parts[0].strip().lower(), parts[1].strip().lower()))

    by_property: dict[str, set[str]] = {}
    for concept, prop in raw:
        by_property.setdefault(prop, set()).add(concept)
    kept_props = {p for p, cs in by_property.items() if len(cs) >= MIN_CONCEPTS_PER_PROPERTY}
    entries = {(c, p) for c, p in raw if p in kept_props}
    index = {p: by_property[p] for p in kept_props}
    return ConceptPropertyTable(entries, index, malformed)


def match_corpus(
    corpus_path,
    table: ConceptPropertyTable,
    vocab: Vocabulary,
    plural_fold: bool = False,
) -> list[PropertyGroup]:
    """Scan a one-sentence-per-line corpus for sentences mentioning both a
    concept and one of its table properties; concepts outside ``vocab`` are
    ignored (they have no mention vectors to pair)."""
    prop_tokens = {p: tokenize(p) for p in table.property_index}
    concept_tokens: dict[str, list[str]] = {}
    for p, concepts in table.property_index.items():
        for c in concepts:
            if c in vocab and c not in concept_tokens:
                concept_tokens[c] = tokenize(c)

    groups: dict[str, set[tuple[int, int]]] = {p: set() for p in table.property_index}
    with open(corpus_path, "r", encoding="utf-8") as fh:
        for sentence_id, line in enumerate(fh):
            tokens = tokenize(line)
            if not tokens:
                continue
            for prop, ptoks in prop_tokens.items():
                if not contains_phrase(tokens, ptoks, plural_fold):
                    continue
                for concept in table.property_index[prop]:
                    ctoks = concept_tokens.get(concept)
                    if ctoks is None:
                        continue
                    if contains_phrase(tokens, ctoks, plural_fold):
                        groups[prop].add((sentence_id, vocab.id(concept)))

    return [
        PropertyGroup(prop, sorted(groups[prop]))
        for prop in sorted(groups)
        if groups[prop]
    ]


def resolve_members(
    groups: list[PropertyGroup], store: MentionStore
) -> tuple[list[tuple[str, list[int]]], int]:
    """Map each group member to its lowest matching record index.

    Members with no mention record in the store are dropped; the second
    element reports how many were dropped.
    """
    resolved = []
    dropped = 0
    for group in groups:
        records = []
        for sentence_id, concept_id in group.members:
            hits = store.records_for(concept_id, sentence_id)
            if hits:
                records.append(hits[0])
            else:
                dropped += 1
        resolved.append((group.property, records))
    return resolved, dropped


def pairs_from_groups(groups: list[PropertyGroup], store: MentionStore) -> PairSet:
    """All unordered within-group record pairs with distinct sentences,
    labelled by property.  A pair reachable through several properties keeps
    the lexicographically smallest label."""
    resolved, _ = resolve_members(groups, store)
    pairs: dict[tuple[int, int], str] = {}
    for prop, records in sorted(resolved):
        for a in range(len(records)):
            for b in range(a + 1, len(records)):
                i, j = records[a], records[b]
                if i == j or store.sentences[i] == store.sentences[j]:
                    continue
                key = (min(i, j), max(i, j))
                if key not in pairs:
                    pairs[key] = prop
    return PairSet.from_pairs(pairs.keys(), groups=pairs)


def write_groups(groups: list[PropertyGroup], vocab: Vocabulary, path) -> None:
    """Sidecar export: ``property<TAB>sentence<TAB>concept`` per member."""
    with open(path, "w", encoding="utf-8") as fh:
        for group in sorted(groups, key=lambda g: g.property):
            for sentence_id, concept_id in sorted(group.members):
                fh.write(f"{group.property}\t{sentence_id}\t{vocab.word(concept_id)}\n")


def read_groups(path, vocab: Vocabulary) -> list[PropertyGroup]:
    members: dict[str, set[tuple[int, int]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"malformed group line {lineno}: {line!r}")
            prop, sentence, word = parts
            members.setdefault(prop, set()).add((int(sentence), vocab.id(word)))
    return [PropertyGroup(p, sorted(ms)) for p, ms in sorted(members.items())]
