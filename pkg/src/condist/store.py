"""Mention-vector data model, concept vocabulary and the binary on-disk formats.

A mention vector is the contextualised representation of one concept
occurrence in one sentence.  The store keeps every mention vector of every
concept in a single flat table; record index (position in file order) is the
canonical mention identity used by every other module.

Binary formats (all little-endian):

``CMVS`` mention store::

    magic  4s  = b"CMVS"
    version u32 = 1
    dim     u32
    concept_count u32
    record_count  u64
    vocabulary: concept_count x [len u16][UTF-8 bytes], in ConceptId order
    records:    record_count  x [concept u32][sentence u32][dim x f32]

``CEMB`` concept-embedding table: same layout with magic ``CEMB``, the
record section loses the sentence field and holds one entry per concept
that has an embedding (``entry_count`` may be below ``concept_count``).

Vectors are stored as 32-bit floats; all downstream accumulation happens in
64-bit.  Stores are immutable after construction and safe to share between
threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC_STORE = b"CMVS"
MAGIC_TABLE = b"CEMB"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIQ")  # magic, version, dim, concept_count, count
_U16 = struct.Struct("<H")


class StoreFormatError(ValueError):
    """Raised when a binary store/table file violates the format."""


class Vocabulary:
    """Bijection between UTF-8 surface forms and dense u32 concept ids."""

    def __init__(self, words=()):
        self._words: list[str] = []
        self._index: dict[str, int] = {}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        """Return the id of ``word``, adding it if unseen."""
        if word in self._index:
            return self._index[word]
        cid = len(self._words)
        self._words.append(word)
        self._index[word] = cid
        return cid

    def word(self, concept_id: int) -> str:
        if not 0 <= concept_id < len(self._words):
            raise KeyError(f"unknown ConceptId {concept_id}")
        return self._words[concept_id]

    def id(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise KeyError(f"unknown concept {word!r}") from None

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __len__(self) -> int:
        return len(self._words)

    def __iter__(self):
        return iter(self._words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._words == other._words


@dataclass(frozen=True)
class MentionRecord:
    """One concept occurrence: (concept id, sentence id, vector)."""

    concept: int
    sentence: int
    vector: np.ndarray


class MentionStore:
    """Immutable collection of mention vectors with concept identity.

    ``vectors`` is a (record_count, dim) float32 array; ``concepts`` and
    ``sentences`` are parallel u32 arrays.  ``mentions_of`` realises the
    per-concept record-index lists; duplicate (concept, sentence) pairs are
    legal and kept as distinct records.
    """

    def __init__(self, dim, vocab, concepts, sentences, vectors):
        concepts = np.asarray(concepts, dtype=np.uint32)
        sentences = np.asarray(sentences, dtype=np.uint32)
        vectors = np.asarray(vectors, dtype=np.float32).reshape(len(concepts), dim)
        if len(sentences) != len(concepts):
            raise ValueError("concepts and sentences length mismatch")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite vector entry")
        if len(concepts) and concepts.max(initial=0) >= len(vocab):
            raise ValueError("record concept id outside vocabulary")
        self.dim = int(dim)
        self.vocab = vocab
        self.concepts = concepts
        self.sentences = sentences
        self.vectors = vectors
        self.concepts.setflags(write=False)
        self.sentences.setflags(write=False)
        self.vectors.setflags(write=False)
        self._concept_index = self._build_concept_index()

    def _build_concept_index(self):
        index: dict[int, list[int]] = {}
        for i, c in enumerate(self.concepts):
            index.setdefault(int(c), []).append(i)
        return {c: np.asarray(ix, dtype=np.int64) for c, ix in index.items()}

    def __len__(self) -> int:
        return len(self.concepts)

    def record(self, i: int) -> MentionRecord:
        if not 0 <= i < len(self):
            raise IndexError(f"record index {i} out of range")
        return MentionRecord(int(self.concepts[i]), int(self.sentences[i]), self.vectors[i])

    def mentions_of(self, concept_id: int) -> np.ndarray:
        """Record indices whose concept equals ``concept_id``, ascending."""
        if not 0 <= concept_id < len(self.vocab):
            raise KeyError(f"unknown ConceptId {concept_id}")
        return self._concept_index.get(int(concept_id), np.empty(0, dtype=np.int64))

    def records_for(self, concept_id: int, sentence_id: int) -> list[int]:
        """Record indices matching an exact (concept, sentence) pair."""
        ix = self.mentions_of(concept_id)
        return [int(i) for i in ix if self.sentences[i] == sentence_id]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MentionStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.vocab == other.vocab
            and np.array_equal(self.concepts, other.concepts)
            and np.array_equal(self.sentences, other.sentences)
            and np.array_equal(
                self.vectors.view(np.uint32), other.vectors.view(np.uint32)
            )
        )


class ConceptEmbeddingTable:
    """Final static embedding per concept (one entry per concept at most)."""

    def __init__(self, dim, vocab, concept_ids, vectors):
        concept_ids = np.asarray(concept_ids, dtype=np.uint32)
        vectors = np.asarray(vectors, dtype=np.float32).reshape(len(concept_ids), dim)
        if len(np.unique(concept_ids)) != len(concept_ids):
            raise ValueError("duplicate concept in embedding table")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite embedding entry")
        self.dim = int(dim)
        self.vocab = vocab
        self.concept_ids = concept_ids
        self.vectors = vectors
        self._pos = {int(c): i for i, c in enumerate(concept_ids)}

    def __len__(self) -> int:
        return len(self.concept_ids)

    def __contains__(self, concept_id: int) -> bool:
        return int(concept_id) in self._pos

    def vector(self, concept_id: int) -> np.ndarray:
        try:
            return self.vectors[self._pos[int(concept_id)]]
        except KeyError:
            raise KeyError(f"no embedding for ConceptId {concept_id}") from None

    def vector_for_word(self, word: str) -> np.ndarray:
        return self.vector(self.vocab.id(word))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConceptEmbeddingTable):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.vocab == other.vocab
            and np.array_equal(self.concept_ids, other.concept_ids)
            and np.array_equal(
                self.vectors.view(np.uint32), other.vectors.view(np.uint32)
            )
        )


def _write_vocab(fh, vocab: Vocabulary):
    for word in vocab:
        data = word.encode("utf-8")
        if len(data) > 0xFFFF:
            raise ValueError(f"vocabulary entry longer than 65535 bytes: {word[:40]!r}...")
        fh.write(_U16.pack(len(data)))
        fh.write(data)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise StoreFormatError(f"truncated file while reading {what}")
    return data


def _read_vocab(fh, concept_count: int) -> Vocabulary:
    vocab = Vocabulary()
    for i in range(concept_count):
        (length,) = _U16.unpack(_read_exact(fh, 2, f"vocab entry {i} length"))
        word = _read_exact(fh, length, f"vocab entry {i}").decode("utf-8")
        vocab.add(word)
    if len(vocab) != concept_count:
        raise StoreFormatError("duplicate surface form in vocabulary section")
    return vocab


def write_store(store: MentionStore, path) -> None:
    """Serialize ``store`` to ``path`` in the CMVS format, bit-exactly."""
    if store.dim == 0:
        raise ValueError("cannot write a store with dim 0")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(MAGIC_STORE, FORMAT_VERSION, store.dim, len(store.vocab), len(store))
        )
        _write_vocab(fh, store.vocab)
        for i in range(len(store)):
            fh.write(struct.pack("<II", int(store.concepts[i]), int(store.sentences[i])))
            fh.write(store.vectors[i].astype("<f4", copy=False).tobytes())


def read_store(path) -> MentionStore:
    """Load a CMVS file; rejects bad magic, bad version, truncation and
    non-finite floats (no sanitizing)."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size, "header")
        magic, version, dim, concept_count, record_count = _HEADER.unpack(header)
        if magic != MAGIC_STORE:
            raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC_STORE!r}")
        if version != FORMAT_VERSION:
            raise StoreFormatError(f"unsupported format version {version}")
        vocab = _read_vocab(fh, concept_count)
        concepts = np.empty(record_count, dtype=np.uint32)
        sentences = np.empty(record_count, dtype=np.uint32)
        vectors = np.empty((record_count, dim), dtype=np.float32)
        rec_size = 8 + 4 * dim
        for i in range(record_count):
            raw = _read_exact(fh, rec_size, f"record {i}")
            concepts[i], sentences[i] = struct.unpack_from("<II", raw)
            vectors[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=8)
        if fh.read(1):
            raise StoreFormatError("trailing bytes after last record")
    if record_count and not np.all(np.isfinite(vectors)):
        raise StoreFormatError("non-finite float in record section")
    return MentionStore(dim, vocab, concepts, sentences, vectors)


def write_table(table: ConceptEmbeddingTable, path) -> None:
    """Serialize an embedding table to ``path`` in the CEMB format."""
    if table.dim == 0:
        raise ValueError("cannot write a table with dim 0")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(MAGIC_TABLE, FORMAT_VERSION, table.dim, len(table.vocab), len(table))
        )
        _write_vocab(fh, table.vocab)
        for i in range(len(table)):
            fh.write(struct.pack("<I", int(table.concept_ids[i])))
            fh.write(table.vectors[i].astype("<f4", copy=False).tobytes())


def read_table(path) -> ConceptEmbeddingTable:
    """Load a CEMB file with the same validation rules as ``read_store``."""
    with open(path, "rb") as fh:
        header = _read_exact(fh, _HEADER.size, "header")
        magic, version, dim, concept_count, entry_count = _HEADER.unpack(header)
        if magic != MAGIC_TABLE:
            raise StoreFormatError(f"bad magic {magic!r}, expected {MAGIC_TABLE!r}")
        if version != FORMAT_VERSION:
            raise StoreFormatError(f"unsupported format version {version}")
        vocab = _read_vocab(fh, concept_count)
        concept_ids = np.empty(entry_count, dtype=np.uint32)
        vectors = np.empty((entry_count, dim), dtype=np.float32)
        rec_size = 4 + 4 * dim
        for i in range(entry_count):
            raw = _read_exact(fh, rec_size, f"entry {i}")
            (concept_ids[i],) = struct.unpack_from("<I", raw)
            vectors[i] = np.frombuffer(raw, dtype="<f4", count=dim, offset=4)
        if fh.read(1):
            raise StoreFormatError("trailing bytes after last entry")
    if entry_count and not np.all(np.isfinite(vectors)):
        raise StoreFormatError("non-finite float in entry section")
    if entry_count and concept_ids.max(initial=0) >= concept_count:
        raise StoreFormatError("entry concept id outside vocabulary")
    return ConceptEmbeddingTable(dim, vocab, concept_ids, vectors)


def write_table_text(table: ConceptEmbeddingTable, path) -> None:
    """Classic word-vector text export: ``word v1 v2 ... vm`` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(len(table)):
            word = table.vocab.word(int(table.concept_ids[i]))
            coords = " ".join(repr(float(v)) for v in table.vectors[i])
            fh.write(f"{word} {coords}\n")


def build_store(dim, records, vocab=None) -> MentionStore:
    """Convenience constructor from an iterable of (word, sentence, vector)."""
    vocab = vocab if vocab is not None else Vocabulary()
    concepts, sentences, vectors = [], [], []
    for word, sentence, vector in records:
        concepts.append(vocab.add(word) if isinstance(word, str) else int(word))
        sentences.append(int(sentence))
        vectors.append(np.asarray(vector, dtype=np.float32))
    arr = (
        np.asarray(vectors, dtype=np.float32)
        if vectors
        else np.empty((0, dim), dtype=np.float32)
    )
    return MentionStore(dim, vocab, concepts, sentences, arr)
