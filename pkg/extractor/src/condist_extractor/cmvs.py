"""Writer for the CMVS mention-store interchange format (little-endian):

    magic  4s  = b"CMVS"
    version u32 = 1
    dim     u32
    concept_count u32
    record_count  u64
    vocabulary: concept_count x [len u16][UTF-8 bytes], in concept-id order
    records:    record_count  x [concept u32][sentence u32][dim x f32]

This is the boundary between the extractor and the distillation toolkit;
anything that reads CMVS can consume the output.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CMVS"
_HEADER = struct.Struct("<4sIIIQ")


def write_cmvs(path, dim: int, vocab: list[str], records) -> None:
    """records: iterable of (concept_id, sentence_id, float32 vector)."""
    if dim <= 0:
        raise ValueError("dim must be positive")
    records = list(records)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, 1, dim, len(vocab), len(records)))
        for word in vocab:
            data = word.encode("utf-8")
            if len(data) > 0xFFFF:
                raise ValueError(f"vocabulary entry too long: {word[:40]!r}")
            fh.write(struct.pack("<H", len(data)))
            fh.write(data)
        for concept, sentence, vector in records:
            vector = np.asarray(vector, dtype="<f4")
            if vector.shape != (dim,):
                raise ValueError(f"vector of dim {vector.shape} expected ({dim},)")
            if not np.all(np.isfinite(vector)):
                raise ValueError("non-finite vector entry")
            fh.write(struct.pack("<II", int(concept), int(sentence)))
            fh.write(vector.tobytes())
