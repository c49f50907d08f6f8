"""Mention-vector extraction from raw text with a masked language model.

For every concept in the vocabulary, sentences mentioning it (whole-token
contiguous match, case-insensitive) are sampled, the concept span is handled
in one of two ways, and the resulting hidden state becomes the mention
vector:

- ``mask`` mode replaces the whole span with a single mask token and takes
  the final-layer hidden state at the mask position, so the vector reflects
  the sentence context rather than the model's prior knowledge of the word;
- ``no-mask`` mode averages the hidden states of the concept's own tokens
  at a chosen layer.

Sentence ids are 0-based corpus line numbers.  Records are emitted in
(concept, sentence) order regardless of inference batching, and the output
is a valid CMVS file.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass

import numpy as np
import torch

from .cmvs import write_cmvs

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)

DEFAULT_MODEL = "bert-large-uncased"


def _token_spans(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN.finditer(text)]


def find_span(sentence: str, concept_tokens: list[str]) -> tuple[int, int] | None:
    """Character span of the first whole-token occurrence of the concept."""
    spans = _token_spans(sentence)
    width = len(concept_tokens)
    for start in range(len(spans) - width + 1):
        if all(spans[start + k][0] == concept_tokens[k] for k in range(width)):
            return spans[start][1], spans[start + width - 1][2]
    return None


@dataclass
class ExtractionTask:
    concept: int
    sentence_id: int
    text: str
    span: tuple[int, int]


def _collect_tasks(sentences, vocab_words, max_sentences, rng):
    """Match every concept against every sentence, then sample up to
    max_sentences matched sentences per concept (first occurrence each)."""
    tasks = []
    missing = []
    for concept_id, word in enumerate(vocab_words):
        concept_tokens = [t.lower() for t in _TOKEN.findall(word)]
        hits = []
        for sentence_id, text in enumerate(sentences):
            span = find_span(text, concept_tokens)
            if span is not None:
                hits.append(ExtractionTask(concept_id, sentence_id, text, span))
        if not hits:
            missing.append(word)
            continue
        if len(hits) > max_sentences:
            picked = sorted(rng.permutation(len(hits))[:max_sentences])
            hits = [hits[i] for i in picked]
        tasks.extend(hits)
    tasks.sort(key=lambda t: (t.concept, t.sentence_id))
    return tasks, missing


def extract(
    corpus_path,
    vocab_path,
    out_path,
    model_name: str = DEFAULT_MODEL,
    max_sentences: int = 500,
    mode: str = "mask",
    layer: int | None = None,
    seed: int = 0,
    batch_size: int = 16,
    log=None,
) -> int:
    """Run the extraction end to end; returns the number of records written."""
    log = log if log is not None else sys.stderr
    if mode not in ("mask", "no-mask"):
        raise ValueError(f"unknown mode {mode!r}")
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_name, use_fast=True)
    model = AutoModel.from_pretrained(model_name)
    model.eval()
    torch.manual_seed(seed)
    if mode == "mask" and tokenizer.mask_token is None:
        raise ValueError("tokenizer has no mask token; mask mode is impossible")

    with open(corpus_path, "r", encoding="utf-8") as fh:
        sentences = [line.rstrip("\n") for line in fh]
    with open(vocab_path, "r", encoding="utf-8") as fh:
        requested = [line.strip() for line in fh if line.strip()]

    rng = np.random.default_rng(seed)
    tasks, missing = _collect_tasks(sentences, requested, max_sentences, rng)
    for word in missing:
        print(f"warning: concept {word!r} never found in corpus; omitted", file=log)
    if not tasks:
        raise ValueError("no concept occurrences found in the corpus")

    # compact the vocabulary to concepts that produced records
    kept_ids = sorted({t.concept for t in tasks})
    remap = {old: new for new, old in enumerate(kept_ids)}
    vocab_words = [requested[old] for old in kept_ids]

    dim = model.config.hidden_size
    records = []
    with torch.no_grad():
        for start in range(0, len(tasks), batch_size):
            chunk = tasks[start : start + batch_size]
            if mode == "mask":
                vectors = _mask_vectors(chunk, tokenizer, model)
            else:
                vectors = _span_vectors(chunk, tokenizer, model, layer)
            for task, vector in zip(chunk, vectors):
                if vector is None:
                    print(
                        f"warning: span lost to truncation in sentence "
                        f"{task.sentence_id}; record skipped",
                        file=log,
                    )
                    continue
                records.append((remap[task.concept], task.sentence_id, vector))

    write_cmvs(out_path, dim, vocab_words, records)
    return len(records)


def _mask_vectors(chunk, tokenizer, model):
    texts = [
        t.text[: t.span[0]] + tokenizer.mask_token + t.text[t.span[1] :] for t in chunk
    ]
    encoded = tokenizer(texts, return_tensors="pt", padding=True, truncation=True)
    output = model(**encoded)
    hidden = output.last_hidden_state  # final layer
    vectors = []
    mask_id = tokenizer.mask_token_id
    for row in range(len(chunk)):
        positions = (encoded["input_ids"][row] == mask_id).nonzero(as_tuple=True)[0]
        if len(positions) == 0:
            vectors.append(None)
            continue
        vectors.append(hidden[row, int(positions[0])].numpy().astype(np.float32))
    return vectors


def _span_vectors(chunk, tokenizer, model, layer):
    texts = [t.text for t in chunk]
    encoded = tokenizer(
        texts,
        return_tensors="pt",
        padding=True,
        truncation=True,
        return_offsets_mapping=True,
    )
    offsets = encoded.pop("offset_mapping")
    output = model(**encoded, output_hidden_states=True)
    hidden = output.hidden_states[-1 if layer is None else layer]
    special = [
        tokenizer.get_special_tokens_mask(ids, already_has_special_tokens=True)
        for ids in encoded["input_ids"].tolist()
    ]
    vectors = []
    for row, task in enumerate(chunk):
        lo, hi = task.span
        token_ix = [
            pos
            for pos, (a, b) in enumerate(offsets[row].tolist())
            if b > a and a < hi and b > lo and not special[row][pos]
        ]
        if not token_ix:
            vectors.append(None)
            continue
        vectors.append(hidden[row, token_ix].mean(dim=0).numpy().astype(np.float32))
    return vectors
