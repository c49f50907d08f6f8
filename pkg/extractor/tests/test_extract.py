"""Span matching, extraction modes, sampling caps and determinism."""

import numpy as np
import pytest

from condist import read_store  # the format's reference reader
from condist_extractor import extract, find_span
from conftest import CONCEPTS, corpus_sentences


def test_find_span_whole_tokens():
    assert find_span("the gun is loaded", ["gun"]) == (4, 7)
    assert find_span("the gunship is loaded", ["gun"]) is None
    assert find_span("A Gun!", ["gun"]) == (2, 5)


def test_find_span_multiword_contiguous():
    text = "the sea otter dives"
    assert find_span(text, ["sea", "otter"]) == (4, 13)
    assert find_span("the sea big otter", ["sea", "otter"]) is None


def test_find_span_first_occurrence():
    assert find_span("gun near gun", ["gun"]) == (0, 3)


def test_mask_extraction_produces_valid_store(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    out = tmp_path / "mask.cmvs"
    count = extract(corpus, vocab, out, model_name=tiny_model_dir, mode="mask", seed=0)
    store = read_store(out)
    assert len(store) == count == 50
    assert store.dim == 32
    assert sorted(store.vocab) == sorted(CONCEPTS)
    # sentence ids are 0-based line numbers; each concept occupies 10 lines
    for concept_id, word in enumerate(sorted(store.vocab, key=store.vocab.id)):
        block = CONCEPTS.index(word)
        sentences = sorted(int(store.sentences[i]) for i in store.mentions_of(concept_id))
        assert sentences == list(range(10 * block, 10 * block + 10))


def test_max_sentences_caps_per_concept(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    out = tmp_path / "capped.cmvs"
    extract(corpus, vocab, out, model_name=tiny_model_dir, max_sentences=3, seed=1)
    store = read_store(out)
    for concept_id in range(len(store.vocab)):
        assert len(store.mentions_of(concept_id)) <= 3


def test_sampling_is_seeded(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    picks = []
    for run in range(2):
        out = tmp_path / f"s{run}.cmvs"
        extract(corpus, vocab, out, model_name=tiny_model_dir, max_sentences=4, seed=9)
        picks.append((out.read_bytes()))
    assert picks[0] == picks[1]


def test_repeated_runs_bit_identical(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    blobs = []
    for run in range(2):
        out = tmp_path / f"r{run}.cmvs"
        extract(corpus, vocab, out, model_name=tiny_model_dir, mode="mask", seed=0)
        blobs.append(out.read_bytes())
    assert blobs[0] == blobs[1]


def test_mask_and_no_mask_vectors_differ(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    masked_path = tmp_path / "mask.cmvs"
    plain_path = tmp_path / "plain.cmvs"
    extract(corpus, vocab, masked_path, model_name=tiny_model_dir, mode="mask", seed=0)
    extract(corpus, vocab, plain_path, model_name=tiny_model_dir, mode="no-mask", seed=0)
    masked = read_store(masked_path)
    plain = read_store(plain_path)
    assert len(masked) == len(plain)
    differing = sum(
        1
        for i in range(len(masked))
        if not np.array_equal(masked.vectors[i], plain.vectors[i])
    )
    assert differing >= 1


def test_no_mask_layer_selection_changes_vectors(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    final = tmp_path / "final.cmvs"
    embed = tmp_path / "embed.cmvs"
    extract(corpus, vocab, final, model_name=tiny_model_dir, mode="no-mask", seed=0)
    extract(corpus, vocab, embed, model_name=tiny_model_dir, mode="no-mask", layer=0, seed=0)
    a, b = read_store(final), read_store(embed)
    assert any(
        not np.array_equal(a.vectors[i], b.vectors[i]) for i in range(len(a))
    )


def test_missing_concept_warned_and_omitted(tiny_model_dir, toy_corpus, tmp_path, capsys):
    corpus, _ = toy_corpus
    vocab = tmp_path / "extra.txt"
    vocab.write_text("otter\nunicorn\n")
    out = tmp_path / "missing.cmvs"
    extract(corpus, vocab, out, model_name=tiny_model_dir, seed=0)
    assert "unicorn" in capsys.readouterr().err
    store = read_store(out)
    assert list(store.vocab) == ["otter"]


def test_multi_subword_concept_masked_to_single_position(tiny_model_dir, toy_corpus, tmp_path):
    # "submarine" tokenizes to two wordpieces; masking must still produce
    # exactly one mask token per sentence
    from transformers import AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir, use_fast=True)
    assert len(tokenizer.tokenize("submarine")) == 2
    sentence = next(s for s in corpus_sentences() if "submarine" in s)
    lo, hi = find_span(sentence, ["submarine"])
    masked = sentence[:lo] + tokenizer.mask_token + sentence[hi:]
    ids = tokenizer(masked)["input_ids"]
    assert ids.count(tokenizer.mask_token_id) == 1


def test_mask_mode_requires_mask_token(maskless_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    with pytest.raises(ValueError, match="mask token"):
        extract(corpus, vocab, tmp_path / "x.cmvs", model_name=maskless_model_dir, mode="mask")


def test_no_occurrences_at_all_is_an_error(tiny_model_dir, tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("nothing relevant here\n")
    vocab = tmp_path / "v.txt"
    vocab.write_text("otter\n")
    with pytest.raises(ValueError, match="no concept occurrences"):
        extract(corpus, vocab, tmp_path / "x.cmvs", model_name=tiny_model_dir)


def test_unknown_mode_rejected(tiny_model_dir, toy_corpus, tmp_path):
    corpus, vocab = toy_corpus
    with pytest.raises(ValueError, match="mode"):
        extract(corpus, vocab, tmp_path / "x.cmvs", model_name=tiny_model_dir, mode="both")
