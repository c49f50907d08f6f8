"""Session fixtures: a tiny randomly-initialised masked LM saved to disk
(no network needed) and a 50-sentence toy corpus over 5 concepts."""

from pathlib import Path

import pytest
import torch

CONCEPTS = ["otter", "heron", "submarine", "kayak", "lighthouse"]

TEMPLATES = [
    "the {} rests near the rocks",
    "a {} appears by the old pier",
    "that {} drifts past the harbor",
    "one {} waits under the gray sky",
    "the {} moves through cold water",
    "a {} passes the quiet bay at dawn",
    "the {} stays close to the shore",
    "some {} was seen beyond the reef",
    "the {} turns toward the open sea",
    "a {} lingers where the tide breaks",
]


def corpus_sentences():
    return [template.format(word) for word in CONCEPTS for template in TEMPLATES]


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    corpus = root / "corpus.txt"
    corpus.write_text("\n".join(corpus_sentences()) + "\n", encoding="utf-8")
    vocab = root / "concepts.txt"
    vocab.write_text("\n".join(CONCEPTS) + "\n", encoding="utf-8")
    return corpus, vocab


def build_wordpiece(vocab_tokens):
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from tokenizers.processors import TemplateProcessing
    from transformers import BertTokenizerFast

    vocab_map = {w: i for i, w in enumerate(vocab_tokens)}
    tk = Tokenizer(WordPiece(vocab_map, unk_token="[UNK]"))
    tk.normalizer = BertNormalizer(lowercase=True)
    tk.pre_tokenizer = BertPreTokenizer()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab_map["[CLS]"]), ("[SEP]", vocab_map["[SEP]"])],
    )
    return BertTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )


def model_vocab():
    words = set()
    for sentence in corpus_sentences():
        words.update(sentence.lower().split())
    words.discard("submarine")  # exercised as a multi-subword concept
    return ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + sorted(words) + [
        "sub",
        "##marine",
    ]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    from transformers import BertConfig, BertModel

    directory = tmp_path_factory.mktemp("tiny-mlm")
    tokenizer = build_wordpiece(model_vocab())
    config = BertConfig(
        vocab_size=len(model_vocab()),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    model = BertModel(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)


@pytest.fixture(scope="session")
def maskless_model_dir(tmp_path_factory):
    """Same model, tokenizer saved without a mask token."""
    from tokenizers import Tokenizer
    from tokenizers.models import WordPiece
    from tokenizers.normalizers import BertNormalizer
    from tokenizers.pre_tokenizers import BertPreTokenizer
    from transformers import BertConfig, BertModel, BertTokenizerFast

    directory = tmp_path_factory.mktemp("maskless-mlm")
    tokens = model_vocab()
    vocab_map = {w: i for i, w in enumerate(tokens)}
    tk = Tokenizer(WordPiece(vocab_map, unk_token="[UNK]"))
    tk.normalizer = BertNormalizer(lowercase=True)
    tk.pre_tokenizer = BertPreTokenizer()
    tokenizer = BertTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
    )
    tokenizer.mask_token = None
    config = BertConfig(
        vocab_size=len(tokens),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    BertModel(config).save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return str(directory)
