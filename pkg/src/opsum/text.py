"""Tokenization, vocabulary, special markers, and n-gram utilities."""

from __future__ import annotations

import re
from collections import Counter

# Reserved ids are the lowest ids and stable across save/load.
PAD, BOS, EOS, UNK, SEP, QBEG, QEND = range(7)
RESERVED_TOKENS = ["<pad>", "<bos>", "<eos>", "<unk>", "||", "<q>", "</q>"]

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text):
    """Lowercase, split punctuation into separate tokens, collapse whitespace."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens):
    return " ".join(tokens)


def ngrams(tokens, n):
    """All contiguous length-n windows as a Counter (multiplicity preserved)."""
    if n < 1:
        raise ValueError(f"ngrams: n must be >= 1, got {n}")
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


class Vocabulary:
    """Token/id bijection with reserved markers at the lowest ids."""

    def __init__(self, tokens=()):
        self.id_to_token = list(RESERVED_TOKENS)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        for tok in tokens:
            self.add(tok)

    def add(self, token):
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def encode(self, tokens):
        unk = UNK
        t2i = self.token_to_id
        return [t2i.get(t, unk) for t in tokens]

    def decode(self, ids):
        return [self.id_to_token[i] for i in ids]

    def decode_text(self, ids, skip_special=True):
        toks = [self.id_to_token[i] for i in ids
                if not (skip_special and i in (PAD, BOS, EOS))]
        return detokenize(toks)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[:len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise ValueError(f"vocabulary file {path} does not start with reserved tokens")
        for tok in tokens[len(RESERVED_TOKENS):]:
            vocab.add(tok)
        return vocab


def build_vocabulary(corpus, min_count=1):
    """Vocabulary over tokens with count >= min_count.

    Order: descending count, then lexicographic; reserved tokens first.
    """
    if min_count < 1:
        raise ValueError(f"build_vocabulary: min_count must be >= 1, got {min_count}")
    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocabulary(kept)
