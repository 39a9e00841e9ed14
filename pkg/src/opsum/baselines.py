"""Trivial extractive baselines: clustroid, random review, leading sentences."""

from __future__ import annotations

import re

import numpy as np

from .corpus import _group_rng
from .metrics import rouge

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")


def clustroid(group):
    """Review with the highest mean ROUGE-L F1 against all other reviews.

    Ties break by ascending review_id; a single review is its own clustroid.
    """
    reviews = sorted(group.reviews, key=lambda r: r.review_id)
    if not reviews:
        raise ValueError(f"clustroid: empty group {group.group_id}")
    if len(reviews) == 1:
        return reviews[0]
    best = None
    best_key = None
    for r in reviews:
        mean_f1 = np.mean([rouge(r.text, other.text, "L").f1
                           for other in reviews if other.review_id != r.review_id])
        key = (-mean_f1, r.review_id)
        if best_key is None or key < best_key:
            best, best_key = r, key
    return best


def random_review(group, seed=0):
    """Uniform seeded pick; depends only on (sorted group contents, seed)."""
    reviews = sorted(group.reviews, key=lambda r: r.review_id)
    if not reviews:
        raise ValueError(f"random_review: empty group {group.group_id}")
    rng = _group_rng(seed, group.group_id)
    return reviews[int(rng.integers(len(reviews)))]


def split_sentences(text):
    """Split on ./!/? followed by whitespace; no terminator -> one sentence."""
    parts = [p.strip() for p in _SENTENCE_RE.split(text.strip())]
    return [p for p in parts if p]


def lead(group, sentences_per_review=1):
    """First sentences of every review, concatenated in group order."""
    if sentences_per_review < 1:
        raise ValueError("lead: sentences_per_review must be >= 1")
    if not group.reviews:
        raise ValueError(f"lead: empty group {group.group_id}")
    picked = []
    for r in group.reviews:
        picked.extend(split_sentences(r.text)[:sentences_per_review])
    return " ".join(picked)
