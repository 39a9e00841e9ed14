"""Aspect lexicon handling, text annotation, and query construction.

Queries are ordered lists of aspect phrases.  At training time they are
extracted from (pseudo) summaries and shuffled; at test time they are the
K most frequent aspects mentioned in the input reviews.
"""

from __future__ import annotations

import numpy as np

from .text import tokenize


class AspectLexicon:
    """Set of lowercase aspect phrases, each 1-4 tokens long."""

    def __init__(self, phrases):
        seen = []
        seen_set = set()
        for phrase in phrases:
            toks = tuple(tokenize(phrase))
            if not 1 <= len(toks) <= 4:
                raise ValueError(f"aspect phrase must be 1-4 tokens: {phrase!r}")
            if toks not in seen_set:
                seen_set.add(toks)
                seen.append(toks)
        self.phrases = seen
        self._by_first = {}
        for toks in seen:
            self._by_first.setdefault(toks[0], []).append(toks)
        for cands in self._by_first.values():
            cands.sort(key=len, reverse=True)
        self.max_len = max((len(p) for p in seen), default=0)

    def __len__(self):
        return len(self.phrases)

    def __contains__(self, phrase):
        toks = tuple(tokenize(phrase)) if isinstance(phrase, str) else tuple(phrase)
        return any(toks == p for p in self._by_first.get(toks[0], ())) if toks else False

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for toks in self.phrases:
                fh.write(" ".join(toks) + "\n")

    @classmethod
    def load(cls, path):
        phrases = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    phrases.append(line)
        return cls(phrases)


def annotate(text, lexicon):
    """Whole-word, case-insensitive lexicon matches in ``text``.

    Returns (phrase, token_position) mentions.  Greedy left-to-right scan;
    at overlapping candidates the longest phrase wins, then the leftmost.
    """
    tokens = tokenize(text)
    mentions = []
    i = 0
    n = len(tokens)
    while i < n:
        matched = None
        for cand in lexicon._by_first.get(tokens[i], ()):
            if tuple(tokens[i:i + len(cand)]) == cand:
                matched = cand
                break  # candidates are sorted longest first
        if matched is not None:
            mentions.append((" ".join(matched), i))
            i += len(matched)
        else:
            i += 1
    return mentions


def query_from_summary(summary, lexicon, seed=0):
    """Distinct annotated phrases of the summary, shuffled by a seeded RNG."""
    seen = []
    for phrase, _ in annotate(summary, lexicon):
        if phrase not in seen:
            seen.append(phrase)
    rng = np.random.default_rng(seed)
    rng.shuffle(seen)
    return seen


def query_from_reviews(reviews, lexicon, k, count_mode="mentions"):
    """Top-k distinct aspects by total mention count across the reviews.

    Ties break by earliest first occurrence, then lexicographically.
    ``count_mode="reviews"`` counts review-level presence instead of
    individual mentions.
    """
    if k < 1:
        raise ValueError(f"query_from_reviews: k must be >= 1, got {k}")
    counts = {}
    first_seen = {}
    order = 0
    for review in reviews:
        in_review = set()
        for phrase, _ in annotate(review, lexicon):
            if phrase not in first_seen:
                first_seen[phrase] = order
            order += 1
            if count_mode == "mentions" or phrase not in in_review:
                counts[phrase] = counts.get(phrase, 0) + 1
            in_review.add(phrase)
    ranked = sorted(counts, key=lambda p: (-counts[p], first_seen[p], p))
    return ranked[:k]


def filter_query_against_reviews(query, reviews, lexicon):
    """Keep only query aspects mentioned somewhere in the reviews."""
    present = {phrase for review in reviews for phrase, _ in annotate(review, lexicon)}
    return [phrase for phrase in query if phrase in present]
