"""Synthetic aspect-conditioned review corpus for desk-scale experiments.

Products draw a small set of aspects; reviews voice opinions about subsets
of them in a templated review register, while gold summaries use a
distinct summary register.  The corpus is tiny (vocabulary well under
500 tokens) but exercises the whole pipeline: leave-one-out pairs carry
real lexical overlap, queries name exactly the aspects of their targets,
and test-time aspect recall is measurable.
"""

from __future__ import annotations

import numpy as np

from .aspects import AspectLexicon
from .corpus import Review, ReviewGroup, TrainingPair

ASPECTS = [
    "battery", "screen", "price", "service", "quality", "shipping",
    "design", "camera", "keyboard", "sound", "size", "weight", "color",
    "speed", "memory", "warranty", "support", "material", "comfort",
    "durability", "texture", "packaging", "volume", "resolution",
]

OPINIONS = ["great", "good", "bad", "poor", "nice", "terrible", "decent", "amazing"]

FILLERS = [
    "i bought this item last week online.",
    "it arrived quickly in the original box.",
    "overall i am quite happy with it.",
    "my friend recommended this one to me.",
    "i use it almost every single day.",
    "the seller answered all of my questions.",
    "i would probably buy this product again.",
    "this was a gift for my sister.",
]

CLOSERS = ["recommended overall.", "not recommended overall.", "a solid purchase overall."]


def toy_lexicon():
    return AspectLexicon(ASPECTS)


def _review_text(rng, group_aspects):
    n_mention = int(rng.integers(2, min(4, len(group_aspects)) + 1))
    idx = rng.choice(len(group_aspects), size=n_mention, replace=False)
    sents = [f"the {group_aspects[i]} is {OPINIONS[int(rng.integers(len(OPINIONS)))]}."
             for i in sorted(idx)]
    for j in sorted(rng.choice(len(FILLERS), size=2, replace=False)):
        sents.append(FILLERS[int(j)])
    return " ".join(sents)


def _summary_text(rng, aspects):
    parts = [f"{OPINIONS[int(rng.integers(len(OPINIONS)))]} {a}" for a in aspects]
    body = " and ".join(parts)
    return f"{body}. {CLOSERS[int(rng.integers(len(CLOSERS)))]}"


def make_review_groups(n_groups, reviews_per_group, seed=0, prefix="g"):
    """Templated review groups; each group owns 3-5 aspects."""
    rng = np.random.default_rng(seed)
    groups = []
    for g in range(n_groups):
        n_aspects = int(rng.integers(3, 6))
        idx = rng.choice(len(ASPECTS), size=n_aspects, replace=False)
        group_aspects = [ASPECTS[i] for i in sorted(idx)]
        gid = f"{prefix}{g:05d}"
        reviews = [Review(gid, f"{gid}-r{i:02d}", _review_text(rng, group_aspects))
                   for i in range(reviews_per_group)]
        groups.append(ReviewGroup(gid, reviews))
    return groups


def make_gold_pairs(n_pairs, n_inputs, seed=0, prefix="gold", with_query=True):
    """Review groups paired with summary-register targets.

    Queries name the summary's aspects (the query-based training setup);
    pass with_query=False for the generic setup.
    """
    rng = np.random.default_rng(seed)
    groups = make_review_groups(n_pairs, n_inputs, seed=seed + 1, prefix=prefix)
    pairs = []
    for group in groups:
        mentioned = sorted({tok for r in group.reviews for tok in r.text.split()
                            if tok in set(ASPECTS)})
        n_sum = min(len(mentioned), int(rng.integers(2, 5)))
        idx = rng.choice(len(mentioned), size=n_sum, replace=False)
        aspects = [mentioned[i] for i in sorted(idx)]
        summary = _summary_text(rng, aspects)
        query = list(aspects) if with_query else None
        if query:
            rng.shuffle(query)
        pairs.append(TrainingPair(group.group_id, [r.text for r in group.reviews],
                                  summary, query, references=[summary]))
    return pairs
