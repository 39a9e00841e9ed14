"""Review ingestion, length filtering, leave-one-out pair construction,
query-pair filtering, and dataset statistics.

File formats (UTF-8 JSON-lines, stable key order):
  reviews: {"group_id", "review_id", "text"}
  pairs:   {"group_id", "inputs": [review texts], "target", "query": [...]?}
Gold pairs may additionally carry "references": [texts] (multi-reference
evaluation); "target" is then the first reference.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .aspects import annotate, query_from_summary
from .metrics import rouge

log = logging.getLogger(__name__)

MIN_WORDS = 20
MAX_WORDS = 120
DEFAULT_N_INPUTS = 8


@dataclass
class Review:
    group_id: str
    review_id: str
    text: str

    @property
    def word_count(self):
        # whitespace words of the raw text, not model tokens
        return len(self.text.split())


@dataclass
class ReviewGroup:
    group_id: str
    reviews: list = field(default_factory=list)

    def __post_init__(self):
        ids = [r.review_id for r in self.reviews]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate review ids in group {self.group_id}")
        if any(r.group_id != self.group_id for r in self.reviews):
            raise ValueError(f"mixed group ids inside group {self.group_id}")


@dataclass
class TrainingPair:
    group_id: str
    inputs: list          # review texts
    target: str
    query: list = None    # aspect phrases, optional
    references: list = None

    def to_record(self):
        record = {"group_id": self.group_id, "inputs": self.inputs, "target": self.target}
        if self.query is not None:
            record["query"] = self.query
        if self.references is not None:
            record["references"] = self.references
        return record

    @classmethod
    def from_record(cls, record):
        return cls(record["group_id"], record["inputs"], record["target"],
                   record.get("query"), record.get("references"))


def load_reviews(path):
    """Read a reviews JSONL file into ReviewGroups (input order preserved)."""
    groups = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            review = Review(rec["group_id"], rec["review_id"], rec["text"])
            groups.setdefault(review.group_id, []).append(review)
    return [ReviewGroup(gid, reviews) for gid, reviews in groups.items()]


def save_reviews(groups, path):
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            for r in group.reviews:
                fh.write(json.dumps(
                    {"group_id": r.group_id, "review_id": r.review_id, "text": r.text},
                    ensure_ascii=False) + "\n")


def load_pairs(path):
    with open(path, encoding="utf-8") as fh:
        return [TrainingPair.from_record(json.loads(line))
                for line in fh if line.strip()]


def save_pairs(pairs, path):
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps(pair.to_record(), ensure_ascii=False) + "\n")


def filter_reviews(reviews):
    """Keep reviews with 20 to 120 whitespace words (inclusive)."""
    return [r for r in reviews if MIN_WORDS <= r.word_count <= MAX_WORDS]


def _group_rng(seed, group_id):
    digest = hashlib.sha256(group_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def build_l1o_pairs(group, n_inputs=DEFAULT_N_INPUTS, seed=0):
    """Leave-one-out pseudo-summary pair for one review group.

    One review is sampled uniformly as the pseudo summary; the inputs are
    the ``n_inputs`` remaining reviews with the highest ROUGE-1 F1 against
    it, ties broken by ascending review_id.  Groups smaller than
    ``n_inputs``+1 yield no pair.
    """
    if n_inputs < 1:
        raise ValueError(f"build_l1o_pairs: n_inputs must be >= 1, got {n_inputs}")
    reviews = sorted(group.reviews, key=lambda r: r.review_id)
    if len(reviews) < n_inputs + 1:
        return []
    rng = _group_rng(seed, group.group_id)
    target = reviews[int(rng.integers(len(reviews)))]
    others = [r for r in reviews if r.review_id != target.review_id]
    scored = sorted(others,
                    key=lambda r: (-rouge(r.text, target.text, 1).f1, r.review_id))
    inputs = scored[:n_inputs]
    return [TrainingPair(group.group_id, [r.text for r in inputs], target.text)]


def build_l1o_dataset(groups, n_inputs=DEFAULT_N_INPUTS, seed=0):
    """l1o pairs for all groups; small groups are skipped with a logged count."""
    pairs = []
    skipped = 0
    for group in groups:
        built = build_l1o_pairs(group, n_inputs, seed)
        if built:
            pairs.extend(built)
        else:
            skipped += 1
    if skipped:
        log.info("skipped %d groups with fewer than %d reviews", skipped, n_inputs + 1)
    return pairs


def filter_query_pairs(pairs, lexicon, seed=0):
    """Drop pairs whose target has no aspect keywords; attach queries to the rest."""
    if len(lexicon) == 0:
        log.warning("filter_query_pairs: empty lexicon removes every pair")
    kept = []
    for pair in pairs:
        if annotate(pair.target, lexicon):
            query = query_from_summary(pair.target, lexicon, seed=_pair_seed(seed, pair))
            kept.append(TrainingPair(pair.group_id, pair.inputs, pair.target,
                                     query, pair.references))
    return kept


def _pair_seed(seed, pair):
    digest = hashlib.sha256((pair.group_id + "\x00" + pair.target).encode("utf-8")).digest()
    return [seed, int.from_bytes(digest[:8], "little")]


def corpus_stats(splits):
    """Pair counts per split, generic and query variants separately.

    ``splits`` maps split name -> list of TrainingPair.
    """
    stats = {}
    for name, pairs in splits.items():
        stats[name] = {
            "generic": sum(1 for p in pairs if p.query is None),
            "query": sum(1 for p in pairs if p.query is not None),
            "total": len(pairs),
        }
    return stats
