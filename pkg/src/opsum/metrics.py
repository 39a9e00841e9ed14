"""Evaluation metrics: ROUGE, perplexity, aspect recall, n-gram
abstractiveness, best-worst scaling, content support, and POV shares."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from . import autodiff
from .aspects import annotate
from .text import ngrams, tokenize

FIRST_PERSON = frozenset({"i", "we", "me", "us", "my", "our", "mine", "ours"})
SECOND_PERSON = frozenset({"you", "your", "yours"})
THIRD_PERSON = frozenset(
    {"he", "she", "they", "him", "her", "them", "his", "their", "hers", "theirs"})


@dataclass
class RougeScore:
    precision: float
    recall: float
    f1: float


def _stem(token):
    # deliberately tiny suffix stripper; only used when stemming is on
    for suffix in ("ing", "es", "ed", "s"):
        if token.endswith(suffix) and len(token) > len(suffix) + 2:
            return token[: -len(suffix)]
    return token


def _prepare(text, use_stemming):
    tokens = tokenize(text)
    if use_stemming:
        tokens = [_stem(t) for t in tokens]
    return tokens


def _f1(p, r):
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge(candidate, reference, variant, use_stemming=False):
    """ROUGE-1/2 via clipped n-gram overlap, ROUGE-L via token LCS."""
    if variant not in (1, 2, "1", "2", "L", "l"):
        raise ValueError(f"rouge: unknown variant {variant!r}")
    cand = _prepare(candidate, use_stemming)
    ref = _prepare(reference, use_stemming)
    if str(variant).upper() == "L":
        lcs = _lcs_length(cand, ref)
        p = lcs / len(cand) if cand else 0.0
        r = lcs / len(ref) if ref else 0.0
    else:
        n = int(variant)
        cg = ngrams(cand, n)
        rg = ngrams(ref, n)
        overlap = sum(min(c, rg[g]) for g, c in cg.items())
        p = overlap / max(sum(cg.values()), 1) if cg else 0.0
        r = overlap / max(sum(rg.values()), 1) if rg else 0.0
    return RougeScore(p, r, _f1(p, r))


def multi_reference_rouge(candidate, references, variant, use_stemming=False):
    """Arithmetic mean of per-reference scores."""
    if not references:
        raise ValueError("multi_reference_rouge: empty reference list")
    scores = [rouge(candidate, ref, variant, use_stemming) for ref in references]
    n = len(scores)
    return RougeScore(sum(s.precision for s in scores) / n,
                      sum(s.recall for s in scores) / n,
                      sum(s.f1 for s in scores) / n)


def perplexity(model, encoded_pairs):
    """exp of mean negative per-token log-likelihood over the pairs.

    ``encoded_pairs`` holds (source_ids, target_ids) with targets
    bracketed by BOS/EOS; every token after BOS (EOS included) counts.
    """
    if not encoded_pairs:
        raise ValueError("perplexity: empty pair set")
    total_ll = 0.0
    total_tokens = 0
    with autodiff.no_grad():
        for source, target in encoded_pairs:
            total_ll += model.log_likelihood(source, target).item()
            total_tokens += len(target) - 1
    return math.exp(-total_ll / total_tokens)


def aspect_recall(queries, summaries, lexicon):
    """Percentage of query aspects that appear in the paired summary."""
    if len(queries) != len(summaries):
        raise ValueError("aspect_recall: queries and summaries differ in length")
    hits = 0
    total = 0
    for query, summary in zip(queries, summaries):
        if not query:
            raise ValueError("aspect_recall: undefined for an empty query")
        present = {phrase for phrase, _ in annotate(summary, lexicon)}
        hits += sum(1 for phrase in query if phrase in present)
        total += len(query)
    return 100.0 * hits / total


def unique_ngrams(summary, n):
    """Percent of summary n-grams occurring exactly once."""
    tokens = tokenize(summary) if isinstance(summary, str) else list(summary)
    if len(tokens) < n:
        raise ValueError(f"unique_ngrams: summary shorter than n={n}")
    counts = ngrams(tokens, n)
    total = sum(counts.values())
    once = sum(1 for c in counts.values() if c == 1)
    return 100.0 * once / total


def novel_ngrams(summary, reviews, n):
    """Percent of distinct summary n-grams absent from all the reviews."""
    tokens = tokenize(summary) if isinstance(summary, str) else list(summary)
    if len(tokens) < n:
        raise ValueError(f"novel_ngrams: summary shorter than n={n}")
    summary_grams = set(ngrams(tokens, n))
    review_grams = set()
    for review in reviews:
        rtok = tokenize(review) if isinstance(review, str) else list(review)
        review_grams.update(ngrams(rtok, n))
    novel = summary_grams - review_grams
    return 100.0 * len(novel) / len(summary_grams)


def bws_scores(annotations):
    """Best-worst scaling: percent-best minus percent-worst per system."""
    counts = {}
    total = 0
    for record in annotations:
        best, worst = record["best"], record["worst"]
        if best == worst:
            raise ValueError(f"bws_scores: best equals worst ({best!r}) in record {record!r}")
        counts.setdefault(best, [0, 0])[0] += 1
        counts.setdefault(worst, [0, 0])[1] += 1
        total += 1
    if total == 0:
        raise ValueError("bws_scores: no annotations")
    return {sys: 100.0 * (b - w) / total for sys, (b, w) in sorted(counts.items())}


def content_support(annotations):
    """Shares of {full, partial, no} sentence labels, in percent."""
    counts = {"full": 0, "partial": 0, "no": 0}
    for record in annotations:
        label = record["label"] if isinstance(record, dict) else record
        if label not in counts:
            raise ValueError(f"content_support: unknown label {label!r}")
        counts[label] += 1
    total = sum(counts.values())
    if total == 0:
        raise ValueError("content_support: no annotations")
    return {label: 100.0 * c / total for label, c in counts.items()}


def pov_distribution(summaries, first=FIRST_PERSON, second=SECOND_PERSON,
                     third=THIRD_PERSON):
    """Share of summaries by grammatical person, precedence 1st > 2nd > 3rd.

    Summaries without any personal pronoun fall into the "nopr" bucket.
    """
    counts = {"1st": 0, "2nd": 0, "3rd": 0, "nopr": 0}
    for summary in summaries:
        tokens = set(tokenize(summary))
        if tokens & set(first):
            counts["1st"] += 1
        elif tokens & set(second):
            counts["2nd"] += 1
        elif tokens & set(third):
            counts["3rd"] += 1
        else:
            counts["nopr"] += 1
    total = len(summaries)
    if total == 0:
        raise ValueError("pov_distribution: no summaries")
    return {k: 100.0 * v / total for k, v in counts.items()}


class MetricReport:
    """Per-system table of metric values, emitted as JSON and plain text."""

    def __init__(self):
        self.rows = {}  # system -> {metric: value}

    def add(self, system, metric, value):
        self.rows.setdefault(system, {})[metric] = value

    def update(self, system, values):
        self.rows.setdefault(system, {}).update(values)

    def columns(self):
        cols = []
        for row in self.rows.values():
            for key in row:
                if key not in cols:
                    cols.append(key)
        return cols

    def to_json(self):
        return json.dumps(self.rows, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, payload):
        report = cls()
        for system, row in json.loads(payload).items():
            report.update(system, row)
        return report

    def to_text(self):
        cols = self.columns()
        header = ["system"] + cols
        lines = []
        rows = [[name] + [self._fmt(self.rows[name].get(c)) for c in cols]
                for name in sorted(self.rows)]
        widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
                  for i in range(len(header))]
        lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)

    @staticmethod
    def _fmt(value):
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.2f}"
        return str(value)
