"""Metric suite: ROUGE oracle fixture, property sweeps, perplexity,
aspect recall, n-gram statistics, BWS, content support, and POV."""

import json
import math
import os

import numpy as np
import pytest

from opsum.aspects import AspectLexicon
from opsum.metrics import (MetricReport, RougeScore, aspect_recall, bws_scores,
                           content_support, multi_reference_rouge, novel_ngrams,
                           perplexity, pov_distribution, rouge, unique_ngrams)
from opsum.text import BOS, EOS

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


def test_rouge_hand_fixture_to_1e9():
    with open(os.path.join(FIXTURES, "rouge_cases.json"), encoding="utf-8") as fh:
        cases = json.load(fh)
    assert len(cases) == 20
    for case in cases:
        score = rouge(case["candidate"], case["reference"], case["variant"],
                      use_stemming=case.get("stemming", False))
        for field, (num, den) in (("precision", case["p"]), ("recall", case["r"]),
                                  ("f1", case["f"])):
            expected = num / den
            got = getattr(score, field)
            assert abs(got - expected) < 1e-9, (case["note"], field, got, expected)


def _random_text(rng):
    alphabet = list("abcdefghij")
    n = int(rng.integers(1, 12))
    return " ".join(rng.choice(alphabet, size=n))


def test_rouge_self_is_one_and_disjoint_is_zero_sweep():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        text = _random_text(rng)
        for variant in (1, 2, "L"):
            if variant == 2 and len(text.split()) < 2:
                continue
            assert rouge(text, text, variant).f1 == 1.0
        other = text.replace("a", "z").replace("b", "y").replace("c", "x") \
                    .replace("d", "w").replace("e", "v").replace("f", "u") \
                    .replace("g", "t").replace("h", "s").replace("i", "r") \
                    .replace("j", "q")
        assert rouge(text, other, 1).f1 == 0.0


def test_rouge_l_recall_never_exceeds_rouge_1_recall():
    rng = np.random.default_rng(1)
    for _ in range(300):
        a, b = _random_text(rng), _random_text(rng)
        assert rouge(a, b, "L").recall <= rouge(a, b, 1).recall + 1e-12


def test_rouge_precision_recall_swap_symmetry():
    a, b = "a b c d a", "c a d"
    fwd, rev = rouge(a, b, 1), rouge(b, a, 1)
    assert fwd.precision == rev.recall and fwd.recall == rev.precision


def test_rouge_rejects_unknown_variant():
    with pytest.raises(ValueError):
        rouge("a", "a", 3)


def test_multi_reference_rouge_is_mean_and_order_free():
    refs = ["a b c", "x y z"]
    score = multi_reference_rouge("a b c", refs, 1)
    assert abs(score.f1 - 0.5) < 1e-12
    flipped = multi_reference_rouge("a b c", refs[::-1], 1)
    assert score == flipped
    single = multi_reference_rouge("a b", ["a b"], 1)
    assert single == rouge("a b", "a b", 1)
    with pytest.raises(ValueError):
        multi_reference_rouge("a", [], 1)


class _UniformModel:
    """log p = -len * log(V) regardless of input."""

    def __init__(self, vocab_size):
        self.vocab_size = vocab_size

    def log_likelihood(self, source, target):
        from opsum.autodiff import Tensor
        return Tensor(-(len(target) - 1) * math.log(self.vocab_size))


def test_perplexity_uniform_model_equals_vocab_size():
    pairs = [([4, 5], [BOS, 7, 8, EOS]), ([6], [BOS, 9, EOS])]
    for v in (10, 50, 123):
        assert abs(perplexity(_UniformModel(v), pairs) - v) < 1e-6


def test_perplexity_perfect_model_is_one():
    class Perfect:
        def log_likelihood(self, source, target):
            from opsum.autodiff import Tensor
            return Tensor(0.0)

    assert perplexity(Perfect(), [([4], [BOS, 7, EOS])]) == 1.0
    with pytest.raises(ValueError):
        perplexity(Perfect(), [])


LEX = AspectLexicon(["battery", "screen", "price"])


def test_aspect_recall_boundaries():
    assert aspect_recall([["battery"]], ["the battery is fine"], LEX) == 100.0
    assert aspect_recall([["battery"]], ["no aspects here"], LEX) == 0.0


def test_aspect_recall_pooled_over_instances():
    queries = [["battery", "screen"], ["price", "screen"]]
    summaries = ["battery and screen are fine", "the price is right"]
    assert aspect_recall(queries, summaries, LEX) == 75.0


def test_aspect_recall_rejects_empty_query_and_is_case_insensitive():
    with pytest.raises(ValueError):
        aspect_recall([[]], ["anything"], LEX)
    assert aspect_recall([["battery"]], ["BATTERY rules"], LEX) == 100.0


def test_aspect_recall_query_order_irrelevant():
    summaries = ["battery and screen"]
    a = aspect_recall([["battery", "screen"]], summaries, LEX)
    b = aspect_recall([["screen", "battery"]], summaries, LEX)
    assert a == b


def test_unique_ngrams_hand_values():
    assert unique_ngrams("a a a", 1) == 0.0
    assert unique_ngrams("a b c", 1) == 100.0
    assert unique_ngrams("a b a c", 1) == 50.0  # b, c unique of 4 unigrams
    with pytest.raises(ValueError):
        unique_ngrams("a", 2)


def test_novel_ngrams_hand_values():
    reviews = ["a b x", "x y"]
    assert novel_ngrams("a b", reviews, 2) == 0.0
    assert novel_ngrams("p q r", reviews, 2) == 100.0
    assert novel_ngrams("a b c", reviews, 2) == 50.0
    with pytest.raises(ValueError):
        novel_ngrams("a", ["a b"], 2)


def test_novel_ngrams_antitone_in_reviews():
    rng = np.random.default_rng(2)
    for _ in range(50):
        summary = _random_text(rng) + " k l"
        reviews = [_random_text(rng) for _ in range(3)]
        base = novel_ngrams(summary, reviews, 2)
        more = novel_ngrams(summary, reviews + [_random_text(rng)], 2)
        assert more <= base + 1e-12


def test_bws_hand_values_and_range():
    annotations = [{"best": "m1", "worst": "m2"}] * 4
    scores = bws_scores(annotations)
    assert scores == {"m1": 100.0, "m2": -100.0}
    mixed = [{"best": "a", "worst": "b"}, {"best": "a", "worst": "c"},
             {"best": "b", "worst": "a"}, {"best": "c", "worst": "b"}]
    scores = bws_scores(mixed)
    assert scores["a"] == 25.0  # best twice, worst once, of four
    assert all(-100.0 <= v <= 100.0 for v in scores.values())


def test_bws_rejects_best_equals_worst_and_empty():
    with pytest.raises(ValueError):
        bws_scores([{"best": "m", "worst": "m"}])
    with pytest.raises(ValueError):
        bws_scores([])


def test_content_support_hand_tally_and_sum():
    labels = ["full", "full", "partial", "no", "full", "partial", "full", "full"]
    shares = content_support(labels)
    assert shares == {"full": 62.5, "partial": 25.0, "no": 12.5}
    assert abs(sum(shares.values()) - 100.0) < 1e-9
    with pytest.raises(ValueError):
        content_support(["maybe"])


def test_pov_precedence_and_distribution():
    summaries = ["I love it", "you will like it", "they shipped fast",
                 "great product overall", "I told you so"]
    shares = pov_distribution(summaries)
    assert shares == {"1st": 40.0, "2nd": 20.0, "3rd": 20.0, "nopr": 20.0}
    assert abs(sum(shares.values()) - 100.0) < 1e-9


def test_pov_it_is_not_a_personal_pronoun():
    assert pov_distribution(["it works"])["nopr"] == 100.0


def test_metric_report_roundtrip_and_table():
    report = MetricReport()
    report.update("model", {"rouge_1": 0.5, "ppl": 12.0})
    report.add("baseline", "rouge_1", 0.25)
    clone = MetricReport.from_json(report.to_json())
    assert clone.rows == report.rows
    text = report.to_text()
    assert "rouge_1" in text and "baseline" in text
    assert report.columns() == ["rouge_1", "ppl"]
