"""Beam search behavior and the evaluation metric suite on small fixtures.

The first half uses a hand-built probability-table model to show where
beam search beats greedy and what n-gram blocking does; the second half
scores a few summaries with ROUGE, abstractiveness, and POV metrics.
"""

import numpy as np

from opsum.decoding import DecodeConfig, beam_search
from opsum.metrics import (MetricReport, bws_scores, novel_ngrams,
                           pov_distribution, rouge, unique_ngrams)
from opsum.text import BOS, EOS


class TableModel:
    """Toy decoder whose next-token distribution is an explicit table."""

    def __init__(self, vocab_size, table, default=None):
        self.vocab_size = vocab_size
        self.table = table
        if default is None:
            default = np.full(vocab_size, 1.0 / vocab_size)
        self.default = np.asarray(default, dtype=float)

    def encode_source(self, source):
        return None

    def decode_step_batch(self, encoding, prefixes):
        return np.stack([self.table.get(tuple(p), self.default)
                         for p in prefixes])


def row(v, probs):
    r = np.full(v, 1e-9)
    for token, p in probs.items():
        r[token] = p
    return r / r.sum()


def garden_path():
    # token 3 looks best for one step, but the 4-branch pays off later
    v = 5
    model = TableModel(v, {
        (BOS,): row(v, {3: 0.55, 4: 0.45}),
        (BOS, 3): row(v, {EOS: 0.10, 3: 0.45, 4: 0.45}),
        (BOS, 4): row(v, {EOS: 0.90, 3: 0.05, 4: 0.05}),
    }, default=row(v, {EOS: 0.6, 3: 0.4}))
    for beam in (1, 5):
        config = DecodeConfig(beam_size=beam, block_ngram=3, max_target_len=4)
        result = beam_search(model, [7], config)
        print(f"beam {beam}: tokens {result.tokens} score {result.score:.3f}")


def blocking():
    # a model that loves repeating itself, under increasingly strict blocking
    v = 6
    loop = row(v, {3: 0.50, 4: 0.25, EOS: 0.25})
    model = TableModel(v, {}, default=loop)
    for block in (0, 3, 1):
        config = DecodeConfig(beam_size=4, block_ngram=block, max_target_len=12)
        tokens = beam_search(model, [9], config).tokens
        print(f"block {block}: {tokens}")


def metric_suite():
    reviews = ["the battery is great and it lasts all day",
               "battery life is great but the screen is dim"]
    summary = "great battery life , dim screen"
    report = MetricReport()
    for variant in (1, 2, "L"):
        report.add("demo", f"rouge_{variant}".lower(),
                   100 * rouge(summary, reviews[1], variant).f1)
    report.add("demo", "unique_1grams", unique_ngrams(summary, 1))
    report.add("demo", "novel_2grams", novel_ngrams(summary, reviews, 2))
    pov = pov_distribution([summary, "i love the battery"])
    report.update("demo", {f"pov_{k}": v for k, v in pov.items()})
    print(report.to_text())

    annotations = [{"item": i, "best": "ours", "worst": "lead"}
                   for i in range(3)]
    annotations.append({"item": 3, "best": "lead", "worst": "clustroid"})
    print("\nbest-worst scaling:", bws_scores(annotations))


if __name__ == "__main__":
    garden_path()
    print()
    blocking()
    print()
    metric_suite()
