"""Extractive baselines on the synthetic corpus.

Clustroid (highest mean ROUGE-L against the rest of the group), a random
review, and the lead baseline built from review openings, each scored
against the gold summary of its group.
"""

import numpy as np

from opsum.baselines import clustroid, lead, random_review
from opsum.corpus import ReviewGroup, Review
from opsum.metrics import rouge
from opsum.toytask import make_gold_pairs


def main():
    pairs = make_gold_pairs(20, 5, seed=7, prefix="demo")
    scores = {"clustroid": [], "random": [], "lead": []}
    for pair in pairs:
        gid = pair.group_id
        group = ReviewGroup(gid, [Review(gid, f"{gid}-r{i}", text)
                                  for i, text in enumerate(pair.inputs)])
        outputs = {
            "clustroid": clustroid(group).text,
            "random": random_review(group, seed=0).text,
            "lead": lead(group, sentences_per_review=1),
        }
        for name, summary in outputs.items():
            scores[name].append(rouge(summary, pair.target, "L").f1)

    print("mean ROUGE-L F1 against gold summaries (20 groups):")
    for name, values in scores.items():
        print(f"  {name:10s} {100 * np.mean(values):5.2f}")
    sample = pairs[0]
    gid = sample.group_id
    group = ReviewGroup(gid, [Review(gid, f"{gid}-r{i}", text)
                              for i, text in enumerate(sample.inputs)])
    print("\nexample group:")
    print("  gold     :", sample.target)
    print("  clustroid:", clustroid(group).text)
    print("  lead     :", lead(group, sentences_per_review=1))


if __name__ == "__main__":
    main()
