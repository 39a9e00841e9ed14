"""End-to-end miniature run of the summarization pipeline.

Generates a synthetic review corpus, builds leave-one-out pre-training
pairs, pre-trains a small encoder-decoder, fine-tunes bottleneck adapters
on a handful of gold summaries, and decodes query-conditioned summaries.

Takes five to ten minutes on a laptop CPU.  The corpus size matters: the
model only learns to copy query aspects into its output once validation
perplexity drops below roughly 1.4, which needs the full two thousand
groups.  Smaller runs finish faster but show aspect recall near zero.
"""

import time

from opsum.adapters import AdapterConfig, insert_adapters, trainable_fraction
from opsum.aspects import query_from_summary
from opsum.corpus import TrainingPair, build_l1o_dataset, filter_query_pairs
from opsum.decoding import DecodeConfig, beam_search
from opsum.metrics import aspect_recall
from opsum.text import build_vocabulary, tokenize
from opsum.toytask import make_gold_pairs, make_review_groups, toy_lexicon
from opsum.training import TrainConfig, encode_pair, finetune, pretrain
from opsum.transformer import ModelConfig, TransformerModel


def main():
    lex = toy_lexicon()
    groups = make_review_groups(2000, 5, seed=100)
    valid_groups = make_review_groups(100, 5, seed=200, prefix="v")
    l1o = filter_query_pairs(build_l1o_dataset(groups, 4, seed=0), lex, seed=0)
    l1o_valid = filter_query_pairs(build_l1o_dataset(valid_groups, 4, seed=0),
                                   lex, seed=0)
    gold_train = make_gold_pairs(40, 4, seed=300, prefix="gt")
    gold_valid = make_gold_pairs(12, 4, seed=400, prefix="gv")
    gold_test = make_gold_pairs(10, 4, seed=500, prefix="gx")
    print(f"l1o pairs: {len(l1o)} train / {len(l1o_valid)} valid; "
          f"gold: {len(gold_train)}/{len(gold_valid)}/{len(gold_test)}")

    vocab = build_vocabulary(
        [tokenize(r.text) for g in groups for r in g.reviews]
        + [tokenize(p.target) for p in gold_train], 1)
    print(f"vocabulary: {len(vocab)} tokens")

    config = ModelConfig(vocab_size=len(vocab), max_source_len=110,
                         max_target_len=40, seed=1)
    model = TransformerModel(config)

    t0 = time.time()
    result = pretrain(model, l1o, l1o_valid, TrainConfig(
        mode="full", learning_rate=1e-3, batch_size=32, max_epochs=12,
        patience=3, eval_metric="ppl", seed=1), vocab)
    print(f"pre-trained to valid ppl {result.best_metric:.3f} "
          f"in {len(result.history)} epochs ({time.time() - t0:.0f}s)")

    adapted = insert_adapters(model, AdapterConfig(target_fraction=0.05))
    print(f"adapters: bottleneck {adapted.adapter_config.bottleneck_dim}, "
          f"trainable fraction {trainable_fraction(adapted):.3f}")
    result = finetune(adapted, gold_train, gold_valid, TrainConfig(
        mode="adapters", learning_rate=2e-4, batch_size=8, max_epochs=10,
        patience=3, eval_metric="rouge_l", seed=1), vocab)
    print(f"fine-tuned to valid rouge-l {result.best_metric:.3f}")

    decode = DecodeConfig(beam_size=5, block_ngram=3, max_target_len=40)
    queries, hyps = [], []
    for pair in gold_test:
        query = query_from_summary(pair.target, lex, seed=1)
        queried = TrainingPair(pair.group_id, pair.inputs, pair.target,
                               query, pair.references)
        source, _ = encode_pair(queried, vocab, config)
        hyp = vocab.decode_text(beam_search(adapted, source, decode).tokens)
        queries.append(query)
        hyps.append(hyp)
    print(f"\naspect recall on held-out gold: "
          f"{aspect_recall(queries, hyps, lex):.1f}")
    for query, hyp in list(zip(queries, hyps))[:3]:
        print(f"  query {query} -> {hyp!r}")


if __name__ == "__main__":
    main()
