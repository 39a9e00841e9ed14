"""Command-line surface for the three-stage workflow and all evaluations.

Subcommands: corpus build/stats, train pretrain/finetune, generate,
eval {rouge, ar, abstractiveness, ppl, pov, bws, support, report},
baseline {clustroid, random, lead}, probe forgetting, selftest gradcheck.

Artifacts are written atomically (temp file in the target directory, then
rename), so a failed run leaves no partial outputs.  With --manifest PATH
every successful run appends a JSON line recording the subcommand, seed,
and content hashes of its input files.

Exit codes: 0 success, 1 domain error (bad data, invariant violation),
2 usage error (argparse).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .adapters import AdapterConfig, insert_adapters, trainable_fraction
from .aspects import AspectLexicon, query_from_reviews
from .baselines import clustroid, lead, random_review
from .corpus import (TrainingPair, build_l1o_dataset, corpus_stats,
                     filter_query_pairs, filter_reviews, load_pairs,
                     load_reviews, save_pairs)
from .decoding import DecodeConfig, beam_search
from .metrics import (MetricReport, aspect_recall, bws_scores, content_support,
                      multi_reference_rouge, novel_ngrams, pov_distribution,
                      unique_ngrams)
from .text import Vocabulary, build_vocabulary, tokenize
from .training import (TrainConfig, encode_pair, encode_pairs, evaluate_ppl,
                       finetune, forgetting_probe, load_train_config,
                       model_from_checkpoint, pretrain, save_model,
                       write_training_log)
from .corpus import ReviewGroup
from .transformer import ModelConfig, TransformerModel


# ---------------------------------------------------------------------------
# small file helpers


def _atomic_write(path, writer):
    """Run ``writer(tmp_path)`` and rename the result over ``path``."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _write_jsonl(path, records):
    def writer(tmp):
        with open(tmp, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    _atomic_write(path, writer)


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


class RunRecord:
    """Input/output bookkeeping for the manifest line of one run."""

    def __init__(self):
        self.inputs = []
        self.outputs = []
        self.seed = None

    def reads(self, *paths):
        self.inputs.extend(p for p in paths if p)

    def writes(self, *paths):
        self.outputs.extend(p for p in paths if p)


def _append_manifest(path, argv, record):
    entry = {
        "argv": list(argv),
        "version": __version__,
        "seed": record.seed,
        "inputs": {p: _sha256(p) for p in record.inputs if os.path.exists(p)},
        "outputs": list(record.outputs),
    }
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# model/vocabulary plumbing

_MODEL_FIELDS = {
    "num_encoder_layers": int, "num_decoder_layers": int, "num_heads": int,
    "d_model": int, "d_ff": int, "max_source_len": int, "max_target_len": int,
    "dropout_rate": float, "seed": int,
}


def _load_model_config(path, vocab_size):
    """Flat key=value model-shape file; vocab_size comes from the vocabulary."""
    values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in _MODEL_FIELDS:
                    raise ValueError(f"{path}:{lineno}: unknown model key {key!r}")
                values[key] = _MODEL_FIELDS[key](raw)
    return ModelConfig(vocab_size=vocab_size, **values)


def _vocab_sidecar(ckpt_path):
    return ckpt_path + ".vocab"


def _load_vocab_for(ckpt, explicit):
    path = explicit or _vocab_sidecar(ckpt)
    if not os.path.exists(path):
        raise ValueError(f"vocabulary file {path} not found; pass --vocab")
    return Vocabulary.load(path), path


def _load_summaries(path):
    records = _read_jsonl(path)
    for rec in records:
        if "summary" not in rec:
            raise ValueError(f"{path}: summaries need a 'summary' field")
    return records


def _match_refs(refs_pairs, hyp_records):
    """Align hypothesis records to reference pairs by group_id."""
    by_group = {p.group_id: p for p in refs_pairs}
    matched = []
    for rec in hyp_records:
        gid = rec.get("group_id")
        if gid not in by_group:
            raise ValueError(f"hypothesis group {gid!r} missing from references")
        matched.append((by_group[gid], rec))
    return matched


# ---------------------------------------------------------------------------
# corpus


def cmd_corpus_build(args, run):
    run.reads(args.reviews, args.lexicon)
    run.seed = args.seed
    groups = load_reviews(args.reviews)
    filtered = []
    for group in groups:
        kept = filter_reviews(group.reviews)
        if kept:
            filtered.append(ReviewGroup(group.group_id, kept))
    pairs = build_l1o_dataset(filtered, args.n_inputs, seed=args.seed)
    if args.query:
        if not args.lexicon:
            raise ValueError("corpus build --query requires --lexicon")
        lexicon = AspectLexicon.load(args.lexicon)
        pairs = filter_query_pairs(pairs, lexicon, seed=args.seed)
    _atomic_write(args.out, lambda tmp: save_pairs(pairs, tmp))
    run.writes(args.out)
    _emit({"pairs": len(pairs), "groups": len(filtered), "out": args.out})


def cmd_corpus_stats(args, run):
    run.reads(*args.pairs)
    splits = {}
    for path in args.pairs:
        name = os.path.splitext(os.path.basename(path))[0]
        splits[name] = load_pairs(path)
    _emit(corpus_stats(splits))


# ---------------------------------------------------------------------------
# training


def _build_or_load_vocab(args, pairs):
    if args.vocab and os.path.exists(args.vocab):
        return Vocabulary.load(args.vocab), args.vocab
    texts = [tokenize(t) for p in pairs for t in p.inputs + [p.target]]
    return build_vocabulary(texts, min_count=1), None


def cmd_train_pretrain(args, run):
    run.reads(args.pairs, args.valid, args.config, args.model_config, args.vocab)
    config = load_train_config(args.config) if args.config else TrainConfig()
    if args.mode:
        config.mode = args.mode
    run.seed = config.seed
    pairs = load_pairs(args.pairs)
    valid = load_pairs(args.valid)
    vocab, vocab_path = _build_or_load_vocab(args, pairs)
    model_config = _load_model_config(args.model_config, len(vocab))
    model = TransformerModel(model_config)
    if config.mode == "adapters":
        adapter_config = AdapterConfig(target_fraction=args.adapter_fraction,
                                       bottleneck_dim=args.bottleneck,
                                       init_seed=config.seed)
        model = insert_adapters(model, adapter_config)
    result = pretrain(model, pairs, valid, config, vocab)
    save_model(args.out, model)
    _atomic_write(_vocab_sidecar(args.out), vocab.save)
    if args.log:
        _atomic_write(args.log, lambda tmp: write_training_log(tmp, result.history))
        run.writes(args.log)
    run.writes(args.out, _vocab_sidecar(args.out))
    _emit({"best_ppl": result.best_metric, "epochs": len(result.history),
           "out": args.out})


def cmd_train_finetune(args, run):
    run.reads(args.gold, args.valid, args.ckpt, args.config, args.vocab)
    config = load_train_config(args.config) if args.config else TrainConfig(
        eval_metric="rouge_l")
    if args.mode:
        config.mode = args.mode
    run.seed = config.seed
    gold = load_pairs(args.gold)
    valid = load_pairs(args.valid)
    vocab, vocab_path = _load_vocab_for(args.ckpt, args.vocab)
    run.reads(vocab_path)
    model = model_from_checkpoint(args.ckpt)
    if config.mode == "adapters" and not getattr(model, "adapters", None):
        adapter_config = AdapterConfig(target_fraction=args.adapter_fraction,
                                       bottleneck_dim=args.bottleneck,
                                       init_seed=config.seed)
        model = insert_adapters(model, adapter_config)
    result = finetune(model, gold, valid, config, vocab)
    save_model(args.out, model)
    _atomic_write(_vocab_sidecar(args.out), vocab.save)
    if args.log:
        _atomic_write(args.log, lambda tmp: write_training_log(tmp, result.history))
        run.writes(args.log)
    run.writes(args.out, _vocab_sidecar(args.out))
    _emit({"best_rouge_l": result.best_metric, "epochs": len(result.history),
           "trainable_fraction": trainable_fraction(model), "out": args.out})


# ---------------------------------------------------------------------------
# generation and baselines


def cmd_generate(args, run):
    run.reads(args.ckpt, args.reviews, args.lexicon, args.queries, args.vocab)
    run.seed = args.seed
    vocab, vocab_path = _load_vocab_for(args.ckpt, args.vocab)
    run.reads(vocab_path)
    model = model_from_checkpoint(args.ckpt)
    model.eval()
    groups = load_reviews(args.reviews)
    decode = DecodeConfig(beam_size=args.beam, block_ngram=args.block,
                          max_target_len=model.config.max_target_len)
    queries_by_group = {}
    if args.query_from == "file":
        if not args.queries:
            raise ValueError("generate --query-from file requires --queries")
        for rec in _read_jsonl(args.queries):
            queries_by_group[rec["group_id"]] = rec["query"]
    lexicon = AspectLexicon.load(args.lexicon) if args.lexicon else None
    records = []
    for group in groups:
        texts = [r.text for r in group.reviews]
        query = None
        if args.query_from == "reviews":
            if lexicon is None:
                raise ValueError("generate --query-from reviews requires --lexicon")
            query = query_from_reviews(texts, lexicon, args.k)
        elif args.query_from == "file":
            if group.group_id not in queries_by_group:
                raise ValueError(f"no query for group {group.group_id!r}")
            query = queries_by_group[group.group_id]
        pair = TrainingPair(group.group_id, texts, "", query or None)
        source, _ = encode_pair(pair, vocab, model.config)
        result = beam_search(model, source, decode)
        record = {"group_id": group.group_id,
                  "summary": vocab.decode_text(result.tokens)}
        if query:
            record["query"] = query
        records.append(record)
    _write_jsonl(args.out, records)
    run.writes(args.out)
    _emit({"summaries": len(records), "out": args.out})


def cmd_baseline(args, run):
    run.reads(args.reviews)
    run.seed = args.seed
    groups = load_reviews(args.reviews)
    records = []
    for group in groups:
        if args.kind == "clustroid":
            summary = clustroid(group).text
        elif args.kind == "random":
            summary = random_review(group, seed=args.seed).text
        else:
            summary = lead(group, sentences_per_review=args.sentences)
        records.append({"group_id": group.group_id, "summary": summary})
    _write_jsonl(args.out, records)
    run.writes(args.out)
    _emit({"summaries": len(records), "out": args.out})


# ---------------------------------------------------------------------------
# evaluation


def _rouge_table(matched):
    table = {}
    for variant in ("1", "2", "L"):
        scores = [multi_reference_rouge(rec["summary"],
                                        pair.references or [pair.target], variant)
                  for pair, rec in matched]
        table[f"rouge_{variant.lower()}"] = float(np.mean([s.f1 for s in scores]))
    return table


def cmd_eval(args, run):
    kind = args.kind
    if kind == "bws":
        run.reads(args.annotations)
        _emit(bws_scores(_read_jsonl(args.annotations)))
        return
    if kind == "support":
        run.reads(args.annotations)
        _emit(content_support(_read_jsonl(args.annotations)))
        return

    hyps = _load_summaries(args.hyps)
    run.reads(args.hyps, args.refs, args.lexicon, args.queries)

    if kind == "pov":
        _emit(pov_distribution([rec["summary"] for rec in hyps]))
        return

    if kind == "ar":
        lexicon = AspectLexicon.load(args.lexicon)
        queries = _queries_for(hyps, args.queries)
        _emit({"aspect_recall": aspect_recall(
            queries, [rec["summary"] for rec in hyps], lexicon)})
        return

    refs = load_pairs(args.refs)
    matched = _match_refs(refs, hyps)

    if kind == "rouge":
        _emit(_rouge_table(matched))
        return

    if kind == "abstractiveness":
        _emit(_abstractiveness_table(matched))
        return

    if kind == "ppl":
        vocab, vocab_path = _load_vocab_for(args.ckpt, args.vocab)
        run.reads(args.ckpt, vocab_path)
        model = model_from_checkpoint(args.ckpt)
        encoded = encode_pairs(refs, vocab, model.config)
        _emit({"ppl": evaluate_ppl(model, encoded)})
        return

    if kind == "report":
        _eval_report(args, run, refs, hyps, matched)
        return

    raise ValueError(f"unknown eval kind {kind!r}")


def _queries_for(hyps, queries_path):
    if queries_path:
        by_group = {rec["group_id"]: rec["query"] for rec in _read_jsonl(queries_path)}
        return [by_group[rec["group_id"]] for rec in hyps]
    if any("query" not in rec for rec in hyps):
        raise ValueError("eval ar: hypotheses lack queries; pass --queries")
    return [rec["query"] for rec in hyps]


def _abstractiveness_table(matched):
    table = {}
    for n in (2, 3, 4):
        table[f"novel_{n}grams"] = float(np.mean(
            [novel_ngrams(rec["summary"], pair.inputs, n) for pair, rec in matched]))
    for n in (1, 2):
        table[f"unique_{n}grams"] = float(np.mean(
            [unique_ngrams(rec["summary"], n) for pair, rec in matched]))
    return table


def _eval_report(args, run, refs, hyps, matched):
    """All metric columns for one system in a single MetricReport."""
    report = MetricReport()
    system = args.system
    report.update(system, _rouge_table(matched))
    report.update(system, _abstractiveness_table(matched))
    report.update(system, {f"pov_{k}": v for k, v in pov_distribution(
        [rec["summary"] for rec in hyps]).items()})
    if args.lexicon:
        lexicon = AspectLexicon.load(args.lexicon)
        queries = _queries_for(hyps, args.queries)
        report.add(system, "aspect_recall", aspect_recall(
            queries, [rec["summary"] for rec in hyps], lexicon))
    if args.ckpt:
        vocab, vocab_path = _load_vocab_for(args.ckpt, args.vocab)
        run.reads(args.ckpt, vocab_path)
        model = model_from_checkpoint(args.ckpt)
        encoded = encode_pairs(refs, vocab, model.config)
        report.add(system, "ppl", evaluate_ppl(model, encoded))
    if args.out:
        _atomic_write(args.out, lambda tmp: _write_text(tmp, report.to_json() + "\n"))
        run.writes(args.out)
    print(report.to_text())


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# probe and selftest


def cmd_probe_forgetting(args, run):
    run.reads(args.pre, args.post, args.pairs, args.vocab)
    vocab, vocab_path = _load_vocab_for(args.pre, args.vocab)
    run.reads(vocab_path)
    pairs = load_pairs(args.pairs)
    before, after, delta = forgetting_probe(args.pre, args.post, pairs, vocab)
    _emit({"ppl_before": before, "ppl_after": after, "delta": delta})


def cmd_selftest_gradcheck(args, run):
    from .selftest import model_grad_error, primitive_grad_errors
    errors = primitive_grad_errors(seed=args.seed)
    worst_primitive = max(errors.values())
    name, model_err = model_grad_error(seed=args.seed)
    _emit({"primitive_errors": errors, "worst_primitive": worst_primitive,
           "model_parameter": name, "model_error": model_err})
    if worst_primitive >= 1e-6 or model_err >= 1e-4:
        raise ValueError("gradient self-check exceeded tolerance")


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="opsum", description="Few-shot opinion summarization laboratory.")
    parser.add_argument("--manifest", help="append a run record to this JSONL file")
    sub = parser.add_subparsers(dest="command", required=True)

    corpus = sub.add_parser("corpus", help="pair construction and statistics")
    corpus_sub = corpus.add_subparsers(dest="subcommand", required=True)
    build = corpus_sub.add_parser("build", help="build leave-one-out pairs")
    build.add_argument("--reviews", required=True)
    build.add_argument("--out", required=True)
    build.add_argument("--n-inputs", type=int, default=8)
    build.add_argument("--query", action="store_true",
                       help="keep only aspect-bearing targets and attach queries")
    build.add_argument("--lexicon")
    build.add_argument("--seed", type=int, default=0)
    build.set_defaults(func=cmd_corpus_build)
    stats = corpus_sub.add_parser("stats", help="pair counts per split")
    stats.add_argument("--pairs", nargs="+", required=True)
    stats.set_defaults(func=cmd_corpus_stats)

    train = sub.add_parser("train", help="pre-training and fine-tuning")
    train_sub = train.add_subparsers(dest="subcommand", required=True)
    pre = train_sub.add_parser("pretrain", help="self-supervised stage")
    pre.add_argument("--pairs", required=True)
    pre.add_argument("--valid", required=True)
    pre.add_argument("--config", help="key=value training config file")
    pre.add_argument("--model-config", help="key=value model shape file")
    pre.add_argument("--mode", choices=("adapters", "full"))
    pre.add_argument("--vocab", help="existing vocabulary file (else built from pairs)")
    pre.add_argument("--adapter-fraction", type=float, default=0.05)
    pre.add_argument("--bottleneck", type=int, default=0)
    pre.add_argument("--log", help="write per-epoch JSONL records here")
    pre.add_argument("--out", required=True)
    pre.set_defaults(func=cmd_train_pretrain)
    fine = train_sub.add_parser("finetune", help="supervised stage on gold pairs")
    fine.add_argument("--gold", required=True)
    fine.add_argument("--valid", required=True)
    fine.add_argument("--ckpt", required=True)
    fine.add_argument("--config", help="key=value training config file")
    fine.add_argument("--mode", choices=("adapters", "full"))
    fine.add_argument("--vocab")
    fine.add_argument("--adapter-fraction", type=float, default=0.05)
    fine.add_argument("--bottleneck", type=int, default=0)
    fine.add_argument("--log")
    fine.add_argument("--out", required=True)
    fine.set_defaults(func=cmd_train_finetune)

    gen = sub.add_parser("generate", help="beam-search summaries for review groups")
    gen.add_argument("--ckpt", required=True)
    gen.add_argument("--reviews", required=True)
    gen.add_argument("--query-from", choices=("reviews", "file", "none"),
                     default="none")
    gen.add_argument("--queries", help="JSONL group_id/query file")
    gen.add_argument("--lexicon")
    gen.add_argument("--k", type=int, default=6)
    gen.add_argument("--beam", type=int, default=5)
    gen.add_argument("--block", type=int, default=3)
    gen.add_argument("--vocab")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    ev = sub.add_parser("eval", help="metrics over summaries or annotations")
    ev.add_argument("kind", choices=("rouge", "ar", "abstractiveness", "ppl",
                                     "pov", "bws", "support", "report"))
    ev.add_argument("--refs", help="reference pairs JSONL")
    ev.add_argument("--hyps", help="generated summaries JSONL")
    ev.add_argument("--lexicon")
    ev.add_argument("--queries")
    ev.add_argument("--annotations")
    ev.add_argument("--ckpt")
    ev.add_argument("--vocab")
    ev.add_argument("--system", default="model", help="row name for eval report")
    ev.add_argument("--out", help="write the report JSON here (eval report)")
    ev.set_defaults(func=cmd_eval)

    base = sub.add_parser("baseline", help="extractive baseline summaries")
    base.add_argument("kind", choices=("clustroid", "random", "lead"))
    base.add_argument("--reviews", required=True)
    base.add_argument("--out", required=True)
    base.add_argument("--seed", type=int, default=0)
    base.add_argument("--sentences", type=int, default=1,
                      help="leading sentences per review for the lead baseline")
    base.set_defaults(func=cmd_baseline)

    probe = sub.add_parser("probe", help="diagnostics over checkpoints")
    probe_sub = probe.add_subparsers(dest="subcommand", required=True)
    forget = probe_sub.add_parser("forgetting",
                                  help="PPL drift between two checkpoints")
    forget.add_argument("--pre", required=True)
    forget.add_argument("--post", required=True)
    forget.add_argument("--pairs", required=True)
    forget.add_argument("--vocab")
    forget.set_defaults(func=cmd_probe_forgetting)

    selftest = sub.add_parser("selftest", help="built-in numeric checks")
    selftest_sub = selftest.add_subparsers(dest="subcommand", required=True)
    grad = selftest_sub.add_parser("gradcheck", help="finite-difference audit")
    grad.add_argument("--seed", type=int, default=0)
    grad.set_defaults(func=cmd_selftest_gradcheck)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    record = RunRecord()
    try:
        args.func(args, record)
    except (ValueError, OSError, RuntimeError, KeyError,
            FloatingPointError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.manifest:
        _append_manifest(args.manifest, argv, record)
    return 0


if __name__ == "__main__":
    sys.exit(main())
