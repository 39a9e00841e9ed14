"""Command-line surface: exit codes, artifact discipline, reproducibility,
and a miniature end-to-end run."""

import json
import os

import numpy as np
import pytest

from opsum.cli import main
from opsum.corpus import save_pairs, save_reviews
from opsum.toytask import make_gold_pairs, make_review_groups, toy_lexicon


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    toy_lexicon().save("lex.txt")
    save_reviews(make_review_groups(12, 5, seed=7), "reviews.jsonl")
    save_reviews(make_review_groups(4, 5, seed=8, prefix="v"), "valid_reviews.jsonl")
    save_pairs(make_gold_pairs(4, 4, seed=9, prefix="gt"), "gold.jsonl")
    (tmp_path / "train.cfg").write_text(
        "mode = full\nlearning_rate = 1e-3\nbatch_size = 8\nmax_epochs = 1\n"
        "patience = 1\neval_metric = ppl\nseed = 0\n", encoding="utf-8")
    (tmp_path / "model.cfg").write_text(
        "d_model = 16\nd_ff = 32\nnum_heads = 2\nnum_encoder_layers = 1\n"
        "num_decoder_layers = 1\nmax_source_len = 96\nmax_target_len = 16\n",
        encoding="utf-8")
    return tmp_path


def _build(extra=()):
    return main(["corpus", "build", "--reviews", "reviews.jsonl",
                 "--out", "pairs.jsonl", "--n-inputs", "4",
                 "--query", "--lexicon", "lex.txt", "--seed", "0", *extra])


def test_unknown_subcommand_exits_2(workspace, capsys):
    with pytest.raises(SystemExit) as err:
        main(["summarize-everything"])
    assert err.value.code == 2


def test_unknown_flag_exits_2(workspace):
    with pytest.raises(SystemExit) as err:
        main(["corpus", "stats", "--frobnicate"])
    assert err.value.code == 2


def test_domain_error_exits_1_and_leaves_no_artifact(workspace, capsys):
    code = main(["corpus", "build", "--reviews", "reviews.jsonl",
                 "--out", "pairs.jsonl", "--query"])  # --lexicon missing
    assert code == 1
    assert "error:" in capsys.readouterr().err
    assert not os.path.exists("pairs.jsonl")
    assert not [p for p in os.listdir(".") if p.startswith(".tmp-")]


def test_missing_input_file_exits_1(workspace, capsys):
    code = main(["corpus", "stats", "--pairs", "no_such_file.jsonl"])
    assert code == 1


def test_corpus_build_is_byte_identical_across_runs(workspace):
    assert _build() == 0
    first = open("pairs.jsonl", "rb").read()
    os.rename("pairs.jsonl", "pairs_first.jsonl")
    assert _build() == 0
    assert open("pairs.jsonl", "rb").read() == first


def test_corpus_stats_reports_query_reduction(workspace, capsys):
    assert main(["corpus", "build", "--reviews", "reviews.jsonl",
                 "--out", "generic.jsonl", "--n-inputs", "4"]) == 0
    assert _build() == 0
    capsys.readouterr()
    assert main(["corpus", "stats", "--pairs", "generic.jsonl", "pairs.jsonl"]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["generic"]["generic"] == 12
    assert stats["pairs"]["query"] <= stats["generic"]["generic"]


def test_end_to_end_recipe_and_manifest(workspace, capsys):
    assert main(["corpus", "build", "--reviews", "reviews.jsonl",
                 "--out", "train_pairs.jsonl", "--n-inputs", "4",
                 "--query", "--lexicon", "lex.txt"]) == 0
    assert main(["corpus", "build", "--reviews", "valid_reviews.jsonl",
                 "--out", "valid_pairs.jsonl", "--n-inputs", "4",
                 "--query", "--lexicon", "lex.txt"]) == 0
    assert main(["--manifest", "manifest.jsonl", "train", "pretrain",
                 "--pairs", "train_pairs.jsonl", "--valid", "valid_pairs.jsonl",
                 "--config", "train.cfg", "--model-config", "model.cfg",
                 "--out", "pre.ckpt", "--log", "pre.log"]) == 0
    assert os.path.exists("pre.ckpt") and os.path.exists("pre.ckpt.vocab")
    assert json.loads(open("pre.log").readline())["epoch"] == 0

    (workspace / "fine.cfg").write_text(
        "mode = adapters\nlearning_rate = 1e-3\nbatch_size = 4\nmax_epochs = 1\n"
        "patience = 1\neval_metric = rouge_l\nseed = 0\n", encoding="utf-8")
    assert main(["train", "finetune", "--gold", "gold.jsonl",
                 "--valid", "gold.jsonl", "--ckpt", "pre.ckpt",
                 "--config", "fine.cfg", "--out", "fine.ckpt"]) == 0
    assert main(["generate", "--ckpt", "fine.ckpt",
                 "--reviews", "valid_reviews.jsonl", "--query-from", "reviews",
                 "--lexicon", "lex.txt", "--k", "3", "--beam", "2",
                 "--block", "3", "--out", "hyps.jsonl"]) == 0
    capsys.readouterr()
    assert main(["eval", "report", "--refs", "valid_pairs.jsonl",
                 "--hyps", "hyps.jsonl", "--lexicon", "lex.txt",
                 "--ckpt", "fine.ckpt", "--system", "toy",
                 "--out", "report.json"]) == 0
    table = capsys.readouterr().out
    report = json.loads(open("report.json").read())["toy"]
    for column in ("rouge_1", "rouge_2", "rouge_l", "ppl", "aspect_recall",
                   "novel_2grams", "novel_3grams", "novel_4grams",
                   "unique_1grams", "unique_2grams", "pov_1st", "pov_nopr"):
        assert column in report
        assert column in table

    manifest = [json.loads(line) for line in open("manifest.jsonl")]
    assert len(manifest) == 1
    entry = manifest[0]
    assert entry["seed"] == 0
    assert "train_pairs.jsonl" in entry["inputs"]
    assert all(len(h) == 64 for h in entry["inputs"].values())
    assert "pre.ckpt" in entry["outputs"]


def test_eval_bws_and_support(workspace, capsys):
    with open("bws.jsonl", "w") as fh:
        fh.write('{"item": "x", "best": "a", "worst": "b"}\n')
        fh.write('{"item": "y", "best": "a", "worst": "c"}\n')
    assert main(["eval", "bws", "--annotations", "bws.jsonl"]) == 0
    assert json.loads(capsys.readouterr().out)["a"] == 100.0
    with open("support.jsonl", "w") as fh:
        fh.write('{"label": "full"}\n{"label": "no"}\n')
    assert main(["eval", "support", "--annotations", "support.jsonl"]) == 0
    shares = json.loads(capsys.readouterr().out)
    assert shares == {"full": 50.0, "partial": 0.0, "no": 50.0}
    with open("bad.jsonl", "w") as fh:
        fh.write('{"item": "x", "best": "a", "worst": "a"}\n')
    assert main(["eval", "bws", "--annotations", "bad.jsonl"]) == 1


def test_baselines_and_selftest(workspace, capsys):
    for kind in ("clustroid", "random", "lead"):
        assert main(["baseline", kind, "--reviews", "valid_reviews.jsonl",
                     "--out", f"{kind}.jsonl"]) == 0
        lines = open(f"{kind}.jsonl").read().splitlines()
        assert len(lines) == 4
        assert "summary" in json.loads(lines[0])
    capsys.readouterr()
    assert main(["selftest", "gradcheck"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["worst_primitive"] < 1e-6
    assert payload["model_error"] < 1e-4
