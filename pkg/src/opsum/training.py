"""Adam optimization, the pre-training and fine-tuning loops, stopping
criteria, checkpointing helpers, and the catastrophic-forgetting probe."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .adapters import AdapterConfig, AdaptedModel, insert_adapters
from .decoding import DecodeConfig, beam_search
from .metrics import multi_reference_rouge
from .text import BOS, EOS, PAD, tokenize
from .transformer import (ModelConfig, TransformerModel, build_source,
                          load_checkpoint, save_checkpoint)

VALID_MODES = ("adapters", "full")
VALID_METRICS = ("ppl", "rouge_l")

# 5e-5 suits the full-scale setup; tiny models need larger steps
PAPER_SCALE_LR = 5e-5
TOY_SCALE_LR = 3e-4


@dataclass
class OptimizerState:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainConfig:
    mode: str = "adapters"
    learning_rate: float = TOY_SCALE_LR
    batch_size: int = 16
    max_epochs: int = 20
    patience: int = 3
    eval_metric: str = "ppl"
    seed: int = 0
    eval_beam_size: int = 1
    eval_block_ngram: int = 3

    def __post_init__(self):
        if self.mode not in VALID_MODES:
            raise ValueError(f"mode must be one of {VALID_MODES}, got {self.mode!r}")
        if self.eval_metric not in VALID_METRICS:
            raise ValueError(f"eval_metric must be one of {VALID_METRICS}")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")


_CONFIG_FIELDS = {
    "mode": str, "learning_rate": float, "batch_size": int, "max_epochs": int,
    "patience": int, "eval_metric": str, "seed": int, "eval_beam_size": int,
    "eval_block_ngram": int,
}


def load_train_config(path):
    """Parse a flat key=value UTF-8 config file; unknown keys are rejected."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in _CONFIG_FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _CONFIG_FIELDS[key](raw)
    return TrainConfig(**values)


# ---------------------------------------------------------------------------
# Adam


def adam_step(named_params, state):
    """One bias-corrected Adam update over the given (name, tensor) list.

    Only tensors with requires_grad are touched; a NaN/Inf gradient aborts
    with the offending parameter's name.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, param in named_params:
        if not param.requires_grad:
            continue
        grad = param.grad
        if grad is None:
            grad = np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * grad
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * grad ** 2
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        param.data = param.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# pair encoding and batching


def encode_pair(pair, vocab, model_config):
    """(source ids, target ids) for one TrainingPair.

    The source follows the query/review layout; the target is bracketed by
    BOS/EOS and truncated to fit max_target_len.
    """
    review_ids = [vocab.encode(tokenize(text)) for text in pair.inputs]
    query_ids = None
    if pair.query is not None:
        query_ids = [vocab.encode(tokenize(phrase)) for phrase in pair.query]
    source = build_source(review_ids, query_ids, model_config.max_source_len)
    body = vocab.encode(tokenize(pair.target))[: model_config.max_target_len - 2]
    target = [BOS] + body + [EOS]
    return source, target


def encode_pairs(pairs, vocab, model_config):
    return [encode_pair(p, vocab, model_config) for p in pairs]


def make_batches(encoded, batch_size, order=None):
    """Pad (source, target) pairs into (src_ids, src_mask, tgt_ids) batches."""
    if order is None:
        order = range(len(encoded))
    items = [encoded[i] for i in order]
    batches = []
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        s_max = max(len(s) for s, _ in chunk)
        t_max = max(len(t) for _, t in chunk)
        src = np.full((len(chunk), s_max), PAD, dtype=np.int64)
        tgt = np.full((len(chunk), t_max), PAD, dtype=np.int64)
        for row, (s, t) in enumerate(chunk):
            src[row, :len(s)] = s
            tgt[row, :len(t)] = t
        batches.append((src, src != PAD, tgt))
    return batches


def evaluate_ppl(model, encoded_pairs, batch_size=32):
    """Corpus perplexity: exp(total NLL / total predicted tokens)."""
    if not encoded_pairs:
        raise ValueError("evaluate_ppl: empty pair set")
    total_nll = 0.0
    total_tokens = 0
    model.eval()
    with ad.no_grad():
        for src, mask, tgt in make_batches(encoded_pairs, batch_size):
            loss, count = model.batch_loss(src, mask, tgt)
            total_nll += loss.item()
            total_tokens += count
    return math.exp(total_nll / total_tokens)


def evaluate_rouge_l(model, pairs, vocab, model_config, decode_config):
    """Mean ROUGE-L F1 of decoded outputs against each pair's references."""
    if not pairs:
        raise ValueError("evaluate_rouge_l: empty pair set")
    scores = []
    for pair in pairs:
        source, _ = encode_pair(pair, vocab, model_config)
        result = beam_search(model, source, decode_config)
        hyp = vocab.decode_text(result.tokens)
        refs = pair.references if pair.references else [pair.target]
        scores.append(multi_reference_rouge(hyp, refs, "L").f1)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    best_state: dict          # name -> ndarray snapshot of the best epoch
    best_metric: float
    best_epoch: int
    history: list             # one record per epoch


def _trainable(model):
    return [(name, t) for name, t in model.all_named_parameters() if t.requires_grad]


def _apply_mode(model, mode):
    if mode == "adapters":
        if getattr(model, "adapters", None) is None:
            raise ValueError("adapters mode requires a model with inserted adapters")
        for t in model.base.params.values() if isinstance(model, AdaptedModel) \
                else model.params.values():
            t.requires_grad = False
    else:
        params = model.base.params if isinstance(model, AdaptedModel) else model.params
        for t in params.values():
            t.requires_grad = True


def _zero_grads(named_params):
    for _, t in named_params:
        t.zero_grad()


def _run_epochs(model, train_encoded, config, evaluate, better):
    trainable = _trainable(model)
    if not trainable:
        raise ValueError("no trainable parameters under the requested mode")
    state = OptimizerState(learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best_metric = None
    best_state = None
    best_epoch = -1
    history = []
    for epoch in range(config.max_epochs):
        order = rng.permutation(len(train_encoded))
        model.train(True)
        epoch_loss = 0.0
        epoch_tokens = 0
        for src, mask, tgt in make_batches(train_encoded, config.batch_size, order):
            with ad.fresh_tape():
                loss, count = model.batch_loss(src, mask, tgt)
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                _zero_grads(trainable)
                ad.backward(ad.scale(loss, 1.0 / count))
                adam_step(trainable, state)
            epoch_loss += loss.item()
            epoch_tokens += count
        metric = evaluate()
        improved = best_metric is None or better(metric, best_metric)
        if improved:
            best_metric = metric
            best_state = model.copy_state()
            best_epoch = epoch
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / max(epoch_tokens, 1),
            "valid_metric": metric,
            "best_so_far": best_metric,
        })
        if epoch - best_epoch >= config.patience:
            break
    return TrainResult(best_state, best_metric, best_epoch, history)


def pretrain(model, pairs, valid_pairs, config, vocab):
    """Stage-2 loop: minimize NLL on pseudo-summary pairs, stop on
    validation perplexity plateau, return the best-PPL snapshot."""
    if not pairs:
        raise ValueError("pretrain: empty training set")
    if config.eval_metric != "ppl":
        raise ValueError("pretrain uses ppl as the stopping metric")
    _apply_mode(model, config.mode)
    train_encoded = encode_pairs(pairs, vocab, model.config)
    valid_encoded = encode_pairs(valid_pairs, vocab, model.config)
    result = _run_epochs(model, train_encoded, config,
                         evaluate=lambda: evaluate_ppl(model, valid_encoded),
                         better=lambda new, old: new < old)
    model.load_state(result.best_state)
    return result


def finetune(model, gold_pairs, valid_pairs, config, vocab):
    """Stage-3 loop: train on gold pairs, stop on validation ROUGE-L."""
    if not gold_pairs:
        raise ValueError("finetune: empty training set")
    if config.eval_metric != "rouge_l":
        raise ValueError("finetune uses rouge_l as the stopping metric")
    _apply_mode(model, config.mode)
    train_encoded = encode_pairs(gold_pairs, vocab, model.config)
    decode_config = DecodeConfig(beam_size=config.eval_beam_size,
                                 block_ngram=config.eval_block_ngram,
                                 max_target_len=model.config.max_target_len)
    result = _run_epochs(
        model, train_encoded, config,
        evaluate=lambda: evaluate_rouge_l(model, valid_pairs, vocab,
                                          model.config, decode_config),
        better=lambda new, old: new > old)
    model.load_state(result.best_state)
    return result


def write_training_log(path, history):
    with open(path, "w", encoding="utf-8") as fh:
        for record in history:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# checkpoints and the forgetting probe


def model_from_checkpoint(path):
    """Rebuild a model (with adapters, if present) from a checkpoint."""
    config, arrays = load_checkpoint(path)
    base = TransformerModel(config)
    adapter_dims = {key.split("/", 1)[1].rsplit(".", 1)[0]: arr.shape[1]
                    for key, arr in arrays.items()
                    if key.startswith("adapter/") and key.endswith(".w1")}
    if adapter_dims:
        dims = set(adapter_dims.values())
        if len(dims) != 1:
            raise ValueError("checkpoint has inconsistent adapter bottleneck dims")
        model = insert_adapters(base, AdapterConfig(target_fraction=None,
                                                    bottleneck_dim=dims.pop()))
    else:
        model = base
    model.load_state(arrays)
    return model


def save_model(path, model):
    save_checkpoint(path, model.config, model.state_arrays())


def forgetting_probe(ckpt_pre, ckpt_post, l1o_valid_pairs, vocab):
    """PPL on the l1o validation pairs before and after fine-tuning.

    Returns (ppl_before, ppl_after, delta).
    """
    model_pre = model_from_checkpoint(ckpt_pre)
    model_post = model_from_checkpoint(ckpt_post)
    if model_pre.config != model_post.config:
        raise ValueError("forgetting_probe: checkpoint configs differ")
    encoded = encode_pairs(l1o_valid_pairs, vocab, model_pre.config)
    before = evaluate_ppl(model_pre, encoded)
    after = evaluate_ppl(model_post, encoded)
    return before, after, after - before
