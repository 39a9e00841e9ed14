"""Miniature transformer encoder-decoder over concatenated reviews.

Sources are laid out as ``<q> a1 .. ak </q> r1 || r2 || ... || rN`` (query
block omitted for generic summarization) and encoded jointly; targets are
scored word-by-word under teacher forcing.  Pre-layer-norm residual
blocks, learned positional embeddings, tanh feed-forward activation.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .text import BOS, EOS, PAD, QBEG, QEND, SEP

CHECKPOINT_MAGIC = b"OPSUMCK\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    num_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    max_source_len: int = 256
    max_target_len: int = 48
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError(
                f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.max_source_len < 2 or self.max_target_len < 2:
            raise ValueError("max source/target lengths must be >= 2")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate {self.dropout_rate} outside [0, 1)")


@dataclass
class SourceEncoding:
    memory: Tensor        # (B, S, d_model)
    source_mask: np.ndarray  # (B, S) bool, True at real tokens


def build_source(reviews, query=None, max_source_len=None):
    """Lay out token-id sequences as QBEG q1..qk QEND r1 SEP r2 SEP ... rN.

    ``reviews`` is a list of token-id lists, ``query`` an optional list of
    per-aspect token-id lists.  When the layout exceeds ``max_source_len``
    the final token of the currently longest review is trimmed repeatedly;
    the query block is never truncated.
    """
    if not reviews:
        raise ValueError("build_source: empty review list")
    reviews = [list(r) for r in reviews]
    query_block = []
    if query:
        query_block = [QBEG]
        for phrase in query:
            query_block.extend(phrase)
        query_block.append(QEND)

    def total_len():
        return len(query_block) + sum(len(r) for r in reviews) + (len(reviews) - 1)

    if max_source_len is not None:
        overhead = len(query_block) + len(reviews) - 1
        if overhead >= max_source_len and total_len() > max_source_len:
            raise ValueError(
                f"build_source: query and separators alone exceed max_source_len {max_source_len}")
        while total_len() > max_source_len:
            longest = max(range(len(reviews)), key=lambda i: len(reviews[i]))
            if not reviews[longest]:
                raise ValueError("build_source: cannot truncate further")
            reviews[longest].pop()
    out = list(query_block)
    for i, r in enumerate(reviews):
        if i > 0:
            out.append(SEP)
        out.extend(r)
    return out


def _init_param(rng, shape, std=0.02):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


class TransformerModel:
    """Encoder-decoder parameters plus forward passes.

    Parameters live in ``self.params`` (name -> Tensor).  ``self.adapters``
    optionally maps hook keys (e.g. "enc0.post_attn") to adapter modules
    applied after the residual sum of each sub-layer.
    """

    def __init__(self, config, params=None):
        self.config = config
        self.adapters = None
        self.training = False
        self._drop_rng = np.random.default_rng(config.seed + 1)
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(config.seed)
        d, f, v = config.d_model, config.d_ff, config.vocab_size
        p = {}
        p["token_emb"] = _init_param(rng, (v, d))
        p["src_pos_emb"] = _init_param(rng, (config.max_source_len, d))
        p["tgt_pos_emb"] = _init_param(rng, (config.max_target_len, d))
        for side, layers in (("enc", config.num_encoder_layers),
                             ("dec", config.num_decoder_layers)):
            for i in range(layers):
                pre = f"{side}{i}"
                for blk in (("self",) if side == "enc" else ("self", "cross")):
                    for w in ("wq", "wk", "wv", "wo"):
                        p[f"{pre}.{blk}.{w}"] = _init_param(rng, (d, d))
                        p[f"{pre}.{blk}.{w}_b"] = Tensor(np.zeros(d), requires_grad=True)
                p[f"{pre}.ffn.w1"] = _init_param(rng, (d, f))
                p[f"{pre}.ffn.b1"] = Tensor(np.zeros(f), requires_grad=True)
                p[f"{pre}.ffn.w2"] = _init_param(rng, (f, d))
                p[f"{pre}.ffn.b2"] = Tensor(np.zeros(d), requires_grad=True)
                n_ln = 2 if side == "enc" else 3
                for j in range(1, n_ln + 1):
                    p[f"{pre}.ln{j}.g"] = Tensor(np.ones(d), requires_grad=True)
                    p[f"{pre}.ln{j}.b"] = Tensor(np.zeros(d), requires_grad=True)
        for side in ("enc", "dec"):
            p[f"{side}_final_ln.g"] = Tensor(np.ones(d), requires_grad=True)
            p[f"{side}_final_ln.b"] = Tensor(np.zeros(d), requires_grad=True)
        p["out_proj.w"] = _init_param(rng, (d, v))
        p["out_proj.b"] = Tensor(np.zeros(v), requires_grad=True)
        self.params = p

    # -- bookkeeping --------------------------------------------------------

    def parameter_count(self):
        return sum(t.size for t in self.params.values())

    def named_parameters(self):
        return sorted(self.params.items())

    def all_named_parameters(self):
        """Base parameters plus any attached adapter parameters."""
        items = list(self.named_parameters())
        if self.adapters:
            for key in sorted(self.adapters):
                items.extend(self.adapters[key].named_parameters(f"adapter/{key}"))
        return items

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    # -- sub-layers ---------------------------------------------------------

    def _dropout(self, x):
        if self.training and self.config.dropout_rate > 0.0:
            return ad.dropout(x, self.config.dropout_rate, self._drop_rng)
        return x

    def _maybe_adapter(self, key, h):
        if self.adapters is not None and key in self.adapters:
            return self.adapters[key].forward(h)
        return h

    def _attention(self, prefix, x_q, x_kv, mask):
        """Multi-head attention; ``mask`` is broadcastable to the score
        shape (B, H, Tq, Tk) with True at positions to keep."""
        p = self.params
        cfg = self.config
        h = cfg.num_heads
        dh = cfg.d_model // h

        def heads(x):
            b, t, _ = x.shape
            return ad.transpose(ad.reshape(x, (b, t, h, dh)), (0, 2, 1, 3))

        q = heads(ad.add(ad.matmul(x_q, p[f"{prefix}.wq"]), p[f"{prefix}.wq_b"]))
        k = heads(ad.add(ad.matmul(x_kv, p[f"{prefix}.wk"]), p[f"{prefix}.wk_b"]))
        v = heads(ad.add(ad.matmul(x_kv, p[f"{prefix}.wv"]), p[f"{prefix}.wv_b"]))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        if mask is not None:
            scores = ad.masked_fill(scores, ~mask, ad.NEG_INF)
        attn = self._dropout(ad.softmax(scores))
        ctx = ad.matmul(attn, v)
        b, _, tq, _ = ctx.shape
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, tq, cfg.d_model))
        return ad.add(ad.matmul(ctx, p[f"{prefix}.wo"]), p[f"{prefix}.wo_b"])

    def _ffn(self, prefix, x):
        p = self.params
        hidden = ad.tanh(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return ad.add(ad.matmul(self._dropout(hidden), p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _ln(self, prefix, x):
        p = self.params
        return ad.layer_norm(x, p[f"{prefix}.g"], p[f"{prefix}.b"])

    # -- forward ------------------------------------------------------------

    def _embed(self, ids, pos_table):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and ids.max() >= self.config.vocab_size:
            raise ValueError(
                f"token id {int(ids.max())} >= vocab_size {self.config.vocab_size}")
        tok = ad.embedding(self.params["token_emb"], ids)
        pos = ad.embedding(self.params[pos_table], np.arange(ids.shape[-1]))
        return self._dropout(ad.add(tok, pos))

    def encode_batch(self, src_ids, src_mask):
        """src_ids: (B, S) ints; src_mask: (B, S) bool True at real tokens."""
        x = self._embed(src_ids, "src_pos_emb")
        attn_mask = src_mask[:, None, None, :]
        for i in range(self.config.num_encoder_layers):
            pre = f"enc{i}"
            normed = self._ln(f"{pre}.ln1", x)
            x = ad.add(x, self._dropout(
                self._attention(f"{pre}.self", normed, normed, attn_mask)))
            x = self._maybe_adapter(f"{pre}.post_attn", x)
            x = ad.add(x, self._dropout(self._ffn(f"{pre}.ffn", self._ln(f"{pre}.ln2", x))))
            x = self._maybe_adapter(f"{pre}.post_ffn", x)
        return self._ln("enc_final_ln", x)

    def decode_logits(self, memory, src_mask, tgt_ids):
        """Teacher-forced decoder logits (B, T, V) for input ids (B, T)."""
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        t = tgt_ids.shape[-1]
        x = self._embed(tgt_ids, "tgt_pos_emb")
        causal = np.tril(np.ones((t, t), dtype=bool))[None, None, :, :]
        cross = src_mask[:, None, None, :]
        for i in range(self.config.num_decoder_layers):
            pre = f"dec{i}"
            normed = self._ln(f"{pre}.ln1", x)
            x = ad.add(x, self._dropout(
                self._attention(f"{pre}.self", normed, normed, causal)))
            x = self._maybe_adapter(f"{pre}.post_attn", x)
            x = ad.add(x, self._dropout(
                self._attention(f"{pre}.cross", self._ln(f"{pre}.ln2", x), memory, cross)))
            x = ad.add(x, self._dropout(self._ffn(f"{pre}.ffn", self._ln(f"{pre}.ln3", x))))
            x = self._maybe_adapter(f"{pre}.post_ffn", x)
        x = self._ln("dec_final_ln", x)
        return ad.add(ad.matmul(x, self.params["out_proj.w"]), self.params["out_proj.b"])

    def batch_loss(self, src_ids, src_mask, tgt_ids):
        """Summed NLL over a padded batch plus the predicted-token count.

        ``tgt_ids`` (B, T) carries BOS ... EOS then PAD; PAD labels are
        ignored, EOS labels count.
        """
        tgt_ids = np.asarray(tgt_ids, dtype=np.int64)
        memory = self.encode_batch(src_ids, src_mask)
        logits = self.decode_logits(memory, src_mask, tgt_ids[:, :-1])
        labels = tgt_ids[:, 1:]
        loss = ad.cross_entropy(logits, labels, ignore_id=PAD)
        return loss, int((labels != PAD).sum())

    def log_likelihood(self, source, target):
        """Sum over steps of log p(target_t | target_<t, source)."""
        target = list(target)
        if not target or target[0] != BOS or target[-1] != EOS:
            raise ValueError("log_likelihood: target must begin with BOS and end with EOS")
        if len(source) > self.config.max_source_len:
            raise ValueError(f"log_likelihood: source length {len(source)} exceeds maximum")
        if len(target) > self.config.max_target_len:
            raise ValueError(f"log_likelihood: target length {len(target)} exceeds maximum")
        src_ids = np.asarray([source], dtype=np.int64)
        src_mask = src_ids != PAD
        loss, _ = self.batch_loss(src_ids, src_mask, np.asarray([target], dtype=np.int64))
        return ad.scale(loss, -1.0)

    # -- incremental decoding ----------------------------------------------

    def encode_source(self, source):
        """SourceEncoding for one already-laid-out source sequence."""
        src_ids = np.asarray([source], dtype=np.int64)
        src_mask = src_ids != PAD
        was_training = self.training
        self.training = False
        try:
            with ad.no_grad():
                memory = self.encode_batch(src_ids, src_mask)
        finally:
            self.training = was_training
        return SourceEncoding(memory, src_mask)

    def decode_step(self, encoding, prefix):
        """Next-token probability vector given a BOS-initial prefix."""
        return self.decode_step_batch(encoding, [list(prefix)])[0]

    def decode_step_batch(self, encoding, prefixes):
        """Probability rows for several same-length prefixes of one source."""
        lengths = {len(p) for p in prefixes}
        if len(lengths) != 1:
            raise ValueError("decode_step_batch: prefixes must share one length")
        t = lengths.pop()
        if t >= self.config.max_target_len:
            raise ValueError(f"decode_step_batch: prefix at maximum length {t}")
        for p in prefixes:
            if p[0] != BOS:
                raise ValueError("decode_step_batch: prefix must begin with BOS")
        b = len(prefixes)
        mem = encoding.memory
        if mem.shape[0] == 1 and b > 1:
            mem = Tensor(np.broadcast_to(mem.data, (b,) + mem.shape[1:]))
        src_mask = np.broadcast_to(encoding.source_mask, (b, encoding.source_mask.shape[1]))
        was_training = self.training
        self.training = False
        try:
            with ad.no_grad():
                logits = self.decode_logits(mem, src_mask, np.asarray(prefixes, dtype=np.int64))
                probs = ad.softmax(Tensor(logits.data[:, -1, :]))
        finally:
            self.training = was_training
        return probs.data.copy()

    # -- checkpoint ---------------------------------------------------------

    def state_arrays(self):
        """All parameters (base and adapters) as name -> ndarray."""
        return {name: t.data for name, t in self.all_named_parameters()}

    def copy_state(self):
        return {name: t.data.copy() for name, t in self.all_named_parameters()}

    def load_state(self, arrays):
        for name, t in self.all_named_parameters():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name}")
            if arrays[name].shape != t.shape:
                raise ValueError(
                    f"checkpoint shape mismatch for {name}: "
                    f"{arrays[name].shape} vs {t.shape}")
            t.data = np.asarray(arrays[name], dtype=ad.DTYPE).copy()


def save_checkpoint(path, config, arrays):
    """Binary checkpoint: magic, version, config JSON, float32 LE blocks."""
    payload = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            data = np.asarray(arrays[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))
    os.replace(tmp, path)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (clen,) = struct.unpack("<I", fh.read(4))
        config = ModelConfig(**json.loads(fh.read(clen).decode("utf-8")))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            n_items = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * n_items), dtype="<f4").reshape(shape)
            arrays[name] = data.astype(ad.DTYPE)
    return config, arrays
