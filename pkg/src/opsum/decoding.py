"""Beam search with within-hypothesis n-gram repetition blocking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .text import BOS, EOS


@dataclass
class DecodeConfig:
    beam_size: int = 5
    block_ngram: int = 3      # 0 disables blocking
    max_target_len: int = 48
    length_normalization_alpha: float = 1.0

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.block_ngram < 0:
            raise ValueError("block_ngram must be >= 0")
        if not 0.0 <= self.length_normalization_alpha <= 1.0:
            raise ValueError("length_normalization_alpha must be in [0, 1]")


@dataclass
class Hypothesis:
    tokens: list
    logp: float = 0.0
    finished: bool = False


@dataclass
class DecodeResult:
    tokens: list             # BOS ... (EOS when finished)
    score: float             # length-normalized log-probability
    unfinished: bool = False


def _normalized(logp, length, alpha):
    return logp / max(length, 1) ** alpha


def _blocked_tokens(tokens, n, vocab_size):
    """Token ids whose continuation would repeat an n-gram of ``tokens``."""
    if n == 0 or len(tokens) < n - 1:
        return ()
    seen = {tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)}
    tail = tuple(tokens[len(tokens) - (n - 1):]) if n > 1 else ()
    return [w for w in range(vocab_size) if tail + (w,) in seen]


def beam_search(model, source, config):
    """Highest length-normalized-score finished hypothesis for one source.

    ``model`` must provide ``encode_source(source)`` and
    ``decode_step_batch(encoding, prefixes)``.  If nothing finishes within
    the length budget, the best live hypothesis is returned with the
    ``unfinished`` flag set.
    """
    alpha = config.length_normalization_alpha
    encoding = model.encode_source(source)
    live = [Hypothesis([BOS])]
    finished = []
    max_len = config.max_target_len
    while live and len(live[0].tokens) < max_len:
        probs = model.decode_step_batch(encoding, [h.tokens for h in live])
        logps = np.log(probs)
        if config.block_ngram:
            for row, hyp in enumerate(logps):
                blocked = _blocked_tokens(live[row].tokens, config.block_ngram,
                                          logps.shape[1])
                hyp[list(blocked)] = -np.inf
        candidates = []
        for row, hyp in enumerate(live):
            for w in np.argsort(-logps[row], kind="stable")[: config.beam_size]:
                total = hyp.logp + logps[row][w]
                if np.isfinite(total):
                    candidates.append((total, row, int(w)))
        if not candidates:
            break
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        next_live = []
        for total, row, w in candidates[: config.beam_size]:
            tokens = live[row].tokens + [w]
            if w == EOS:
                finished.append(Hypothesis(tokens, total, True))
            else:
                next_live.append(Hypothesis(tokens, total))
        live = next_live
        if finished and live:
            best_finished = max(_normalized(h.logp, len(h.tokens) - 1, alpha)
                                for h in finished)
            # upper bound: no further log-prob loss, judged at max length
            if all(_normalized(h.logp, max_len - 1, alpha) <= best_finished
                   for h in live):
                break
    if finished:
        best = max(finished, key=lambda h: _normalized(h.logp, len(h.tokens) - 1, alpha))
        return DecodeResult(best.tokens, _normalized(best.logp, len(best.tokens) - 1, alpha))
    if not live:
        raise RuntimeError("beam_search: every hypothesis was blocked before finishing")
    best = max(live, key=lambda h: _normalized(h.logp, len(h.tokens) - 1, alpha))
    return DecodeResult(best.tokens, _normalized(best.logp, len(best.tokens) - 1, alpha),
                        unfinished=True)
