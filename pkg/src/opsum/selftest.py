"""Built-in gradient self-checks: every autodiff primitive against
central finite differences, plus a whole-model check on a tiny
encoder-decoder.  Used by the CLI selftest command and the test suite."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .transformer import ModelConfig, TransformerModel


def primitive_grad_errors(seed=0):
    """Max relative gradient error per primitive, as a name -> error dict."""
    rng = np.random.default_rng(seed)

    def t(*shape):
        return Tensor(rng.normal(0.0, 1.0, size=shape), requires_grad=True)

    b = Tensor(rng.normal(size=(4, 5)))
    gain = Tensor(rng.normal(size=(5,)))
    bias = Tensor(rng.normal(size=(5,)))
    m = Tensor(rng.normal(size=(5, 3)))
    ids = rng.integers(0, 6, size=(4,))
    mask = rng.random((4, 5)) < 0.3
    targets = rng.integers(0, 5, size=(4,))

    cases = {
        "add": (lambda x: ad.tsum(ad.add(x, b)), t(4, 5)),
        "sub": (lambda x: ad.tsum(ad.sub(x, b)), t(4, 5)),
        "mul": (lambda x: ad.tsum(ad.mul(x, b)), t(4, 5)),
        "scale": (lambda x: ad.tsum(ad.scale(x, 1.7)), t(4, 5)),
        "matmul": (lambda x: ad.tsum(ad.matmul(x, m)), t(4, 5)),
        "tanh": (lambda x: ad.tsum(ad.tanh(x)), t(4, 5)),
        "softmax": (lambda x: ad.tsum(ad.mul(ad.softmax(x), b)), t(4, 5)),
        "layer_norm": (lambda x: ad.tsum(ad.mul(ad.layer_norm(x, gain, bias), b)),
                       t(4, 5)),
        "embedding": (lambda x: ad.tsum(ad.embedding(x, ids)), t(6, 5)),
        "concat": (lambda x: ad.tsum(ad.concat([x, b], axis=0)), t(2, 5)),
        "masked_fill": (lambda x: ad.tsum(ad.mul(ad.masked_fill(x, mask, -2.0), b)),
                        t(4, 5)),
        "cross_entropy": (lambda x: ad.cross_entropy(x, targets), t(4, 5)),
        "tsum": (lambda x: ad.tsum(x), t(4, 5)),
        "tmean": (lambda x: ad.tmean(x), t(4, 5)),
        "reshape": (lambda x: ad.tsum(ad.mul(ad.reshape(x, (2, 10)),
                                             Tensor(np.arange(20.0).reshape(2, 10)))),
                    t(4, 5)),
        "transpose": (lambda x: ad.tsum(ad.mul(ad.transpose(x, (1, 0)),
                                               Tensor(np.arange(20.0).reshape(5, 4)))),
                      t(4, 5)),
    }
    return {name: grad_check(f, x) for name, (f, x) in cases.items()}


def _tiny_config(vocab_size=23, seed=0):
    return ModelConfig(vocab_size=vocab_size, num_encoder_layers=2,
                       num_decoder_layers=2, num_heads=4, d_model=32, d_ff=64,
                       max_source_len=16, max_target_len=10, seed=seed)


def model_grad_error(seed=0, config=None, param_name=None):
    """Finite-difference check of one parameter tensor of a full model.

    The checked parameter rotates with the seed so repeated runs cover
    embeddings, attention projections, feed-forward and layer-norm weights.
    Returns (parameter name, max relative error).
    """
    config = config or _tiny_config(seed=seed)
    model = TransformerModel(config)
    rng = np.random.default_rng(seed + 1000)
    src = rng.integers(4, config.vocab_size, size=(2, 9))
    src[0, 7:] = 0
    src_mask = src != 0
    tgt = np.zeros((2, 7), dtype=np.int64)
    tgt[:, 0] = 1
    tgt[:, 1:6] = rng.integers(4, config.vocab_size, size=(2, 5))
    tgt[:, 6] = 2
    tgt[1, 5] = 2
    tgt[1, 6] = 0

    names = sorted(model.params)
    if param_name is None:
        param_name = names[seed % len(names)]
    original = model.params[param_name]

    def f(x):
        model.params[param_name] = x
        try:
            loss, _ = model.batch_loss(src, src_mask, tgt)
        finally:
            model.params[param_name] = original
        return loss

    # the floor keeps ~1e-10 finite-difference noise from dominating the
    # relative error on gradient components that are themselves negligible
    err = grad_check(f, Tensor(original.data.copy(), requires_grad=True),
                     step=1e-5, floor=1e-5)
    return param_name, err
