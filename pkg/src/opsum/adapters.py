"""Bottleneck adapters: down-projection, tanh, zero-initialized
up-projection, residual add.  Two adapters per transformer layer (after
the self-attention and feed-forward sub-layers), encoder and decoder
alike; the base model stays frozen while only adapters train."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AdapterConfig:
    target_fraction: float = None  # e.g. 0.006 or 0.05; optional when dim given
    bottleneck_dim: int = 0        # 0 = solve from target_fraction
    init_seed: int = 0

    def __post_init__(self):
        if self.bottleneck_dim < 0:
            raise ValueError("bottleneck_dim must be >= 1 (or 0 to derive)")
        if self.bottleneck_dim == 0:
            if self.target_fraction is None or not 0.0 < self.target_fraction < 1.0:
                raise ValueError(
                    f"target_fraction {self.target_fraction} outside (0, 1)")


class Adapter:
    """h -> f2(tanh(f1(h))) + h with f2 all-zero at init (identity)."""

    def __init__(self, d_model, bottleneck_dim, rng):
        self.d_model = d_model
        self.bottleneck_dim = bottleneck_dim
        self.w1 = Tensor(rng.normal(0.0, 0.02, size=(d_model, bottleneck_dim)),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(bottleneck_dim), requires_grad=True)
        self.w2 = Tensor(np.zeros((bottleneck_dim, d_model)), requires_grad=True)
        self.b2 = Tensor(np.zeros(d_model), requires_grad=True)

    def forward(self, h):
        if h.shape[-1] != self.d_model:
            raise ad.ShapeError(
                f"adapter_forward: last axis {h.shape[-1]} != d_model {self.d_model}")
        down = ad.tanh(ad.add(ad.matmul(h, self.w1), self.b1))
        return ad.add(ad.add(ad.matmul(down, self.w2), self.b2), h)

    def named_parameters(self, prefix):
        return [(f"{prefix}.w1", self.w1), (f"{prefix}.b1", self.b1),
                (f"{prefix}.w2", self.w2), (f"{prefix}.b2", self.b2)]

    def parameter_count(self):
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size


def adapter_forward(adapter, h):
    return adapter.forward(h)


class AdaptedModel:
    """Frozen transformer base plus trainable adapters (delegates forward)."""

    def __init__(self, base, adapters, adapter_config):
        self.base = base
        self.adapters = adapters
        self.adapter_config = adapter_config
        base.adapters = adapters

    def __getattr__(self, name):
        return getattr(self.base, name)

    def adapter_count(self):
        return len(self.adapters)


def _hook_keys(config):
    keys = []
    for side, layers in (("enc", config.num_encoder_layers),
                         ("dec", config.num_decoder_layers)):
        for i in range(layers):
            keys.append(f"{side}{i}.post_attn")
            keys.append(f"{side}{i}.post_ffn")
    return keys


def _adapter_param_count(config, bottleneck_dim):
    per_adapter = (config.d_model * bottleneck_dim + bottleneck_dim
                   + bottleneck_dim * config.d_model + config.d_model)
    return per_adapter * len(_hook_keys(config))


def solve_bottleneck(base, target_fraction):
    """Smallest bottleneck dim whose trainable fraction reaches the target.

    The fraction is (adapter params) / (base + adapter params); it grows
    monotonically with the bottleneck dim.  Requests needing a dim beyond
    4 * d_model are rejected as degenerate.
    """
    if not 0.0 < target_fraction < 1.0:
        raise ValueError(f"target_fraction {target_fraction} outside (0, 1)")
    config = base.config
    base_count = base.parameter_count()
    for d_b in range(1, config.d_model * 4 + 1):
        added = _adapter_param_count(config, d_b)
        if added / (base_count + added) >= target_fraction:
            return d_b
    raise ValueError(
        f"target fraction {target_fraction} needs a bottleneck beyond 4*d_model")


def insert_adapters(base, config):
    """Attach adapters to every layer hook and freeze all base parameters."""
    model_cfg = base.config
    if model_cfg.num_encoder_layers < 1 or model_cfg.num_decoder_layers < 1:
        raise ValueError("insert_adapters: base needs encoder and decoder layers")
    d_b = config.bottleneck_dim or solve_bottleneck(base, config.target_fraction)
    rng = np.random.default_rng(config.init_seed)
    adapters = {key: Adapter(model_cfg.d_model, d_b, rng) for key in _hook_keys(model_cfg)}
    for tensor in base.params.values():
        tensor.requires_grad = False
    resolved = AdapterConfig(config.target_fraction, d_b, config.init_seed)
    return AdaptedModel(base, adapters, resolved)


def trainable_fraction(model):
    """(requires_grad parameter count) / (total parameter count)."""
    trainable = 0
    total = 0
    for _, tensor in model.all_named_parameters():
        total += tensor.size
        if tensor.requires_grad:
            trainable += tensor.size
    return trainable / total if total else 0.0
