"""Dense tensor arithmetic with reverse-mode automatic differentiation.

A small define-by-run engine backed by numpy float64 arrays.  Primitives
record onto the active tape whenever one of their inputs requires
gradients; ``backward`` replays the tape in reverse.  Gradients of leaf
tensors accumulate across backward calls until cleared.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

DTYPE = np.float64
NEG_INF = -1e30  # fill value for masked logits; large but finite


class ShapeError(ValueError):
    """Raised when primitive operands have non-conformable shapes."""


class TapeError(RuntimeError):
    """Raised on invalid backward calls (empty tape, non-scalar loss)."""


class Tensor:
    """A dense float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def has_bad_values(self):
        return not np.all(np.isfinite(self.data))

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications (inputs precede users)."""

    def __init__(self):
        self.ops = []  # list of (output, inputs, backward_fn)

    def record(self, output, inputs, backward_fn):
        self.ops.append((output, inputs, backward_fn))

    def __len__(self):
        return len(self.ops)


_tape = Tape()
_grad_enabled = True


def active_tape():
    return _tape


@contextmanager
def fresh_tape():
    """Swap in an empty tape for the duration of the block."""
    global _tape
    saved = _tape
    _tape = Tape()
    try:
        yield _tape
    finally:
        _tape = saved


@contextmanager
def no_grad():
    """Disable tape recording (inference mode)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _record(out, inputs, backward_fn):
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._leaf = False
        _tape.record(out, inputs, backward_fn)
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf's .grad.

    Intermediate gradients live in a scratch table keyed by tensor
    identity, so calling backward twice (after clearing leaf grads)
    reproduces the first gradients exactly.
    """
    if loss.shape != ():
        raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _tape
    if len(tape) == 0:
        raise TapeError("backward called with an empty tape")
    grads = {id(loss): np.ones((), dtype=DTYPE)}
    for out, inputs, backward_fn in reversed(tape.ops):
        g_out = grads.get(id(out))
        if g_out is None:
            continue
        for t, g in zip(inputs, backward_fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
        # free the scratch slot; out was produced by this op, nothing
        # earlier on the tape can still contribute to it
        if not out._leaf:
            del grads[id(out)]
    for out, inputs, _ in tape.ops:
        for t in inputs:
            if t._leaf and t.requires_grad and id(t) in grads:
                g = grads.pop(id(t))
                t.grad = g.copy() if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# shape helpers


def _check_suffix_broadcast(name, a_shape, b_shape):
    """Allow broadcasting only by expansion over leading axes."""
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if len(small) > 0 and big[len(big) - len(small):] != small:
        raise ShapeError(f"{name}: shapes {a_shape} and {b_shape} are not conformable")


def _unbroadcast(g, shape):
    """Sum gradient over axes that were expanded by leading-axis broadcast."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    _check_suffix_broadcast("add", a.shape, b.shape)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    _check_suffix_broadcast("sub", a.shape, b.shape)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    _check_suffix_broadcast("mul", a.shape, b.shape)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), bwd)


def scale(a, c):
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a, b):
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _record(out, (a, b), bwd)


def tanh(x):
    out = Tensor(np.tanh(x.data))
    return _record(out, (x,), lambda g: (g * (1.0 - out.data ** 2),))


def softmax(x):
    """Softmax over the last axis; rejects rows that are fully masked."""
    if np.any(np.max(x.data, axis=-1) < NEG_INF / 2):
        raise ShapeError("softmax: encountered a fully masked row")
    shifted = x.data - np.max(x.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = Tensor(e / e.sum(axis=-1, keepdims=True))

    def bwd(g):
        s = out.data
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(out, (x,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias shapes {gain.shape}/{bias.shape} do not match feature dim {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bwd(g):
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        g_gain = _unbroadcast(g * xhat, gain.shape)
        g_bias = _unbroadcast(g, bias.shape)
        return (gx, g_gain, g_bias)

    return _record(out, (x, gain, bias), bwd)


def embedding(table, ids):
    """Row lookup: output[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: id out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), bwd)


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: empty tensor list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


def masked_fill(x, mask, value):
    """Replace entries where ``mask`` is true by ``value`` (constant)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = Tensor(np.where(mask, value, x.data))
    return _record(out, (x,), lambda g: (np.where(mask, 0.0, g),))


def cross_entropy(logits, targets, ignore_id=None):
    """Summed negative log-likelihood of integer targets under softmax(logits).

    ``logits`` has shape (..., V) and ``targets`` the matching (...) shape.
    Positions equal to ``ignore_id`` contribute nothing.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets shape {targets.shape} does not match logits {logits.shape}")
    v = logits.shape[-1]
    keep = np.ones(targets.shape, dtype=bool) if ignore_id is None else targets != ignore_id
    safe_targets = np.where(keep, targets, 0)
    if safe_targets.size and (safe_targets.min() < 0 or safe_targets.max() >= v):
        raise ShapeError(f"cross_entropy: target id out of range for vocab {v}")
    m = logits.data.max(axis=-1, keepdims=True)
    lse = m[..., 0] + np.log(np.exp(logits.data - m).sum(axis=-1))
    picked = np.take_along_axis(logits.data, safe_targets[..., None], axis=-1)[..., 0]
    nll = np.where(keep, lse - picked, 0.0)
    out = Tensor(nll.sum())

    def bwd(g):
        p = np.exp(logits.data - m - np.log(np.exp(logits.data - m).sum(axis=-1, keepdims=True)))
        grad = p.copy()
        np.put_along_axis(
            grad, safe_targets[..., None],
            np.take_along_axis(grad, safe_targets[..., None], axis=-1) - 1.0, axis=-1)
        grad *= keep[..., None]
        return (grad * g,)

    return _record(out, (logits,), bwd)


def tsum(x):
    out = Tensor(x.data.sum())
    return _record(out, (x,), lambda g: (np.full(x.shape, g, dtype=DTYPE),))


def tmean(x):
    n = x.size
    out = Tensor(x.data.mean())
    return _record(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=DTYPE),))


def reshape(x, shape):
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(x.data.transpose(axes))
    return _record(out, (x,), lambda g: (g.transpose(inverse),))


def dropout(x, rate, rng):
    """Inverted dropout with a seeded numpy Generator; rate in [0, 1)."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * mask)
    return _record(out, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, x, step=1e-5, floor=1e-12):
    """Compare analytic gradients of scalar-valued ``f`` at ``x`` against
    central finite differences.

    Returns the max over components of |analytic - numeric| /
    max(|analytic|, |numeric|, floor).  Components below ``floor`` are
    judged in absolute units against it, so cancellation noise in the
    finite differences (about |f|*1e-16/step) does not swamp gradient
    entries that are themselves negligible.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x.requires_grad = True
    with fresh_tape():
        out = f(x)
        if out.shape != ():
            raise TapeError(f"grad_check: f must return a scalar, got shape {out.shape}")
        x.zero_grad()
        backward(out)
        analytic = x.grad.copy() if x.grad is not None else np.zeros(x.shape, dtype=DTYPE)
    numeric = np.zeros(x.shape, dtype=DTYPE)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = f(x).item()
            flat[i] = orig - step
            f_minus = f(x).item()
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))
