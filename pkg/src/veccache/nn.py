"""Minimal reverse-mode autodiff toolkit for the caching Q networks.

Everything runs in float64 on numpy arrays. The operator set is exactly what
the networks need: dense layers, gather/reshape plumbing, masked softmax for
attention over padded neighbor slots, and KL between attention
distributions. Graph nodes skip tape construction whenever no input needs a
gradient, so target-network evaluation costs the same as plain numpy.

A module-level element-op counter backs the complexity measurements: each
primitive adds its compute volume (multiply-adds for matmul, element count
for pointwise ops, input size for reductions, copied elements for gathers).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

GUARD_FINITE = True


def set_finite_guard(enabled: bool):
    """Toggle the NaN/Inf check applied to every op output."""
    global GUARD_FINITE
    GUARD_FINITE = enabled


class _OpCounter:
    __slots__ = ("total",)

    def __init__(self):
        self.total = 0


_counter: _OpCounter | None = None


class count_ops:
    """Context manager collecting the element-op volume of enclosed forwards."""

    def __enter__(self) -> _OpCounter:
        global _counter
        _counter = _OpCounter()
        return _counter

    def __exit__(self, *exc):
        global _counter
        _counter = None
        return False


def _tally(n: int):
    if _counter is not None:
        _counter.total += int(n)


def _assert_finite(data: np.ndarray):
    # a NaN or +-Inf anywhere drags the whole sum to NaN/Inf, so one reduce
    # suffices instead of materializing an isfinite mask
    if not np.isfinite(data.sum()):
        if not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite values entering the graph")


class Var:
    """Node of the autodiff tape wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if GUARD_FINITE:
            _assert_finite(self.data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._grad_owned = False

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g):
        # adopt the first contribution without copying; only a second one
        # forces an owned buffer, so tree-shaped graphs never allocate zeros
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def backward(self):
        """Reverse sweep seeding this (scalar) node with gradient one."""
        if self.data.size != 1:
            raise ValueError("backward() must start from a scalar loss")
        topo, seen = [], set()

        def visit(v):
            if id(v) in seen:
                return
            seen.add(id(v))
            for p in v._parents:
                visit(p)
            topo.append(v)

        visit(self)
        self._accumulate(np.ones_like(self.data))
        for v in reversed(topo):
            if v._backward is not None:
                v._backward()


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _result(data, parents: tuple[Var, ...], backward) -> Var:
    out = Var(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# --- arithmetic -------------------------------------------------------


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    data = a.data + b.data
    _tally(data.size)
    out = _result(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    data = a.data - b.data
    _tally(data.size)
    out = _result(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    data = a.data * b.data
    _tally(data.size)
    out = _result(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    data = a.data / b.data
    _tally(data.size)
    out = _result(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    data = a.data @ b.data
    _tally(a.data.shape[0] * a.data.shape[1] * b.data.shape[1])
    out = _result(data, (a, b), None)

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def relu(x) -> Var:
    x = as_var(x)
    data = np.maximum(x.data, 0.0)
    _tally(data.size)
    out = _result(data, (x,), None)

    def backward():
        x._accumulate(out.grad * (x.data > 0))

    out._backward = backward if out.requires_grad else None
    return out


def clamp_min(x, floor: float) -> Var:
    """Elementwise lower bound; gradient passes only where x exceeds it."""
    x = as_var(x)
    data = np.maximum(x.data, floor)
    _tally(data.size)
    out = _result(data, (x,), None)

    def backward():
        x._accumulate(out.grad * (x.data > floor))

    out._backward = backward if out.requires_grad else None
    return out


def log(x) -> Var:
    x = as_var(x)
    data = np.log(x.data)
    _tally(data.size)
    out = _result(data, (x,), None)

    def backward():
        x._accumulate(out.grad / x.data)

    out._backward = backward if out.requires_grad else None
    return out


# --- shape plumbing ---------------------------------------------------


def reshape(x, shape) -> Var:
    x = as_var(x)
    out = _result(x.data.reshape(shape), (x,), None)

    def backward():
        x._accumulate(out.grad.reshape(x.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose(x, axes) -> Var:
    x = as_var(x)
    out = _result(np.ascontiguousarray(x.data.transpose(axes)), (x,), None)
    inverse = tuple(np.argsort(axes))

    def backward():
        x._accumulate(out.grad.transpose(inverse))

    out._backward = backward if out.requires_grad else None
    return out


def _scatter_add_rows(shape: tuple, indices: np.ndarray, src: np.ndarray) -> np.ndarray:
    """Row scatter-add via bincount (markedly faster than np.add.at)."""
    width = int(np.prod(shape[1:], dtype=np.intp)) if len(shape) > 1 else 1
    flat = (indices[:, None] * width + np.arange(width)).ravel()
    out = np.bincount(flat, weights=src.reshape(len(indices), width).ravel(),
                      minlength=shape[0] * width)
    return out.reshape(shape)


def gather_rows(x, indices) -> Var:
    """Select rows along axis 0; the backward pass scatter-adds."""
    x = as_var(x)
    indices = np.asarray(indices, dtype=np.intp)
    data = x.data[indices]
    _tally(data.size)
    out = _result(data, (x,), None)

    def backward():
        x._accumulate(_scatter_add_rows(x.data.shape, indices, out.grad))

    out._backward = backward if out.requires_grad else None
    return out


def slice_cols(x, start: int, stop: int) -> Var:
    x = as_var(x)
    out = _result(x.data[:, start:stop].copy(), (x,), None)

    def backward():
        g = np.zeros_like(x.data)
        g[:, start:stop] = out.grad
        x._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def concat(parts, axis: int) -> Var:
    parts = [as_var(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    out = _result(data, tuple(parts), None)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for p, g in zip(parts, pieces):
            if p.requires_grad:
                p._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


def reduce_sum(x, axis=None, keepdims: bool = False) -> Var:
    x = as_var(x)
    _tally(x.data.size)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    out = _result(data, (x,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mean_all(x) -> Var:
    x = as_var(x)
    n = x.data.size
    return mul(reduce_sum(x), 1.0 / n)


# --- attention core ---------------------------------------------------


def masked_softmax(logits, mask: np.ndarray) -> Var:
    """Softmax over the last axis restricted to unmasked slots.

    Masked slots come out exactly zero and receive zero gradient. Rows with
    no valid slot are rejected: every local region contains at least the
    node itself.
    """
    x = as_var(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax row with every slot masked")
    shifted = np.where(mask, x.data, -np.inf)
    zmax = shifted.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(shifted - zmax), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)
    _tally(3 * x.data.size)
    out = _result(y, (x,), None)

    def backward():
        g = out.grad
        dot = (g * y).sum(axis=-1, keepdims=True)
        x._accumulate(y * (g - dot))

    out._backward = backward if out.requires_grad else None
    return out


def kl_divergence(p, q, floor: float = 1e-8) -> float:
    """KL(p || q) of two distributions on the same support; q floored."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError("distribution support mismatch")
    q = np.maximum(q, floor)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


def kl_divergence_var(p: Var, q: np.ndarray, floor: float = 1e-8) -> Var:
    """Differentiable KL(p || q) against a constant target distribution.

    Expects strictly positive entries in p (true of softmax outputs over
    valid slots). Gradients flow through p only.
    """
    q = np.maximum(np.asarray(q, dtype=float), floor)
    if p.data.shape != q.shape:
        raise ValueError("distribution support mismatch")
    return reduce_sum(mul(p, sub(log(p), np.log(q))))


# --- layers -----------------------------------------------------------


def init_weight(rng: np.random.Generator, fan_in: int, fan_out: int,
                requires_grad: bool = True) -> Var:
    bound = 1.0 / np.sqrt(fan_in)
    return Var(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad)


def init_bias(rng: np.random.Generator, fan_in: int, fan_out: int,
              requires_grad: bool = True) -> Var:
    bound = 1.0 / np.sqrt(fan_in)
    return Var(rng.uniform(-bound, bound, size=(1, fan_out)), requires_grad)


@dataclass
class DenseParams:
    w: Var
    b: Var

    @classmethod
    def init(cls, rng, fan_in, fan_out, requires_grad=True) -> "DenseParams":
        return cls(w=init_weight(rng, fan_in, fan_out, requires_grad),
                   b=init_bias(rng, fan_in, fan_out, requires_grad))


def dense_forward(x, params: DenseParams, activation: str = "identity") -> Var:
    """Fused affine layer y = act(x W + b) with a single tape node."""
    if activation not in ("identity", "relu"):
        raise ValueError(f"unknown activation {activation!r}")
    x = as_var(x)
    w, b = params.w, params.b
    pre = x.data @ w.data + b.data
    data = np.maximum(pre, 0.0) if activation == "relu" else pre
    _tally(x.data.shape[0] * w.data.shape[0] * w.data.shape[1])
    out = _result(data, (x, w, b), None)

    def backward():
        g = out.grad * (pre > 0) if activation == "relu" else out.grad
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.T @ g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0, keepdims=True))

    out._backward = backward if out.requires_grad else None
    return out


@dataclass
class AttentionLayerParams:
    """Multi-head graph-attention convolution parameters, heads packed.

    ``wq``/``wk``/``wv`` are (D_in, heads*dh) with the per-head blocks laid
    out contiguously; ``wo`` maps the concatenated head outputs to the layer
    output. The logit scale is the usual inverse square root of the per-head
    key width.
    """

    wq: Var
    wk: Var
    wv: Var
    wo: Var
    heads: int

    @classmethod
    def init(cls, rng, d_in: int, d_attn: int, d_out: int, heads: int,
             requires_grad=True) -> "AttentionLayerParams":
        if d_attn % heads:
            raise ValueError("head count must divide the attention width")
        return cls(
            wq=init_weight(rng, d_in, d_attn, requires_grad),
            wk=init_weight(rng, d_in, d_attn, requires_grad),
            wv=init_weight(rng, d_in, d_attn, requires_grad),
            wo=init_weight(rng, d_attn, d_out, requires_grad),
            heads=heads,
        )

    @property
    def head_dim(self) -> int:
        return self.wq.data.shape[1] // self.heads

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.head_dim)


def attention_logits(q: Var, k: Var, idx: np.ndarray, heads: int, scale: float) -> Var:
    """Scaled per-head query/key dot products over padded local regions.

    ``q``/``k`` are (R, heads*dh) projections over all node rows; ``idx`` is
    the (rows, slots) local-region row index table, whose slot 0 names the
    querying node itself (``idx`` may cover a subset of the R rows). Output
    rows are grouped node-major: row r*heads + u holds region r's logits
    for head u.
    """
    n_rows, slots = idx.shape
    dh = q.data.shape[1] // heads
    own = idx[:, 0]
    idx_flat = idx.reshape(-1)
    k_loc = k.data[idx_flat].reshape(n_rows, slots, heads, dh)
    q_own = q.data[own].reshape(n_rows, 1, heads, dh)
    logits = scale * np.einsum("rjud,rjud->rju", np.broadcast_to(q_own, k_loc.shape), k_loc)
    _tally(2 * k_loc.size)
    data = np.ascontiguousarray(logits.transpose(0, 2, 1)).reshape(n_rows * heads, slots)
    out = _result(data, (q, k), None)

    def backward():
        g = out.grad.reshape(n_rows, heads, slots).transpose(0, 2, 1) * scale  # (r, J, U)
        if q.requires_grad:
            gq = np.einsum("rju,rjud->rud", g, k_loc).reshape(n_rows, heads * dh)
            q._accumulate(_scatter_add_rows(q.data.shape, own, gq))
        if k.requires_grad:
            gk_loc = np.einsum("rju,rud->rjud", g, q.data[own].reshape(n_rows, heads, dh))
            k._accumulate(_scatter_add_rows(
                k.data.shape, idx_flat, gk_loc.reshape(n_rows * slots, heads * dh)))

    out._backward = backward if out.requires_grad else None
    return out


def attention_mix(alpha: Var, v: Var, idx: np.ndarray, heads: int) -> Var:
    """Attention-weighted sum of value projections over the local regions.

    ``alpha`` is (R*heads, slots) node-major, ``v`` the (R, heads*dh) value
    projection. Returns (R, heads*dh) with head outputs concatenated.
    """
    n_rows, slots = idx.shape
    dh = v.data.shape[1] // heads
    idx_flat = idx.reshape(-1)
    v_loc = v.data[idx_flat].reshape(n_rows, slots, heads, dh)
    a = alpha.data.reshape(n_rows, heads, slots)
    mixed = np.einsum("ruj,rjud->rud", a, v_loc)
    _tally(2 * v_loc.size)
    out = _result(mixed.reshape(n_rows, heads * dh), (alpha, v), None)

    def backward():
        g = out.grad.reshape(n_rows, heads, dh)
        if alpha.requires_grad:
            ga = np.einsum("rud,rjud->ruj", g, v_loc)
            alpha._accumulate(ga.reshape(n_rows * heads, slots))
        if v.requires_grad:
            gv_loc = np.einsum("ruj,rud->rjud", a, g)
            v._accumulate(_scatter_add_rows(
                v.data.shape, idx_flat, gv_loc.reshape(n_rows * slots, heads * dh)))

    out._backward = backward if out.requires_grad else None
    return out


def attention_weights(node_feat, local_feats, mask: np.ndarray,
                      params: AttentionLayerParams, head: int) -> Var:
    """Attention of one node over its local region for a single head.

    ``node_feat`` is the (1, D) feature of the node itself, ``local_feats``
    the (slots, D) padded local-region features. Returns a (1, slots)
    distribution over the valid slots.
    """
    dh = params.head_dim
    lo, hi = head * dh, (head + 1) * dh
    q = matmul(as_var(node_feat), slice_cols(params.wq, lo, hi))
    k = matmul(as_var(local_feats), slice_cols(params.wk, lo, hi))
    logits = mul(matmul(q, transpose(k, (1, 0))), params.scale)
    return masked_softmax(logits, np.asarray(mask, dtype=bool)[None, :])


def graph_conv_forward(local_feats, mask: np.ndarray, params: AttentionLayerParams,
                       uniform: bool = False) -> Var:
    """Convolution output for one node given its padded local-region features.

    Per head, value-projected neighbor features are mixed by the attention
    weights (or by a uniform average over valid slots when ``uniform``),
    the heads are concatenated and mapped through the output transform.
    """
    local = as_var(local_feats)
    mask = np.asarray(mask, dtype=bool)
    node = gather_rows(local, np.array([0]))
    dh = params.head_dim
    outputs = []
    for u in range(params.heads):
        if uniform:
            alpha = Var((mask / mask.sum())[None, :])
        else:
            alpha = attention_weights(node, local, mask, params, u)
        v = matmul(local, slice_cols(params.wv, u * dh, (u + 1) * dh))
        outputs.append(matmul(alpha, v))
    return relu(matmul(concat(outputs, axis=1), params.wo))


def graph_conv_batch(feats: Var, idx: np.ndarray, mask: np.ndarray,
                     params: AttentionLayerParams, uniform: bool = False,
                     want_output: bool = True, want_alpha: bool = False):
    """Batched convolution over every node row at once.

    ``feats`` is (R, D_in); ``idx`` and ``mask`` are the (R, slots) padded
    local regions. Returns ``(output, alpha)`` where alpha has shape
    (R*heads, slots) with rows grouped node-major.
    """
    heads = params.heads

    if uniform:
        base = mask / mask.sum(axis=1, keepdims=True)
        alpha = Var(np.repeat(base, heads, axis=0))
    else:
        q_all = matmul(feats, params.wq)
        k_all = matmul(feats, params.wk)
        logits = attention_logits(q_all, k_all, idx, heads, params.scale)
        alpha = masked_softmax(logits, np.repeat(mask, heads, axis=0))

    if not want_output:
        return None, (alpha if want_alpha else None)

    v_all = matmul(feats, params.wv)
    mixed = attention_mix(alpha, v_all, idx, heads)
    out = relu(matmul(mixed, params.wo))
    return out, (alpha if want_alpha else None)


# --- Q network --------------------------------------------------------


@dataclass(frozen=True)
class QNetConfig:
    obs_dim: int
    n_actions: int
    feature_dim: int = 128
    heads: int = 8
    encoder_hidden: int = 128
    q_hidden: int = 128
    conv_layers: int = 2

    def __post_init__(self):
        if self.feature_dim % self.heads:
            raise ValueError("heads must divide feature_dim")

    def as_dict(self) -> dict:
        return {
            "obs_dim": self.obs_dim, "n_actions": self.n_actions,
            "feature_dim": self.feature_dim, "heads": self.heads,
            "encoder_hidden": self.encoder_hidden, "q_hidden": self.q_hidden,
            "conv_layers": self.conv_layers,
        }


class QNetwork:
    """Observation encoder, stacked attention convolutions and the Q head.

    The Q head reads the concatenation of the encoder output with every
    convolution layer's output, so both the raw and the aggregated
    neighborhood views reach the action values.
    """

    def __init__(self, cfg: QNetConfig, rng: np.random.Generator,
                 requires_grad: bool = True):
        self.cfg = cfg
        d = cfg.feature_dim
        self.enc1 = DenseParams.init(rng, cfg.obs_dim, cfg.encoder_hidden, requires_grad)
        self.enc2 = DenseParams.init(rng, cfg.encoder_hidden, d, requires_grad)
        self.convs = [
            AttentionLayerParams.init(rng, d, d, d, cfg.heads, requires_grad)
            for _ in range(cfg.conv_layers)
        ]
        head_in = d * (cfg.conv_layers + 1)
        self.head1 = DenseParams.init(rng, head_in, cfg.q_hidden, requires_grad)
        self.head2 = DenseParams.init(rng, cfg.q_hidden, cfg.n_actions, requires_grad)

    def named_params(self) -> dict[str, Var]:
        named = {"enc1.w": self.enc1.w, "enc1.b": self.enc1.b,
                 "enc2.w": self.enc2.w, "enc2.b": self.enc2.b,
                 "head1.w": self.head1.w, "head1.b": self.head1.b,
                 "head2.w": self.head2.w, "head2.b": self.head2.b}
        for i, conv in enumerate(self.convs):
            named[f"conv{i}.wq"] = conv.wq
            named[f"conv{i}.wk"] = conv.wk
            named[f"conv{i}.wv"] = conv.wv
            named[f"conv{i}.wo"] = conv.wo
        return named

    def copy_from(self, other: "QNetwork"):
        """Hard parameter copy (target-network sync)."""
        mine, theirs = self.named_params(), other.named_params()
        for name, p in mine.items():
            p.data = theirs[name].data.copy()

    def zero_grad(self):
        for p in self.named_params().values():
            p.grad = None

    def forward(self, obs, idx: np.ndarray, mask: np.ndarray,
                rows: np.ndarray | None = None, uniform_attention: bool = False,
                want_alpha: bool = False, alpha_only: bool = False):
        """Q values (and optionally last-layer attention) for node rows.

        ``obs`` is (R, obs_dim) over all nodes of the stacked graphs, ``idx``
        and ``mask`` the (R, slots) padded local regions with indices already
        offset into the stacked row space. ``rows`` restricts the Q head to
        the listed rows. With ``alpha_only`` the value/Q computation of the
        final layer is skipped entirely.
        """
        f = dense_forward(obs, self.enc1, "relu")
        f = dense_forward(f, self.enc2, "relu")
        feats = [f]
        alpha = None
        for layer, conv in enumerate(self.convs):
            last = layer == len(self.convs) - 1
            # only the last layer's outputs feed the head directly, so its
            # computation can be restricted to the requested rows
            restrict = last and rows is not None
            out, a = graph_conv_batch(
                feats[-1],
                idx[rows] if restrict else idx,
                mask[rows] if restrict else mask,
                conv,
                uniform=uniform_attention,
                want_output=not (last and alpha_only),
                want_alpha=(last and (want_alpha or alpha_only)),
            )
            if last:
                alpha = a
            if out is None:
                return None, alpha
            feats.append(out)

        if rows is not None:
            feats = [gather_rows(fi, rows) for fi in feats[:-1]] + [feats[-1]]
        h = concat(feats, axis=1)
        q = dense_forward(h, self.head1, "relu")
        q = dense_forward(q, self.head2, "identity")
        return q, alpha


# --- optimizer --------------------------------------------------------


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
              t: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """One in-place Adam update with bias correction; ``t`` is 1-based.

    Algebraically the textbook update lr * m_hat / (sqrt(v_hat) + eps) with
    the bias corrections folded into scalars, saving the per-tensor
    temporaries.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    bc2_sqrt = np.sqrt(1.0 - beta2 ** t)
    denom = np.sqrt(v)
    denom /= bc2_sqrt
    denom += eps
    np.divide(m, denom, out=denom)
    param -= (lr / (1.0 - beta1 ** t)) * denom


def clip_grad_norm(params: dict[str, Var], max_norm: float) -> float:
    """Scale every gradient so their joint L2 norm stays below the bound."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class Adam:
    def __init__(self, params: dict[str, Var], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p.data, grad, self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# --- checkpointing ----------------------------------------------------

CHECKPOINT_VERSION = 1


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def save_params(path, named: dict[str, Var], config: dict):
    """Dump all tensors plus a config fingerprint; reload is bit-exact."""
    meta = json.dumps({"version": CHECKPOINT_VERSION, "config_hash": config_hash(config)})
    arrays = {name: p.data for name, p in named.items()}
    np.savez(path, __meta__=np.array(meta), **arrays)


def load_params(path, named: dict[str, Var], config: dict):
    with np.load(path, allow_pickle=False) as stored:
        meta = json.loads(str(stored["__meta__"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        if meta["config_hash"] != config_hash(config):
            raise ValueError("checkpoint was written under a different config")
        missing = set(named) - set(stored.files)
        if missing:
            raise ValueError(f"checkpoint missing tensors: {sorted(missing)}")
        for name, p in named.items():
            arr = stored[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = arr.astype(np.float64)
