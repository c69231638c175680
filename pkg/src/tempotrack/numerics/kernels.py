"""Dense float32 kernels used by the backbone, the transformer and the heads.

Every function is pure: inputs are never written to and outputs are fresh
arrays. Maps are ``C x H x W``; token matrices are ``T x C`` with tokens
ordered row-major over the spatial grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError, NumericError

DTYPE = np.float32
LN_EPS = 1e-5


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(x).all():
        raise NumericError(f"{op}: non-finite values in result")
    return x


def _require_ndim(x: np.ndarray, ndim: int, what: str) -> None:
    if x.ndim != ndim:
        raise DimensionError(f"{what}: expected {ndim}-d array, got shape {x.shape}")


# ---------------------------------------------------------------- plumbing

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return as_tensor(a @ b)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"add: shape {a.shape} != {b.shape}")
    return as_tensor(a + b)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise DimensionError(f"mul: shape {a.shape} != {b.shape}")
    return as_tensor(a * b)


def concat(tensors, axis: int) -> np.ndarray:
    try:
        return as_tensor(np.concatenate(tensors, axis=axis))
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None


def to_tokens(fmap: np.ndarray) -> np.ndarray:
    """``C x H x W`` map -> ``(H*W) x C`` tokens, row-major over positions."""
    _require_ndim(fmap, 3, "to_tokens")
    c, h, w = fmap.shape
    return as_tensor(fmap.reshape(c, h * w).T)


def to_map(tokens: np.ndarray, height: int, width: int) -> np.ndarray:
    _require_ndim(tokens, 2, "to_map")
    t, c = tokens.shape
    if t != height * width:
        raise DimensionError(f"to_map: {t} tokens do not tile a {height}x{width} grid")
    return as_tensor(tokens.T.reshape(c, height, width))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, DTYPE(0))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    x = x.astype(DTYPE, copy=False)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ----------------------------------------------------------- convolutions

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of a ``C_in x H x W`` map with ``C_out x C_in x k x k`` filters."""
    _require_ndim(x, 3, "conv2d input")
    _require_ndim(weight, 4, "conv2d weights")
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in:
        raise DimensionError(f"conv2d: input has {x.shape[0]} channels, weights expect {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    _, h, w = x.shape
    if kh > h + 2 * padding or kw > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}+{padding}")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: C_in x H' x W' x kh x kw
    out = np.tensordot(weight, win, axes=([1, 2, 3], [0, 3, 4]))
    out += bias[:, None, None]
    return check_finite(as_tensor(out), "conv2d")


def conv1d_over_queue(queue: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Temporal convolution whose kernel spans the whole ``L x C`` queue.

    ``weight[o, c, l]`` multiplies ``queue[l, c]``; the result has one value
    per output channel.
    """
    _require_ndim(queue, 2, "conv1d_over_queue queue")
    _require_ndim(weight, 3, "conv1d_over_queue weights")
    length, chans = queue.shape
    c_out, c_in, k = weight.shape
    if k != length:
        raise DimensionError(f"conv1d_over_queue: kernel extent {k} != queue length {length}")
    if c_in != chans:
        raise DimensionError(f"conv1d_over_queue: queue width {chans} != weight channels {c_in}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d_over_queue: bias shape {bias.shape} != ({c_out},)")
    out = np.tensordot(weight, queue, axes=([1, 2], [1, 0])) + bias
    return check_finite(as_tensor(out), "conv1d_over_queue")


def depthwise_xcorr(search: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Per-channel valid cross-correlation, template channels used as kernels."""
    _require_ndim(search, 3, "depthwise_xcorr search")
    _require_ndim(template, 3, "depthwise_xcorr template")
    c, hs, ws = search.shape
    ct, ht, wt = template.shape
    if c != ct:
        raise DimensionError(f"depthwise_xcorr: channel mismatch {c} vs {ct}")
    if ht > hs or wt > ws:
        raise DimensionError(f"depthwise_xcorr: template {ht}x{wt} larger than search {hs}x{ws}")
    win = sliding_window_view(search, (ht, wt), axis=(1, 2))
    out = np.einsum("chwij,cij->chw", win, template)
    return check_finite(as_tensor(out), "depthwise_xcorr")


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    _require_ndim(x, 3, "global_avg_pool")
    return as_tensor(x.mean(axis=(1, 2)))


def max_pool2d(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    _require_ndim(x, 3, "max_pool2d")
    if kernel > x.shape[1] or kernel > x.shape[2]:
        raise DimensionError(f"max_pool2d: window {kernel} larger than input {x.shape[1:]}")
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))[:, ::stride, ::stride]
    return as_tensor(win.max(axis=(3, 4)))


# --------------------------------------------------------------- attention

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    peak = logits.max(axis=axis, keepdims=True)
    # max propagates NaN, so checking the peaks covers every logit
    if np.isnan(peak).any():
        raise NumericError("softmax: NaN in logits")
    e = np.subtract(logits, peak, dtype=DTYPE)
    np.exp(e, out=e)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
               eps: float = LN_EPS) -> np.ndarray:
    """Per-row normalisation to zero mean and unit (population) variance."""
    _require_ndim(x, 2, "layer_norm")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    mean = x.mean(axis=1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True)
    out = centered / np.sqrt(var + DTYPE(eps)) * gamma + beta
    return check_finite(as_tensor(out), "layer_norm")


@dataclass(frozen=True)
class AttentionConfig:
    num_heads: int = 6
    model_dim: int = 96

    def __post_init__(self):
        if self.num_heads < 1 or self.model_dim < 1:
            raise DimensionError("AttentionConfig: sizes must be positive")
        if self.model_dim % self.num_heads:
            raise DimensionError(
                f"AttentionConfig: model_dim {self.model_dim} not divisible by {self.num_heads} heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def scale(self) -> float:
        return 1.0 / float(np.sqrt(self.head_dim))


@dataclass(frozen=True)
class AttentionParams:
    """Projection matrices, right-multiplied: ``Q @ wq`` etc.

    Columns ``n*C_h:(n+1)*C_h`` of ``wq``/``wk``/``wv`` belong to head ``n``;
    ``wo`` projects the concatenated heads.
    """
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


class AttentionProbe(Protocol):
    def attention(self, weights: np.ndarray) -> None: ...


def multi_head_attention(query: np.ndarray, key: np.ndarray, value: np.ndarray,
                         params: AttentionParams, cfg: AttentionConfig,
                         probe: Optional[AttentionProbe] = None) -> np.ndarray:
    _require_ndim(query, 2, "multi_head_attention query")
    _require_ndim(key, 2, "multi_head_attention key")
    _require_ndim(value, 2, "multi_head_attention value")
    ci = cfg.model_dim
    if query.shape[1] != ci or key.shape[1] != ci or value.shape[1] != ci:
        raise DimensionError(
            f"multi_head_attention: widths {query.shape[1]}/{key.shape[1]}/{value.shape[1]} != {ci}")
    if key.shape[0] != value.shape[0]:
        raise DimensionError("multi_head_attention: key and value token counts differ")
    for name in ("wq", "wk", "wv", "wo"):
        if getattr(params, name).shape != (ci, ci):
            raise DimensionError(f"multi_head_attention: {name} must be {ci}x{ci}")
    n, ch = cfg.num_heads, cfg.head_dim
    q = (query @ (params.wq * DTYPE(cfg.scale))).reshape(-1, n, ch).transpose(1, 0, 2)
    k = (key @ params.wk).reshape(-1, n, ch).transpose(1, 0, 2)
    v = (value @ params.wv).reshape(-1, n, ch).transpose(1, 0, 2)
    weights = softmax(q @ k.transpose(0, 2, 1), axis=-1)
    if probe is not None:
        probe.attention(weights)
    heads = weights @ v  # N x Tq x C_h
    cat = heads.transpose(1, 0, 2).reshape(-1, ci)
    return check_finite(as_tensor(cat @ params.wo), "multi_head_attention")


@dataclass(frozen=True)
class FFNParams:
    w1: np.ndarray  # C x hidden
    b1: np.ndarray
    w2: np.ndarray  # hidden x C_out
    b2: np.ndarray


def feed_forward(x: np.ndarray, params: FFNParams) -> np.ndarray:
    """Two affine layers with a ReLU between them."""
    if x.ndim not in (1, 2):
        raise DimensionError(f"feed_forward: expected tokens or a vector, got {x.shape}")
    if x.shape[-1] != params.w1.shape[0] or params.w1.shape[1] != params.w2.shape[0]:
        raise DimensionError("feed_forward: weight shapes do not chain with the input")
    hidden = relu(x @ params.w1 + params.b1)
    return check_finite(as_tensor(hidden @ params.w2 + params.b2), "feed_forward")
