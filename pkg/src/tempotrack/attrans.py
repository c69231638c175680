"""Temporal transformer that carries a single fixed-size prior across frames.

The encoder folds the current similarity tokens into the previous prior and
replaces it; the decoder refines the current tokens by attending to the new
prior. All residual blocks are post-norm: ``Norm(x + sublayer(x))``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backbone import ConvParams
from .config import TrackerConfig, Toggles
from .errors import DimensionError, StateError
from .numerics import (
    DTYPE,
    AttentionConfig,
    AttentionParams,
    FFNParams,
    as_tensor,
    concat,
    conv2d,
    feed_forward,
    layer_norm,
    multi_head_attention,
    sigmoid,
    to_map,
    to_tokens,
)


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray


@dataclass(frozen=True)
class ATTransParams:
    adjust: ConvParams        # 3x3, similarity map -> model width
    init: ConvParams          # 3x3, first similarity map -> initial prior
    enc_attn1: AttentionParams
    enc_norm1: LayerNormParams
    enc_attn2: AttentionParams
    enc_norm2: LayerNormParams
    filter_conv: ConvParams   # 1x1 on the first encoder output
    filter_ffn: FFNParams     # pooled descriptor -> per-channel gate logits
    fusion: ConvParams        # 1x1, 2*C_i -> C_i
    enc_attn3: AttentionParams
    enc_norm3: LayerNormParams
    dec_self: AttentionParams
    dec_norm1: LayerNormParams
    dec_cross: AttentionParams
    dec_norm2: LayerNormParams
    dec_ffn: FFNParams
    dec_norm3: LayerNormParams


@dataclass(frozen=True)
class TemporalPrior:
    tokens: np.ndarray  # T x C_i
    frame_index: int

    @property
    def nbytes(self) -> int:
        return self.tokens.nbytes


class Instrument:
    """Collects attention row sums and gate values for one or more steps."""

    def __init__(self):
        self.max_row_error = 0.0
        self.rows_checked = 0
        self.gates: list = []

    def attention(self, weights: np.ndarray) -> None:
        sums = weights.astype(np.float64).sum(axis=-1)
        self.rows_checked += sums.size
        self.max_row_error = max(self.max_row_error, float(np.abs(sums - 1.0).max()))

    def gate(self, alpha: np.ndarray) -> None:
        self.gates.append(alpha.copy())


def _pointwise(tokens: np.ndarray, conv: ConvParams) -> np.ndarray:
    """1x1 convolution applied in token form."""
    w = conv.weight[:, :, 0, 0]
    if tokens.shape[1] != w.shape[1]:
        raise DimensionError(f"1x1 conv expects width {w.shape[1]}, got {tokens.shape[1]}")
    return as_tensor(tokens @ w.T + conv.bias)


def _same_conv(fmap: np.ndarray, conv: ConvParams) -> np.ndarray:
    k = conv.weight.shape[-1]
    return conv2d(fmap, conv.weight, conv.bias, stride=1, padding=k // 2)


def _norm(x: np.ndarray, p: LayerNormParams) -> np.ndarray:
    return layer_norm(x, p.gamma, p.beta)


def attention_config(config: TrackerConfig) -> AttentionConfig:
    return AttentionConfig(config.num_heads, config.model_dim)


def adjust(similarity: np.ndarray, params: ATTransParams) -> np.ndarray:
    """Convolve the raw similarity map and flatten it to ``(H*W) x C_i`` tokens."""
    return to_tokens(_same_conv(similarity, params.adjust))


def init_prior(similarity: np.ndarray, params: ATTransParams, config: TrackerConfig) -> TemporalPrior:
    """Initial prior from the first frame's similarity map (or seeded noise for the ablation)."""
    if config.toggles.prior_init == "random":
        _, h, w = similarity.shape
        rng = np.random.default_rng(config.prior_seed)
        tokens = as_tensor(rng.standard_normal((h * w, config.model_dim)))
    else:
        tokens = to_tokens(_same_conv(similarity, params.init))
    return TemporalPrior(tokens, 0)


def filter_gate(f1: np.ndarray, params: ATTransParams) -> np.ndarray:
    """Per-channel gate in (0, 1) from the pooled, convolved first encoder output."""
    pooled = _pointwise(f1, params.filter_conv).mean(axis=0)
    return sigmoid(feed_forward(pooled, params.filter_ffn))


def encode(prior: TemporalPrior, current: np.ndarray, params: ATTransParams,
           cfg: AttentionConfig, toggles: Toggles,
           probe: Optional[Instrument] = None) -> TemporalPrior:
    if prior.tokens.shape != current.shape:
        raise DimensionError(
            f"encode: prior tokens {prior.tokens.shape} != current tokens {current.shape}")
    query = prior.tokens if toggles.query_choice == "previous" else current
    f1 = _norm(current + multi_head_attention(query, current, current, params.enc_attn1, cfg, probe),
               params.enc_norm1)
    f2 = _norm(f1 + multi_head_attention(f1, f1, f1, params.enc_attn2, cfg, probe), params.enc_norm2)
    if toggles.filter_enabled:
        alpha = filter_gate(f1, params)
        if probe is not None:
            probe.gate(alpha)
        ff = as_tensor(f2 + _pointwise(concat([f2, f1], axis=1), params.fusion) * alpha)
    else:
        ff = f2
    fm = _norm(ff + multi_head_attention(ff, ff, ff, params.enc_attn3, cfg, probe), params.enc_norm3)
    return TemporalPrior(fm, prior.frame_index + 1)


def decode(current: np.ndarray, prior: TemporalPrior, params: ATTransParams,
           cfg: AttentionConfig, probe: Optional[Instrument] = None) -> np.ndarray:
    """Refine the current tokens against the prior; returns ``T x C_i`` tokens."""
    if prior.tokens.shape != current.shape:
        raise DimensionError(
            f"decode: prior tokens {prior.tokens.shape} != current tokens {current.shape}")
    f3 = _norm(current + multi_head_attention(current, current, current, params.dec_self, cfg, probe),
               params.dec_norm1)
    f4 = _norm(f3 + multi_head_attention(f3, prior.tokens, prior.tokens, params.dec_cross, cfg, probe),
               params.dec_norm2)
    return _norm(f4 + feed_forward(f4, params.dec_ffn), params.dec_norm3)


def step(prior: Optional[TemporalPrior], similarity: np.ndarray, params: ATTransParams,
         config: TrackerConfig, probe: Optional[Instrument] = None):
    """One frame: returns ``(refined C_i x H x W map, replacement prior)``."""
    if prior is None:
        raise StateError("transformer step before the prior was initialised")
    cfg = attention_config(config)
    current = adjust(similarity, params)
    new_prior = encode(prior, current, params, cfg, config.toggles, probe)
    refined = decode(current, new_prior, params, cfg, probe)
    _, h, w = similarity.shape
    return to_map(refined, h, w), new_prior


def init_attrans(config: TrackerConfig, rng: np.random.Generator) -> ATTransParams:
    ci, c, hid = config.model_dim, config.feature_channels, config.hidden_dim

    def mat(rows, cols):
        return as_tensor(rng.standard_normal((rows, cols)) / np.sqrt(rows))

    def vec(n, scale=0.01):
        return as_tensor(rng.standard_normal(n) * scale)

    def conv(c_out, c_in, k):
        w = rng.standard_normal((c_out, c_in, k, k)) / np.sqrt(c_in * k * k)
        return ConvParams(as_tensor(w), vec(c_out))

    def attn():
        return AttentionParams(mat(ci, ci), mat(ci, ci), mat(ci, ci), mat(ci, ci))

    def norm():
        return LayerNormParams(np.ones(ci, DTYPE), np.zeros(ci, DTYPE))

    def ffn(c_out=ci):
        return FFNParams(mat(ci, hid), vec(hid), mat(hid, c_out), vec(c_out))

    return ATTransParams(
        adjust=conv(ci, c, 3), init=conv(ci, c, 3),
        enc_attn1=attn(), enc_norm1=norm(), enc_attn2=attn(), enc_norm2=norm(),
        filter_conv=conv(ci, ci, 1), filter_ffn=ffn(), fusion=conv(ci, 2 * ci, 1),
        enc_attn3=attn(), enc_norm3=norm(),
        dec_self=attn(), dec_norm1=norm(), dec_cross=attn(), dec_norm2=norm(),
        dec_ffn=ffn(), dec_norm3=norm(),
    )
