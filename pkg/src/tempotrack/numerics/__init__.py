"""Tensor kernels (``kernels``) and their brute-force references (``oracles``)."""
from .kernels import (
    DTYPE,
    LN_EPS,
    AttentionConfig,
    AttentionParams,
    FFNParams,
    add,
    as_tensor,
    check_finite,
    concat,
    conv1d_over_queue,
    conv2d,
    conv_output_size,
    depthwise_xcorr,
    feed_forward,
    global_avg_pool,
    layer_norm,
    matmul,
    max_pool2d,
    mul,
    multi_head_attention,
    relu,
    sigmoid,
    softmax,
    to_map,
    to_tokens,
)
