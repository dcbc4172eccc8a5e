"""1-D deformable convolution: offset prediction, fractional sampling, wrapper.

The attention replacement of the soft encoder variant. A pointwise offset
convolution predicts one real-valued offset per timestep, offset group and
kernel tap; the output convolution then samples the input at the shifted
fractional positions with linear interpolation (out-of-range reads are zero)
and combines taps with grouped kernel weights. The module wrapper adds layer
normalisation and a Swish activation on top.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError
from .numerics import layer_norm, swish


@dataclass
class DeformWeights:
    output_kernel: np.ndarray  # [C_out, C_in/groups, K]
    output_bias: np.ndarray    # [C_out]
    offset_kernel: np.ndarray  # [K*offset_groups, C_in]
    offset_bias: np.ndarray    # [K*offset_groups]
    k: int
    groups: int
    offset_groups: int


def init_deform(rng, c_in, c_out, k, groups, offset_groups, dtype=np.float64):
    if k % 2 == 0:
        raise ConfigError(f"deformable kernel size must be odd, got {k}")
    if c_in % groups or c_out % groups or c_in % offset_groups:
        raise ConfigError(
            f"channels ({c_in}, {c_out}) not divisible by groups {groups}"
            f" / offset groups {offset_groups}")
    cg = c_in // groups
    return DeformWeights(
        output_kernel=rng.glorot((c_out, cg, k), cg * k, c_out, dtype),
        output_bias=np.zeros(c_out, dtype=dtype),
        offset_kernel=rng.glorot((k * offset_groups, c_in), c_in, k * offset_groups, dtype),
        offset_bias=np.zeros(k * offset_groups, dtype=dtype),
        k=k, groups=groups, offset_groups=offset_groups,
    )


def predict_offsets(x, w):
    """Pointwise affine offset prediction: [T, C] -> [T, offset_groups, K]."""
    if x.shape[1] != w.offset_kernel.shape[1]:
        raise ShapeError(f"predict_offsets: input {x.shape} vs kernel {w.offset_kernel.shape}")
    raw = x @ w.offset_kernel.T + w.offset_bias  # [T, K*offset_groups]
    return raw.reshape(x.shape[0], w.offset_groups, w.k)


def deform_conv1d_forward(x, w, offsets):
    if x.shape[1] != w.output_kernel.shape[1] * w.groups:
        raise ShapeError(f"deform_conv1d: input {x.shape} vs kernel {w.output_kernel.shape}"
                         f" with {w.groups} groups")
    if offsets.shape != (x.shape[0], w.offset_groups, w.k):
        raise ShapeError(f"deform_conv1d: offsets {offsets.shape} inconsistent with input")
    return kernels.deform_conv1d_forward(x, w.output_kernel, w.output_bias, offsets)


def deform_conv1d_backward(x, w, upstream_grad):
    """Gradients of the full two-step operation w.r.t. x and every weight.

    Offsets are recomputed from x, so grad_x includes both the sampling path
    (interpolation derivative) and the offset-prediction path.
    Returns (grad_x, DeformWeights of gradients).
    """
    if upstream_grad.shape[0] != x.shape[0]:
        raise ShapeError(f"deform_conv1d_backward: upstream {upstream_grad.shape} vs x {x.shape}")
    offsets = predict_offsets(x, w)
    gx_direct, g_kernel, g_bias, g_off = kernels.deform_conv1d_backward(
        x, w.output_kernel, offsets, upstream_grad)
    g_off_flat = g_off.reshape(x.shape[0], -1)
    grad_x = gx_direct + g_off_flat @ w.offset_kernel
    grads = DeformWeights(
        output_kernel=g_kernel, output_bias=g_bias,
        offset_kernel=g_off_flat.T @ x, offset_bias=g_off_flat.sum(axis=0),
        k=w.k, groups=w.groups, offset_groups=w.offset_groups,
    )
    return grad_x, grads


def deform_module_forward(x, w, ln_gamma, ln_beta):
    """Deformable conv -> layer norm -> Swish (the soft-variant middle module)."""
    out = deform_conv1d_forward(x, w, predict_offsets(x, w))
    return swish(layer_norm(out, ln_gamma, ln_beta))
