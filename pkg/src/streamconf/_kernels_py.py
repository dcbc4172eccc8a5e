"""Pure numpy implementations of the hot kernels.

Used when the compiled extension (`streamconf._kernels`) is unavailable.
Both implementations must produce the same results: the RNG stream is
bit-identical, the convolutions agree to rounding (summation order may
differ between the einsum path here and the explicit loops there).
"""

import numpy as np

_U64 = (1 << 64) - 1


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _U64


def seed_state(seed):
    """Expand a 64-bit seed into the 256-bit generator state via splitmix64."""
    state = np.empty(4, dtype=np.uint64)
    z = int(seed) & _U64
    for i in range(4):
        z = (z + 0x9E3779B97F4A7C15) & _U64
        s = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        s = ((s ^ (s >> 27)) * 0x94D049BB133111EB) & _U64
        state[i] = s ^ (s >> 31)
    return state


def xoshiro_fill(state, n):
    """Draw ``n`` raw uint64 values from xoshiro256**, advancing ``state`` in place."""
    s0, s1, s2, s3 = (int(v) for v in state)
    out = np.empty(n, dtype=np.uint64)
    for i in range(n):
        out[i] = (_rotl((s1 * 5) & _U64, 7) * 9) & _U64
        t = (s1 << 17) & _U64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
    return out


def depthwise_conv1d(x, kernel):
    """Per-channel 1-D convolution, stride 1, symmetric zero padding."""
    t, c = x.shape
    k = kernel.shape[1]
    half = (k - 1) // 2
    xp = np.zeros((t + 2 * half, c), dtype=x.dtype)
    xp[half:half + t] = x
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # [T, C, K]
    return np.einsum("tck,ck->tc", windows, kernel, optimize=True).astype(x.dtype, copy=False)


def _sample_grid(x, offsets, k):
    """Fractional sample values and interpolation bookkeeping for deform conv."""
    t, c_in = x.shape
    og = offsets.shape[1]
    cpg = c_in // og
    base = (np.arange(t, dtype=offsets.dtype)[:, None, None]
            + (np.arange(k, dtype=offsets.dtype) - k // 2)[None, None, :])  # [T,1,K]
    s = base + np.repeat(offsets, cpg, axis=1)  # [T,C_in,K]
    f = np.floor(s)
    frac = (s - f).astype(x.dtype)
    fi = f.astype(np.int64)
    ci = fi + 1
    ch = np.arange(c_in)[None, :, None]
    mf = ((fi >= 0) & (fi < t)).astype(x.dtype)
    mc = ((ci >= 0) & (ci < t)).astype(x.dtype)
    xf = x[np.clip(fi, 0, t - 1), ch] * mf
    xc = x[np.clip(ci, 0, t - 1), ch] * mc
    val = (1 - frac) * xf + frac * xc  # [T,C_in,K]
    return val, frac, fi, ci, mf, mc, xf, xc


def deform_conv1d_forward(x, kernel, bias, offsets):
    """Grouped 1-D deformable convolution with linear interpolation.

    x: [T, C_in], kernel: [C_out, C_in/groups, K], offsets: [T, offset_groups, K].
    Out-of-range samples contribute zero.
    """
    t, c_in = x.shape
    c_out, cg, k = kernel.shape
    g = c_in // cg
    val, *_ = _sample_grid(x, offsets, k)
    valr = val.reshape(t, g, cg, k)
    kr = kernel.reshape(g, c_out // g, cg, k)
    out = np.einsum("tgck,gock->tgo", valr, kr, optimize=True).reshape(t, c_out)
    return (out + bias).astype(x.dtype, copy=False)


def deform_conv1d_backward(x, kernel, offsets, grad_out):
    """Gradients of deform_conv1d_forward w.r.t. x, kernel, bias and offsets."""
    t, c_in = x.shape
    c_out, cg, k = kernel.shape
    g = c_in // cg
    og = offsets.shape[1]
    cpg = c_in // og
    val, frac, fi, ci, mf, mc, xf, xc = _sample_grid(x, offsets, k)

    goutr = grad_out.reshape(t, g, c_out // g)
    kr = kernel.reshape(g, c_out // g, cg, k)
    valr = val.reshape(t, g, cg, k)

    grad_kernel = np.einsum("tgo,tgck->gock", goutr, valr, optimize=True).reshape(c_out, cg, k)
    grad_bias = grad_out.sum(axis=0)
    gval = np.einsum("tgo,gock->tgck", goutr, kr, optimize=True).reshape(t, c_in, k)

    grad_x = np.zeros_like(x)
    ch = np.broadcast_to(np.arange(c_in)[None, :, None], (t, c_in, k))
    np.add.at(grad_x, (np.clip(fi, 0, t - 1), ch), gval * (1 - frac) * mf)
    np.add.at(grad_x, (np.clip(ci, 0, t - 1), ch), gval * frac * mc)

    # d val / d offset = x[ceil] - x[floor], zero per out-of-range side
    goff_c = gval * (xc - xf)  # [T,C_in,K]
    grad_offsets = goff_c.reshape(t, og, cpg, k).sum(axis=2).astype(offsets.dtype, copy=False)
    return grad_x, grad_kernel, grad_bias, grad_offsets
