# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: xoshiro256** stream, depthwise and deformable 1-D conv.

Mirrors the pure numpy fallback in ``_kernels_py``; the RNG stream is
bit-identical, floating-point kernels agree to rounding.
"""

import numpy as np
cimport numpy as cnp
cimport cython
from libc.math cimport floor

cnp.import_array()

ctypedef unsigned long long u64

ctypedef fused real:
    float
    double


cdef inline u64 _rotl(u64 x, int k) nogil:
    return (x << k) | (x >> (64 - k))


def seed_state(seed):
    cdef u64 z = <u64> (int(seed) & ((1 << 64) - 1))
    cdef u64 s
    state = np.empty(4, dtype=np.uint64)
    cdef u64[:] sv = state
    cdef int i
    for i in range(4):
        z += <u64> 0x9E3779B97F4A7C15
        s = (z ^ (z >> 30)) * <u64> 0xBF58476D1CE4E5B9
        s = (s ^ (s >> 27)) * <u64> 0x94D049BB133111EB
        sv[i] = s ^ (s >> 31)
    return state


def xoshiro_fill(state, Py_ssize_t n):
    cdef u64[:] sv = state
    cdef u64 s0 = sv[0], s1 = sv[1], s2 = sv[2], s3 = sv[3], t
    out = np.empty(n, dtype=np.uint64)
    cdef u64[:] ov = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            ov[i] = _rotl(s1 * 5, 7) * 9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = _rotl(s3, 45)
    sv[0] = s0
    sv[1] = s1
    sv[2] = s2
    sv[3] = s3
    return out


def depthwise_conv1d(real[:, :] x, real[:, :] kernel):
    cdef Py_ssize_t t = x.shape[0], c = x.shape[1], k = kernel.shape[1]
    cdef Py_ssize_t half = (k - 1) // 2
    cdef Py_ssize_t i, j, q, src
    cdef real acc
    out_np = np.zeros((t, c), dtype=np.asarray(x).dtype)
    cdef real[:, :] out = out_np
    with nogil:
        for i in range(t):
            for j in range(c):
                acc = 0
                for q in range(k):
                    src = i + q - half
                    if 0 <= src < t:
                        acc += x[src, j] * kernel[j, q]
                out[i, j] = acc
    return out_np


def _sample_values(real[:, :] x, real[:, :, :] offsets, Py_ssize_t k):
    # fractional gather: val[p, c, q] = lerp of x at p + q - k//2 + offset
    cdef Py_ssize_t t = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t og = offsets.shape[1]
    cdef Py_ssize_t cpg = c_in / og
    cdef Py_ssize_t p, c, q, fi
    cdef double s, frac
    cdef real vf, vc
    val_np = np.empty((t, c_in, k), dtype=np.asarray(x).dtype)
    cdef real[:, :, :] val = val_np
    with nogil:
        for p in range(t):
            for c in range(c_in):
                for q in range(k):
                    s = p + q - k // 2 + offsets[p, c / cpg, q]
                    fi = <Py_ssize_t> floor(s)
                    frac = s - floor(s)
                    vf = x[fi, c] if 0 <= fi < t else 0
                    vc = x[fi + 1, c] if 0 <= fi + 1 < t else 0
                    val[p, c, q] = <real> ((1 - frac) * vf + frac * vc)
    return val_np


def deform_conv1d_forward(real[:, :] x, real[:, :, :] kernel, real[:] bias,
                          real[:, :, :] offsets):
    cdef Py_ssize_t t = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t c_out = kernel.shape[0], cg = kernel.shape[1], k = kernel.shape[2]
    cdef Py_ssize_t g = c_in / cg
    val = _sample_values(x, offsets, k)
    # contraction is regular, leave it to BLAS
    kern_np = np.asarray(kernel)
    out = np.empty((t, c_out), dtype=np.asarray(x).dtype)
    opg = c_out // g
    for gi in range(g):
        vg = val[:, gi * cg:(gi + 1) * cg, :].reshape(t, cg * k)
        kg = kern_np[gi * opg:(gi + 1) * opg].reshape(opg, cg * k)
        out[:, gi * opg:(gi + 1) * opg] = vg @ kg.T
    out += np.asarray(bias)
    return out


def deform_conv1d_backward(real[:, :] x, real[:, :, :] kernel,
                           real[:, :, :] offsets, real[:, :] grad_out):
    cdef Py_ssize_t t = x.shape[0], c_in = x.shape[1]
    cdef Py_ssize_t c_out = kernel.shape[0], cg = kernel.shape[1], k = kernel.shape[2]
    cdef Py_ssize_t g = c_in / cg
    cdef Py_ssize_t opg = c_out / g
    cdef Py_ssize_t og = offsets.shape[1]
    cdef Py_ssize_t cpg = c_in / og
    cdef Py_ssize_t p, o, q, c, gi, fi, cc
    cdef double s, frac
    cdef real vf, vc, val, go, gv
    dtype = np.asarray(x).dtype
    gx_np = np.zeros((t, c_in), dtype=dtype)
    gk_np = np.zeros((c_out, cg, k), dtype=dtype)
    gb_np = np.zeros(c_out, dtype=dtype)
    goff_np = np.zeros((t, og, k), dtype=dtype)
    cdef real[:, :] gx = gx_np
    cdef real[:, :, :] gk = gk_np
    cdef real[:] gb = gb_np
    cdef real[:, :, :] goff = goff_np
    with nogil:
        for p in range(t):
            for o in range(c_out):
                gi = o / opg
                go = grad_out[p, o]
                gb[o] += go
                for q in range(k):
                    for c in range(cg):
                        cc = gi * cg + c
                        s = p + q - k // 2 + offsets[p, cc / cpg, q]
                        fi = <Py_ssize_t> floor(s)
                        frac = s - floor(s)
                        vf = x[fi, cc] if 0 <= fi < t else 0
                        vc = x[fi + 1, cc] if 0 <= fi + 1 < t else 0
                        val = <real> ((1 - frac) * vf + frac * vc)
                        gk[o, c, q] += go * val
                        gv = go * kernel[o, c, q]
                        if 0 <= fi < t:
                            gx[fi, cc] += <real> (gv * (1 - frac))
                        if 0 <= fi + 1 < t:
                            gx[fi + 1, cc] += <real> (gv * frac)
                        goff[p, cc / cpg, q] += gv * (vc - vf)
    return gx_np, gk_np, gb_np, goff_np
