"""Invertible strided convolution built from a Cayley-parameterized kernel.

A learnable square matrix T yields a skew-symmetric A = T - T^t and the
orthogonal kernel K = (I - A)(I + A)^{-1}, which always lands in the
special orthogonal group. `decompose` flattens every non-overlapping
m x n patch of each image channel (row-major) into a length-mn vector,
multiplies by K and emits the mn coefficients as channels; `recompose`
applies K^t and undoes the rearrangement, so the pair is exactly
mutually inverse for any finite parameters.

Output channel layout is coefficient-major: channel j*C + c holds patch
coefficient j of source channel c, so the last C channels form the
"bottom" group used by the conditional coupling split.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DimensionError, Tensor, record_op

__all__ = ["cayley", "decompose", "recompose"]


def cayley(theta):
    """Map an unconstrained square matrix to a special orthogonal one.

    Solved as K (I + A) = I - A with partial-pivot LU in float64;
    the backward pass differentiates through the solve implicitly.
    """
    td = theta.data.astype(np.float64)
    if td.ndim != 2 or td.shape[0] != td.shape[1]:
        raise DimensionError(f"expected a square matrix, got {theta.shape}")
    a = td - td.T
    n = td.shape[0]
    eye = np.eye(n)
    ipa = eye + a
    k64 = np.linalg.solve(ipa.T, (eye - a).T).T
    out = Tensor(k64.astype(theta.data.dtype))

    def bwd(g):
        g64 = g.astype(np.float64)
        # dK = -(I + K) dA (I + A)^{-1}  =>  dL/dA = -(I + K)^t G M^t
        gmt = np.linalg.solve(ipa, g64.T).T
        p = -(eye + k64).T @ gmt
        gt = p - p.T
        return (gt.astype(theta.data.dtype),)

    return record_op(out, [theta], bwd)


def _to_patch_vectors(xd, m, n):
    """(B, C, H, W) -> (B, C, mn, H/m, W/n); vector index is row-major."""
    B, C, H, W = xd.shape
    hm, wn = H // m, W // n
    v = xd.reshape(B, C, hm, m, wn, n)
    v = v.transpose(0, 1, 3, 5, 2, 4)
    return np.ascontiguousarray(v).reshape(B, C, m * n, hm, wn)


def _from_patch_vectors(v, m, n):
    """Inverse of _to_patch_vectors."""
    B, C, mn, hm, wn = v.shape
    u = v.reshape(B, C, m, n, hm, wn).transpose(0, 1, 4, 2, 5, 3)
    return np.ascontiguousarray(u).reshape(B, C, hm * m, wn * n)


def _mix(v, q):
    # v: (B, C, mn, h, w), q: (mn, mn); result r[p] = sum_j q[p, j] v[j]
    return np.einsum("pj,bcjhw->bcphw", q, v, optimize=True)


def _decompose_array(xd, q, m, n):
    v = _to_patch_vectors(xd, m, n)
    u = _mix(v, q)
    B, C, mn, hm, wn = u.shape
    # coefficient-major channel order
    return np.ascontiguousarray(u.transpose(0, 2, 1, 3, 4)).reshape(B, mn * C, hm, wn), v


def _recompose_array(fd, q, m, n, C):
    B, mnC, hm, wn = fd.shape
    mn = m * n
    u = fd.reshape(B, mn, C, hm, wn).transpose(0, 2, 1, 3, 4)
    v = _mix(u, q.T)
    return _from_patch_vectors(v, m, n), u


def decompose(x, kernel, grid):
    """Bijective patch-flattening convolution: (C, H, W) -> (mnC, H/m, W/n).

    Accepts a leading batch axis. W and H must be divisible by the grid.
    """
    m, n = grid
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"decompose input must be 3-D or 4-D, got {x.shape}")
    B, C, H, W = xd.shape
    if H % m or W % n:
        raise DimensionError(f"spatial dims {H}x{W} not divisible by grid {m}x{n}")
    mn = m * n
    if kernel.data.shape != (mn, mn):
        raise DimensionError(f"kernel must be {mn}x{mn}, got {kernel.shape}")
    q = kernel.data
    out_d, v = _decompose_array(xd, q, m, n)
    out = Tensor(out_d[0] if squeeze else out_d)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gu = g4.reshape(B, mn, C, H // m, W // n).transpose(0, 2, 1, 3, 4)
        gx = _from_patch_vectors(_mix(gu, q.T), m, n)
        gq = np.einsum("bcphw,bcjhw->pj", gu, v, optimize=True)
        return (gx[0] if squeeze else gx), gq

    return record_op(out, [x, kernel], bwd)


def recompose(f, kernel, grid):
    """Exact inverse of decompose: (mnC, h, w) -> (C, m*h, n*w)."""
    m, n = grid
    squeeze = f.data.ndim == 3
    fd = f.data[None] if squeeze else f.data
    if fd.ndim != 4:
        raise DimensionError(f"recompose input must be 3-D or 4-D, got {f.shape}")
    mn = m * n
    B, mnC, hm, wn = fd.shape
    if mnC % mn:
        raise DimensionError(f"channel count {mnC} not divisible by grid size {mn}")
    C = mnC // mn
    if kernel.data.shape != (mn, mn):
        raise DimensionError(f"kernel must be {mn}x{mn}, got {kernel.shape}")
    q = kernel.data
    out_d, u = _recompose_array(fd, q, m, n, C)
    out = Tensor(out_d[0] if squeeze else out_d)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gv = _to_patch_vectors(g4, m, n)
        gf_u = _mix(gv, q)
        gf = np.ascontiguousarray(gf_u.transpose(0, 2, 1, 3, 4)).reshape(B, mnC, hm, wn)
        gq = np.einsum("bcphw,bcjhw->pj", u, gv, optimize=True)
        return (gf[0] if squeeze else gf), gq

    return record_op(out, [f, kernel], bwd)
