"""Single-level 2-D Haar transform with orthonormal scaling.

Each 2x2 block [a b; c d] maps to four coefficients
    LL = (a+b+c+d)/2   LH = (a+b-c-d)/2
    HL = (a-b+c-d)/2   HH = (a-b-c+d)/2
which is an orthonormal change of basis, so the inverse is the transpose
of the same map and energy is preserved exactly. Subbands are stored
channel-interleaved: source channel c occupies output channels
4c..4c+3 in (LL, LH, HL, HH) order.
"""

from __future__ import annotations

import numpy as np

from .autodiff import DimensionError, Tensor, record_op

__all__ = ["dwt_haar", "idwt_haar"]


def _dwt_array(xd):
    a = xd[..., 0::2, 0::2]
    b = xd[..., 0::2, 1::2]
    c = xd[..., 1::2, 0::2]
    d = xd[..., 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a + b - c - d) * 0.5
    hl = (a - b + c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    sub = np.stack([ll, lh, hl, hh], axis=-3)  # (..., C, 4, H/2, W/2)
    shp = list(xd.shape)
    shp[-3] *= 4
    shp[-2] //= 2
    shp[-1] //= 2
    # contiguous reshape interleaves: output channel index is 4c + subband
    return np.ascontiguousarray(sub).reshape(shp)


def dwt_haar(x):
    """Forward Haar transform: (..., C, H, W) -> (..., 4C, H/2, W/2)."""
    if x.data.ndim < 3:
        raise DimensionError(f"expected at least 3 dims (C, H, W), got {x.shape}")
    H, W = x.shape[-2:]
    if H % 2 or W % 2:
        raise DimensionError(f"spatial dims must be even, got {H}x{W}")
    out = Tensor(_dwt_array(x.data))
    # orthonormal linear map: the adjoint equals the inverse
    return record_op(out, [x], lambda g: (_idwt_array(g),))


def _idwt_array(sd):
    shp = list(sd.shape)
    C = shp[-3] // 4
    h, w = shp[-2], shp[-1]
    sub = sd.reshape(shp[:-3] + [C, 4, h, w])
    ll = sub[..., 0, :, :]
    lh = sub[..., 1, :, :]
    hl = sub[..., 2, :, :]
    hh = sub[..., 3, :, :]
    out = np.empty(shp[:-3] + [C, 2 * h, 2 * w], dtype=sd.dtype)
    out[..., 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[..., 0::2, 1::2] = (ll + lh - hl - hh) * 0.5
    out[..., 1::2, 0::2] = (ll - lh + hl - hh) * 0.5
    out[..., 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def idwt_haar(s):
    """Inverse Haar transform: (..., 4C, h, w) -> (..., C, 2h, 2w)."""
    if s.data.ndim < 3:
        raise DimensionError(f"expected at least 3 dims, got {s.shape}")
    if s.shape[-3] % 4:
        raise DimensionError(f"channel count {s.shape[-3]} not divisible by 4")
    out = Tensor(_idwt_array(s.data))
    return record_op(out, [s], lambda g: (_dwt_array(g),))
