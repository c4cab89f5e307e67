"""Invertible coupling blocks and their convolutional subnets.

Both block families split their state in two and update the halves
alternately, so inversion is closed-form for any finite weights:

    unconditional:  a' = a + phi(b);  b' = b * exp_b(rho(a')) + psi(a')
    conditional:    bottom' = bottom + phi(top, cond)
                    top'    = top * exp_b(rho(bottom', cond)) + psi(bottom', cond)

exp_b is the bounded exponential exp(2*tanh(.)), which keeps the
multiplicative branch numerically invertible no matter what the subnets
output. Every subnet ends in a zero-initialized projection, so a fresh
block is exactly the identity map.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Module,
    Tensor,
    add,
    concat_channels,
    conv2d,
    exp_bounded,
    leaky_relu,
    mul,
    neg,
    pool_avg,
    sub,
)

__all__ = [
    "EXP_BOUND",
    "DenseSubnet",
    "CondExtractor",
    "InvBlock",
    "CInvBlock",
    "cond_features",
]

EXP_BOUND = 2.0
LEAK = 0.2
GROWTH_LAYERS = 4  # plus the final projection: 5 convolutions total


def conv_params(c_out, c_in, k, rng, dtype, zero=False):
    """He-style normal kernel (or zeros) and a zero bias."""
    if zero:
        w = np.zeros((c_out, c_in, k, k), dtype=dtype)
    else:
        std = np.sqrt(2.0 / max(1, c_in * k * k))
        w = (rng.standard_normal((c_out, c_in, k, k)) * std).astype(dtype)
    b = np.zeros(c_out, dtype=dtype)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class DenseSubnet(Module):
    """Five 3x3 conv layers with concatenative skips.

    Four growth layers (leaky-rectified, width `growth`) feed a final
    projection whose weights start at zero, making the subnet the zero
    function at initialization.
    """

    def __init__(self, c_in, c_out, growth, rng, dtype=np.float32):
        self.weights = []
        self.biases = []
        c = c_in
        for _ in range(GROWTH_LAYERS):
            w, b = conv_params(growth, c, 3, rng, dtype)
            self.weights.append(w)
            self.biases.append(b)
            c += growth
        w, b = conv_params(c_out, c, 3, rng, dtype, zero=True)
        self.weights.append(w)
        self.biases.append(b)

    def __call__(self, x):
        feat = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            y = leaky_relu(conv2d(feat, w, b, pad=(1, 1)), LEAK)
            feat = concat_channels(feat, y)
        return conv2d(feat, self.weights[-1], self.biases[-1], pad=(1, 1))


class CondExtractor(Module):
    """Two 3x3 convs then average pooling down to the tile resolution."""

    def __init__(self, c_in, width, grid, rng, dtype=np.float32):
        self.grid = tuple(grid)
        self.w1, self.b1 = conv_params(width, c_in, 3, rng, dtype)
        self.w2, self.b2 = conv_params(width, width, 3, rng, dtype)

    def __call__(self, cover):
        h = leaky_relu(conv2d(cover, self.w1, self.b1, pad=(1, 1)), LEAK)
        h = conv2d(h, self.w2, self.b2, pad=(1, 1))
        return pool_avg(h, self.grid)


def cond_features(cover, extractor):
    """Condition map for the conditional blocks; shape (width, H/m, W/n)."""
    return extractor(cover)


class InvBlock(Module):
    """Unconditional coupling block over a (mosaic, cover) feature pair."""

    def __init__(self, c_ms, c_c, width, rng, dtype=np.float32):
        self.phi = DenseSubnet(c_c, c_ms, width, rng, dtype)
        self.rho = DenseSubnet(c_ms, c_c, width, rng, dtype)
        self.psi = DenseSubnet(c_ms, c_c, width, rng, dtype)

    def forward(self, f_ms, f_c):
        ms = add(f_ms, self.phi(f_c))
        c = add(mul(f_c, exp_bounded(self.rho(ms), EXP_BOUND)), self.psi(ms))
        return ms, c

    def reverse(self, f_ms, f_c):
        c = mul(sub(f_c, self.psi(f_ms)), exp_bounded(neg(self.rho(f_ms)), EXP_BOUND))
        ms = sub(f_ms, self.phi(c))
        return ms, c


class CInvBlock(Module):
    """Coupling block whose subnets also see cover-derived features.

    The condition is concatenated channel-wise onto each subnet input.
    A zero-channel top half (single-tile grids) degrades gracefully: the
    additive update on the bottom half then depends on the condition
    alone and the block stays invertible.
    """

    def __init__(self, c_top, c_bottom, c_cond, width, rng, dtype=np.float32):
        self.phi = DenseSubnet(c_top + c_cond, c_bottom, width, rng, dtype)
        self.rho = DenseSubnet(c_bottom + c_cond, c_top, width, rng, dtype)
        self.psi = DenseSubnet(c_bottom + c_cond, c_top, width, rng, dtype)

    def forward(self, f_top, f_bottom, cond):
        bottom = add(f_bottom, self.phi(concat_channels(f_top, cond)))
        u = concat_channels(bottom, cond)
        top = add(mul(f_top, exp_bounded(self.rho(u), EXP_BOUND)), self.psi(u))
        return top, bottom

    def reverse(self, f_top, f_bottom, cond):
        u = concat_channels(f_bottom, cond)
        top = mul(sub(f_top, self.psi(u)), exp_bounded(neg(self.rho(u)), EXP_BOUND))
        bottom = sub(f_bottom, self.phi(concat_channels(top, cond)))
        return top, bottom
