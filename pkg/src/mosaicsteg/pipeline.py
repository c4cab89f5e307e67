"""End-to-end hide and reveal pipeline.

Hiding: each secret is refined by the selection module, transformed by
the cover-conditioned blocks at reduced resolution, spliced into a
mosaic the size of the cover, and embedded into the cover's wavelet
representation by the unconditional blocks. The wavelet-domain cover
stream becomes the stego image (quantized); the mosaic stream's residual
is discarded at deployment and replaced by a sampled variable on the
receiving side.

Revealing runs the exact algebraic inverses in the opposite order,
conditioned on the recovered cover, and finishes with the detail
enhancement module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    ContractError,
    DimensionError,
    Module,
    Tensor,
    add,
    channel_slice,
    clamp_ste,
    concat_channels,
    conv2d,
    expand_leading,
    leaky_relu,
    stack_leading,
    take_leading,
)
from .coupling import LEAK, CInvBlock, CondExtractor, InvBlock, conv_params
from .mosaic import grid_shape, splice, split
from .orthoconv import cayley, decompose, recompose
from .wavelet import dwt_haar, idwt_haar

__all__ = [
    "SISModule",
    "SDEModule",
    "SmileNet",
    "StegoOutput",
    "RevealOutput",
    "hide",
    "reveal",
    "reveal_full",
    "quantize",
    "sample_z",
]


class _ResidualConv(Module):
    """Stack of 3x3 convs with a residual connection; identity at init."""

    def __init__(self, channels, width, layers, rng, dtype=np.float32):
        if layers < 1:
            raise ContractError("need at least one layer")
        self.weights = []
        self.biases = []
        c = channels
        for _ in range(layers - 1):
            w, b = conv_params(width, c, 3, rng, dtype)
            self.weights.append(w)
            self.biases.append(b)
            c = width
        w, b = conv_params(channels, c, 3, rng, dtype, zero=True)
        self.weights.append(w)
        self.biases.append(b)

    def __call__(self, x):
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = leaky_relu(conv2d(h, w, b, pad=(1, 1)), LEAK)
        return add(x, conv2d(h, self.weights[-1], self.biases[-1], pad=(1, 1)))


class SISModule(_ResidualConv):
    """Selects the essential secret content before hiding."""


class SDEModule(_ResidualConv):
    """Restores fine detail after recovery; mirrors SISModule in shape."""


class SmileNet(Module):
    """All learnable state of the hiding network, wired consistently.

    width is the growth width of every dense subnet and of the
    selection/enhancement/condition convolutions; r_blocks conditional
    and g_blocks unconditional coupling blocks.
    """

    def __init__(self, n_secrets, in_channels=3, width=32, r_blocks=8,
                 g_blocks=16, sis_layers=2, seed=0, dtype=np.float32):
        self.layout = grid_shape(n_secrets)
        self.n_secrets = n_secrets
        self.in_channels = in_channels
        self.width = width
        self.r_blocks = r_blocks
        self.g_blocks = g_blocks
        self.sis_layers = sis_layers
        self.seed = seed
        self.dtype = np.dtype(dtype).type

        m, n = self.layout.grid
        mn = m * n
        k = in_channels
        self.dec_channels = mn * k          # per-tile channels after decomposition
        self.top_channels = (mn - 1) * k
        self.bottom_channels = k

        rng = np.random.default_rng(seed)
        dt = self.dtype
        self.sis = SISModule(k, width, sis_layers, rng, dt)
        self.sde = SDEModule(k, width, sis_layers, rng, dt)
        self.cond = CondExtractor(k, width, (m, n), rng, dt)
        self.theta = Tensor(np.zeros((mn, mn), dtype=dt), requires_grad=True)
        self.cinv_blocks = [
            CInvBlock(self.top_channels, self.bottom_channels, width, width, rng, dt)
            for _ in range(r_blocks)
        ]
        self.inv_blocks = [
            InvBlock(4 * self.dec_channels, 4 * k, width, rng, dt)
            for _ in range(g_blocks)
        ]

    def kernel(self):
        return cayley(self.theta)

    def randomize(self, rng, scale=0.05):
        """Overwrite every parameter with fan-in-scaled noise.

        Used by round-trip tests that need genuinely non-identity blocks;
        the scaling keeps activations O(1) regardless of width so the
        algebraic inverses stay well inside float range.
        """
        for _, p in self.named_parameters():
            if p.data.ndim == 4:
                fan_in = max(1, p.data.shape[1] * p.data.shape[2] * p.data.shape[3])
                std = scale * np.sqrt(2.0 / fan_in)
            elif p.data.ndim == 2:
                std = scale
            else:
                std = scale * 0.1
            p.data = (rng.standard_normal(p.data.shape) * std).astype(p.data.dtype)

    def check_image(self, t):
        if t.data.ndim != 3:
            raise DimensionError(f"expected a (C, H, W) image, got {t.shape}")
        k, h, w = t.shape
        if k != self.in_channels:
            raise DimensionError(f"expected {self.in_channels} channels, got {k}")
        m, n = self.layout.grid
        if h % (2 * m) or w % (2 * n):
            raise DimensionError(
                f"image dims {h}x{w} must be divisible by {2 * m}x{2 * n}")
        return k, h, w

    def msr_shape(self, image_shape):
        _, h, w = image_shape
        return (self.dec_channels, h, w)


@dataclass
class StegoOutput:
    stego: Tensor        # quantized carrier image
    r_h: Tensor          # discarded residual of the embedding stream
    msr: Tensor          # mosaic secret representation (training target)
    stego_raw: Tensor    # pre-quantization stego, used by the hiding loss


@dataclass
class RevealOutput:
    cover_hat: Tensor
    secrets: list          # detail-enhanced recoveries
    secrets_coarse: list   # pre-enhancement recoveries (oracle target)
    msr_hat: Tensor


def quantize(x, mode, rng=None):
    """Simulate 8-bit storage of an image in [0, 1].

    eval: clamp then round half away from zero on the 0..255 grid.
    train: clamp plus uniform noise of half a quantization step, with a
    straight-through gradient that is zero outside [0, 1].
    """
    if mode == "eval":
        q = np.floor(np.clip(x.data.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5) / 255.0
        return Tensor(q.astype(x.data.dtype))
    if mode == "train":
        if rng is None:
            raise ContractError("train-mode quantization needs an rng")
        y = clamp_ste(x, 0.0, 1.0)
        noise = rng.uniform(-1.0 / 510.0, 1.0 / 510.0, size=x.shape)
        return add(y, Tensor(noise.astype(x.data.dtype)))
    raise ContractError(f"unknown quantization mode {mode!r}")


def sample_z(shape, seed, dtype=np.float32):
    """Standard-normal substitute for the discarded residual."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape).astype(dtype))


def _split_top_bottom(net, feats):
    ch = feats.shape[0 if feats.data.ndim == 3 else 1]
    if net.top_channels == 0:
        return channel_slice(feats, 0, 0), feats
    return (channel_slice(feats, 0, net.top_channels),
            channel_slice(feats, net.top_channels, ch))


def hide(cover, secrets, net, mode="eval", rng=None):
    """Embed N secret images into one cover; returns the stego bundle."""
    net.check_image(cover)
    if len(secrets) != net.n_secrets:
        raise ContractError(
            f"network hides {net.n_secrets} secrets, got {len(secrets)}")
    for s in secrets:
        if s.shape != cover.shape:
            raise DimensionError("cover and secrets must share one shape")

    m, n = net.layout.grid
    kernel = net.kernel()
    xs = stack_leading(secrets)
    xs = net.sis(xs)

    cond = expand_leading(net.cond(cover), net.n_secrets)
    feats = decompose(xs, kernel, (m, n))
    f_top, f_bottom = _split_top_bottom(net, feats)
    for block in net.cinv_blocks:
        f_top, f_bottom = block.forward(f_top, f_bottom, cond)
    feats = concat_channels(f_top, f_bottom)

    tiles = [take_leading(feats, i) for i in range(net.n_secrets)]
    msr = splice(tiles, net.layout)

    f_ms = dwt_haar(msr)
    f_c = dwt_haar(cover)
    for block in net.inv_blocks:
        f_ms, f_c = block.forward(f_ms, f_c)

    stego_raw = idwt_haar(f_c)
    r_h = idwt_haar(f_ms)
    stego = quantize(stego_raw, mode, rng)
    return StegoOutput(stego=stego, r_h=r_h, msr=msr, stego_raw=stego_raw)


def reveal_full(stego, z, net):
    """Invert the embedding; returns cover, secrets and the mosaic."""
    net.check_image(stego)
    expect = net.msr_shape(stego.shape)
    if tuple(z.shape) != expect:
        raise DimensionError(f"z must have shape {expect}, got {tuple(z.shape)}")

    m, n = net.layout.grid
    f_ms = dwt_haar(z)
    f_c = dwt_haar(stego)
    for block in reversed(net.inv_blocks):
        f_ms, f_c = block.reverse(f_ms, f_c)

    msr_hat = idwt_haar(f_ms)
    cover_hat = idwt_haar(f_c)

    tiles = split(msr_hat, net.layout)
    feats = stack_leading(tiles)
    cond = expand_leading(net.cond(cover_hat), net.n_secrets)
    f_top, f_bottom = _split_top_bottom(net, feats)
    for block in reversed(net.cinv_blocks):
        f_top, f_bottom = block.reverse(f_top, f_bottom, cond)
    feats = concat_channels(f_top, f_bottom)

    kernel = net.kernel()
    coarse = recompose(feats, kernel, (m, n))
    refined = net.sde(coarse)
    secrets = [take_leading(refined, i) for i in range(net.n_secrets)]
    secrets_coarse = [take_leading(coarse, i) for i in range(net.n_secrets)]
    return RevealOutput(cover_hat=cover_hat, secrets=secrets,
                        secrets_coarse=secrets_coarse, msr_hat=msr_hat)


def reveal(stego, z, net):
    """Recover (cover_hat, [secret_hat...]) from a stego image."""
    out = reveal_full(stego, z, net)
    return out.cover_hat, out.secrets
