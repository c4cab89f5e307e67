"""Grid-shape selection and the bijective tile splice/split.

N per-secret feature maps are placed row-major on an m x n grid to form
one mosaic the size of the cover. Composite N factors as m*n with
|m - n| minimal (ties broken m <= n); prime N is padded up to the
nearest larger composite with all-zero tiles, which the split simply
discards on the way back.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError, DimensionError, Tensor, record_op

__all__ = ["MosaicLayout", "grid_shape", "splice", "split"]


@dataclass(frozen=True)
class MosaicLayout:
    n_secrets: int
    rows: int
    cols: int
    pad_count: int

    @property
    def grid(self):
        return (self.rows, self.cols)

    @property
    def cells(self):
        return self.rows * self.cols


def _is_composite(n):
    if n < 4:
        return False
    return any(n % d == 0 for d in range(2, int(n ** 0.5) + 1))


def _balanced_factors(n):
    """Factor pair (m, n) with minimal |m - n| and m <= n."""
    m = int(n ** 0.5)
    while n % m:
        m -= 1
    return m, n // m


def grid_shape(n_secrets):
    """Choose the mosaic grid for a given secret count."""
    if n_secrets < 1:
        raise ContractError(f"secret count must be positive, got {n_secrets}")
    if n_secrets == 1:
        return MosaicLayout(1, 1, 1, 0)
    if _is_composite(n_secrets):
        m, n = _balanced_factors(n_secrets)
        return MosaicLayout(n_secrets, m, n, 0)
    cells = n_secrets + 1
    while not _is_composite(cells):
        cells += 1
    m, n = _balanced_factors(cells)
    return MosaicLayout(n_secrets, m, n, cells - n_secrets)


def splice(tiles, layout):
    """Arrange N tiles (plus zero padding) into one mosaic tensor.

    Tile i lands at grid cell (i // cols, i % cols). All tiles must share
    one (C, H_t, W_t) shape; the result is (C, rows*H_t, cols*W_t).
    """
    if len(tiles) != layout.n_secrets:
        raise ContractError(
            f"expected {layout.n_secrets} tiles, got {len(tiles)}")
    shp = tiles[0].shape
    if len(shp) != 3:
        raise DimensionError(f"tiles must be 3-D (C, H, W), got {shp}")
    for t in tiles:
        if t.shape != shp:
            raise DimensionError("all tiles must share one shape")
    c, th, tw = shp
    rows, cols = layout.grid
    out_d = np.zeros((c, rows * th, cols * tw), dtype=tiles[0].data.dtype)
    slices = []
    for i, t in enumerate(tiles):
        r, q = divmod(i, cols)
        sl = (slice(None), slice(r * th, (r + 1) * th), slice(q * tw, (q + 1) * tw))
        out_d[sl] = t.data
        slices.append(sl)
    out = Tensor(out_d)
    return record_op(out, list(tiles), lambda g: tuple(g[sl] for sl in slices))


def split(msr, layout):
    """Recover the N tiles from a mosaic; padding cells are dropped."""
    if msr.data.ndim != 3:
        raise DimensionError(f"mosaic must be 3-D, got {msr.shape}")
    c, h, w = msr.shape
    rows, cols = layout.grid
    if h % rows or w % cols:
        raise DimensionError(
            f"mosaic dims {h}x{w} not divisible by grid {rows}x{cols}")
    th, tw = h // rows, w // cols
    tiles = []
    for i in range(layout.n_secrets):
        r, q = divmod(i, cols)
        tiles.append(_tile_slice(msr, r * th, q * tw, th, tw))
    return tiles


def _tile_slice(msr, r0, c0, th, tw):
    sl = (slice(None), slice(r0, r0 + th), slice(c0, c0 + tw))
    out = Tensor(msr.data[sl].copy())
    shp, dt = msr.shape, msr.data.dtype

    def bwd(g):
        full = np.zeros(shp, dtype=dt)
        full[sl] = g
        return (full,)

    return record_op(out, [msr], bwd)
