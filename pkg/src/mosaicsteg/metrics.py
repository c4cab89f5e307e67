"""Image quality metrics and the capacity-distortion evaluation.

All metrics operate on the 0..255 scale; tensors in [0, 1] are rescaled
internally. Capacity is the sum over secrets of histogram normalized
mutual information (256 intensity levels, per-channel joint histograms,
normalization 2*I / (H_a + H_b)); distortion is the cover/stego RMSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, DimensionError, Tensor

__all__ = [
    "rmse",
    "mae",
    "psnr",
    "ssim",
    "nmi",
    "cd_curve",
    "CDPoint",
]


def _as255(x):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    return arr.astype(np.float64) * 255.0


def _check_pair(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b):
    a, b = _check_pair(_as255(a), _as255(b))
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(a, b):
    a, b = _check_pair(_as255(a), _as255(b))
    return float(np.mean(np.abs(a - b)))


def psnr(a, b):
    """20*log10(255 / rmse); +inf for identical inputs."""
    r = rmse(a, b)
    if r == 0.0:
        return float("inf")
    return float(20.0 * np.log10(255.0 / r))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img, w):
    from numpy.lib.stride_tricks import sliding_window_view

    views = sliding_window_view(img, w.shape)  # (H', W', win, win)
    return np.einsum("hwij,ij->hw", views, w, optimize=True)


def ssim(a, b, k1=0.01, k2=0.03, sigma=1.5, win=11):
    """Mean structural similarity with an 11x11 Gaussian window."""
    a, b = _check_pair(_as255(a), _as255(b))
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise DimensionError(f"expected (C, H, W) images, got {a.shape}")
    if a.shape[-2] < win or a.shape[-1] < win:
        raise ContractError(f"images must be at least {win}x{win} for ssim")
    w = _gaussian_window(win, sigma)
    L = 255.0
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mx = _windowed_mean(x, w)
        my = _windowed_mean(y, w)
        mxx = _windowed_mean(x * x, w)
        myy = _windowed_mean(y * y, w)
        mxy = _windowed_mean(x * y, w)
        vx = mxx - mx * mx
        vy = myy - my * my
        cxy = mxy - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / \
            ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))


def _quantize_levels(x):
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    q = np.floor(np.clip(arr.astype(np.float64), 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.int64)


def _entropy(p):
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def nmi(a, b):
    """Normalized mutual information in [0, 1] over 256 intensity levels.

    Channels are scored independently and averaged. Identical channels
    score exactly 1; a constant channel paired with a non-constant one
    scores 0; two different constants score 0.
    """
    qa, qb = _quantize_levels(a), _quantize_levels(b)
    if qa.shape != qb.shape:
        raise DimensionError(f"shape mismatch: {qa.shape} vs {qb.shape}")
    if qa.ndim == 2:
        qa, qb = qa[None], qb[None]
    scores = []
    for ch in range(qa.shape[0]):
        xa, xb = qa[ch].ravel(), qb[ch].ravel()
        if np.array_equal(xa, xb):
            scores.append(1.0)
            continue
        n = xa.size
        joint = np.bincount(xa * 256 + xb, minlength=256 * 256).astype(np.float64)
        joint = joint.reshape(256, 256) / n
        pa = joint.sum(axis=1)
        pb = joint.sum(axis=0)
        ha, hb = _entropy(pa), _entropy(pb)
        if ha == 0.0 and hb == 0.0:
            scores.append(0.0)  # two distinct constants share no information
            continue
        if ha == 0.0 or hb == 0.0:
            scores.append(0.0)
            continue
        hab = _entropy(joint.ravel())
        mi = ha + hb - hab
        scores.append(float(np.clip(2.0 * mi / (ha + hb), 0.0, 1.0)))
    return float(np.mean(scores))


@dataclass
class CDPoint:
    distortion: float            # cover/stego RMSE on the 0..255 scale
    capacity: float              # sum over secrets of NMI
    n_secrets: int
    label: str = ""
    per_image_nmi: list = field(default_factory=list)


def _score_record(record):
    cover, stego, secrets, recovered = record
    if len(secrets) != len(recovered):
        raise ContractError("secrets and recovered lists differ in length")
    d = rmse(cover, stego)
    per = [nmi(s, r) for s, r in zip(secrets, recovered)]
    return len(secrets), d, per


def cd_curve(records, workers=1):
    """Aggregate (cover, stego, secrets, recovered) records per N.

    Returns one CDPoint per distinct secret count, sorted by distortion.
    Records are independent; workers > 1 scores them in a thread pool.
    """
    if not records:
        raise ContractError("cd_curve needs at least one record")
    if workers > 1 and len(records) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            scored = list(pool.map(_score_record, records))
    else:
        scored = [_score_record(r) for r in records]
    groups = {}
    for n, d, per in scored:
        groups.setdefault(n, []).append((d, per))
    points = []
    for n, rows in groups.items():
        dmean = float(np.mean([d for d, _ in rows]))
        per_mean = np.mean(np.array([per for _, per in rows]), axis=0)
        points.append(CDPoint(
            distortion=dmean,
            capacity=float(per_mean.sum()),
            n_secrets=n,
            label=f"N={n}",
            per_image_nmi=[float(v) for v in per_mean],
        ))
    points.sort(key=lambda p: p.distortion)
    return points
