"""Loss functions, the optimizer loop and the learning-rate schedule.

Losses are sums over pixels within an item and means over the batch.
The recovery pass during training consumes a freshly sampled substitute
variable, so the network learns to reconstruct secrets without the
residual stream it will not have at deployment time.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import (
    AdamState,
    ContractError,
    Tape,
    Tensor,
    abs_val,
    adam_step,
    add,
    mul,
    pool_avg,
    scale,
    sub,
    sum_all,
)
from .pipeline import SmileNet, hide, reveal_full, sample_z

__all__ = [
    "LossWeights",
    "TrainConfig",
    "loss_sec",
    "loss_hide",
    "loss_aux",
    "loss_total",
    "train_step",
    "train",
    "lr_at",
    "TrainDiagnostics",
]

GRAD_CLIP_NORM = 10.0


@dataclass(frozen=True)
class LossWeights:
    lam_h: float = 10.0
    lam_hl: float = 1.0
    lam_ms: float = 8.0
    lam_rc: float = 3.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"{f.name} must be non-negative")


@dataclass
class TrainConfig:
    """Run settings; defaults follow the reference recipe, desk-scale
    runs override patch/width/iters freely."""

    n_secrets: int = 4
    patch: int = 144
    width: int = 32
    r_blocks: int = 8
    g_blocks: int = 16
    sis_layers: int = 2
    batch: int = 1
    lr: float = 10.0 ** -4.5
    iters: int = 1000
    lr_half_every: int = 100_000
    seed: int = 0
    lam_h: float = 10.0
    lam_hl: float = 1.0
    lam_ms: float = 8.0
    lam_rc: float = 3.0
    data_dir: str = ""
    out_dir: str = "out"

    def loss_weights(self):
        return LossWeights(self.lam_h, self.lam_hl, self.lam_ms, self.lam_rc)

    def validate(self):
        from .mosaic import grid_shape

        layout = grid_shape(self.n_secrets)
        m, n = layout.grid
        if self.patch % (2 * m) or self.patch % (2 * n):
            raise ContractError(
                f"patch {self.patch} must be divisible by {2 * m} and {2 * n}")
        return layout


def _sq_norm(t):
    return sum_all(mul(t, t))


def loss_sec(secrets, recovered):
    """Sum of elementwise L1 distances over all secret/recovery pairs."""
    if len(secrets) != len(recovered):
        raise ContractError("secret and recovery lists differ in length")
    total = None
    for s, r in zip(secrets, recovered):
        term = sum_all(abs_val(sub(s, r)))
        total = term if total is None else add(total, term)
    if total is None:
        raise ContractError("empty secret list")
    return total


def loss_hide(cover, stego, weights=LossWeights()):
    """Squared error between cover and stego, with an extra penalty on
    the low-frequency band (the 2x2 mean, which equals half the coarse
    wavelet coefficient, carries most of the perceived difference)."""
    if cover.shape != stego.shape:
        raise ContractError("cover and stego must share a shape")
    d = sub(cover, stego)
    spatial = scale(_sq_norm(d), weights.lam_h)
    # LL coefficient of the orthonormal 2x2 transform == 2 * block mean
    ll = scale(pool_avg(d, (2, 2)), 2.0)
    return add(spatial, scale(_sq_norm(ll), weights.lam_hl))


def loss_aux(msr, msr_hat, cover, cover_hat, weights=LossWeights()):
    """Squared recovery error of the mosaic and of the cover."""
    if msr.shape != msr_hat.shape or cover.shape != cover_hat.shape:
        raise ContractError("auxiliary loss operands must match in shape")
    return add(scale(_sq_norm(sub(msr, msr_hat)), weights.lam_ms),
               scale(_sq_norm(sub(cover, cover_hat)), weights.lam_rc))


def loss_total(l_sec, l_hide, l_aux):
    return add(add(l_sec, l_hide), l_aux)


def lr_at(iteration, base_lr, half_every):
    return base_lr * 0.5 ** (iteration // half_every)


@dataclass
class TrainDiagnostics:
    iteration: int
    lr: float
    l_sec: float
    l_hide: float
    l_aux: float
    total: float


def _clip_grads(grads, max_norm):
    total = math.fsum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        grads = [g * factor for g in grads]
    return grads, norm


def train_step(net, batch, state, weights, rng, iteration=0):
    """One hide -> reveal -> loss -> update cycle over a batch.

    batch items are (cover, [secrets]) tensor pairs. Returns the loss
    components averaged over the batch.
    """
    params = net.parameters()
    net.zero_grad()
    comp = {"sec": 0.0, "hide": 0.0, "aux": 0.0}
    with Tape() as tape:
        total = None
        for cover, secrets in batch:
            out = hide(cover, secrets, net, mode="train", rng=rng)
            z = sample_z(out.msr.shape, rng, dtype=net.dtype)
            rec = reveal_full(out.stego, z, net)
            l_s = loss_sec(secrets, rec.secrets)
            l_h = loss_hide(cover, out.stego_raw, weights)
            l_a = loss_aux(out.msr, rec.msr_hat, cover, rec.cover_hat, weights)
            item = loss_total(l_s, l_h, l_a)
            comp["sec"] += l_s.item()
            comp["hide"] += l_h.item()
            comp["aux"] += l_a.item()
            total = item if total is None else add(total, item)
        total = scale(total, 1.0 / len(batch))
        loss_val = total.item()
        if not math.isfinite(loss_val):
            raise RuntimeError(_nan_report(net, comp, len(batch)))
        tape.backward(total)

    grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
    grads, _ = _clip_grads(grads, GRAD_CLIP_NORM)
    adam_step(params, grads, state)
    k = len(batch)
    return TrainDiagnostics(
        iteration=iteration, lr=state.lr,
        l_sec=comp["sec"] / k, l_hide=comp["hide"] / k,
        l_aux=comp["aux"] / k, total=loss_val,
    )


def _nan_report(net, comp, k):
    norms = {name: float(np.linalg.norm(p.data)) for name, p in net.named_parameters()}
    worst = sorted(norms.items(), key=lambda kv: -kv[1])[:5]
    return ("non-finite loss; components per item: "
            f"sec={comp['sec'] / k:.4g} hide={comp['hide'] / k:.4g} "
            f"aux={comp['aux'] / k:.4g}; largest weight norms: "
            + ", ".join(f"{n}={v:.3g}" for n, v in worst))


def _sample_batch(dataset, cfg, rng):
    """Random covers/secrets with random crops to the patch size."""
    batch = []
    for _ in range(cfg.batch):
        idxs = rng.integers(0, len(dataset), size=cfg.n_secrets + 1)
        imgs = []
        for i in idxs:
            img = dataset[i]
            _, h, w = img.shape
            if h < cfg.patch or w < cfg.patch:
                raise ContractError(
                    f"image {h}x{w} smaller than patch {cfg.patch}")
            r = int(rng.integers(0, h - cfg.patch + 1))
            c = int(rng.integers(0, w - cfg.patch + 1))
            imgs.append(Tensor(
                img[:, r:r + cfg.patch, c:c + cfg.patch].astype(np.float32)))
        batch.append((imgs[0], imgs[1:]))
    return batch


def train(cfg, dataset=None, log_path=None, ckpt_every=None, on_iteration=None):
    """Full training run; returns (net, history list of TrainDiagnostics).

    dataset: list of (C, H, W) float arrays in [0, 1]. When omitted it is
    loaded from cfg.data_dir. Writes a CSV log and periodic checkpoints
    under cfg.out_dir unless log_path is explicitly set elsewhere.
    """
    cfg.validate()
    if dataset is None:
        dataset = _load_dataset(cfg.data_dir)
    if not dataset:
        raise ContractError("training dataset is empty")

    net = SmileNet(cfg.n_secrets, in_channels=3, width=cfg.width,
                   r_blocks=cfg.r_blocks, g_blocks=cfg.g_blocks,
                   sis_layers=cfg.sis_layers, seed=cfg.seed)
    state = AdamState(net.parameters(), lr=cfg.lr)
    weights = cfg.loss_weights()
    rng = np.random.default_rng(cfg.seed)

    os.makedirs(cfg.out_dir, exist_ok=True)
    if log_path is None:
        log_path = os.path.join(cfg.out_dir, "train_log.csv")
    if ckpt_every is None:
        ckpt_every = max(1, cfg.iters // 5)

    from .checkpoint import save_checkpoint

    history = []
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "lr", "loss_sec", "loss_hide", "loss_aux", "total"])
        for it in range(cfg.iters):
            state.lr = lr_at(it, cfg.lr, cfg.lr_half_every)
            batch = _sample_batch(dataset, cfg, rng)
            diag = train_step(net, batch, state, weights, rng, iteration=it)
            history.append(diag)
            writer.writerow([it, f"{diag.lr:.8g}", f"{diag.l_sec:.8g}",
                             f"{diag.l_hide:.8g}", f"{diag.l_aux:.8g}",
                             f"{diag.total:.8g}"])
            if on_iteration is not None:
                on_iteration(diag)
            if (it + 1) % ckpt_every == 0:
                save_checkpoint(
                    os.path.join(cfg.out_dir, f"model_{it + 1:07d}.ckpt"), net,
                    seed=cfg.seed, iteration=it + 1)
    save_checkpoint(os.path.join(cfg.out_dir, "model_final.ckpt"), net,
                    seed=cfg.seed, iteration=cfg.iters)
    return net, history


def _load_dataset(data_dir):
    from .imgio import load_image

    if not data_dir or not os.path.isdir(data_dir):
        raise ContractError(f"data_dir {data_dir!r} is not a directory")
    paths = sorted(
        os.path.join(data_dir, f) for f in os.listdir(data_dir)
        if f.lower().endswith((".png", ".ppm")))
    if not paths:
        raise ContractError(f"no .png/.ppm images found in {data_dir!r}")
    return [load_image(p).data for p in paths]
