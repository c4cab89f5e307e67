"""Runnable invariant suite behind the `selftest` subcommand.

Each property is a small self-contained check that raises AssertionError
on violation. The suite favors breadth over depth so a full run stays
well under a minute on one core; the pytest suite covers the same ground
more exhaustively.
"""

from __future__ import annotations

import io
import os
import tempfile

import numpy as np

from . import metrics, mosaic, orthoconv, training, wavelet
from .autodiff import (
    AdamState,
    Tensor,
    adam_step,
    concat_channels,
    conv2d,
    exp_bounded,
    gradcheck,
    split_channels,
    sum_all,
)
from .coupling import CInvBlock, InvBlock
from .pipeline import SmileNet, hide, reveal_full, sample_z

__all__ = ["run", "CHECKS"]


def _rand(rng, shape, dtype=np.float32):
    return Tensor(rng.standard_normal(shape).astype(dtype))


def check_haar_roundtrip():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = Tensor(rng.random((3, 8, 8)).astype(np.float32))
        s = wavelet.dwt_haar(x)
        back = wavelet.idwt_haar(s)
        assert np.max(np.abs(back.data - x.data)) < 1e-6
        na = np.linalg.norm(x.data.astype(np.float64))
        nb = np.linalg.norm(s.data.astype(np.float64))
        assert abs(na - nb) < 1e-5
        y = wavelet.idwt_haar(Tensor(rng.random((8, 4, 4)).astype(np.float32)))
        again = wavelet.dwt_haar(y)
        assert np.max(np.abs(wavelet.idwt_haar(again).data - y.data)) < 1e-6


def check_haar_linearity():
    rng = np.random.default_rng(8)
    x, y = _rand(rng, (2, 6, 6), np.float64), _rand(rng, (2, 6, 6), np.float64)
    lhs = wavelet.dwt_haar(Tensor(1.7 * x.data - 0.3 * y.data, dtype=np.float64))
    rhs = 1.7 * wavelet.dwt_haar(x).data - 0.3 * wavelet.dwt_haar(y).data
    assert np.max(np.abs(lhs.data - rhs)) < 1e-6


def check_cayley_orthogonal():
    rng = np.random.default_rng(9)
    for mn in (2, 4, 9, 16, 25):
        theta = _rand(rng, (mn, mn), np.float64)
        k = orthoconv.cayley(theta).data
        assert np.max(np.abs(k.T @ k - np.eye(mn))) < 1e-5
        assert abs(np.linalg.det(k) - 1.0) < 1e-4


def check_decompose_roundtrip():
    rng = np.random.default_rng(10)
    for grid in ((2, 2), (3, 3), (1, 1)):
        m, n = grid
        theta = _rand(rng, (m * n, m * n))
        k = orthoconv.cayley(theta)
        x = Tensor(rng.random((3, 6 * m, 6 * n)).astype(np.float32))
        f = orthoconv.decompose(x, k, grid)
        back = orthoconv.recompose(f, k, grid)
        assert np.max(np.abs(back.data - x.data)) < 1e-6
        na = np.linalg.norm(x.data.astype(np.float64))
        nb = np.linalg.norm(f.data.astype(np.float64))
        assert abs(na - nb) < 1e-5


def check_mosaic_grid_rule():
    expected = {1: (1, 1), 4: (2, 2), 7: (2, 4), 9: (3, 3), 12: (3, 4),
                16: (4, 4), 25: (5, 5), 2: (2, 2), 3: (2, 2)}
    for n, grid in expected.items():
        lay = mosaic.grid_shape(n)
        assert lay.grid == grid, f"N={n}: {lay.grid} != {grid}"
        assert lay.cells - lay.n_secrets == lay.pad_count


def check_mosaic_bijection():
    rng = np.random.default_rng(11)
    for n in (1, 2, 5, 9, 12):
        lay = mosaic.grid_shape(n)
        tiles = [_rand(rng, (2, 3, 4)) for _ in range(n)]
        msr = mosaic.splice(tiles, lay)
        back = mosaic.split(msr, lay)
        for t, u in zip(tiles, back):
            assert np.array_equal(t.data, u.data)


def check_coupling_inverse():
    rng = np.random.default_rng(12)
    for dtype, tol in ((np.float32, 1e-4), (np.float64, 1e-8)):
        blk = InvBlock(8, 4, 8, rng, dtype)
        for p in blk.parameters():
            p.data = (np.random.default_rng(1).standard_normal(p.data.shape) * 0.05
                      ).astype(dtype)
        ms, c = _rand(rng, (8, 6, 6), dtype), _rand(rng, (4, 6, 6), dtype)
        ms2, c2 = blk.forward(ms, c)
        ms3, c3 = blk.reverse(ms2, c2)
        err = max(np.max(np.abs(ms3.data - ms.data)), np.max(np.abs(c3.data - c.data)))
        assert err < tol, f"{dtype}: {err}"


def check_conditional_inverse():
    rng = np.random.default_rng(13)
    blk = CInvBlock(6, 2, 4, 8, rng)
    for p in blk.parameters():
        p.data = (np.random.default_rng(2).standard_normal(p.data.shape) * 0.05
                  ).astype(np.float32)
    t, b = _rand(rng, (6, 5, 5)), _rand(rng, (2, 5, 5))
    cond = _rand(rng, (4, 5, 5))
    t2, b2 = blk.forward(t, b, cond)
    t3, b3 = blk.reverse(t2, b2, cond)
    err = max(np.max(np.abs(t3.data - t.data)), np.max(np.abs(b3.data - b.data)))
    assert err < 1e-4


def check_zero_init_identity():
    rng = np.random.default_rng(14)
    net = SmileNet(4, width=8, r_blocks=2, g_blocks=2, seed=3)
    cover = Tensor(np.clip(rng.random((3, 16, 16)), 0, 1).astype(np.float32))
    secrets = [Tensor(np.clip(rng.random((3, 16, 16)), 0, 1).astype(np.float32))
               for _ in range(4)]
    out = hide(cover, secrets, net, mode="eval")
    q = np.floor(np.clip(cover.data.astype(np.float64), 0, 1) * 255 + 0.5) / 255
    assert np.max(np.abs(out.stego.data - q)) < 1e-6
    assert np.max(np.abs(out.r_h.data - out.msr.data)) < 1e-5


def check_pipeline_cycle():
    rng = np.random.default_rng(15)
    for n, size in ((1, 12), (4, 16)):
        net = SmileNet(n, width=8, r_blocks=2, g_blocks=3, seed=4)
        net.randomize(np.random.default_rng(5), scale=0.5)
        cover = Tensor(rng.random((3, size, size)).astype(np.float32))
        secrets = [Tensor(rng.random((3, size, size)).astype(np.float32))
                   for _ in range(n)]
        out = hide(cover, secrets, net, mode="eval")
        rec = reveal_full(out.stego_raw, out.r_h, net)
        sis_secrets = net.sis(Tensor(np.stack([s.data for s in secrets])))
        for i, s in enumerate(rec.secrets_coarse):
            assert np.max(np.abs(s.data - sis_secrets.data[i])) < 1e-3
        assert np.max(np.abs(rec.cover_hat.data - cover.data)) < 1e-3


def check_stego_grid():
    rng = np.random.default_rng(16)
    net = SmileNet(4, width=8, r_blocks=1, g_blocks=1, seed=6)
    net.randomize(np.random.default_rng(7), scale=0.5)
    cover = Tensor(rng.random((3, 16, 16)).astype(np.float32))
    secrets = [Tensor(rng.random((3, 16, 16)).astype(np.float32)) for _ in range(4)]
    out = hide(cover, secrets, net, mode="eval")
    scaled = out.stego.data.astype(np.float64) * 255.0
    assert np.max(np.abs(scaled - np.round(scaled))) < 1e-4
    assert out.stego.data.min() >= 0.0 and out.stego.data.max() <= 1.0


def check_gradients():
    rng = np.random.default_rng(17)

    def conv_loss(x, w, b):
        return sum_all(exp_bounded(conv2d(x, w, b, pad=(1, 1)), 2.0))

    x = _rand(rng, (2, 4, 4), np.float64)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.3,
               requires_grad=True, dtype=np.float64)
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True, dtype=np.float64)
    x.requires_grad = True
    gradcheck(conv_loss, [x, w, b], rtol=1e-5)

    def wavelet_loss(t):
        return sum_all(wavelet.dwt_haar(t))

    t = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True, dtype=np.float64)
    gradcheck(wavelet_loss, [t], rtol=1e-5)

    def cayley_loss(th):
        k = orthoconv.cayley(th)
        return sum_all(exp_bounded(k, 1.0))

    th = Tensor(rng.standard_normal((3, 3)) * 0.4,
                requires_grad=True, dtype=np.float64)
    gradcheck(cayley_loss, [th], rtol=1e-4)


def check_split_concat():
    rng = np.random.default_rng(18)
    a, b = _rand(rng, (2, 3, 3)), _rand(rng, (3, 3, 3))
    c = concat_channels(a, b)
    a2, b2 = split_channels(c, 2)
    assert np.array_equal(a.data, a2.data) and np.array_equal(b.data, b2.data)


def check_adam_first_step():
    p = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
    state = AdamState([p], lr=0.1)
    adam_step([p], [np.ones(1)], state)
    assert abs(p.data[0] + 0.1 / (1.0 + 1e-8)) < 1e-9


def check_metric_oracles():
    rng = np.random.default_rng(19)
    x = rng.random((3, 32, 32))
    assert metrics.nmi(x, x) == 1.0
    assert metrics.psnr(x, x) == float("inf")
    a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
    r = metrics.rmse(a, b)
    assert abs(metrics.psnr(a, b) - 20 * np.log10(255.0 / r)) < 1e-9
    secrets = [rng.random((3, 16, 16)) for _ in range(4)]
    pts = metrics.cd_curve([(x, x, secrets, secrets)])
    assert pts[0].distortion == 0.0 and pts[0].capacity == 4.0


def check_loss_values():
    w = training.LossWeights()
    s = [Tensor(np.array([[[0.2]]]))]
    r = [Tensor(np.array([[[0.5]]]))]
    assert abs(training.loss_sec(s, r).item() - 0.3) < 1e-7
    eps = 0.01
    cover = Tensor(np.zeros((1, 2, 2)))
    stego = Tensor(np.full((1, 2, 2), eps))
    assert abs(training.loss_hide(cover, stego, w).item() - 44 * eps * eps) < 1e-9


def check_checkpoint_roundtrip():
    from .checkpoint import load_checkpoint, save_checkpoint

    net = SmileNet(2, width=8, r_blocks=1, g_blocks=1, seed=20)
    net.randomize(np.random.default_rng(21), scale=0.5)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.ckpt")
        save_checkpoint(path, net, seed=20, iteration=5)
        net2, meta = load_checkpoint(path)
    assert meta["iteration"] == 5
    for (na, pa), (nb, pb) in zip(sorted(net.named_parameters()),
                                  sorted(net2.named_parameters())):
        assert na == nb and np.array_equal(pa.data, pb.data)


def check_determinism():
    a = sample_z((2, 4, 4), 99).data
    b = sample_z((2, 4, 4), 99).data
    assert np.array_equal(a, b)


CHECKS = [
    ("haar round trip and energy", check_haar_roundtrip),
    ("haar linearity", check_haar_linearity),
    ("cayley kernels orthogonal", check_cayley_orthogonal),
    ("decompose/recompose inverse", check_decompose_roundtrip),
    ("mosaic grid rule", check_mosaic_grid_rule),
    ("mosaic splice/split bijection", check_mosaic_bijection),
    ("coupling block inverse", check_coupling_inverse),
    ("conditional block inverse", check_conditional_inverse),
    ("zero-init transparency", check_zero_init_identity),
    ("oracle-mode hide/reveal cycle", check_pipeline_cycle),
    ("stego on the 8-bit grid", check_stego_grid),
    ("gradient checks", check_gradients),
    ("split/concat involution", check_split_concat),
    ("adam first step", check_adam_first_step),
    ("metric oracles", check_metric_oracles),
    ("loss toy values", check_loss_values),
    ("checkpoint round trip", check_checkpoint_roundtrip),
    ("sampling determinism", check_determinism),
]


def run(verbose=True, out=None):
    """Execute every invariant; returns True when all pass."""
    stream = out if out is not None else io.StringIO() if not verbose else None
    ok = True
    for name, fn in CHECKS:
        try:
            fn()
            line = f"[ok]   {name}"
        except Exception as exc:  # noqa: BLE001 - report, do not crash
            ok = False
            line = f"[FAIL] {name}: {exc}"
        if verbose:
            print(line)
        elif stream is not None:
            stream.write(line + "\n")
    return ok
