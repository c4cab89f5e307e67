import numpy as np
import pytest

from mosaicsteg.autodiff import DimensionError, Tensor, gradcheck, mul, sum_all
from mosaicsteg.coupling import (
    CInvBlock,
    CondExtractor,
    DenseSubnet,
    InvBlock,
    cond_features,
)


def randomize(module, seed, scale=0.05):
    rng = np.random.default_rng(seed)
    for _, p in module.named_parameters():
        p.data = (rng.standard_normal(p.data.shape) * scale).astype(p.data.dtype)


class TestDenseSubnet:
    def test_zero_function_at_init(self):
        net = DenseSubnet(3, 5, 8, np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).standard_normal((3, 6, 6)).astype(np.float32))
        out = net(x)
        assert out.shape == (5, 6, 6)
        assert np.all(out.data == 0.0)

    def test_preserves_spatial_dims(self):
        net = DenseSubnet(2, 4, 8, np.random.default_rng(2))
        randomize(net, 3)
        out = net(Tensor(np.zeros((2, 5, 9), dtype=np.float32)))
        assert out.shape == (4, 5, 9)

    def test_five_conv_layers(self):
        net = DenseSubnet(2, 4, 8, np.random.default_rng(4))
        assert len(net.weights) == 5
        # concatenative growth: each layer sees everything before it
        assert [w.shape[1] for w in net.weights] == [2, 10, 18, 26, 34]


class TestInvBlock:
    def test_zero_init_is_identity(self):
        rng = np.random.default_rng(5)
        blk = InvBlock(6, 3, 8, np.random.default_rng(6))
        ms = Tensor(rng.standard_normal((6, 4, 4)).astype(np.float32))
        c = Tensor(rng.standard_normal((3, 4, 4)).astype(np.float32))
        ms2, c2 = blk.forward(ms, c)
        assert np.array_equal(ms2.data, ms.data)
        assert np.array_equal(c2.data, c.data)

    def test_scalar_toy_forward(self):
        # constant subnets via the zero-weight final projection biases
        blk = InvBlock(1, 1, 4, np.random.default_rng(7))
        blk.phi.biases[-1].data[:] = 0.5
        blk.psi.biases[-1].data[:] = 0.25
        ms, c = Tensor(np.full((1, 1, 1), 1.0)), Tensor(np.full((1, 1, 1), 2.0))
        ms2, c2 = blk.forward(ms, c)
        assert np.isclose(ms2.data[0, 0, 0], 1.5)
        assert np.isclose(c2.data[0, 0, 0], 2.25)
        ms3, c3 = blk.reverse(ms2, c2)
        assert np.isclose(ms3.data[0, 0, 0], 1.0, atol=1e-7)
        assert np.isclose(c3.data[0, 0, 0], 2.0, atol=1e-7)

    @pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-8)])
    def test_roundtrip_random_weights(self, dtype, tol):
        rng = np.random.default_rng(8)
        blk = InvBlock(8, 4, 8, np.random.default_rng(9), dtype)
        randomize(blk, 10)
        ms = Tensor(rng.standard_normal((8, 6, 6)), dtype=dtype)
        c = Tensor(rng.standard_normal((4, 6, 6)), dtype=dtype)
        ms3, c3 = blk.reverse(*blk.forward(ms, c))
        assert np.max(np.abs(ms3.data - ms.data)) < tol
        assert np.max(np.abs(c3.data - c.data)) < tol

    def test_sixteen_block_chain_roundtrip(self):
        # weight scale keeps activations O(10): the multiplicative branch
        # compounds exp factors over depth, so the per-block inversion
        # bound only composes while values stay far from the f32 edge
        rng = np.random.default_rng(11)
        blocks = [InvBlock(8, 4, 8, np.random.default_rng(20 + i)) for i in range(16)]
        for i, blk in enumerate(blocks):
            randomize(blk, 40 + i, scale=0.02)
        ms = Tensor(rng.standard_normal((8, 6, 6)).astype(np.float32))
        c = Tensor(rng.standard_normal((4, 6, 6)).astype(np.float32))
        f_ms, f_c = ms, c
        for blk in blocks:
            f_ms, f_c = blk.forward(f_ms, f_c)
        for blk in reversed(blocks):
            f_ms, f_c = blk.reverse(f_ms, f_c)
        err = max(np.max(np.abs(f_ms.data - ms.data)), np.max(np.abs(f_c.data - c.data)))
        assert err < 1e-3


class TestCInvBlock:
    def test_zero_init_identity_any_condition(self):
        rng = np.random.default_rng(12)
        blk = CInvBlock(6, 2, 5, 8, np.random.default_rng(13))
        t = Tensor(rng.standard_normal((6, 4, 4)).astype(np.float32))
        b = Tensor(rng.standard_normal((2, 4, 4)).astype(np.float32))
        for _ in range(3):
            cond = Tensor(rng.standard_normal((5, 4, 4)).astype(np.float32))
            t2, b2 = blk.forward(t, b, cond)
            assert np.array_equal(t2.data, t.data)
            assert np.array_equal(b2.data, b.data)

    def test_roundtrip_same_condition(self):
        rng = np.random.default_rng(14)
        blk = CInvBlock(6, 2, 5, 8, np.random.default_rng(15))
        randomize(blk, 16)
        t = Tensor(rng.standard_normal((6, 4, 4)).astype(np.float32))
        b = Tensor(rng.standard_normal((2, 4, 4)).astype(np.float32))
        cond = Tensor(rng.standard_normal((5, 4, 4)).astype(np.float32))
        t3, b3 = blk.reverse(*blk.forward(t, b, cond), cond)
        assert np.max(np.abs(t3.data - t.data)) < 1e-4
        assert np.max(np.abs(b3.data - b.data)) < 1e-4

    def test_condition_sensitivity(self):
        rng = np.random.default_rng(17)
        blk = CInvBlock(6, 2, 5, 8, np.random.default_rng(18))
        randomize(blk, 19, scale=0.2)
        t = Tensor(rng.standard_normal((6, 4, 4)).astype(np.float32))
        b = Tensor(rng.standard_normal((2, 4, 4)).astype(np.float32))
        cond = Tensor(rng.standard_normal((5, 4, 4)).astype(np.float32))
        t2, b2 = blk.forward(t, b, cond)
        delta = rng.standard_normal((5, 4, 4)).astype(np.float32)

        def roundtrip_err(eps):
            pert = Tensor(cond.data + eps * delta)
            t3, b3 = blk.reverse(t2, b2, pert)
            return max(np.max(np.abs(t3.data - t.data)),
                       np.max(np.abs(b3.data - b.data)))

        big = roundtrip_err(0.1)
        small = roundtrip_err(1e-3)
        assert big > 1e-4          # mismatched condition breaks the inverse
        assert small < big         # and the error vanishes with the mismatch
        assert roundtrip_err(0.0) < 1e-4

    def test_empty_top_half(self):
        # single-cell grids leave no top channels; block degrades to a
        # condition-driven additive update and stays invertible
        rng = np.random.default_rng(20)
        blk = CInvBlock(0, 3, 5, 8, np.random.default_rng(21))
        randomize(blk, 22)
        t = Tensor(np.zeros((0, 4, 4), dtype=np.float32))
        b = Tensor(rng.standard_normal((3, 4, 4)).astype(np.float32))
        cond = Tensor(rng.standard_normal((5, 4, 4)).astype(np.float32))
        t2, b2 = blk.forward(t, b, cond)
        assert t2.shape == (0, 4, 4)
        t3, b3 = blk.reverse(t2, b2, cond)
        assert np.max(np.abs(b3.data - b.data)) < 1e-5


class TestCondExtractor:
    def test_zero_cover_zero_condition(self):
        ext = CondExtractor(3, 8, (2, 2), np.random.default_rng(23))
        out = cond_features(Tensor(np.zeros((3, 8, 8), dtype=np.float32)), ext)
        assert np.all(out.data == 0.0)

    def test_output_shape(self):
        ext = CondExtractor(3, 32, (2, 2), np.random.default_rng(24))
        out = ext(Tensor(np.zeros((3, 48, 48), dtype=np.float32)))
        assert out.shape == (32, 24, 24)

    def test_pool_of_constant_is_constant(self):
        from mosaicsteg.autodiff import pool_avg

        out = pool_avg(Tensor(np.full((2, 6, 6), 3.25)), (3, 2))
        assert np.allclose(out.data, 3.25)

    def test_indivisible_dims(self):
        ext = CondExtractor(3, 8, (2, 2), np.random.default_rng(25))
        with pytest.raises(DimensionError):
            ext(Tensor(np.zeros((3, 7, 8), dtype=np.float32)))


def test_gradient_flow_through_block():
    blk = InvBlock(2, 2, 4, np.random.default_rng(26), np.float64)
    randomize(blk, 27, scale=0.3)
    for _, p in blk.named_parameters():
        p.data = p.data.astype(np.float64)
    rng = np.random.default_rng(28)
    ms = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True, dtype=np.float64)
    c = Tensor(rng.standard_normal((2, 3, 3)), requires_grad=True, dtype=np.float64)

    def through_inputs(m_, c_):
        a, b = blk.forward(m_, c_)
        return sum_all(mul(a, b))

    gradcheck(through_inputs, [ms, c], rtol=1e-3)

    # finite differences over the subnet weights themselves: gradcheck
    # perturbs the listed tensors in place, which the block reads
    params = [p for _, p in blk.named_parameters()][:4]

    def through_weights(*_):
        a, b = blk.forward(ms, c)
        return sum_all(mul(a, b))

    gradcheck(through_weights, params, rtol=1e-3)
