import numpy as np
import pytest

from mosaicsteg.autodiff import DimensionError, Tensor, gradcheck, mul, sum_all
from mosaicsteg.wavelet import dwt_haar, idwt_haar


def test_constant_image():
    v = 0.7
    x = Tensor(np.full((2, 4, 4), v))
    s = dwt_haar(x)
    assert s.shape == (8, 2, 2)
    for c in range(2):
        assert np.allclose(s.data[4 * c], 2 * v)       # LL
        assert np.allclose(s.data[4 * c + 1:4 * c + 4], 0.0)


def test_single_block_oracle():
    x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))
    s = dwt_haar(x)
    ll, lh, hl, hh = s.data[:, 0, 0]
    assert (ll, lh, hl, hh) == (5.0, -2.0, -1.0, 0.0)


def test_energy_preserved():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 8, 8)).astype(np.float32)
    s = dwt_haar(Tensor(x))
    na = np.linalg.norm(x.astype(np.float64))
    nb = np.linalg.norm(s.data.astype(np.float64))
    assert abs(na - nb) < 1e-5


def test_roundtrip_both_directions():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((3, 6, 10)).astype(np.float32))
    assert np.max(np.abs(idwt_haar(dwt_haar(x)).data - x.data)) < 1e-6
    s = Tensor(rng.standard_normal((12, 5, 7)).astype(np.float32))
    assert np.max(np.abs(dwt_haar(idwt_haar(s)).data - s.data)) < 1e-6


def test_linearity():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 6, 6))
    y = rng.standard_normal((2, 6, 6))
    a, b = 1.3, -0.6
    lhs = dwt_haar(Tensor(a * x + b * y, dtype=np.float64)).data
    rhs = a * dwt_haar(Tensor(x, dtype=np.float64)).data \
        + b * dwt_haar(Tensor(y, dtype=np.float64)).data
    assert np.max(np.abs(lhs - rhs)) < 1e-6


def test_zero_subbands_and_constant_inverse():
    z = Tensor(np.zeros((4, 3, 3)))
    assert np.all(idwt_haar(z).data == 0.0)
    s = np.zeros((4, 2, 2))
    s[0] = 2.0  # only the coarse coefficient set
    img = idwt_haar(Tensor(s))
    assert np.allclose(img.data, 1.0)


def test_odd_dims_rejected():
    with pytest.raises(DimensionError):
        dwt_haar(Tensor(np.zeros((1, 3, 4))))
    with pytest.raises(DimensionError):
        dwt_haar(Tensor(np.zeros((1, 4, 5))))


def test_channel_multiple_rejected():
    with pytest.raises(DimensionError):
        idwt_haar(Tensor(np.zeros((6, 2, 2))))


def test_batched_matches_per_item():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 2, 6, 6)).astype(np.float32)
    batched = dwt_haar(Tensor(x))
    for i in range(4):
        assert np.array_equal(batched.data[i], dwt_haar(Tensor(x[i])).data)


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    x = Tensor(rng.standard_normal((2, 4, 4)), requires_grad=True, dtype=np.float64)
    gradcheck(lambda t: sum_all(mul(dwt_haar(t), dwt_haar(t))), [x], rtol=1e-5)
    s = Tensor(rng.standard_normal((8, 2, 2)), requires_grad=True, dtype=np.float64)
    gradcheck(lambda t: sum_all(mul(idwt_haar(t), idwt_haar(t))), [s], rtol=1e-5)
