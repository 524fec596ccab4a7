import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dualreg.volume import (BinaryMask, DisplacementField, Volume3, interpolate, resample, sample_trilinear,
                            upsample_field, warp, warp_multichannel)

from conftest import trilinear_oracle

small_dims = st.tuples(*[st.integers(2, 6)] * 3)
finite = st.floats(-100, 100, allow_nan=False)


def test_volume_rejects_bad_input():
    with pytest.raises(ValueError):
        Volume3(np.full((3, 3, 3), np.nan))
    with pytest.raises(ValueError):
        Volume3(np.zeros((3, 3, 3)), (1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        DisplacementField(np.zeros((3, 3, 3, 2)))
    v = Volume3(np.zeros((2, 3, 4)))
    assert v.dims == (2, 3, 4)
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0


def test_sample_at_lattice_point(rng):
    v = Volume3(rng.random((5, 4, 6)))
    for idx in [(0, 0, 0), (2, 1, 3), (4, 3, 5)]:
        assert sample_trilinear(v, idx) == v.data[idx]


def test_sample_midpoint():
    a = np.zeros((2, 2, 2))
    a[1] = 1.0
    assert sample_trilinear(Volume3(a), (0.5, 0, 0)) == 0.5


def test_sample_clamps(rng):
    v = Volume3(rng.random((4, 4, 4)))
    assert sample_trilinear(v, (-5, -5, -5)) == v.data[0, 0, 0]
    assert sample_trilinear(v, (50, 50, 50)) == v.data[3, 3, 3]


@pytest.mark.parametrize("axis", [0, 1, 2])
@pytest.mark.parametrize("t", [0.25, 0.5, 0.75])
def test_sample_piecewise_linear(rng, axis, t):
    v = Volume3(rng.random((5, 5, 5)))
    p = np.array([2.0, 1.0, 3.0])
    p[axis] += t
    lo = (2, 1, 3)
    hi = list(lo)
    hi[axis] += 1
    expected = (1 - t) * v.data[lo] + t * v.data[tuple(hi)]
    assert sample_trilinear(v, p) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5)), elements=finite),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_interpolate_matches_scalar_oracle(arr, p):
    assert interpolate(arr, np.array([p]))[0] == pytest.approx(trilinear_oracle(arr, p), rel=1e-12, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, small_dims, elements=finite))
def test_warp_zero_field_is_bit_exact(arr):
    v = Volume3(arr)
    out = warp(v, DisplacementField.zeros(v.dims))
    assert np.array_equal(out.data, v.data)


def test_warp_integer_shift(rng):
    v = Volume3(rng.random((8, 8, 8)))
    u = np.zeros((8, 8, 8, 3))
    u[..., 0] = 1.0
    out = warp(v, DisplacementField(u))
    assert np.array_equal(out.data[1:-1, 1:-1, 1:-1], v.data[2:, 1:-1, 1:-1])


def test_warp_half_shift_averages_neighbours(rng):
    v = Volume3(rng.random((8, 8, 8)))
    u = np.zeros((8, 8, 8, 3))
    u[..., 0] = 0.5
    out = warp(v, DisplacementField(u))
    expected = 0.5 * (v.data[:-1] + v.data[1:])
    np.testing.assert_allclose(out.data[:-1], expected, rtol=0, atol=1e-15)
    # and against the scalar oracle everywhere, including the clamped face
    for idx in [(0, 0, 0), (3, 4, 5), (7, 7, 7)]:
        assert out.data[idx] == pytest.approx(trilinear_oracle(v.data, np.add(idx, (0.5, 0, 0))), abs=1e-15)


def test_warp_random_field_matches_oracle(rng):
    v = Volume3(rng.random((6, 5, 7)))
    u = rng.normal(scale=2.0, size=(6, 5, 7, 3))
    out = warp(v, DisplacementField(u))
    for _ in range(40):
        idx = tuple(int(rng.integers(0, n)) for n in v.dims)
        assert out.data[idx] == pytest.approx(trilinear_oracle(v.data, np.add(idx, u[idx])), abs=1e-13)


def test_warp_huge_displacements_stay_finite(rng):
    v = Volume3(rng.random((5, 5, 5)))
    u = rng.normal(scale=1e6, size=(5, 5, 5, 3))
    out = warp(v, DisplacementField(u))
    assert np.all(np.isfinite(out.data))
    assert out.data.min() >= v.data.min() and out.data.max() <= v.data.max()


def test_warp_dimension_mismatch():
    with pytest.raises(ValueError):
        warp(Volume3(np.zeros((4, 4, 4))), DisplacementField.zeros((4, 4, 5)))


def test_warp_multichannel(rng):
    chans = [Volume3(rng.random((6, 6, 6))) for _ in range(6)]
    zero = DisplacementField.zeros((6, 6, 6))
    for a, b in zip(warp_multichannel(chans, zero), chans):
        assert np.array_equal(a.data, b.data)
    u = rng.normal(size=(6, 6, 6, 3))
    f = DisplacementField(u)
    assert np.array_equal(warp_multichannel(chans[:1], f)[0].data, warp(chans[0], f).data)
    shift = np.zeros((6, 6, 6, 3))
    shift[..., 1] = -2.0
    out = warp_multichannel(chans[:2], DisplacementField(shift))
    for o, c in zip(out, chans[:2]):
        assert np.array_equal(o.data[:, 2:], c.data[:, :-2])
    with pytest.raises(ValueError):
        warp_multichannel([Volume3(np.zeros((5, 6, 6)))], zero)


def test_resample_identity_and_constants(rng):
    v = Volume3(rng.random((8, 6, 4)), (1.0, 2.0, 0.5))
    same = resample(v, 1)
    assert np.array_equal(same.data, v.data) and same.spacing == v.spacing
    c = Volume3(np.full((8, 8, 8), 0.3))
    for f in [0.5, 2, (0.5, 1, 2)]:
        np.testing.assert_allclose(resample(c, f).data, 0.3, rtol=0, atol=1e-15)


def test_resample_keeps_physical_extent():
    v = Volume3(np.zeros((9, 8, 8)), (1.0, 1.0, 2.0))
    down = resample(v, 0.5)
    for n, s, m, t in zip(v.dims, v.spacing, down.dims, down.spacing):
        assert abs(n * s - m * t) <= s


def test_resample_rejects_degenerate():
    with pytest.raises(ValueError):
        resample(Volume3(np.zeros((3, 3, 3))), 0.25)


def _blur_oracle(arr):
    w = np.exp(-0.5 * np.array([1.0, 0.0, 1.0]))
    w /= w.sum()
    out = arr.copy()
    for axis in range(3):
        src = out
        out = np.zeros_like(src)
        n = src.shape[axis]
        for i in range(n):
            for k, off in enumerate((-1, 0, 1)):
                j = min(max(i + off, 0), n - 1)
                sl_out = [slice(None)] * 3
                sl_src = [slice(None)] * 3
                sl_out[axis], sl_src[axis] = i, j
                out[tuple(sl_out)] += w[k] * src[tuple(sl_src)]
    return out


def _resize_oracle(arr, dims):
    out = np.zeros(dims)
    for idx in np.ndindex(*dims):
        p = [(i + 0.5) * n / m - 0.5 for i, n, m in zip(idx, arr.shape, dims)]
        out[idx] = trilinear_oracle(arr, p)
    return out


def test_ramp_down_up_roundtrip():
    ramp = np.fromfunction(lambda x, y, z: x + 2 * y + 3 * z, (8, 8, 8)) / 42.0
    v = Volume3(ramp)
    down = resample(v, 0.5)
    np.testing.assert_allclose(down.data, _resize_oracle(_blur_oracle(ramp), (4, 4, 4)), atol=1e-13)
    up = resample(down, 2)
    np.testing.assert_allclose(up.data, _resize_oracle(down.data, (8, 8, 8)), atol=1e-13)
    # error is dominated by edge clamping; bounds frozen from the oracle composition
    err = np.abs(up.data - ramp)
    assert err.max() < 0.0911
    assert err[2:-2, 2:-2, 2:-2].max() < 0.0049


def test_upsample_field():
    f = DisplacementField(np.random.default_rng(1).normal(size=(4, 4, 4, 3)))
    same = upsample_field(f, (4, 4, 4))
    assert np.array_equal(same.data, f.data)
    const = np.zeros((4, 4, 4, 3))
    const[..., 0] = 1.0
    up = upsample_field(DisplacementField(const), (8, 8, 8))
    np.testing.assert_allclose(up.data[..., 0], 2.0, atol=1e-15)
    np.testing.assert_allclose(up.data[..., 1:], 0.0, atol=0)
    assert not np.any(upsample_field(DisplacementField.zeros((3, 4, 5)), (7, 9, 11)).data)
    with pytest.raises(ValueError):
        upsample_field(f, (3, 8, 8))


def test_upsample_field_matches_oracle():
    f = DisplacementField(np.random.default_rng(2).normal(size=(4, 4, 4, 3)))
    up = upsample_field(f, (8, 8, 8))
    for c in range(3):
        np.testing.assert_allclose(up.data[..., c], 2.0 * _resize_oracle(f.data[..., c], (8, 8, 8)), atol=1e-13)


def test_binary_mask_roundtrip_to_volume():
    m = BinaryMask(np.eye(4)[:, :, None].repeat(4, axis=2))
    assert m.as_volume().data.sum() == 16
