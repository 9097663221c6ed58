"""Tensor-core operations against independent oracles and finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hycube.errors import ShapeError
from hycube.tensor_ops import (
    ConvSpec,
    affine,
    affine_backward_batch,
    affine_batch,
    circular_pad_hw,
    circular_pad_hw_backward_batch,
    circular_pad_hw_batch,
    conv3d_backward,
    conv3d_valid,
    conv3d_valid_batch,
    finite_diff_check,
    maxpool_channels,
    maxpool_channels_backward_batch,
    maxpool_channels_batch,
    reshape_2d,
    stable_softmax,
)


def brute_force_conv3d(inp, kernels):
    """Triple-nested-loop cross-correlation, written independently of the fast path."""
    h, w, d = inp.shape
    n1, k1, k2, k3 = kernels.shape
    out = np.zeros((n1, h - k1 + 1, w - k2 + 1, d - k3 + 1), dtype=np.float64)
    for n in range(n1):
        for x in range(out.shape[1]):
            for y in range(out.shape[2]):
                for z in range(out.shape[3]):
                    acc = 0.0
                    for a in range(k1):
                        for b in range(k2):
                            for c in range(k3):
                                acc += inp[x + a, y + b, z + c] * kernels[n, a, b, c]
                    out[n, x, y, z] = acc
    return out


class TestReshape2d:
    def test_row_major_fill(self):
        out = reshape_2d(np.array([1.0, 2, 3, 4, 5, 6]), 2, 3)
        assert out.tolist() == [[1, 2, 3], [4, 5, 6]]

    def test_default_dimension(self):
        out = reshape_2d(np.arange(400.0), 20, 20)
        assert out.shape == (20, 20)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            reshape_2d(np.arange(6.0), 4, 2)

    def test_round_trip(self, rng):
        for _ in range(20):
            d1 = int(rng.integers(1, 12))
            d2 = int(rng.integers(1, 12))
            v = rng.normal(size=d1 * d2)
            assert np.array_equal(reshape_2d(v, d1, d2).ravel(), v)


class TestConvSpec:
    def test_kernel_pad_relation(self):
        ConvSpec(kernel_hw=5, pad=2, kernel_depth=6, out_channels=8)
        with pytest.raises(ShapeError):
            ConvSpec(kernel_hw=4, pad=2, kernel_depth=6, out_channels=8)
        with pytest.raises(ShapeError):
            ConvSpec(kernel_hw=3, pad=1, kernel_depth=0, out_channels=8)


class TestCircularPad:
    def test_wrap_example(self):
        cube = np.array([[1.0, 2.0], [3.0, 4.0]])[:, :, None]
        out = circular_pad_hw(cube, 1)[:, :, 0]
        expected = [[4, 3, 4, 3], [2, 1, 2, 1], [4, 3, 4, 3], [2, 1, 2, 1]]
        assert out.tolist() == expected

    def test_zero_pad_is_identity(self, rng):
        cube = rng.normal(size=(3, 4, 2))
        assert np.array_equal(circular_pad_hw(cube, 0), cube)

    def test_modular_index_oracle(self, rng):
        cube = rng.normal(size=(5, 5, 4))
        out = circular_pad_hw(cube, 2)
        for i in range(9):
            for j in range(9):
                for z in range(4):
                    assert out[i, j, z] == cube[(i - 2) % 5, (j - 2) % 5, z]

    @settings(max_examples=40, deadline=None)
    @given(
        h=st.integers(1, 6),
        w=st.integers(1, 6),
        d=st.integers(1, 4),
        p=st.integers(0, 5),
        seed=st.integers(0, 2**16),
    )
    def test_index_law_property(self, h, w, d, p, seed):
        cube = np.random.default_rng(seed).normal(size=(h, w, d))
        out = circular_pad_hw(cube, p)
        ii, jj = np.meshgrid(np.arange(h + 2 * p), np.arange(w + 2 * p), indexing="ij")
        assert np.array_equal(out, cube[(ii - p) % h, (jj - p) % w, :])

    def test_backward_is_adjoint(self, rng):
        # <pad(x), y> == <x, pad_backward(y)> for a linear map and random y
        x = rng.normal(size=(2, 4, 3, 2))
        y = rng.normal(size=(2, 8, 7, 2))
        fwd = circular_pad_hw_batch(x, 2)
        bwd = circular_pad_hw_backward_batch(y, 4, 3, 2)
        assert np.isclose((fwd * y).sum(), (x * bwd).sum())

    def test_batch_matches_single(self, rng):
        cubes = rng.normal(size=(3, 4, 5, 2))
        batched = circular_pad_hw_batch(cubes, 1)
        for b in range(3):
            assert np.array_equal(batched[b], circular_pad_hw(cubes[b], 1))


class TestConv3d:
    def test_zero_input(self, rng):
        out = conv3d_valid(np.zeros((4, 4, 3)), rng.normal(size=(2, 3, 3, 2)))
        assert out.shape == (2, 2, 2, 2)
        assert np.all(out == 0)

    def test_delta_kernel_selects_slice(self, rng):
        inp = rng.normal(size=(5, 4, 3))
        kernel = np.zeros((1, 1, 1, 3))
        kernel[0, 0, 0, 0] = 1.0
        out = conv3d_valid(inp, kernel)
        assert np.allclose(out[0, :, :, 0], inp[:, :, 0])

    def test_brute_force_oracle(self, rng):
        inp = rng.uniform(-0.5, 0.5, size=(6, 6, 4)).astype(np.float32)
        kernels = rng.uniform(-0.5, 0.5, size=(2, 3, 3, 4)).astype(np.float32)
        fast = conv3d_valid(inp, kernels)
        slow = brute_force_conv3d(inp.astype(np.float64), kernels.astype(np.float64))
        assert fast.shape == (2, 4, 4, 1)
        assert np.max(np.abs(fast - slow)) <= 1e-6

    def test_linearity(self, rng):
        x = rng.normal(size=(5, 5, 3))
        y = rng.normal(size=(5, 5, 3))
        kernels = rng.normal(size=(2, 3, 3, 2))
        lhs = conv3d_valid(2.5 * x - 1.5 * y, kernels)
        rhs = 2.5 * conv3d_valid(x, kernels) - 1.5 * conv3d_valid(y, kernels)
        assert np.allclose(lhs, rhs, atol=1e-5)

    def test_kernel_exceeds_input(self, rng):
        with pytest.raises(ShapeError):
            conv3d_valid(rng.normal(size=(2, 2, 2)), rng.normal(size=(1, 3, 3, 2)))

    def test_shift_equivariance_under_circular_padding(self, rng):
        # full-depth kernels: rotating the input commutes with pad+conv
        inp = rng.normal(size=(5, 6, 4))
        kernels = rng.normal(size=(3, 3, 3, 4))

        def pad_conv(x):
            return conv3d_valid(circular_pad_hw(x, 1), kernels)[..., 0]

        for s, t in [(1, 0), (0, 2), (3, 4), (2, 5)]:
            rolled_in = np.roll(np.roll(inp, s, axis=0), t, axis=1)
            lhs = pad_conv(rolled_in)
            rhs = np.roll(np.roll(pad_conv(inp), s, axis=1), t, axis=2)
            assert np.allclose(lhs, rhs, atol=1e-5)


class TestConv3dBackward:
    def test_zero_upstream(self, rng):
        inp = rng.normal(size=(4, 4, 2))
        kernels = rng.normal(size=(1, 3, 3, 2))
        g_in, g_k = conv3d_backward(inp, kernels, np.zeros((1, 2, 2, 1)))
        assert np.all(g_in == 0) and np.all(g_k == 0)

    def test_finite_difference(self, rng):
        inp = rng.normal(size=(4, 4, 2))
        kernels = rng.normal(size=(1, 3, 3, 2))
        up = np.ones((1, 2, 2, 1))
        g_in, g_k = conv3d_backward(inp, kernels, up)

        err_in = finite_diff_check(
            lambda x: conv3d_valid(x, kernels).sum(), inp, g_in
        )
        err_k = finite_diff_check(
            lambda k: conv3d_valid(inp, k).sum(), kernels, g_k
        )
        assert err_in < 1e-4 and err_k < 1e-4

    def test_kernel_gradient_counts_windows(self):
        # constant input c, upstream of ones: every kernel grad entry is
        # c * (number of window placements)
        c = 1.75
        inp = np.full((5, 4, 3), c)
        kernels = np.zeros((2, 3, 3, 2))
        placements = (5 - 3 + 1) * (4 - 3 + 1) * (3 - 2 + 1)
        up = np.ones((2, 3, 2, 2))
        _, g_k = conv3d_backward(inp, kernels, up)
        assert np.allclose(g_k, c * placements)

    def test_shape_mismatch(self, rng):
        inp = rng.normal(size=(4, 4, 2))
        kernels = rng.normal(size=(1, 3, 3, 2))
        with pytest.raises(ShapeError):
            conv3d_backward(inp, kernels, np.zeros((1, 3, 3, 1)))

    def test_batch_matches_single(self, rng):
        from hycube.tensor_ops import conv3d_backward_batch

        inp = rng.normal(size=(3, 4, 4, 2))
        kernels = rng.normal(size=(2, 3, 3, 2))
        up = rng.normal(size=(3, 2, 2, 2, 1))
        g_in_b, g_k_b = conv3d_backward_batch(inp, kernels, up)
        g_k_sum = np.zeros_like(kernels)
        for b in range(3):
            g_in, g_k = conv3d_backward(inp[b], kernels, up[b])
            assert np.allclose(g_in_b[b], g_in)
            g_k_sum += g_k
        assert np.allclose(g_k_b, g_k_sum)


class TestMaxpoolChannels:
    def test_channel_reduction(self, rng):
        maps = rng.normal(size=(8, 3, 3))
        out, arg = maxpool_channels(maps, 4)
        assert out.shape == (2, 3, 3)
        assert arg.shape == (2, 3, 3)

    def test_tie_goes_to_lowest_channel(self):
        maps = np.ones((4, 2, 2))
        out, arg = maxpool_channels(maps, 4)
        assert np.array_equal(out, np.ones((1, 2, 2)))
        assert np.all(arg == 0)

    def test_brute_force_groups(self, rng):
        maps = rng.normal(size=(8, 3, 3))
        out, _ = maxpool_channels(maps, 4)
        for g in range(2):
            for i in range(3):
                for j in range(3):
                    assert out[g, i, j] == max(maps[4 * g + r, i, j] for r in range(4))

    def test_non_divisible_window(self, rng):
        with pytest.raises(ShapeError):
            maxpool_channels(rng.normal(size=(6, 2, 2)), 4)

    def test_backward_routes_to_argmax(self, rng):
        maps = rng.normal(size=(2, 8, 3, 3))
        out, arg = maxpool_channels_batch(maps, 4)
        up = rng.normal(size=out.shape)
        grad = maxpool_channels_backward_batch(up, arg, 4)
        assert grad.shape == maps.shape
        assert np.isclose(grad.sum(), up.sum())
        # gradient only lands where the max was
        assert np.all((grad != 0) <= (maps == np.repeat(out, 4, axis=1)))


class TestAffine:
    def test_identity(self):
        x = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(affine(x, np.eye(3), np.zeros(3)), x)

    def test_bias_only(self):
        b = np.array([5.0, -1.0])
        out = affine(np.array([1.0, 2.0, 3.0]), np.zeros((2, 3)), b)
        assert np.array_equal(out, b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            affine(np.zeros(4), np.zeros((2, 3)), np.zeros(2))

    def test_finite_difference(self, rng):
        x = rng.normal(size=5)
        w = rng.normal(size=(3, 5))
        b = rng.normal(size=3)
        gx, gw, gb = affine_backward_batch(x[None], w, np.ones((1, 3)))
        assert finite_diff_check(lambda v: affine(v, w, b).sum(), x, gx[0]) < 1e-4
        assert (
            finite_diff_check(lambda m: affine(x, m, b).sum(), w, gw) < 1e-4
        )
        assert (
            finite_diff_check(
                lambda v: affine_batch(x[None], w, v).sum(), b, gb
            )
            < 1e-4
        )


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        point = np.array([1.0, 2.0, 3.0])
        err = finite_diff_check(lambda x: (x**2).sum(), point, 2 * point)
        assert err < 1e-8

    def test_constant_function(self):
        err = finite_diff_check(lambda x: 7.0, np.zeros(4), np.zeros(4))
        assert err == 0.0

    def test_non_finite_reported(self):
        with pytest.raises(ValueError):
            finite_diff_check(lambda x: float("nan"), np.zeros(2), np.zeros(2))

    def test_wrong_gradient_detected(self):
        point = np.array([1.0, 2.0])
        err = finite_diff_check(lambda x: (x**2).sum(), point, np.zeros(2))
        assert err > 1e-2


class TestSoftmax:
    def test_rows_sum_to_one(self, rng):
        x = rng.normal(size=(4, 9)) * 50
        p = stable_softmax(x, axis=1)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-6)
        assert np.all(p >= 0)
