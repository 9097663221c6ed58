"""Dense tensor operations used by the embedding models.

Every operation here is a pure function on numpy arrays with an explicit,
hand-written adjoint (no autograd tape). Convolutions are implemented in
the cross-correlation orientation: an output element is the plain sum of
input*kernel over the window, with no kernel flip. Layouts are row-major
throughout; feature cubes are indexed (height, width, depth), batched
variants carry a leading batch axis.
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

__all__ = [
    "ConvSpec",
    "reshape_2d",
    "circular_pad_hw",
    "circular_pad_hw_batch",
    "circular_pad_hw_backward_batch",
    "zero_pad_hw_batch",
    "zero_pad_hw_backward_batch",
    "circular_pad_2d_batch",
    "zero_pad_2d_batch",
    "pad_2d_backward_batch",
    "conv3d_valid",
    "conv3d_backward",
    "conv3d_valid_batch",
    "conv3d_backward_batch",
    "conv2d_valid_batch",
    "conv2d_backward_batch",
    "maxpool_channels",
    "maxpool_channels_batch",
    "maxpool_channels_backward_batch",
    "affine",
    "affine_batch",
    "affine_backward_batch",
    "relu",
    "relu_backward",
    "stable_softmax",
    "finite_diff_check",
]


@dataclass(frozen=True)
class ConvSpec:
    """Shape parameters of one convolution site.

    kernel_hw is the square kernel side k, pad the circular padding width p,
    kernel_depth the depth the kernel spans, out_channels the number of
    feature maps produced.
    """

    kernel_hw: int
    pad: int
    kernel_depth: int
    out_channels: int

    def __post_init__(self):
        if self.kernel_hw != 2 * self.pad + 1:
            raise ShapeError(
                f"kernel size {self.kernel_hw} must equal 2*pad+1 = {2 * self.pad + 1}"
            )
        if self.kernel_depth < 1:
            raise ShapeError(f"kernel depth must be >= 1, got {self.kernel_depth}")
        if self.out_channels < 1:
            raise ShapeError(f"out_channels must be >= 1, got {self.out_channels}")


def reshape_2d(vec, d1, d2):
    """Reshape a length-d vector into a d1 x d2 matrix, row-major."""
    vec = np.asarray(vec)
    if vec.ndim != 1 or d1 * d2 != vec.shape[0]:
        raise ShapeError(f"cannot reshape length-{vec.shape} vector to {d1}x{d2}")
    return vec.reshape(d1, d2)


# ---------------------------------------------------------------------------
# padding (height/width axes only, never depth)
# ---------------------------------------------------------------------------


def _wrap_indices(size, pad):
    return (np.arange(size + 2 * pad) - pad) % size


def circular_pad_hw(cube, pad):
    """Wrap-around pad a (H, W, D) cube on its height and width axes.

    out[i, j, z] = cube[(i - pad) % H, (j - pad) % W, z]; pad=0 is identity.
    """
    cube = np.asarray(cube)
    if cube.ndim != 3:
        raise ShapeError(f"expected a 3D cube, got shape {cube.shape}")
    return circular_pad_hw_batch(cube[None], pad)[0]


def circular_pad_hw_batch(cubes, pad):
    """Circular-pad a (B, H, W, D) batch on the H and W axes."""
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return cubes
    ih = _wrap_indices(cubes.shape[1], pad)
    iw = _wrap_indices(cubes.shape[2], pad)
    return cubes[:, ih[:, None], iw[None, :], :]


def circular_pad_hw_backward_batch(grad_out, height, width, pad):
    """Adjoint of circular_pad_hw_batch: scatter-add back through the wrap."""
    if pad == 0:
        return grad_out
    grad = np.zeros(
        (grad_out.shape[0], height, width, grad_out.shape[3]), dtype=grad_out.dtype
    )
    ih = _wrap_indices(height, pad)
    iw = _wrap_indices(width, pad)
    np.add.at(grad, (slice(None), ih[:, None], iw[None, :]), grad_out)
    return grad


def zero_pad_hw_batch(cubes, pad):
    """Zero-pad a (B, H, W, D) batch on the H and W axes (ablation mode)."""
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return cubes
    return np.pad(cubes, ((0, 0), (pad, pad), (pad, pad), (0, 0)))


def zero_pad_hw_backward_batch(grad_out, height, width, pad):
    if pad == 0:
        return grad_out
    return grad_out[:, pad : pad + height, pad : pad + width, :]


def circular_pad_2d_batch(planes, pad):
    """Circular-pad a (B, H, W) batch of matrices on both axes."""
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return planes
    ih = _wrap_indices(planes.shape[1], pad)
    iw = _wrap_indices(planes.shape[2], pad)
    return planes[:, ih[:, None], iw[None, :]]


def zero_pad_2d_batch(planes, pad):
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if pad == 0:
        return planes
    return np.pad(planes, ((0, 0), (pad, pad), (pad, pad)))


def pad_2d_backward_batch(grad_out, height, width, pad, circular):
    if pad == 0:
        return grad_out
    if not circular:
        return grad_out[:, pad : pad + height, pad : pad + width]
    grad = np.zeros((grad_out.shape[0], height, width), dtype=grad_out.dtype)
    ih = _wrap_indices(height, pad)
    iw = _wrap_indices(width, pad)
    np.add.at(grad, (slice(None), ih[:, None], iw[None, :]), grad_out)
    return grad


# ---------------------------------------------------------------------------
# valid cross-correlation, 3D and 2D
# ---------------------------------------------------------------------------


def _check_kernel_fits(in_shape, k_shape):
    if any(k > s for k, s in zip(k_shape, in_shape)):
        raise ShapeError(f"kernel {k_shape} exceeds input {in_shape}")


def conv3d_valid(inp, kernels):
    """Valid 3D cross-correlation of one (H, W, D) input.

    kernels has shape (n1, k, k, kd); the result has shape
    (n1, H-k+1, W-k+1, D-kd+1).
    """
    inp = np.asarray(inp)
    kernels = np.asarray(kernels)
    if inp.ndim != 3 or kernels.ndim != 4:
        raise ShapeError(
            f"expected (H,W,D) input and (n1,k,k,kd) kernels, got {inp.shape} / {kernels.shape}"
        )
    return conv3d_valid_batch(inp[None], kernels)[0]


def conv3d_valid_batch(inp, kernels):
    """Valid 3D cross-correlation of a (B, H, W, D) batch -> (B, n1, H', W', D')."""
    _check_kernel_fits(inp.shape[1:], kernels.shape[1:])
    windows = sliding_window_view(inp, kernels.shape[1:], axis=(1, 2, 3))
    return np.einsum("bxyzpqr,npqr->bnxyz", windows, kernels)


def conv3d_backward(inp, kernels, grad_out):
    """Adjoints of conv3d_valid w.r.t. the input and the kernels."""
    g_inp, g_ker = conv3d_backward_batch(
        np.asarray(inp)[None], np.asarray(kernels), np.asarray(grad_out)[None]
    )
    return g_inp[0], g_ker


def conv3d_backward_batch(inp, kernels, grad_out):
    out_shape = tuple(s - k + 1 for s, k in zip(inp.shape[1:], kernels.shape[1:]))
    if grad_out.shape != (inp.shape[0], kernels.shape[0]) + out_shape:
        raise ShapeError(
            f"upstream gradient shape {grad_out.shape} does not match conv output "
            f"{(inp.shape[0], kernels.shape[0]) + out_shape}"
        )
    windows = sliding_window_view(inp, kernels.shape[1:], axis=(1, 2, 3))
    grad_kernels = np.einsum("bxyzpqr,bnxyz->npqr", windows, grad_out)

    k1, k2, k3 = kernels.shape[1:]
    padded = np.pad(
        grad_out,
        ((0, 0), (0, 0), (k1 - 1, k1 - 1), (k2 - 1, k2 - 1), (k3 - 1, k3 - 1)),
    )
    up_windows = sliding_window_view(padded, (k1, k2, k3), axis=(2, 3, 4))
    flipped = kernels[:, ::-1, ::-1, ::-1]
    grad_inp = np.einsum("bnxyzpqr,npqr->bxyz", up_windows, flipped)
    return grad_inp, grad_kernels


def conv2d_valid_batch(inp, kernels):
    """Valid 2D cross-correlation of a (B, H, W) batch -> (B, n1, H', W')."""
    _check_kernel_fits(inp.shape[1:], kernels.shape[1:])
    windows = sliding_window_view(inp, kernels.shape[1:], axis=(1, 2))
    return np.einsum("bxypq,npq->bnxy", windows, kernels)


def conv2d_backward_batch(inp, kernels, grad_out):
    out_shape = tuple(s - k + 1 for s, k in zip(inp.shape[1:], kernels.shape[1:]))
    if grad_out.shape != (inp.shape[0], kernels.shape[0]) + out_shape:
        raise ShapeError(
            f"upstream gradient shape {grad_out.shape} does not match conv output"
        )
    windows = sliding_window_view(inp, kernels.shape[1:], axis=(1, 2))
    grad_kernels = np.einsum("bxypq,bnxy->npq", windows, grad_out)

    k1, k2 = kernels.shape[1:]
    padded = np.pad(grad_out, ((0, 0), (0, 0), (k1 - 1, k1 - 1), (k2 - 1, k2 - 1)))
    up_windows = sliding_window_view(padded, (k1, k2), axis=(2, 3))
    grad_inp = np.einsum("bnxypq,npq->bxy", up_windows, kernels[:, ::-1, ::-1])
    return grad_inp, grad_kernels


# ---------------------------------------------------------------------------
# channel max-pooling
# ---------------------------------------------------------------------------


def maxpool_channels(maps, window):
    """Max over groups of `window` consecutive channels of an (n1, d1, d2) stack.

    Returns the pooled (n1/window, d1, d2) maps and the within-group argmax
    record used by the backward pass. Ties go to the lowest channel index.
    """
    maps = np.asarray(maps)
    out, arg = maxpool_channels_batch(maps[None], window)
    return out[0], arg[0]


def maxpool_channels_batch(maps, window):
    channels = maps.shape[1]
    if window < 1 or channels % window != 0:
        raise ShapeError(f"pool window {window} does not divide {channels} channels")
    grouped = maps.reshape(
        maps.shape[0], channels // window, window, *maps.shape[2:]
    )
    arg = grouped.argmax(axis=2)
    out = np.take_along_axis(grouped, arg[:, :, None], axis=2)[:, :, 0]
    return out, arg


def maxpool_channels_backward_batch(grad_out, arg, window):
    grouped = np.zeros(
        (grad_out.shape[0], grad_out.shape[1], window, *grad_out.shape[2:]),
        dtype=grad_out.dtype,
    )
    np.put_along_axis(grouped, arg[:, :, None], grad_out[:, :, None], axis=2)
    return grouped.reshape(grad_out.shape[0], -1, *grad_out.shape[2:])


# ---------------------------------------------------------------------------
# affine layer and activation
# ---------------------------------------------------------------------------


def affine(vec, weight, bias):
    """weight @ vec + bias for a single input vector."""
    vec = np.asarray(vec)
    return affine_batch(vec[None], weight, bias)[0]


def affine_batch(x, weight, bias):
    if x.shape[1] != weight.shape[1] or bias.shape[0] != weight.shape[0]:
        raise ShapeError(
            f"affine shapes incompatible: x {x.shape}, weight {weight.shape}, bias {bias.shape}"
        )
    return x @ weight.T + bias


def affine_backward_batch(x, weight, grad_out):
    grad_x = grad_out @ weight
    grad_w = grad_out.T @ x
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, activated):
    return grad_out * (activated > 0)


def stable_softmax(x, axis=-1):
    """Softmax with max subtraction; rows sum to 1 for finite input."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def finite_diff_check(fn, point, analytic_grad, epsilon=1e-5):
    """Max relative disagreement between an analytic gradient and central differences.

    fn maps an array like `point` to a scalar. For each coordinate the central
    difference (fn(x+eps) - fn(x-eps)) / (2 eps) is compared against
    analytic_grad, and the largest |analytic - numeric| / max(1, |numeric|)
    is returned. Non-finite evaluations raise.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic_grad = np.asarray(analytic_grad, dtype=np.float64)
    if analytic_grad.shape != point.shape:
        raise ShapeError(
            f"gradient shape {analytic_grad.shape} does not match point {point.shape}"
        )
    worst = 0.0
    flat = point.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = fn(point)
        flat[i] = orig - epsilon
        lo = fn(point)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"non-finite evaluation at coordinate {i}: {hi}, {lo}")
        numeric = (hi - lo) / (2.0 * epsilon)
        err = abs(analytic_grad.ravel()[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
