"""Model building blocks: embedding tables, mask stacks, batchnorm, dropout.

Depth layout of the feature cubes built here, with K = number of kept
(unmasked) entities:

  alternate stack: [rel, ent_1, rel, ent_2, ..., rel, ent_K]  depth 2K
  standard stack:  [rel, ent_1, ent_2, ..., ent_K]            depth K+1

Even depth indices of the alternate stack always hold the relation plane.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

__all__ = [
    "EmbeddingTable",
    "MaskedTuple",
    "embed_lookup",
    "embed_backward",
    "alternate_mask_stack",
    "alternate_mask_stack_batch",
    "alternate_stack_backward_batch",
    "standard_stack",
    "standard_stack_batch",
    "standard_stack_backward_batch",
    "BatchNormState",
    "batchnorm_forward",
    "batchnorm_backward",
    "dropout",
]


@dataclass
class EmbeddingTable:
    """A rows x dim lookup table of learned vectors."""

    weights: np.ndarray

    @property
    def rows(self):
        return self.weights.shape[0]

    @property
    def dim(self):
        return self.weights.shape[1]

    @classmethod
    def init(cls, rows, dim, rng, dtype=np.float32):
        scale = 1.0 / np.sqrt(dim)
        return cls(rng.uniform(-scale, scale, size=(rows, dim)).astype(dtype))


@dataclass(frozen=True)
class MaskedTuple:
    """One fact with a single entity position masked for prediction.

    `entities` is the full ordered entity-id sequence of the fact;
    `masked_pos` indexes (0-based) the entity to predict. The target is
    entities[masked_pos] and never enters the model input.
    """

    relation: int
    entities: tuple
    masked_pos: int

    def __post_init__(self):
        if len(self.entities) < 2:
            raise ShapeError(f"arity must be >= 2, got {len(self.entities)}")
        if not 0 <= self.masked_pos < len(self.entities):
            raise ShapeError(
                f"masked position {self.masked_pos} out of range for arity {len(self.entities)}"
            )

    @property
    def arity(self):
        return len(self.entities)

    @property
    def target(self):
        return self.entities[self.masked_pos]

    @property
    def kept_entities(self):
        return (
            self.entities[: self.masked_pos] + self.entities[self.masked_pos + 1 :]
        )


def embed_lookup(table, ids):
    """Rows of the table addressed by ids, as a len(ids) x dim array."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.rows):
        raise ShapeError(f"embedding id out of range [0, {table.rows})")
    return table.weights[ids]


def embed_backward(table, ids, upstream):
    """Scatter-add the upstream rows into a zero table gradient."""
    grad = np.zeros_like(table.weights)
    np.add.at(grad, np.asarray(ids, dtype=np.int64), upstream)
    return grad


# ---------------------------------------------------------------------------
# feature cube construction
# ---------------------------------------------------------------------------


def _check_planes(rel_plane, entity_planes):
    if len(entity_planes) == 0:
        raise ShapeError("at least one kept entity plane is required")
    for p in entity_planes:
        if p.shape != rel_plane.shape:
            raise ShapeError(
                f"entity plane {p.shape} does not match relation plane {rel_plane.shape}"
            )


def alternate_mask_stack(rel_plane, entity_planes):
    """Interleave the relation plane before each kept entity plane.

    Returns a (d1, d2, 2K) cube for K kept entities.
    """
    rel_plane = np.asarray(rel_plane)
    entity_planes = [np.asarray(p) for p in entity_planes]
    _check_planes(rel_plane, entity_planes)
    return alternate_mask_stack_batch(
        rel_plane[None], np.stack(entity_planes)[None]
    )[0]


def alternate_mask_stack_batch(rel_planes, entity_planes):
    """Batched alternate stack: (B, d1, d2) x (B, K, d1, d2) -> (B, d1, d2, 2K)."""
    b, d1, d2 = rel_planes.shape
    k = entity_planes.shape[1]
    cube = np.empty((b, d1, d2, 2 * k), dtype=rel_planes.dtype)
    cube[..., 0::2] = rel_planes[..., None]
    cube[..., 1::2] = np.moveaxis(entity_planes, 1, -1)
    return cube


def alternate_stack_backward_batch(grad_cube):
    grad_rel = grad_cube[..., 0::2].sum(axis=-1)
    grad_ent = np.moveaxis(grad_cube[..., 1::2], -1, 1)
    return grad_rel, grad_ent


def standard_stack(rel_plane, entity_planes):
    """Stack the relation plane once, then the kept entity planes (ablation)."""
    rel_plane = np.asarray(rel_plane)
    entity_planes = [np.asarray(p) for p in entity_planes]
    _check_planes(rel_plane, entity_planes)
    return standard_stack_batch(rel_plane[None], np.stack(entity_planes)[None])[0]


def standard_stack_batch(rel_planes, entity_planes):
    b, d1, d2 = rel_planes.shape
    k = entity_planes.shape[1]
    cube = np.empty((b, d1, d2, k + 1), dtype=rel_planes.dtype)
    cube[..., 0] = rel_planes
    cube[..., 1:] = np.moveaxis(entity_planes, 1, -1)
    return cube


def standard_stack_backward_batch(grad_cube):
    grad_rel = grad_cube[..., 0]
    grad_ent = np.moveaxis(grad_cube[..., 1:], -1, 1)
    return grad_rel, grad_ent


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormState:
    """Learned scale/shift plus running statistics for one normalization site."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def init(cls, channels, dtype=np.float32):
        return cls(
            gamma=np.ones(channels, dtype=dtype),
            beta=np.zeros(channels, dtype=dtype),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


def _bn_shape(x):
    """Broadcast shape placing the channel axis of a (B, C, ...) tensor."""
    return (1, x.shape[1]) + (1,) * (x.ndim - 2)


def batchnorm_forward(x, state, training, update_running=True):
    """Normalize a (B, C, ...) tensor per channel.

    Training mode uses batch statistics (and by default folds them into the
    running statistics); eval mode uses the stored running statistics.
    Returns (output, cache) where the cache feeds batchnorm_backward.
    """
    if x.shape[0] == 0:
        raise ShapeError("batchnorm over an empty batch")
    axes = (0,) + tuple(range(2, x.ndim))
    shape = _bn_shape(x)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        if update_running:
            m = x.size // x.shape[1]
            unbiased = var * m / (m - 1) if m > 1 else var
            mom = state.momentum
            state.running_mean = (
                (1 - mom) * state.running_mean + mom * mean
            ).astype(state.running_mean.dtype)
            state.running_var = (
                (1 - mom) * state.running_var + mom * unbiased
            ).astype(state.running_var.dtype)
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = state.gamma.reshape(shape) * xhat + state.beta.reshape(shape)
    cache = (xhat, inv_std, state.gamma, training)
    return out, cache


def batchnorm_backward(grad_out, cache):
    """Adjoint of batchnorm_forward; returns (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma, training = cache
    axes = (0,) + tuple(range(2, grad_out.ndim))
    shape = _bn_shape(grad_out)
    grad_gamma = (grad_out * xhat).sum(axis=axes)
    grad_beta = grad_out.sum(axis=axes)
    g_xhat = grad_out * gamma.reshape(shape)
    if not training:
        return g_xhat * inv_std.reshape(shape), grad_gamma, grad_beta
    m = grad_out.size // grad_out.shape[1]
    grad_x = (
        inv_std.reshape(shape)
        / m
        * (
            m * g_xhat
            - g_xhat.sum(axis=axes).reshape(shape)
            - xhat * (g_xhat * xhat).sum(axis=axes).reshape(shape)
        )
    )
    return grad_x, grad_gamma, grad_beta


# ---------------------------------------------------------------------------
# dropout
# ---------------------------------------------------------------------------


def dropout(x, rate, training, rng):
    """Inverted dropout. Returns (output, mask); eval mode is the identity.

    The mask already carries the 1/(1-rate) survivor scaling, so the
    backward pass is a plain multiply by the mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask, mask
