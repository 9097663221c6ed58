"""The three embedding architectures and their shared 1-N entity scoring.

Variants:

* ``hycube``       - reshape + mask stack -> circular pad -> full-depth 3D
                     conv -> batchnorm/ReLU -> channel max-pool -> flatten ->
                     fully connected to d -> batchnorm/ReLU.
* ``hycube_plus``  - same conv path, plus a parameter-free residual: the
                     unpadded cube reduced over its (relation, entity) pair
                     slices to d1 x d2 x 2, flattened, and added to the pooled
                     features before the fully connected layer.
* ``hyplane``      - 2D comparison variant: relation and each kept entity
                     plane are circularly padded and convolved separately
                     (one shared relation kernel set, one shared entity
                     kernel set), pooled, interleaved pair-wise, concatenated
                     across entities and projected to d.

All forward passes run batched over masked tuples, grouped by arity; the
kernel bank holds an independent full-depth kernel set per arity so one
model serves mixed-arity data. ``backward`` composes the exact adjoints of
every step and returns gradients keyed by parameter name.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import ShapeError, UnsupportedArityError, UsageError
from .layers import (
    BatchNormState,
    EmbeddingTable,
    MaskedTuple,
    alternate_mask_stack_batch,
    alternate_stack_backward_batch,
    batchnorm_backward,
    batchnorm_forward,
    dropout,
    embed_lookup,
    standard_stack_batch,
    standard_stack_backward_batch,
)
from .tensor_ops import (
    affine_batch,
    affine_backward_batch,
    circular_pad_2d_batch,
    circular_pad_hw_backward_batch,
    circular_pad_hw_batch,
    conv2d_backward_batch,
    conv2d_valid_batch,
    conv3d_backward_batch,
    conv3d_valid_batch,
    maxpool_channels_backward_batch,
    maxpool_channels_batch,
    pad_2d_backward_batch,
    relu,
    relu_backward,
    stable_softmax,
    zero_pad_hw_backward_batch,
    zero_pad_hw_batch,
    zero_pad_2d_batch,
)

__all__ = [
    "ModelParams",
    "forward",
    "backward",
    "score_all_entities",
    "score_backward",
    "named_arrays",
    "trainable_arrays",
    "param_count",
    "clone_params",
]


@dataclass
class ModelParams:
    """Every learnable array of one model plus its normalization statistics."""

    config: RunConfig
    entity_table: EmbeddingTable
    relation_table: EmbeddingTable
    entity_bias: np.ndarray
    kernel_bank: dict
    fc_weight: np.ndarray
    fc_bias: np.ndarray
    bn_conv: BatchNormState
    bn_out: BatchNormState
    rel_kernels: np.ndarray = None
    ent_kernels: np.ndarray = None
    fc_bank: dict = field(default_factory=dict)

    @property
    def n_entities(self):
        return self.entity_table.rows

    @property
    def n_relations(self):
        return self.relation_table.rows

    @property
    def dtype(self):
        return self.entity_table.weights.dtype

    @classmethod
    def init(cls, n_entities, n_relations, config, arities, rng, dtype=np.float32):
        """Fresh parameters for the given vocabulary sizes and arity set."""
        cfg = config.resolved()
        if n_entities < 1 or n_relations < 1:
            raise UsageError("need at least one entity and one relation")
        params = cls(
            config=cfg,
            entity_table=EmbeddingTable.init(n_entities, cfg.d, rng, dtype),
            relation_table=EmbeddingTable.init(n_relations, cfg.d, rng, dtype),
            entity_bias=np.zeros(n_entities, dtype=dtype),
            kernel_bank={},
            fc_weight=_uniform(rng, (cfg.d, cfg.flat_features), dtype),
            fc_bias=np.zeros(cfg.d, dtype=dtype),
            bn_conv=BatchNormState.init(cfg.channels, dtype),
            bn_out=BatchNormState.init(cfg.d, dtype),
        )
        if cfg.variant == "hyplane":
            k = cfg.kernel
            params.rel_kernels = _uniform(rng, (cfg.channels, k, k), dtype)
            params.ent_kernels = _uniform(rng, (cfg.channels, k, k), dtype)
        for arity in sorted(arities):
            params.ensure_arity(arity, rng)
        return params

    def ensure_arity(self, arity, rng):
        """Create the per-arity kernels (and HyPlanE projection) if absent."""
        if arity < 2:
            raise ShapeError(f"arity must be >= 2, got {arity}")
        cfg = self.config
        if cfg.variant == "hyplane":
            if arity not in self.fc_bank:
                width = (arity - 1) * 2 * (cfg.channels // cfg.pool) * cfg.d1 * cfg.d2
                self.fc_bank[arity] = _uniform(rng, (cfg.d, width), self.dtype)
            return
        if arity not in self.kernel_bank:
            depth = cfg.cube_depth(arity)
            self.kernel_bank[arity] = _uniform(
                rng, (cfg.channels, cfg.kernel, cfg.kernel, depth), self.dtype
            )

    def supports_arity(self, arity):
        bank = self.fc_bank if self.config.variant == "hyplane" else self.kernel_bank
        return arity in bank


def _uniform(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    scale = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


def named_arrays(params):
    """Deterministically ordered (name, array) pairs of every persisted array."""
    entries = {
        "entity_emb": params.entity_table.weights,
        "relation_emb": params.relation_table.weights,
        "entity_bias": params.entity_bias,
        "fc_weight": params.fc_weight,
        "fc_bias": params.fc_bias,
        "bn_conv.gamma": params.bn_conv.gamma,
        "bn_conv.beta": params.bn_conv.beta,
        "bn_conv.running_mean": params.bn_conv.running_mean,
        "bn_conv.running_var": params.bn_conv.running_var,
        "bn_out.gamma": params.bn_out.gamma,
        "bn_out.beta": params.bn_out.beta,
        "bn_out.running_mean": params.bn_out.running_mean,
        "bn_out.running_var": params.bn_out.running_var,
    }
    for arity in sorted(params.kernel_bank):
        entries[f"kernel_bank/{arity}"] = params.kernel_bank[arity]
    if params.rel_kernels is not None:
        entries["rel_kernels"] = params.rel_kernels
        entries["ent_kernels"] = params.ent_kernels
    for arity in sorted(params.fc_bank):
        entries[f"fc_bank/{arity}"] = params.fc_bank[arity]
    return sorted(entries.items())


_NON_TRAINABLE = (".running_mean", ".running_var")


def trainable_arrays(params):
    return [
        (name, arr)
        for name, arr in named_arrays(params)
        if not name.endswith(_NON_TRAINABLE)
    ]


def param_count(params):
    return sum(arr.size for _, arr in trainable_arrays(params))


def clone_params(params):
    return copy.deepcopy(params)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


@dataclass
class _Group:
    """Per-arity slice of a batch plus the tensors its backward needs."""

    arity: int
    idx: np.ndarray
    rel_ids: np.ndarray
    kept_ids: np.ndarray
    cube: np.ndarray = None
    mask_in: object = None
    padded: np.ndarray = None
    # hyplane extras
    rel_planes: np.ndarray = None
    ent_planes: np.ndarray = None
    mask_rel: object = None
    mask_ent: object = None
    padded_rel: np.ndarray = None
    padded_ent: np.ndarray = None
    flat: np.ndarray = None
    mask_feat: object = None


@dataclass
class _Conv3dCache:
    batch_size: int
    training: bool
    groups: list
    bn_conv_cache: object
    act: np.ndarray
    pool_arg: np.ndarray
    mask_feat: object
    fc_input: np.ndarray
    bn_out_cache: object
    v_out: np.ndarray
    with_residual: bool


@dataclass
class _PlaneCache:
    batch_size: int
    training: bool
    groups: list
    layout: list
    bn_conv_cache: object
    act: np.ndarray
    pool_arg: np.ndarray
    bn_out_cache: object
    v_out: np.ndarray


def _group_batch(batch):
    groups = {}
    for i, mt in enumerate(batch):
        groups.setdefault(mt.arity, []).append(i)
    return [(arity, np.asarray(pos)) for arity, pos in sorted(groups.items())]


def _lookup_planes(params, batch, idx):
    cfg = params.config
    rel_ids = np.asarray([batch[i].relation for i in idx])
    kept_ids = np.asarray([batch[i].kept_entities for i in idx])
    rel_planes = embed_lookup(params.relation_table, rel_ids).reshape(
        len(idx), cfg.d1, cfg.d2
    )
    ent_planes = embed_lookup(params.entity_table, kept_ids.ravel()).reshape(
        len(idx), kept_ids.shape[1], cfg.d1, cfg.d2
    )
    return rel_ids, kept_ids, rel_planes, ent_planes


def forward(params, batch, training, rng=None, update_running=True):
    """Encode a batch of masked tuples into (B, d) output vectors.

    Returns (v_out, cache); the cache feeds ``backward``. ``rng`` drives
    dropout and is required only when training with nonzero dropout rates.
    ``update_running=False`` keeps batchnorm running statistics untouched,
    which makes a training-mode forward side-effect free (used by gradient
    checks). Eval mode is deterministic. Raises UnsupportedArityError for
    arities with no kernel bank entry.
    """
    if len(batch) == 0:
        raise ShapeError("empty batch")
    if params.config.variant == "hyplane":
        return _forward_hyplane(params, batch, training, rng, update_running)
    with_residual = params.config.variant == "hycube_plus"
    return _forward_conv3d(params, batch, training, rng, with_residual, update_running)


def _stack_group(cfg, rel_planes, ent_planes):
    if cfg.stack == "alternate":
        return alternate_mask_stack_batch(rel_planes, ent_planes)
    return standard_stack_batch(rel_planes, ent_planes)


def _pad_cube(cfg, cube):
    if cfg.padding_mode == "circular":
        return circular_pad_hw_batch(cube, cfg.pad)
    return zero_pad_hw_batch(cube, cfg.pad)


def _residual_reduce(cfg, cube):
    """Sum the cube's (relation, entity) pair slices to a (B, d1, d2, 2) tensor."""
    b, d1, d2, depth = cube.shape
    if cfg.stack == "alternate":
        return cube.reshape(b, d1, d2, depth // 2, 2).sum(axis=3)
    res = np.empty((b, d1, d2, 2), dtype=cube.dtype)
    res[..., 0] = cube[..., 0]
    res[..., 1] = cube[..., 1:].sum(axis=-1)
    return res


def _residual_spread(cfg, grad_res, depth):
    """Adjoint of _residual_reduce back onto a depth-`depth` cube gradient."""
    b, d1, d2, _ = grad_res.shape
    if cfg.stack == "alternate":
        return np.broadcast_to(
            grad_res[:, :, :, None, :], (b, d1, d2, depth // 2, 2)
        ).reshape(b, d1, d2, depth)
    grad = np.empty((b, d1, d2, depth), dtype=grad_res.dtype)
    grad[..., 0] = grad_res[..., 0]
    grad[..., 1:] = grad_res[..., 1:2]
    return grad


def _forward_conv3d(params, batch, training, rng, with_residual, update_running=True):
    cfg = params.config
    b = len(batch)
    conv_maps = np.empty((b, cfg.channels, cfg.d1, cfg.d2), dtype=params.dtype)
    residual = (
        np.empty((b, 2 * cfg.d1 * cfg.d2), dtype=params.dtype)
        if with_residual
        else None
    )
    groups = []
    for arity, idx in _group_batch(batch):
        if arity not in params.kernel_bank:
            raise UnsupportedArityError(
                f"no kernel bank entry for arity {arity}; train or ensure_arity first"
            )
        rel_ids, kept_ids, rel_planes, ent_planes = _lookup_planes(params, batch, idx)
        cube = _stack_group(cfg, rel_planes, ent_planes)
        cube, mask_in = dropout(cube, cfg.dropout_input, training, rng)
        padded = _pad_cube(cfg, cube)
        out = conv3d_valid_batch(padded, params.kernel_bank[arity])
        if out.shape[-1] != 1:
            raise ShapeError(
                f"kernel depth must collapse the cube depth, got output {out.shape}"
            )
        conv_maps[idx] = out[..., 0]
        if with_residual:
            residual[idx] = _residual_reduce(cfg, cube).reshape(len(idx), -1)
        groups.append(
            _Group(arity, idx, rel_ids, kept_ids, cube=cube, mask_in=mask_in, padded=padded)
        )

    if cfg.batchnorm:
        normed, bn_conv_cache = batchnorm_forward(
            conv_maps, params.bn_conv, training, update_running
        )
    else:
        normed, bn_conv_cache = conv_maps, None
    act = relu(normed)
    pooled, pool_arg = maxpool_channels_batch(act, cfg.pool)
    v_in = pooled.reshape(b, -1)
    if with_residual:
        v_in = v_in + residual
    v_in, mask_feat = dropout(v_in, cfg.dropout_feature, training, rng)
    z = affine_batch(v_in, params.fc_weight, params.fc_bias)
    if cfg.batchnorm:
        zn, bn_out_cache = batchnorm_forward(z, params.bn_out, training, update_running)
    else:
        zn, bn_out_cache = z, None
    v_out = relu(zn)
    cache = _Conv3dCache(
        batch_size=b,
        training=training,
        groups=groups,
        bn_conv_cache=bn_conv_cache,
        act=act,
        pool_arg=pool_arg,
        mask_feat=mask_feat,
        fc_input=v_in,
        bn_out_cache=bn_out_cache,
        v_out=v_out,
        with_residual=with_residual,
    )
    return v_out, cache


def _forward_hyplane(params, batch, training, rng, update_running=True):
    cfg = params.config
    if params.rel_kernels is None:
        raise UnsupportedArityError("hyplane parameters missing planar kernels")
    b = len(batch)
    groups = []
    blocks = []
    layout = []  # (kind, group index, rows) in stack order
    for arity, idx in _group_batch(batch):
        if arity not in params.fc_bank:
            raise UnsupportedArityError(f"no projection for arity {arity}")
        rel_ids, kept_ids, rel_planes, ent_planes = _lookup_planes(params, batch, idx)
        rel_planes, mask_rel = dropout(rel_planes, cfg.dropout_input, training, rng)
        ent_planes, mask_ent = dropout(ent_planes, cfg.dropout_input, training, rng)
        pad2d = circular_pad_2d_batch if cfg.padding_mode == "circular" else zero_pad_2d_batch
        padded_rel = pad2d(rel_planes, cfg.pad)
        k = kept_ids.shape[1]
        padded_ent = pad2d(ent_planes.reshape(len(idx) * k, cfg.d1, cfg.d2), cfg.pad)
        rel_maps = conv2d_valid_batch(padded_rel, params.rel_kernels)
        ent_maps = conv2d_valid_batch(padded_ent, params.ent_kernels)
        g = _Group(
            arity,
            idx,
            rel_ids,
            kept_ids,
            rel_planes=rel_planes,
            ent_planes=ent_planes,
            mask_rel=mask_rel,
            mask_ent=mask_ent,
            padded_rel=padded_rel,
            padded_ent=padded_ent,
        )
        layout.append(("rel", len(groups), rel_maps.shape[0]))
        blocks.append(rel_maps)
        layout.append(("ent", len(groups), ent_maps.shape[0]))
        blocks.append(ent_maps)
        groups.append(g)

    stacked = np.concatenate(blocks, axis=0)
    if cfg.batchnorm:
        normed, bn_conv_cache = batchnorm_forward(
            stacked, params.bn_conv, training, update_running
        )
    else:
        normed, bn_conv_cache = stacked, None
    act = relu(normed)
    pooled, pool_arg = maxpool_channels_batch(act, cfg.pool)

    n2 = cfg.channels // cfg.pool
    z = np.empty((b, cfg.d), dtype=params.dtype)
    offset = 0
    split = {}
    for kind, gi, rows in layout:
        split[(kind, gi)] = pooled[offset : offset + rows]
        offset += rows
    for gi, g in enumerate(groups):
        bg = len(g.idx)
        k = g.kept_ids.shape[1]
        rel_p = split[("rel", gi)]
        ent_p = split[("ent", gi)].reshape(bg, k, n2, cfg.d1, cfg.d2)
        inter = np.empty((bg, k, 2 * n2, cfg.d1, cfg.d2), dtype=params.dtype)
        inter[:, :, 0::2] = rel_p[:, None]
        inter[:, :, 1::2] = ent_p
        flat = inter.reshape(bg, -1)
        flat, mask_feat = dropout(flat, cfg.dropout_feature, training, rng)
        g.flat = flat
        g.mask_feat = mask_feat
        z[g.idx] = affine_batch(flat, params.fc_bank[g.arity], params.fc_bias)

    if cfg.batchnorm:
        zn, bn_out_cache = batchnorm_forward(z, params.bn_out, training, update_running)
    else:
        zn, bn_out_cache = z, None
    v_out = relu(zn)
    cache = _PlaneCache(
        batch_size=b,
        training=training,
        groups=groups,
        layout=layout,
        bn_conv_cache=bn_conv_cache,
        act=act,
        pool_arg=pool_arg,
        bn_out_cache=bn_out_cache,
        v_out=v_out,
    )
    return v_out, cache


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def score_all_entities(params, v_out):
    """Logits and softmax probabilities of every entity for each output vector.

    Ranking uses the logits directly; the softmax is monotone in them.
    """
    single = v_out.ndim == 1
    v = v_out[None] if single else v_out
    if v.shape[1] != params.config.d:
        raise ShapeError(f"expected output length {params.config.d}, got {v.shape[1]}")
    logits = v @ params.entity_table.weights.T + params.entity_bias
    probs = stable_softmax(logits, axis=1)
    if single:
        return logits[0], probs[0]
    return logits, probs


def score_backward(params, v_out, grad_logits):
    """Adjoint of the logits map: grads for v_out, the entity table and bias."""
    single = v_out.ndim == 1
    v = v_out[None] if single else v_out
    g = grad_logits[None] if single else grad_logits
    grad_v = g @ params.entity_table.weights
    grad_table = g.T @ v
    grad_bias = g.sum(axis=0)
    return (grad_v[0] if single else grad_v), grad_table, grad_bias


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def _zero_grads(params):
    return {name: np.zeros_like(arr) for name, arr in trainable_arrays(params)}


def backward(params, cache, grad_v_out):
    """Exact adjoint of ``forward``; returns gradients keyed like trainable_arrays."""
    if isinstance(cache, _PlaneCache):
        return _backward_hyplane(params, cache, grad_v_out)
    return _backward_conv3d(params, cache, grad_v_out)


def _backward_out_head(params, cache, grad_v_out, grads):
    g = relu_backward(grad_v_out, cache.v_out)
    if params.config.batchnorm:
        g, g_gamma, g_beta = batchnorm_backward(g, cache.bn_out_cache)
        grads["bn_out.gamma"] += g_gamma
        grads["bn_out.beta"] += g_beta
    return g


def _backward_conv_head(params, cache, g_pooled, grads):
    cfg = params.config
    g_act = maxpool_channels_backward_batch(g_pooled, cache.pool_arg, cfg.pool)
    g_act = relu_backward(g_act, cache.act)
    if cfg.batchnorm:
        g_maps, g_gamma, g_beta = batchnorm_backward(g_act, cache.bn_conv_cache)
        grads["bn_conv.gamma"] += g_gamma
        grads["bn_conv.beta"] += g_beta
    else:
        g_maps = g_act
    return g_maps


def _scatter_embeddings(params, grads, g, rel_ids, kept_ids):
    cfg = params.config
    bg = len(rel_ids)
    g_rel, g_ent = (
        alternate_stack_backward_batch(g)
        if cfg.stack == "alternate"
        else standard_stack_backward_batch(g)
    )
    np.add.at(grads["relation_emb"], rel_ids, g_rel.reshape(bg, cfg.d))
    np.add.at(
        grads["entity_emb"],
        kept_ids.ravel(),
        g_ent.reshape(bg * kept_ids.shape[1], cfg.d),
    )


def _backward_conv3d(params, cache, grad_v_out):
    cfg = params.config
    grads = _zero_grads(params)
    g = _backward_out_head(params, cache, grad_v_out, grads)
    g_v_in, g_w, g_b = affine_backward_batch(cache.fc_input, params.fc_weight, g)
    grads["fc_weight"] += g_w
    grads["fc_bias"] += g_b
    if cache.mask_feat is not None:
        g_v_in = g_v_in * cache.mask_feat
    g_res = g_v_in if cache.with_residual else None
    n2 = cfg.channels // cfg.pool
    g_pooled = g_v_in.reshape(cache.batch_size, n2, cfg.d1, cfg.d2)
    g_maps = _backward_conv_head(params, cache, g_pooled, grads)

    for grp in cache.groups:
        g_out = g_maps[grp.idx][..., None]
        g_padded, g_ker = conv3d_backward_batch(
            grp.padded, params.kernel_bank[grp.arity], g_out
        )
        grads[f"kernel_bank/{grp.arity}"] += g_ker
        if cfg.padding_mode == "circular":
            g_cube = circular_pad_hw_backward_batch(g_padded, cfg.d1, cfg.d2, cfg.pad)
        else:
            g_cube = zero_pad_hw_backward_batch(g_padded, cfg.d1, cfg.d2, cfg.pad)
        if cache.with_residual:
            g_cube = g_cube + _residual_spread(
                cfg,
                g_res[grp.idx].reshape(len(grp.idx), cfg.d1, cfg.d2, 2),
                grp.cube.shape[-1],
            )
        if grp.mask_in is not None:
            g_cube = g_cube * grp.mask_in
        _scatter_embeddings(params, grads, g_cube, grp.rel_ids, grp.kept_ids)
    return grads


def _backward_hyplane(params, cache, grad_v_out):
    cfg = params.config
    grads = _zero_grads(params)
    g_z = _backward_out_head(params, cache, grad_v_out, grads)

    n2 = cfg.channels // cfg.pool
    g_blocks = {}
    for gi, grp in enumerate(cache.groups):
        bg = len(grp.idx)
        k = grp.kept_ids.shape[1]
        g_flat, g_w, g_b = affine_backward_batch(
            grp.flat, params.fc_bank[grp.arity], g_z[grp.idx]
        )
        grads[f"fc_bank/{grp.arity}"] += g_w
        grads["fc_bias"] += g_b
        if grp.mask_feat is not None:
            g_flat = g_flat * grp.mask_feat
        g_inter = g_flat.reshape(bg, k, 2 * n2, cfg.d1, cfg.d2)
        g_blocks[("rel", gi)] = g_inter[:, :, 0::2].sum(axis=1)
        g_blocks[("ent", gi)] = g_inter[:, :, 1::2].reshape(
            bg * k, n2, cfg.d1, cfg.d2
        )

    g_pooled = np.concatenate(
        [g_blocks[(kind, gi)] for kind, gi, _ in cache.layout], axis=0
    )
    g_stacked = _backward_conv_head(params, cache, g_pooled, grads)

    offset = 0
    circular = cfg.padding_mode == "circular"
    for kind, gi, rows in cache.layout:
        grp = cache.groups[gi]
        g_maps = g_stacked[offset : offset + rows]
        offset += rows
        if kind == "rel":
            g_padded, g_ker = conv2d_backward_batch(
                grp.padded_rel, params.rel_kernels, g_maps
            )
            grads["rel_kernels"] += g_ker
            g_planes = pad_2d_backward_batch(g_padded, cfg.d1, cfg.d2, cfg.pad, circular)
            if grp.mask_rel is not None:
                g_planes = g_planes * grp.mask_rel
            np.add.at(
                grads["relation_emb"], grp.rel_ids, g_planes.reshape(rows, cfg.d)
            )
        else:
            g_padded, g_ker = conv2d_backward_batch(
                grp.padded_ent, params.ent_kernels, g_maps
            )
            grads["ent_kernels"] += g_ker
            g_planes = pad_2d_backward_batch(g_padded, cfg.d1, cfg.d2, cfg.pad, circular)
            if grp.mask_ent is not None:
                g_planes = g_planes * grp.mask_ent.reshape(g_planes.shape)
            np.add.at(
                grads["entity_emb"],
                grp.kept_ids.ravel(),
                g_planes.reshape(rows, cfg.d),
            )
    return grads
