"""Walk one fact through the 3D circular convolutional encoder, step by step.

Run:  python3 demos/01_cube_pipeline.py
"""

import numpy as np

from hycube import MaskedTuple, ModelParams, RunConfig, forward, score_all_entities
from hycube.layers import alternate_mask_stack
from hycube.tensor_ops import circular_pad_hw, conv3d_valid, reshape_2d

rng = np.random.default_rng(0)

# A tiny world: 6 entities, 2 relations, embedding dimension 16 (so the
# 2D reshape is 4x4). The paper-scale defaults are d=400 -> 20x20.
cfg = RunConfig(d=16, channels=4, pool=2, pad=1).resolved()
print(f"config: d={cfg.d} -> planes {cfg.d1}x{cfg.d2}, kernel {cfg.kernel}, "
      f"pad {cfg.pad}, {cfg.channels} conv channels")

# Step 1: embeddings. A fact r(e1, e2, e3) with the entity at position 1
# masked: the model sees the relation and the two remaining entities.
fact = MaskedTuple(relation=0, entities=(1, 2, 3), masked_pos=1)
print(f"\nfact arity {fact.arity}, predicting position {fact.masked_pos} "
      f"(target entity {fact.target}); kept entities {fact.kept_entities}")

rel_vec = rng.normal(size=cfg.d)
ent_vecs = [rng.normal(size=cfg.d) for _ in fact.kept_entities]

# Step 2: reshape each d-vector into a d1 x d2 plane, row-major.
rel_plane = reshape_2d(rel_vec, cfg.d1, cfg.d2)
ent_planes = [reshape_2d(v, cfg.d1, cfg.d2) for v in ent_vecs]
print(f"reshaped plane: {rel_plane.shape}")

# Step 3: the alternate mask stack interleaves the relation plane before
# every kept entity plane, so the cube depth is 2*(arity-1).
cube = alternate_mask_stack(rel_plane, ent_planes)
print(f"alternate mask stack -> cube {cube.shape} (depth = 2*(n-1) = {cube.shape[-1]})")
print("even depth slices are the relation plane:",
      all(np.array_equal(cube[..., i], rel_plane) for i in range(0, cube.shape[-1], 2)))

# Step 4: circular padding wraps the height/width borders toroidally;
# the depth axis is never padded.
padded = circular_pad_hw(cube, cfg.pad)
print(f"circular pad p={cfg.pad} -> {padded.shape}")
print("wrap check (top-left corner comes from the opposite corner):",
      padded[0, 0, 0] == cube[-1, -1, 0])

# Step 5: full-depth 3D convolution. The kernel depth always equals the
# cube depth, so the output depth collapses to 1 and one architecture
# serves every arity.
kernels = rng.normal(size=(cfg.channels, cfg.kernel, cfg.kernel, cube.shape[-1]))
maps = conv3d_valid(padded, kernels)
print(f"conv with {cfg.channels} kernels {kernels.shape[1:]} -> feature maps {maps.shape}")
print(f"depth collapsed to {maps.shape[-1]}; spatial size back to {cfg.d1}x{cfg.d2}")

# Step 6: the full model adds batchnorm/ReLU, channel max-pooling,
# flatten and a fully connected layer back to d, then scores every
# entity at once (1-N scoring).
params = ModelParams.init(6, 2, cfg, arities=[3], rng=np.random.default_rng(1))
v_out, _ = forward(params, [fact], training=False)
logits, probs = score_all_entities(params, v_out)
print(f"\nfull encoder output: {v_out.shape}; logits over entities: {logits.shape}")
print(f"probabilities sum to {probs.sum():.6f}; "
      f"top-ranked entity for the masked slot: {int(logits[0].argmax())}")
