"""Binary checkpoint format for model parameters.

Layout (all integers little-endian):

    magic "HYCB"
    version             u32
    config length       u32, then UTF-8 key=value config text
    parameter count     u32
    per parameter:
        name length     u32, then UTF-8 name
        rank            u32
        dims            rank * u32
        payload         float32 little-endian, row-major
    checksum            8 bytes, blake2b(digest_size=8) of all preceding bytes

Parameters are written sorted by name, so save -> load -> save is
byte-identical.
"""

import hashlib
import struct

import numpy as np

from .config import RunConfig
from .errors import CheckpointError
from .layers import BatchNormState, EmbeddingTable
from .model import ModelParams, named_arrays

__all__ = ["MAGIC", "VERSION", "save_checkpoint", "load_checkpoint"]

MAGIC = b"HYCB"
VERSION = 1


def _checksum(blob):
    return hashlib.blake2b(blob, digest_size=8).digest()


def save_checkpoint(params, path):
    """Serialize params (float32 payloads) and their config to `path`."""
    parts = [MAGIC, struct.pack("<I", VERSION)]
    config_text = params.config.to_text().encode("utf-8")
    parts.append(struct.pack("<I", len(config_text)))
    parts.append(config_text)
    entries = named_arrays(params)
    parts.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        payload = np.ascontiguousarray(arr, dtype="<f4")
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<I", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<I", payload.ndim))
        parts.append(struct.pack(f"<{payload.ndim}I", *payload.shape))
        parts.append(payload.tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(_checksum(blob))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise CheckpointError("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path):
    """Read a checkpoint back into ModelParams, verifying integrity."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 + 8:
        raise CheckpointError("checkpoint too short")
    blob, digest = raw[:-8], raw[-8:]
    if _checksum(blob) != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = RunConfig.from_text(r.take(r.u32()).decode("utf-8")).resolved()
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = tuple(r.u32() for _ in range(rank))
        count = int(np.prod(shape)) if shape else 1
        payload = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        arrays[name] = payload.copy()
    if r.pos != len(blob):
        raise CheckpointError("trailing bytes after last parameter")
    return _assemble(config, arrays)


def _require(arrays, name):
    if name not in arrays:
        raise CheckpointError(f"checkpoint missing parameter {name!r}")
    return arrays.pop(name)


def _bn_state(arrays, prefix):
    return BatchNormState(
        gamma=_require(arrays, f"{prefix}.gamma"),
        beta=_require(arrays, f"{prefix}.beta"),
        running_mean=_require(arrays, f"{prefix}.running_mean"),
        running_var=_require(arrays, f"{prefix}.running_var"),
    )


def _assemble(config, arrays):
    entity = _require(arrays, "entity_emb")
    relation = _require(arrays, "relation_emb")
    params = ModelParams(
        config=config,
        entity_table=EmbeddingTable(entity),
        relation_table=EmbeddingTable(relation),
        entity_bias=_require(arrays, "entity_bias"),
        kernel_bank={},
        fc_weight=_require(arrays, "fc_weight"),
        fc_bias=_require(arrays, "fc_bias"),
        bn_conv=_bn_state(arrays, "bn_conv"),
        bn_out=_bn_state(arrays, "bn_out"),
    )
    if "rel_kernels" in arrays:
        params.rel_kernels = arrays.pop("rel_kernels")
        params.ent_kernels = _require(arrays, "ent_kernels")
    for name in sorted(arrays):
        if name.startswith("kernel_bank/"):
            params.kernel_bank[int(name.split("/", 1)[1])] = arrays[name]
        elif name.startswith("fc_bank/"):
            params.fc_bank[int(name.split("/", 1)[1])] = arrays[name]
        else:
            raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
    _validate_shapes(params)
    return params


def _validate_shapes(params):
    cfg = params.config
    checks = [
        (params.entity_table.weights.ndim == 2, "entity table rank"),
        (params.entity_table.dim == cfg.d, "entity table width"),
        (params.relation_table.dim == cfg.d, "relation table width"),
        (params.entity_bias.shape == (params.entity_table.rows,), "entity bias length"),
        (params.fc_bias.shape == (cfg.d,), "fc bias length"),
    ]
    if cfg.variant != "hyplane":
        checks.append(
            (params.fc_weight.shape == (cfg.d, cfg.flat_features), "fc weight shape")
        )
        for arity, bank in params.kernel_bank.items():
            checks.append(
                (
                    bank.shape
                    == (cfg.channels, cfg.kernel, cfg.kernel, cfg.cube_depth(arity)),
                    f"kernel bank arity {arity}",
                )
            )
    else:
        k = cfg.kernel
        checks.append((params.rel_kernels is not None, "planar kernels present"))
        if params.rel_kernels is not None:
            checks.append((params.rel_kernels.shape == (cfg.channels, k, k), "rel kernels"))
            checks.append((params.ent_kernels.shape == (cfg.channels, k, k), "ent kernels"))
    for ok, what in checks:
        if not ok:
            raise CheckpointError(f"checkpoint shape inconsistent: {what}")
