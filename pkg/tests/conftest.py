"""Shared fixtures: toy configs/params, synthetic datasets, gradient helpers."""

import numpy as np
import pytest

from hycube import MaskedTuple, RunConfig
from hycube.data import Dataset, KnowledgeTuple, Vocab
from hycube.model import (
    ModelParams,
    backward,
    forward,
    score_all_entities,
    score_backward,
    trainable_arrays,
)
from hycube.training import batch_log_loss


def toy_config(**overrides):
    """A small config safe for 64-bit gradient checking (d=16, 4 channels)."""
    base = dict(
        d=16,
        channels=4,
        pool=2,
        pad=1,
        dropout_input=0.0,
        dropout_feature=0.0,
    )
    base.update(overrides)
    return RunConfig(**base).resolved()


def toy_params(cfg=None, n_entities=7, n_relations=3, arities=(2, 3, 4), seed=0):
    cfg = cfg or toy_config()
    rng = np.random.default_rng(seed)
    return ModelParams.init(n_entities, n_relations, cfg, arities, rng, np.float64)


def toy_batch(arities=(3, 2, 4), n_entities=7, n_relations=3, seed=1):
    """Random masked tuples covering the given arities."""
    rng = np.random.default_rng(seed)
    batch = []
    for arity in arities:
        ents = tuple(int(rng.integers(n_entities)) for _ in range(arity))
        batch.append(
            MaskedTuple(int(rng.integers(n_relations)), ents, int(rng.integers(arity)))
        )
    return batch


def model_loss(params, batch, targets):
    """Training-mode forward + full 1-N loss, without running-stat updates."""
    v_out, cache = forward(params, batch, training=True, update_running=False)
    logits, _ = score_all_entities(params, v_out)
    loss, grad_logits = batch_log_loss(logits, targets)
    return loss, v_out, cache, grad_logits


def model_grads(params, batch, targets):
    """Analytic gradients of the mean 1-N loss w.r.t. every trainable array."""
    loss, v_out, cache, grad_logits = model_loss(params, batch, targets)
    grad_v, grad_table, grad_bias = score_backward(params, v_out, grad_logits)
    grads = backward(params, cache, grad_v)
    grads["entity_emb"] += grad_table
    grads["entity_bias"] += grad_bias
    return loss, grads


def max_model_fd_error(params, batch, epsilon=1e-6, coords_per_array=None, seed=0):
    """Max relative finite-difference error over (a subset of) all parameters."""
    targets = np.array([mt.target for mt in batch])
    _, grads = model_grads(params, batch, targets)
    pick = np.random.default_rng(seed)
    worst = 0.0
    for name, arr in trainable_arrays(params):
        flat, gflat = arr.ravel(), grads[name].ravel()
        if coords_per_array is None or flat.size <= coords_per_array:
            idxs = range(flat.size)
        else:
            idxs = pick.choice(flat.size, size=coords_per_array, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = model_loss(params, batch, targets)[0]
            flat[i] = orig - epsilon
            lo = model_loss(params, batch, targets)[0]
            flat[i] = orig
            numeric = (hi - lo) / (2 * epsilon)
            worst = max(worst, abs(gflat[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def make_dataset(train, valid=None, test=None):
    """Build an in-memory Dataset from (relation name, [entity names]) facts."""
    vocab_e, vocab_r = Vocab(), Vocab()

    def convert(facts):
        out = []
        for rel, ents in facts or []:
            out.append(
                KnowledgeTuple(vocab_r.add(rel), tuple(vocab_e.add(e) for e in ents))
            )
        return out

    splits = [convert(s) for s in (train, valid, test)]
    return Dataset(vocab_e, vocab_r, *splits, malformed=[])


def synthetic_facts(n_tuples=50, n_entities=20, arities=(2, 3, 4), n_relations=3, seed=7):
    """Random facts over a small vocabulary, as (relation, entities) name pairs."""
    rng = np.random.default_rng(seed)
    facts = []
    for i in range(n_tuples):
        arity = int(arities[i % len(arities)])
        ents = [f"e{int(rng.integers(n_entities))}" for _ in range(arity)]
        facts.append((f"r{int(rng.integers(n_relations))}", ents))
    return facts


def write_dataset_dir(path, train, valid=None, test=None):
    """Write facts as tab-separated split files; returns the directory path."""
    path.mkdir(parents=True, exist_ok=True)
    for name, facts in (("train", train), ("valid", valid), ("test", test)):
        lines = [
            "\t".join([rel] + list(ents)) for rel, ents in (facts or [])
        ]
        (path / f"{name}.txt").write_text(
            "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
        )
    return path


def bias_only_params(cfg, n_entities, n_relations, arities, bias):
    """Zeroed model whose eval-mode logits equal the given entity bias vector.

    With all weights zero the encoder output is zero for every input, so the
    1-N logits reduce to the bias term. Useful for handcrafted ranking
    fixtures.
    """
    params = ModelParams.init(
        n_entities, n_relations, cfg, arities, np.random.default_rng(0), np.float64
    )
    for _, arr in trainable_arrays(params):
        arr[...] = 0.0
    params.entity_bias[...] = np.asarray(bias, dtype=np.float64)
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
