"""Mini-batch training: masked expansion, the multi-class log loss over
entity candidates, negative sampling, AdaGrad updates and early stopping.

Each tuple in a batch expands into one masked variant per entity position;
by default every entity is a scoring candidate (1-N mode). The sampled mode
restricts candidates to the target plus N corruptions drawn per position,
rejecting corruptions that form known-true tuples.
"""

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import build_filter_index
from .errors import DataError, DivergenceError, UsageError
from .evaluate import evaluate_split
from .layers import MaskedTuple
from .model import (
    ModelParams,
    backward,
    clone_params,
    forward,
    score_all_entities,
    score_backward,
    trainable_arrays,
)
from .tensor_ops import stable_softmax

__all__ = [
    "expand_masked",
    "multiclass_log_loss",
    "batch_log_loss",
    "sample_negatives",
    "AdaGradState",
    "adagrad_step",
    "EpochRecord",
    "TrainReport",
    "train",
]


def expand_masked(tuples):
    """All masked variants of a batch: tuple order, then position order."""
    if not tuples:
        raise DataError("cannot expand an empty batch")
    return [
        MaskedTuple(t.relation, t.entities, pos)
        for t in tuples
        for pos in range(len(t.entities))
    ]


def multiclass_log_loss(logits, target_index):
    """-log softmax(logits)[target] with its gradient (softmax minus one-hot)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise DataError("empty candidate set")
    if not 0 <= target_index < logits.size:
        raise DataError(f"target index {target_index} outside candidate set")
    shifted = logits - logits.max()
    lse = np.log(np.exp(shifted).sum())
    loss = lse - shifted[target_index]
    grad = stable_softmax(logits)
    grad[target_index] -= 1.0
    return float(loss), grad


def batch_log_loss(logits, targets):
    """Mean multi-class log loss over rows; gradient already divided by B."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(b), targets]
    grad = stable_softmax(logits, axis=1)
    grad[np.arange(b), targets] -= 1.0
    return float(losses.mean()), grad / b


def sample_negatives(
    tup, position, n_samples, n_entities, rng, filter_index=None, max_attempts=100
):
    """Draw n distinct corrupting entity ids for one tuple position.

    Every id differs from the true entity; ids forming a known-true tuple
    are redrawn up to `max_attempts` times per slot and then accepted with a
    warning.
    """
    if n_entities < 2:
        raise DataError("need at least two entities to sample negatives")
    if n_samples < 1:
        raise UsageError(f"negative rate must be >= 1, got {n_samples}")
    if n_samples > n_entities - 1:
        raise UsageError(
            f"cannot draw {n_samples} distinct corruptions from {n_entities} entities"
        )
    target = tup.entities[position]
    known = (
        filter_index.replacements_for(tup.relation, tup.entities, position)
        if filter_index is not None
        else frozenset()
    )
    chosen = []
    taken = set()
    for _ in range(n_samples):
        pick = None
        for _ in range(max_attempts):
            c = int(rng.integers(n_entities))
            if c == target or c in taken or c in known:
                continue
            pick = c
            break
        if pick is None:
            warnings.warn(
                f"negative sampler hit the {max_attempts}-attempt cap at position "
                f"{position}; accepting a known-true corruption"
            )
            for _ in range(1000):
                c = int(rng.integers(n_entities))
                if c != target and c not in taken:
                    pick = c
                    break
            if pick is None:  # deterministic fallback for tiny vocabularies
                pick = next(
                    c for c in range(n_entities) if c != target and c not in taken
                )
        chosen.append(pick)
        taken.add(pick)
    return chosen


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdaGradState:
    """Per-parameter accumulated squared gradients plus the decaying rate."""

    lr: float
    lr_decay: float
    epsilon: float = 1e-8
    accumulators: dict = field(default_factory=dict)


def adagrad_step(params, grads, state, epoch_index):
    """One in-place AdaGrad update: param -= lr_epoch * g / (sqrt(acc) + eps).

    lr_epoch = lr * lr_decay ** epoch_index. Raises DivergenceError on a
    non-finite gradient.
    """
    lr_epoch = state.lr * state.lr_decay**epoch_index
    arrays = dict(trainable_arrays(params))
    for name in sorted(grads):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name}")
        acc = state.accumulators.get(name)
        if acc is None or acc.shape != g.shape:
            acc = np.zeros_like(g)
            state.accumulators[name] = acc
        acc += g * g
        arrays[name] -= (lr_epoch * g / (np.sqrt(acc) + state.epsilon)).astype(
            arrays[name].dtype
        )
    return lr_epoch


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    wall_s: float
    lr: float

    _FIELDS = ("epoch", "loss", "mrr", "hits1", "hits3", "hits10", "wall_s", "lr")

    def to_line(self):
        return " ".join(f"{k}={getattr(self, k)!r}" for k in self._FIELDS)

    @classmethod
    def from_line(cls, line):
        parts = dict(item.split("=", 1) for item in line.split())
        if set(parts) != set(cls._FIELDS):
            raise DataError(f"bad epoch log line: {line!r}")
        return cls(
            epoch=int(parts["epoch"]),
            **{k: float(parts[k]) for k in cls._FIELDS if k != "epoch"},
        )


@dataclass
class TrainReport:
    records: list
    best_epoch: int
    stop_reason: str  # patience | max-epochs | divergence
    divergence_epoch: int = None

    @property
    def best_mrr(self):
        return max((r.mrr for r in self.records), default=0.0)


def _score_full(params, v_out, targets):
    logits, _ = score_all_entities(params, v_out)
    loss, grad_logits = batch_log_loss(logits, targets)
    grad_v, grad_table, grad_bias = score_backward(params, v_out, grad_logits)
    return loss, grad_v, grad_table, grad_bias


def _score_sampled(params, v_out, masked, neg_rate, neg_rng, filter_index):
    b = len(masked)
    cand = np.empty((b, 1 + neg_rate), dtype=np.int64)
    for j, mt in enumerate(masked):
        cand[j, 0] = mt.target
        cand[j, 1:] = sample_negatives(
            mt, mt.masked_pos, neg_rate, params.n_entities, neg_rng, filter_index
        )
    cand_emb = params.entity_table.weights[cand]
    logits = np.einsum("bd,bcd->bc", v_out, cand_emb) + params.entity_bias[cand]
    loss, grad_logits = batch_log_loss(logits, np.zeros(b, dtype=np.int64))
    grad_v = np.einsum("bc,bcd->bd", grad_logits, cand_emb)
    grad_table = np.zeros_like(params.entity_table.weights)
    np.add.at(grad_table, cand, grad_logits[..., None] * v_out[:, None, :])
    grad_bias = np.zeros_like(params.entity_bias)
    np.add.at(grad_bias, cand, grad_logits)
    return loss, grad_v, grad_table, grad_bias


def train(dataset, config, log_fn=None, dtype=np.float32):
    """Run the full training loop and return (best parameters, report).

    Keeps the parameter snapshot with the best validation MRR; stops on the
    patience window, the epoch cap, or divergence. All randomness derives
    from config.seed; single-threaded runs with the same seed are
    reproducible.
    """
    cfg = config.resolved()
    if not dataset.train or not dataset.valid:
        raise DataError("training requires non-empty train and valid splits")
    init_rng = np.random.default_rng(cfg.seed)
    arities = sorted({t.arity for t in dataset.train})
    params = ModelParams.init(
        dataset.n_entities, dataset.n_relations, cfg, arities, init_rng, dtype
    )
    filter_index = build_filter_index(dataset)
    opt = AdaGradState(lr=cfg.lr, lr_decay=cfg.lr_decay)

    best = clone_params(params)
    best_mrr = -1.0
    best_epoch = 0
    since_best = 0
    records = []
    stop_reason = "max-epochs"
    divergence_epoch = None

    train_tuples = dataset.train
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        shuffle_rng = np.random.default_rng([cfg.seed, epoch, 0])
        drop_rng = np.random.default_rng([cfg.seed, epoch, 1])
        neg_rng = np.random.default_rng([cfg.seed, epoch, 2])
        order = shuffle_rng.permutation(len(train_tuples))
        loss_sum = 0.0
        variant_count = 0
        lr_epoch = opt.lr * opt.lr_decay ** (epoch - 1)
        try:
            for start in range(0, len(order), cfg.batch_size):
                chunk = order[start : start + cfg.batch_size]
                masked = expand_masked([train_tuples[i] for i in chunk])
                for mt in masked:
                    params.ensure_arity(mt.arity, init_rng)
                v_out, cache = forward(params, masked, training=True, rng=drop_rng)
                if cfg.neg_mode == "full":
                    targets = np.asarray([mt.target for mt in masked])
                    loss, grad_v, grad_table, grad_bias = _score_full(
                        params, v_out, targets
                    )
                else:
                    loss, grad_v, grad_table, grad_bias = _score_sampled(
                        params, v_out, masked, cfg.neg_rate, neg_rng, filter_index
                    )
                if not np.isfinite(loss):
                    raise DivergenceError("non-finite loss", epoch=epoch)
                grads = backward(params, cache, grad_v.astype(dtype))
                grads["entity_emb"] += grad_table.astype(dtype)
                grads["entity_bias"] += grad_bias.astype(dtype)
                adagrad_step(params, grads, opt, epoch - 1)
                loss_sum += loss * len(masked)
                variant_count += len(masked)
        except DivergenceError as err:
            stop_reason = "divergence"
            divergence_epoch = err.epoch or epoch
            break

        metrics = evaluate_split(params, dataset, "valid", filter_index)
        record = EpochRecord(
            epoch=epoch,
            loss=loss_sum / max(variant_count, 1),
            mrr=metrics.mrr,
            hits1=metrics.hits1,
            hits3=metrics.hits3,
            hits10=metrics.hits10,
            wall_s=round(time.perf_counter() - t0, 6),
            lr=lr_epoch,
        )
        records.append(record)
        if log_fn is not None:
            log_fn(record)
        if metrics.mrr > best_mrr:
            best_mrr = metrics.mrr
            best_epoch = epoch
            best = clone_params(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                stop_reason = "patience"
                break

    return best, TrainReport(
        records=records,
        best_epoch=best_epoch,
        stop_reason=stop_reason,
        divergence_epoch=divergence_epoch,
    )
