"""Filtered link-prediction evaluation: MRR and Hits@k over entity rankings.

For every tuple in a split and every entity position, the model scores all
entities; candidates that would form a different known-true tuple are
removed, and the target's tie-averaged rank among the survivors feeds the
metrics. Ranking happens on raw logits (softmax is monotone, so the
ordering is identical).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import build_filter_index
from .errors import DataError
from .layers import MaskedTuple
from .model import forward, score_all_entities

__all__ = ["RankRecord", "MetricsReport", "rank_of_target", "evaluate_split"]

EVAL_BATCH = 512


@dataclass(frozen=True)
class RankRecord:
    """Filtered rank of one (tuple, position) prediction."""

    tuple_index: int
    position: int
    arity: int
    rank: float
    candidates: int


def rank_of_target(logits, target, filtered_out=()):
    """Tie-averaged filtered rank of the target entity.

    rank = 1 + (#survivors scoring strictly higher) + (#ties)/2, where the
    survivors exclude `filtered_out` and the target itself. Raises if the
    target is filtered out.
    """
    logits = np.asarray(logits)
    filtered = np.zeros(logits.shape[0], dtype=bool)
    idx = np.fromiter(filtered_out, dtype=np.int64, count=-1)
    if idx.size:
        filtered[idx] = True
    if filtered[target]:
        raise DataError(f"target entity {target} is in the filtered-out set")
    t = logits[target]
    kept = logits[~filtered]
    better = int(np.count_nonzero(kept > t))
    ties = int(np.count_nonzero(kept == t)) - 1  # the target ties with itself
    rank = 1.0 + better + ties / 2.0
    return rank, kept.shape[0]


def _aggregate(records):
    if not records:
        return {"mrr": 0.0, "hits1": 0.0, "hits3": 0.0, "hits10": 0.0, "count": 0}
    ranks = np.asarray([r.rank for r in records])
    return {
        "mrr": float((1.0 / ranks).mean()),
        "hits1": float((ranks <= 1).mean()),
        "hits3": float((ranks <= 3).mean()),
        "hits10": float((ranks <= 10).mean()),
        "count": len(records),
    }


@dataclass
class MetricsReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    count: int
    skipped: int
    per_arity: dict = field(default_factory=dict)
    per_position: dict = field(default_factory=dict)
    records: list = field(default_factory=list)

    @classmethod
    def from_records(cls, records, skipped=0, keep_records=False):
        summary = _aggregate(records)
        by_arity = {}
        by_pos = {}
        for r in records:
            by_arity.setdefault(r.arity, []).append(r)
            by_pos.setdefault(r.position + 1, []).append(r)
        return cls(
            **summary,
            skipped=skipped,
            per_arity={a: _aggregate(v) for a, v in sorted(by_arity.items())},
            per_position={p: _aggregate(v) for p, v in sorted(by_pos.items())},
            records=list(records) if keep_records else [],
        )

    def to_text(self):
        lines = [
            f"mrr={self.mrr!r}",
            f"hits1={self.hits1!r}",
            f"hits3={self.hits3!r}",
            f"hits10={self.hits10!r}",
            f"count={self.count}",
            f"skipped={self.skipped}",
        ]
        for arity, agg in self.per_arity.items():
            lines.append(
                f"arity={arity} count={agg['count']} mrr={agg['mrr']!r} "
                f"hits1={agg['hits1']!r} hits3={agg['hits3']!r} hits10={agg['hits10']!r}"
            )
        for pos, agg in self.per_position.items():
            lines.append(
                f"position={pos} count={agg['count']} mrr={agg['mrr']!r} "
                f"hits1={agg['hits1']!r} hits3={agg['hits3']!r} hits10={agg['hits10']!r}"
            )
        return "\n".join(lines) + "\n"

    def table(self):
        rows = [("MRR", self.mrr), ("Hits@1", self.hits1), ("Hits@3", self.hits3),
                ("Hits@10", self.hits10), ("records", self.count)]
        if self.skipped:
            rows.append(("skipped (unsupported arity)", self.skipped))
        width = max(len(k) for k, _ in rows)
        out = [f"{k:<{width}}  {v:.4f}" if isinstance(v, float) else f"{k:<{width}}  {v}"
               for k, v in rows]
        return "\n".join(out)


def evaluate_split(params, dataset, split_name, filter_index=None, keep_records=False):
    """Filtered MRR / Hits@k of a model over one dataset split.

    Every entity position of every tuple is evaluated. Tuples of arities the
    model does not support are counted in `skipped` with a warning instead
    of failing the whole evaluation.
    """
    tuples = dataset.split(split_name)
    if filter_index is None:
        filter_index = build_filter_index(dataset)

    by_arity = {}
    skipped = 0
    for ti, t in enumerate(tuples):
        if not params.supports_arity(t.arity):
            skipped += t.arity
            continue
        for pos in range(t.arity):
            by_arity.setdefault(t.arity, []).append(
                (ti, MaskedTuple(t.relation, t.entities, pos))
            )
    if skipped:
        warnings.warn(f"skipped {skipped} predictions with unsupported arities")

    records = []
    for arity in sorted(by_arity):
        pending = by_arity[arity]
        for start in range(0, len(pending), EVAL_BATCH):
            chunk = pending[start : start + EVAL_BATCH]
            batch = [mt for _, mt in chunk]
            v_out, _ = forward(params, batch, training=False)
            logits, _ = score_all_entities(params, v_out)
            for row, (ti, mt) in enumerate(chunk):
                known = filter_index.replacements_for(
                    mt.relation, mt.entities, mt.masked_pos
                )
                filtered = known - {mt.target}
                rank, n_cand = rank_of_target(logits[row], mt.target, filtered)
                records.append(
                    RankRecord(ti, mt.masked_pos, arity, rank, n_cand)
                )
    return MetricsReport.from_records(records, skipped, keep_records)
