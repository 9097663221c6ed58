"""Dataset ingestion for n-ary tuple files, vocabularies and the filter index.

On-disk contract: a dataset directory holds train.txt, valid.txt and
test.txt. Each non-empty line is one fact: the relation token followed by
two or more entity tokens, tab-separated (permissive mode accepts any
whitespace), UTF-8, LF or CRLF. Blank lines and lines starting with '#'
are skipped; lines with fewer than three tokens are rejected and reported
with their line numbers.
"""

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import DataError

__all__ = [
    "KnowledgeTuple",
    "Vocab",
    "Dataset",
    "FilterIndex",
    "DatasetStats",
    "SPLIT_FILES",
    "load_dataset",
    "build_filter_index",
    "dataset_stats",
    "extract_fixed_arity",
]

SPLIT_FILES = ("train.txt", "valid.txt", "test.txt")


class KnowledgeTuple(NamedTuple):
    """One fact: a relation id and its ordered entity ids (arity >= 2)."""

    relation: int
    entities: tuple

    @property
    def arity(self):
        return len(self.entities)


@dataclass
class Vocab:
    """Dense name<->id bijection in first-appearance order."""

    names: list = field(default_factory=list)
    ids: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.names)

    def add(self, name):
        idx = self.ids.get(name)
        if idx is None:
            idx = len(self.names)
            self.ids[name] = idx
            self.names.append(name)
        return idx

    def name_of(self, idx):
        return self.names[idx]

    def id_of(self, name):
        return self.ids[name]


@dataclass
class Dataset:
    """Parsed splits, vocabularies and summary counts of one dataset directory."""

    entities: Vocab
    relations: Vocab
    train: list
    valid: list
    test: list
    malformed: list  # (filename, line number, reason)

    @property
    def n_entities(self):
        return len(self.entities)

    @property
    def n_relations(self):
        return len(self.relations)

    def split(self, name):
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise DataError(f"unknown split {name!r}") from None

    def all_tuples(self):
        yield from self.train
        yield from self.valid
        yield from self.test

    def arity_counts(self):
        return Counter(t.arity for t in self.all_tuples())

    def arities(self):
        return sorted(self.arity_counts())


def _parse_file(path, vocab_e, vocab_r, permissive, malformed):
    tuples = []
    fname = os.path.basename(path)
    with open(path, encoding="utf-8", newline=None) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tokens = line.split(None) if permissive else line.split("\t")
            tokens = [t for t in tokens if t]
            if len(tokens) < 3:
                malformed.append((fname, lineno, f"{len(tokens)} token(s), need >= 3"))
                continue
            rel = vocab_r.add(tokens[0])
            ents = tuple(vocab_e.add(t) for t in tokens[1:])
            tuples.append(KnowledgeTuple(rel, ents))
    return tuples


def load_dataset(directory, permissive=False):
    """Load train/valid/test from a dataset directory.

    Vocabulary ids are dense from 0 in first-appearance order over train,
    then valid, then test, so re-loading the same directory is
    reproducible. Raises DataError for missing files or a dataset with no
    valid tuples at all.
    """
    paths = [os.path.join(directory, name) for name in SPLIT_FILES]
    for path in paths:
        if not os.path.isfile(path):
            raise DataError(f"missing dataset file: {path}")
    vocab_e, vocab_r = Vocab(), Vocab()
    malformed = []
    splits = [_parse_file(p, vocab_e, vocab_r, permissive, malformed) for p in paths]
    dataset = Dataset(vocab_e, vocab_r, *splits, malformed=malformed)
    if sum(len(s) for s in splits) == 0:
        raise DataError(f"no valid tuples found under {directory}")
    return dataset


@dataclass
class FilterIndex:
    """All known-true tuples plus per-(tuple, position) replacement lookups."""

    tuples: set
    replacements: dict  # (relation, position, context entities) -> set of ids

    def __len__(self):
        return len(self.tuples)

    def is_true(self, relation, entities):
        return (relation, tuple(entities)) in self.tuples

    def replacements_for(self, relation, entities, position):
        """Entity ids that make a known-true tuple when placed at `position`."""
        entities = tuple(entities)
        context = entities[:position] + entities[position + 1 :]
        return self.replacements.get((relation, position, context), frozenset())


def build_filter_index(dataset):
    """Index every distinct tuple across the three splits."""
    tuples = set()
    replacements = {}
    for t in dataset.all_tuples():
        key = (t.relation, t.entities)
        if key in tuples:
            continue
        tuples.add(key)
        for pos, ent in enumerate(t.entities):
            context = t.entities[:pos] + t.entities[pos + 1 :]
            replacements.setdefault((t.relation, pos, context), set()).add(ent)
    return FilterIndex(tuples, replacements)


@dataclass
class DatasetStats:
    n_entities: int
    n_relations: int
    split_sizes: dict
    arity_counts: dict
    min_arity: int
    max_arity: int
    relation_arities: dict  # relation name -> sorted arity list

    def to_text(self):
        lines = [
            f"entities={self.n_entities}",
            f"relations={self.n_relations}",
        ]
        for name in ("train", "valid", "test"):
            lines.append(f"{name}={self.split_sizes[name]}")
        lines.append(f"min_arity={self.min_arity}")
        lines.append(f"max_arity={self.max_arity}")
        for arity in sorted(self.arity_counts):
            lines.append(f"arity_{arity}={self.arity_counts[arity]}")
        return "\n".join(lines) + "\n"

    def table(self):
        rows = [
            ("entities", self.n_entities),
            ("relations", self.n_relations),
            ("train tuples", self.split_sizes["train"]),
            ("valid tuples", self.split_sizes["valid"]),
            ("test tuples", self.split_sizes["test"]),
            ("arity range", f"{self.min_arity}-{self.max_arity}"),
        ]
        rows += [
            (f"arity {a}", n) for a, n in sorted(self.arity_counts.items())
        ]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def dataset_stats(dataset):
    counts = dataset.arity_counts()
    relation_arities = {}
    for t in dataset.all_tuples():
        relation_arities.setdefault(dataset.relations.name_of(t.relation), set()).add(
            t.arity
        )
    return DatasetStats(
        n_entities=dataset.n_entities,
        n_relations=dataset.n_relations,
        split_sizes={
            "train": len(dataset.train),
            "valid": len(dataset.valid),
            "test": len(dataset.test),
        },
        arity_counts=dict(counts),
        min_arity=min(counts) if counts else 0,
        max_arity=max(counts) if counts else 0,
        relation_arities={k: sorted(v) for k, v in relation_arities.items()},
    )


def extract_fixed_arity(src_dir, arity, dst_dir, permissive=False):
    """Write a new dataset directory keeping only tuples of the given arity.

    Entity/relation names are preserved; the vocabulary of the extract is
    re-derived on load. Refuses to produce an empty dataset.
    """
    if arity < 2:
        raise DataError(f"arity must be >= 2, got {arity}")
    for name in SPLIT_FILES:
        if not os.path.isfile(os.path.join(src_dir, name)):
            raise DataError(f"missing dataset file: {os.path.join(src_dir, name)}")
    kept = {}
    for name in SPLIT_FILES:
        lines = []
        with open(os.path.join(src_dir, name), encoding="utf-8", newline=None) as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                tokens = line.split(None) if permissive else line.split("\t")
                tokens = [t for t in tokens if t]
                if len(tokens) - 1 == arity:
                    lines.append("\t".join(tokens))
        kept[name] = lines
    total = sum(len(v) for v in kept.values())
    if total == 0:
        raise DataError(f"no arity-{arity} tuples in {src_dir}; refusing empty output")
    os.makedirs(dst_dir, exist_ok=True)
    for name, lines in kept.items():
        with open(os.path.join(dst_dir, name), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))
    return {name: len(lines) for name, lines in kept.items()}
