"""Stratified train/validation/test splitting and protocol assembly."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from recapdet.data import DomainDataset
from recapdet.errors import ConfigError

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        problems = []
        if any(f <= 0 for f in fr):
            problems.append(f"split fractions must be positive, got {fr}")
        if not math.isclose(sum(fr), 1.0, rel_tol=0, abs_tol=1e-9):
            problems.append(f"split fractions must sum to 1, got {sum(fr)}")
        if problems:
            raise ConfigError("invalid SplitSpec: " + "; ".join(problems), problems)

    @property
    def fractions(self) -> tuple:
        return (self.train, self.val, self.test)


def largest_remainder(n: int, fractions) -> np.ndarray:
    quota = n * np.asarray(fractions, dtype=np.float64)
    counts = np.floor(quota).astype(np.int64)
    order = np.argsort(-(quota - counts), kind="stable")
    counts[order[: n - counts.sum()]] += 1
    return counts


def _allocate(cell_sizes: list, totals: np.ndarray, fractions) -> np.ndarray:
    """Integer (cell x split) table with exact row sums ``cell_sizes`` and column sums ``totals``."""
    quota = np.outer(cell_sizes, fractions)
    table = np.floor(quota).astype(np.int64)
    need_row = np.asarray(cell_sizes) - table.sum(axis=1)
    need_col = totals - table.sum(axis=0)
    frac = quota - table
    for flat in np.argsort(-frac, axis=None, kind="stable"):
        r, c = divmod(int(flat), len(fractions))
        if need_row[r] > 0 and need_col[c] > 0:
            table[r, c] += 1
            need_row[r] -= 1
            need_col[c] -= 1
    # leftovers can only remain when the greedy pass painted itself into a corner
    while need_row.sum() > 0:
        r = int(np.flatnonzero(need_row > 0)[0])
        c = int(np.flatnonzero(need_col > 0)[0])
        table[r, c] += 1
        need_row[r] -= 1
        need_col[c] -= 1
    return table


def split_indices(labels, domains, spec: SplitSpec = SplitSpec()) -> tuple:
    """Index arrays for the three splits, stratified by (class, domain).

    Per-class totals follow largest-remainder rounding of the fractions and are
    then shared among that class's domain cells, so each split's class counts
    are within one sample of their exact quota.
    """
    labels = np.asarray(labels)
    domains = np.asarray(domains, dtype=object)
    if len(labels) == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    parts = [[] for _ in SPLIT_NAMES]
    for cls in sorted(set(labels.tolist())):
        cls_idx = np.flatnonzero(labels == cls)
        doms = sorted(set(domains[cls_idx].tolist()))
        cells = [cls_idx[domains[cls_idx] == d] for d in doms]
        totals = largest_remainder(len(cls_idx), spec.fractions)
        table = _allocate([len(c) for c in cells], totals, spec.fractions)
        for cell, counts in zip(cells, table):
            perm = cell[rng.permutation(len(cell))]
            bounds = np.concatenate([[0], np.cumsum(counts)])
            for k in range(len(SPLIT_NAMES)):
                parts[k].append(perm[bounds[k]:bounds[k + 1]])
    return tuple(np.sort(np.concatenate(p)).astype(np.int64) for p in parts)


def split_8_1_1(dataset: DomainDataset, spec: SplitSpec = SplitSpec()) -> tuple:
    idx = split_indices(dataset.labels, dataset.domains, spec)
    return tuple(dataset.subset(i, f"{dataset.name}/{n}") for i, n in zip(idx, SPLIT_NAMES))


# -- protocols --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentProtocol:
    name: str
    train_domains: tuple
    test_domains: tuple
    kind: str

    def __post_init__(self):
        tr, te = set(self.train_domains), set(self.test_domains)
        if self.kind == "intra":
            ok = len(tr) == 1 and tr == te
        elif self.kind == "inter":
            ok = len(tr) > 1 and tr == te
        elif self.kind == "cross":
            ok = bool(tr) and bool(te) and not tr & te
        else:
            raise ConfigError(f"unknown protocol kind {self.kind!r}")
        if not ok:
            raise ConfigError(f"protocol {self.name}: domains {self.train_domains} -> {self.test_domains} "
                              f"violate the {self.kind} invariant")

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "train_domains": list(self.train_domains), "test_domains": list(self.test_domains)}


def build_protocols(domains) -> list:
    """Three intra, one inter and three leave-one-domain-out protocols, in that order."""
    d = list(domains)
    if len(d) != 3 or len(set(d)) != 3:
        raise ConfigError(f"build_protocols needs exactly 3 distinct domains, got {d}")
    d1, d2, d3 = d
    out = [ExperimentProtocol(f"intra-{x}", (x,), (x,), "intra") for x in d]
    out.append(ExperimentProtocol("inter", (d1, d2, d3), (d1, d2, d3), "inter"))
    for tr, te in (((d1, d2), d3), ((d2, d3), d1), ((d3, d1), d2)):
        out.append(ExperimentProtocol(f"cross-{'+'.join(tr)}-{te}", tr, (te,), "cross"))
    return out
