"""Count tables and per-node subcompositions.

Every internal node ``j`` of a binary tree splits the reads under it into the
reads of its left subtree (``m1``) and of its right subtree (``m2``). The
mediator analysed at that node is the log-ratio ``log((m1 + c) / (m2 + c))``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .tree import PhyloTree

__all__ = [
    "AlignmentError",
    "CountTable",
    "NodeSubcomposition",
    "NodeStatus",
    "read_counts_tsv",
    "aggregate",
    "aggregate_matrix",
    "flag_degenerate_nodes",
]


class AlignmentError(ValueError):
    """Taxa in the count table and leaves of the tree disagree."""

    def __init__(self, missing_from_tree: Sequence[str] = (), missing_from_table: Sequence[str] = ()):
        self.missing_from_tree = sorted(missing_from_tree)
        self.missing_from_table = sorted(missing_from_table)
        parts = []
        if self.missing_from_tree:
            parts.append(f"taxa absent from tree: {', '.join(self.missing_from_tree)}")
        if self.missing_from_table:
            parts.append(f"tree leaves absent from count table: {', '.join(self.missing_from_table)}")
        super().__init__("; ".join(parts))


class NodeStatus(str, enum.Enum):
    TESTED = "TESTED"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class CountTable:
    """Samples x taxa matrix of nonnegative integer read counts."""

    sample_ids: tuple[str, ...]
    taxa: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape != (len(self.sample_ids), len(self.taxa)):
            raise ValueError(f"counts shape {counts.shape} does not match "
                             f"{len(self.sample_ids)} samples x {len(self.taxa)} taxa")
        if counts.size and (counts < 0).any():
            raise ValueError("counts must be nonnegative")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.mod(counts, 1) == 0):
                raise ValueError("counts must be integers")
        counts = counts.astype(np.int64, copy=True)
        counts.setflags(write=False)
        object.__setattr__(self, "sample_ids", tuple(map(str, self.sample_ids)))
        object.__setattr__(self, "taxa", tuple(map(str, self.taxa)))
        object.__setattr__(self, "counts", counts)
        if len(set(self.taxa)) != len(self.taxa):
            raise ValueError("duplicate taxon names in count table")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError("duplicate sample ids in count table")

    @property
    def depths(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def proportions(self) -> np.ndarray:
        d = self.depths.astype(float)
        d[d == 0] = 1.0
        return self.counts / d[:, None]

    def align_to(self, tree: PhyloTree) -> "CountTable":
        """Reorder columns to the tree's leaf order; raise if the taxa sets differ."""
        leaves = tree.leaf_labels
        have = set(self.taxa)
        missing_tree = have - set(leaves)
        missing_table = set(leaves) - have
        if missing_tree or missing_table:
            raise AlignmentError(missing_tree, missing_table)
        col = {t: k for k, t in enumerate(self.taxa)}
        idx = [col[t] for t in leaves]
        return CountTable(self.sample_ids, leaves, self.counts[:, idx])

    def subset(self, sample_ids: Sequence[str]) -> "CountTable":
        row = {s: k for k, s in enumerate(self.sample_ids)}
        idx = [row[s] for s in sample_ids]
        return CountTable(tuple(sample_ids), self.taxa, self.counts[idx])


def read_counts_tsv(path) -> CountTable:
    """Read a TSV whose first column is the sample id and remaining columns are taxa."""
    df = pd.read_csv(path, sep="\t", dtype={0: str}, index_col=0)
    df.index = df.index.astype(str)
    if df.isna().any().any():
        raise ValueError(f"{path}: count table has missing values")
    return CountTable(tuple(df.index), tuple(map(str, df.columns)), df.to_numpy())


@dataclass(frozen=True)
class NodeSubcomposition:
    node: int
    m1: np.ndarray
    m2: np.ndarray
    logratio: np.ndarray

    @property
    def n_node(self) -> np.ndarray:
        return self.m1 + self.m2


def aggregate_matrix(tree: PhyloTree, table: CountTable, pseudocount: float = 0.5):
    """Vectorized aggregation over all internal nodes.

    Returns
    -------
    nodes : list of int
        Internal nodes in preorder (parents first).
    m1, m2 : ndarray of shape (n_samples, J)
        Reads under the left and right child of each node.
    logratio : ndarray of shape (n_samples, J)
    """
    if not tree.is_binary:
        raise ValueError("aggregation requires a binary tree; call binarize() first")
    if table.taxa != tree.leaf_labels:
        table = table.align_to(tree)
    if pseudocount < 0:
        raise ValueError("pseudocount must be nonnegative")
    node_counts = table.counts @ tree.leaf_matrix.T.astype(np.int64)  # samples x nodes
    nodes = list(tree.internal_order)
    left = [tree.nodes[j].children[0] for j in nodes]
    right = [tree.nodes[j].children[1] for j in nodes]
    m1 = node_counts[:, left]
    m2 = node_counts[:, right]
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.log((m1 + pseudocount) / (m2 + pseudocount))
    return nodes, m1, m2, lr


def aggregate(tree: PhyloTree, table: CountTable, pseudocount: float = 0.5) -> list[NodeSubcomposition]:
    """One :class:`NodeSubcomposition` per internal node, parents first.

    ``m1``/``m2`` are raw counts; the pseudocount enters only the log-ratio.
    """
    nodes, m1, m2, lr = aggregate_matrix(tree, table, pseudocount)
    return [NodeSubcomposition(j, m1[:, k], m2[:, k], lr[:, k]) for k, j in enumerate(nodes)]


def flag_degenerate_nodes(subs: Sequence[NodeSubcomposition], min_var: float = 1e-8,
                          min_nonzero: int = 5) -> list[NodeStatus]:
    """Mark nodes SKIPPED when their log-ratio is (nearly) constant or too sparse."""
    out = []
    for s in subs:
        lr = np.asarray(s.logratio, dtype=float)
        nonzero = int(np.count_nonzero(s.n_node > 0))
        if (lr.size < 2 or not np.all(np.isfinite(lr)) or np.var(lr, ddof=1) < min_var
                or nonzero < min_nonzero):
            out.append(NodeStatus.SKIPPED)
        else:
            out.append(NodeStatus.TESTED)
    return out
