"""Rooted phylogenetic trees: Newick parsing, binarization and traversal.

Trees are stored as flat tuples of :class:`TreeNode` records numbered in
preorder, so the root is always node 0 and every parent has a smaller index
than its children. Branch lengths are kept for round-tripping but are not
used by any analysis.
"""
from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "NewickError",
    "TreeValidationError",
    "TreeNode",
    "PhyloTree",
    "parse_newick",
    "read_newick",
    "binarize",
    "order_internal_nodes",
]


class NewickError(ValueError):
    """Malformed Newick text. ``offset`` is the UTF-8 byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class TreeValidationError(ValueError):
    pass


@dataclass(frozen=True)
class TreeNode:
    index: int
    parent: int | None
    children: tuple[int, ...] = ()
    label: str | None = None
    length: float | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class PhyloTree:
    """Immutable rooted tree.

    Attributes
    ----------
    nodes : tuple of TreeNode
        Nodes in preorder; ``nodes[i].index == i``.
    root : int
        Index of the root (always 0 for trees built by this module).
    """

    nodes: tuple[TreeNode, ...]
    root: int = 0

    def __post_init__(self):
        labels = self.leaf_labels
        if any(not lab for lab in labels):
            raise TreeValidationError("leaf labels must be nonempty")
        if len(set(labels)) != len(labels):
            seen, dup = set(), []
            for lab in labels:
                if lab in seen:
                    dup.append(lab)
                seen.add(lab)
            raise TreeValidationError(f"duplicate leaf labels: {sorted(set(dup))}")

    def __len__(self) -> int:
        return len(self.nodes)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        """Leaf indices in encounter (left-to-right) order."""
        return tuple(n.index for n in self.nodes if n.is_leaf)

    @cached_property
    def leaf_labels(self) -> tuple[str, ...]:
        return tuple(self.nodes[i].label or "" for i in self.leaves)

    @cached_property
    def internal_nodes(self) -> tuple[int, ...]:
        return tuple(n.index for n in self.nodes if not n.is_leaf)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def is_binary(self) -> bool:
        return all(len(self.nodes[i].children) == 2 for i in self.internal_nodes)

    @cached_property
    def internal_order(self) -> tuple[int, ...]:
        return tuple(order_internal_nodes(self))

    def children(self, i: int) -> tuple[int, ...]:
        return self.nodes[i].children

    def parent(self, i: int) -> int | None:
        return self.nodes[i].parent

    def preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            i = stack.pop()
            out.append(i)
            stack.extend(reversed(self.nodes[i].children))
        return out

    def postorder(self) -> list[int]:
        return self.preorder()[::-1]

    @cached_property
    def leaf_matrix(self) -> np.ndarray:
        """Boolean ``(n_nodes, n_leaves)`` matrix; row ``i`` marks leaves under node ``i``."""
        col = {leaf: k for k, leaf in enumerate(self.leaves)}
        mat = np.zeros((len(self.nodes), len(self.leaves)), dtype=bool)
        for i in self.postorder():
            node = self.nodes[i]
            if node.is_leaf:
                mat[i, col[i]] = True
            else:
                for c in node.children:
                    mat[i] |= mat[c]
        mat.setflags(write=False)
        return mat

    def descendant_leaves(self, i: int) -> list[str]:
        labels = self.leaf_labels
        return [labels[k] for k in np.flatnonzero(self.leaf_matrix[i])]

    def ancestors(self, i: int) -> list[int]:
        """Proper ancestors of node ``i`` from its parent up to the root."""
        out = []
        p = self.nodes[i].parent
        while p is not None:
            out.append(p)
            p = self.nodes[p].parent
        return out

    def mrca(self, labels: Sequence[str]) -> int:
        if not labels:
            raise ValueError("mrca of an empty set")
        cols = [self.leaf_column[lab] for lab in labels]
        target = self.leaf_matrix[:, cols].all(axis=1)
        node = self.leaf_index[labels[0]]
        while not target[node]:
            node = self.nodes[node].parent
        return node

    @cached_property
    def leaf_index(self) -> dict[str, int]:
        """Map from leaf label to node index."""
        return {self.nodes[i].label: i for i in self.leaves}

    @cached_property
    def leaf_column(self) -> dict[str, int]:
        """Map from leaf label to its position in :attr:`leaf_labels`."""
        return {lab: k for k, lab in enumerate(self.leaf_labels)}

    def to_newick(self, internal_labels: Mapping[int, str] | None = None,
                  lengths: bool = True) -> str:
        """Serialize to Newick, optionally overriding internal-node labels."""
        internal_labels = internal_labels or {}
        parts: dict[int, str] = {}
        for i in self.postorder():
            node = self.nodes[i]
            if node.is_leaf:
                s = _quote(node.label or "")
            else:
                s = "(" + ",".join(parts.pop(c) for c in node.children) + ")"
                lab = internal_labels.get(i, node.label)
                if lab:
                    s += _quote(lab)
            if lengths and node.length is not None:
                s += ":" + repr(float(node.length))
            parts[i] = s
        return parts[self.root] + ";"


_UNQUOTED_OK = re.compile(r"^[^\s()\[\],:;']+$")


def _quote(label: str) -> str:
    if _UNQUOTED_OK.match(label):
        return label
    return "'" + label.replace("'", "''") + "'"


def _build(raw: list[tuple[int | None, list[int], str | None, float | None]],
           root: int) -> PhyloTree:
    """Build a preorder-numbered tree from ``(parent, children, label, length)`` records."""
    order, stack = [], [root]
    while stack:
        i = stack.pop()
        order.append(i)
        stack.extend(reversed(raw[i][1]))
    new_id = {old: new for new, old in enumerate(order)}
    nodes = []
    for old in order:
        parent, children, label, length = raw[old]
        nodes.append(TreeNode(
            index=new_id[old],
            parent=None if parent is None else new_id[parent],
            children=tuple(new_id[c] for c in children),
            label=label,
            length=length,
        ))
    return PhyloTree(tuple(nodes), 0)


# --- parsing ---------------------------------------------------------------

_PUNCT = "(),:;"


def _tokenize(text: str):
    """Yield ``(kind, value, char_pos)``; kind is a punctuation char or 'label'."""
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch == "[":
            end = text.find("]", i)
            if end < 0:
                raise NewickError("unterminated comment", _byte_offset(text, i))
            i = end + 1
        elif ch in _PUNCT:
            yield ch, ch, i
            i += 1
        elif ch == "'":
            j, buf = i + 1, []
            while True:
                if j >= n:
                    raise NewickError("unterminated quoted label", _byte_offset(text, i))
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(text[j])
                j += 1
            yield "label", "".join(buf), i
            i = j + 1
        else:
            j = i
            while j < n and not text[j].isspace() and text[j] not in _PUNCT + "[']":
                j += 1
            yield "label", text[i:j], i
            i = j


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def parse_newick(text: str) -> PhyloTree:
    """Parse a single Newick tree.

    Multifurcations are kept as-is (see :func:`binarize`); internal labels and
    branch lengths are stored on the nodes.

    Raises
    ------
    NewickError
        On malformed syntax, with the byte offset of the offending token.
    TreeValidationError
        On duplicate or empty leaf labels.
    """
    # records: [parent, children, label, length]
    raw: list[list] = [[None, [], None, None]]
    cur = 0
    prev = "start"
    done_at = None
    for kind, value, pos in _tokenize(text):
        if done_at is not None:
            raise NewickError("unexpected text after ';'", _byte_offset(text, pos))
        if prev == ":":
            if kind != "label":
                raise NewickError("expected branch length after ':'", _byte_offset(text, pos))
            try:
                raw[cur][3] = float(value)
            except ValueError:
                raise NewickError(f"invalid branch length {value!r}", _byte_offset(text, pos)) from None
            prev = "length"
            continue
        if kind == "(":
            if prev not in ("start", "(", ","):
                raise NewickError("unexpected '('", _byte_offset(text, pos))
            raw.append([cur, [], None, None])
            child = len(raw) - 1
            raw[cur][1].append(child)
            cur = child
        elif kind == ",":
            parent = raw[cur][0]
            if parent is None:
                raise NewickError("',' outside parentheses", _byte_offset(text, pos))
            raw.append([parent, [], None, None])
            cur = len(raw) - 1
            raw[parent][1].append(cur)
        elif kind == ")":
            parent = raw[cur][0]
            if parent is None:
                raise NewickError("unbalanced ')'", _byte_offset(text, pos))
            cur = parent
        elif kind == "label":
            if prev not in ("start", "(", ",", ")"):
                raise NewickError(f"unexpected label {value!r}", _byte_offset(text, pos))
            raw[cur][2] = value
        elif kind == ":":
            if prev == "length":
                raise NewickError("duplicate branch length", _byte_offset(text, pos))
        elif kind == ";":
            if raw[cur][0] is not None:
                raise NewickError("unbalanced '(' before ';'", _byte_offset(text, pos))
            done_at = pos
        prev = kind
    if done_at is None:
        raise NewickError("missing terminating ';'", len(text.encode("utf-8")))
    return _build([tuple(s) for s in raw], 0)


def read_newick(path) -> PhyloTree:
    with open(path, encoding="utf-8") as fh:
        return parse_newick(fh.read())


# --- structure ---------------------------------------------------------------

def binarize(tree: PhyloTree, warn: bool = True) -> PhyloTree:
    """Resolve multifurcations into left-leaning ladders.

    A node with children ``c1..ck`` becomes ``(((c1,c2),c3),...,ck)``; the
    original node keeps its label and length at the top of the ladder.
    Binary trees are returned unchanged.
    """
    for i in tree.internal_nodes:
        if len(tree.nodes[i].children) < 2:
            raise TreeValidationError(f"internal node {i} has a single child")
    if tree.is_binary:
        return tree
    raw = [[n.parent, list(n.children), n.label, n.length] for n in tree.nodes]
    resolved = 0
    for i in tree.internal_nodes:
        kids = raw[i][1]
        if len(kids) <= 2:
            continue
        resolved += 1
        left = kids[0]
        for c in kids[1:-1]:
            raw.append([None, [left, c], None, None])
            new = len(raw) - 1
            raw[left][0] = new
            raw[c][0] = new
            left = new
        raw[left][0] = i
        raw[i][1] = [left, kids[-1]]
    if warn:
        warnings.warn(f"resolved {resolved} multifurcating node(s) into left-leaning ladders",
                      stacklevel=2)
    return _build([tuple(s) for s in raw], tree.root)


def order_internal_nodes(tree: PhyloTree) -> list[int]:
    """Internal nodes in preorder, so every parent precedes its children."""
    return [i for i in tree.preorder() if tree.nodes[i].children]
