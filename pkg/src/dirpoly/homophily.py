"""Node homophily and its weighted generalization over message-passing matrices.

Weighted node homophily of a matrix S averages, over nodes with a non-empty
row, the share of row weight that lands on same-label nodes. Plain node
homophily is the special case S = A (out-neighbors). Rows with zero weight are
skipped rather than counted as zero.
"""
from __future__ import annotations

from enum import Enum

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, DirectedGraph, symmetrize


class HomophilyUndefined(ValueError):
    pass


class MessageMatrix(str, Enum):
    A = "A"
    A_T = "A_T"
    A_SYM = "A_sym"
    A2 = "A2"
    AT_A = "AT_A"
    A_AT = "A_AT"


def message_matrix(g: DirectedGraph, kind: MessageMatrix | str) -> sp.csr_matrix:
    """Integer walk-count matrix for ``kind``; never densified."""
    kind = MessageMatrix(kind)
    a = g.adjacency()
    if kind is MessageMatrix.A:
        s = a
    elif kind is MessageMatrix.A_T:
        s = a.T
    elif kind is MessageMatrix.A_SYM:
        s = symmetrize(g).adjacency()
    elif kind is MessageMatrix.A2:
        s = a @ a
    elif kind is MessageMatrix.AT_A:
        s = a.T @ a
    else:
        s = a @ a.T
    s = sp.csr_matrix(s, dtype=np.int64)
    s.sort_indices()
    return s


def _row_homophily(s: sp.csr_matrix, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.shape != (s.shape[0],):
        raise ValueError(f"labels have length {len(labels)}, graph has {s.shape[0]} nodes")
    rows = np.repeat(np.arange(s.shape[0]), np.diff(s.indptr))
    same = labels[rows] == labels[s.indices]
    n = s.shape[0]
    # float64 sums of integer counts stay exact far beyond any desk-scale graph
    total = np.bincount(rows, weights=s.data, minlength=n)
    hit = np.bincount(rows, weights=np.where(same, s.data, 0), minlength=n)
    keep = total > 0
    if not keep.any():
        raise HomophilyUndefined("homophily undefined: every row of the message matrix is zero")
    return float(np.mean(hit[keep] / total[keep]))


def node_homophily(g: DirectedGraph, labels) -> float:
    """Mean same-label fraction of out-neighbors over nodes with out-degree >= 1."""
    if g.num_edges == 0:
        raise HomophilyUndefined("homophily undefined: graph has no edges")
    return _row_homophily(g.adjacency(), labels)


def weighted_node_homophily(g: DirectedGraph, labels, kind: MessageMatrix | str = MessageMatrix.A) -> float:
    return _row_homophily(message_matrix(g, kind), labels)


def homophily_report(ds: Dataset) -> dict[str, float | None]:
    """Value per message-matrix kind; ``None`` where undefined."""
    out: dict[str, float | None] = {}
    for kind in MessageMatrix:
        try:
            out[kind.value] = weighted_node_homophily(ds.graph, ds.labels, kind)
        except HomophilyUndefined:
            out[kind.value] = None
    return out


def report_csv(report: dict[str, float | None]) -> str:
    lines = ["matrix,homophily"]
    for k, v in report.items():
        lines.append(f"{k},{'NA' if v is None else repr(v)}")
    return "\n".join(lines) + "\n"
