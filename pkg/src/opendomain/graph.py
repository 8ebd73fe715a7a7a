"""Class taxonomy graph and its row-normalized adjacency.

The graph holds every category plus any auxiliary ancestor/grouping nodes.
Self-loops are implicit: the adjacency always carries A_ii = 1 whether or
not the input file listed them, so row normalization never divides by zero.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GraphError",
    "KnowledgeGraph",
    "load_graph",
    "save_graph",
    "normalized_adjacency",
    "check_reachability",
]


class GraphError(ValueError):
    """Malformed graph file or invariant violation."""


@dataclass(frozen=True)
class KnowledgeGraph:
    """Immutable taxonomy over all categories.

    ``class_to_node[c]`` maps class label c (0..total-1) to its node; the
    first ``known_class_count`` classes are the ones with source labels.
    ``edges`` are canonical undirected pairs (i < j) without self-loops.
    """

    node_names: tuple
    edges: tuple
    class_to_node: tuple
    known_class_count: int

    def __post_init__(self):
        n = len(self.node_names)
        if n == 0:
            raise GraphError("graph must have at least one node")
        seen = set()
        for e in self.edges:
            i, j = e
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge {e} out of range for {n} nodes")
            if i >= j:
                raise GraphError(f"edge {e} not canonical (expected i < j)")
            if e in seen:
                raise GraphError(f"duplicate edge {e}")
            seen.add(e)
        if len(set(self.class_to_node)) != len(self.class_to_node):
            raise GraphError("class_to_node is not injective")
        for c, node in enumerate(self.class_to_node):
            if not 0 <= node < n:
                raise GraphError(f"class {c} mapped to out-of-range node {node}")
        if not 0 <= self.known_class_count < self.total_class_count:
            raise GraphError(
                "need known classes < total classes "
                f"(got {self.known_class_count} of {self.total_class_count})"
            )

    @property
    def num_nodes(self) -> int:
        return len(self.node_names)

    @property
    def total_class_count(self) -> int:
        return len(self.class_to_node)

    def known_nodes(self) -> tuple:
        return tuple(self.class_to_node[: self.known_class_count])

    def unknown_nodes(self) -> tuple:
        return tuple(self.class_to_node[self.known_class_count:])


def _canon(i: int, j: int):
    return (i, j) if i < j else (j, i)


def load_graph(path) -> "KnowledgeGraph":
    """Parse the edge-list text format.

    Header ``nodes N known L_S classes L_T``, then ``node <i> <name>``,
    ``class <ci> <ni>`` and ``edge <i> <j>`` lines. ``#`` starts a comment.
    Explicit self-loop lines are accepted and dropped (loops are implicit).
    """
    n = ls = lt = None
    names = {}
    class_map = {}
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                if parts[0] == "nodes":
                    if len(parts) == 6 and parts[2] == "known" and parts[4] == "classes":
                        n, ls, lt = int(parts[1]), int(parts[3]), int(parts[5])
                    else:
                        raise ValueError("bad header")
                elif parts[0] == "node":
                    idx = int(parts[1])
                    if idx in names:
                        raise ValueError(f"duplicate node {idx}")
                    names[idx] = parts[2]
                elif parts[0] == "class":
                    ci, ni = int(parts[1]), int(parts[2])
                    if ci in class_map:
                        raise ValueError(f"duplicate class mapping for {ci}")
                    class_map[ci] = ni
                elif parts[0] == "edge":
                    i, j = int(parts[1]), int(parts[2])
                    if i != j:
                        edges.append(_canon(i, j))
                else:
                    raise ValueError(f"unknown record {parts[0]!r}")
            except (IndexError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: {exc}") from exc
    if n is None:
        raise GraphError(f"{path}: missing header line")
    if sorted(names) != list(range(n)):
        raise GraphError(f"{path}: node indices must cover 0..{n - 1}")
    if sorted(class_map) != list(range(lt)):
        raise GraphError(f"{path}: class indices must cover 0..{lt - 1}")
    if len(set(edges)) != len(edges):
        raise GraphError(f"{path}: duplicate edges")
    return KnowledgeGraph(
        node_names=tuple(names[i] for i in range(n)),
        edges=tuple(sorted(set(edges))),
        class_to_node=tuple(class_map[c] for c in range(lt)),
        known_class_count=ls,
    )


def save_graph(path, g: KnowledgeGraph) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"nodes {g.num_nodes} known {g.known_class_count} "
            f"classes {g.total_class_count}\n"
        )
        for i, name in enumerate(g.node_names):
            fh.write(f"node {i} {name}\n")
        for c, node in enumerate(g.class_to_node):
            fh.write(f"class {c} {node}\n")
        for i, j in g.edges:
            fh.write(f"edge {i} {j}\n")


def adjacency(g: KnowledgeGraph) -> np.ndarray:
    """Symmetric 0/1 adjacency with self-loops on every node."""
    a = np.eye(g.num_nodes, dtype=np.float64)
    for i, j in g.edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def normalized_adjacency(g: KnowledgeGraph) -> np.ndarray:
    """Row-normalized adjacency D^-1 A; every row sums to 1."""
    a = adjacency(g)
    return a / a.sum(axis=1, keepdims=True)


def check_reachability(g: KnowledgeGraph) -> tuple:
    """Unknown classes whose node no known-class node can reach.

    BFS from the set of known-class nodes over the undirected edges;
    returns the (possibly empty) sorted tuple of unreachable unknown
    class indices.
    """
    neighbors = [[] for _ in range(g.num_nodes)]
    for i, j in g.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    seen = set(g.known_nodes())
    queue = deque(seen)
    while queue:
        node = queue.popleft()
        for nxt in neighbors[node]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return tuple(
        c
        for c in range(g.known_class_count, g.total_class_count)
        if g.class_to_node[c] not in seen
    )
