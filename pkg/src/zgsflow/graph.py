"""Undirected weighted graphs with the spectral views used by the dynamics.

Desk scale throughout: graphs are stored as dense edge lists and the
Laplacian / incidence matrices are materialized on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Network:
    """Undirected weighted graph on nodes 1..node_count.

    Parameters
    ----------
    node_count : int
        Number of nodes N (positive).
    edges : tuple of (i, j, weight)
        Undirected edges with 1-based endpoints, i < j, weight > 0.
        The constructor sorts and rejects duplicates and self loops.
    """

    node_count: int
    edges: tuple[tuple[int, int, float], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        norm = []
        for e in self.edges:
            if len(e) != 3:
                raise ValueError(f"edge {e!r} must be (i, j, weight)")
            i, j, w = int(e[0]), int(e[1]), float(e[2])
            if i == j:
                raise ValueError(f"self loop at node {i}")
            if i > j:
                i, j = j, i
            if not (1 <= i < j <= self.node_count):
                raise ValueError(f"edge ({i}, {j}) out of node range")
            if not w > 0.0:
                raise ValueError(f"edge ({i}, {j}) has non-positive weight {w}")
            norm.append((i, j, w))
        norm.sort()
        for a, b in zip(norm, norm[1:]):
            if a[:2] == b[:2]:
                raise ValueError(f"duplicate edge {a[:2]}")
        object.__setattr__(self, "edges", tuple(norm))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, i: int) -> list[int]:
        """1-based neighbor list of node i."""
        out = []
        for a, b, _ in self.edges:
            if a == i:
                out.append(b)
            elif b == i:
                out.append(a)
        return sorted(out)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Edge endpoints as 0-based index arrays plus the weight array."""
        if not self.edges:
            z = np.zeros(0, dtype=int)
            return z, z.copy(), np.zeros(0)
        ii = np.array([e[0] - 1 for e in self.edges], dtype=int)
        jj = np.array([e[1] - 1 for e in self.edges], dtype=int)
        ww = np.array([e[2] for e in self.edges])
        return ii, jj, ww


def adjacency(net: Network) -> np.ndarray:
    """Symmetric weighted adjacency matrix A0."""
    a = np.zeros((net.node_count, net.node_count))
    for i, j, w in net.edges:
        a[i - 1, j - 1] = w
        a[j - 1, i - 1] = w
    return a


def laplacian(net: Network) -> np.ndarray:
    """Graph Laplacian diag(A0 1) - A0; symmetric PSD with zero row sums."""
    a = adjacency(net)
    return np.diag(a.sum(axis=1)) - a


def incidence(net: Network) -> np.ndarray:
    """Weighted incidence matrix B, one column per edge.

    Column k for edge e_k = {i, j} with i < j holds +a_ij at row i and
    -a_ij at row j. For unit weights B @ B.T equals the Laplacian.
    """
    b = np.zeros((net.node_count, net.edge_count))
    for k, (i, j, w) in enumerate(net.edges):
        b[i - 1, k] = w
        b[j - 1, k] = -w
    return b


def is_connected(net: Network) -> bool:
    """Breadth-first check that one component spans all nodes."""
    n = net.node_count
    if n == 1:
        return True
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j, _ in net.edges:
        adj[i - 1].append(j - 1)
        adj[j - 1].append(i - 1)
    seen = [False] * n
    queue = [0]
    seen[0] = True
    while queue:
        u = queue.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def component_count(net: Network) -> int:
    """Number of connected components."""
    n = net.node_count
    adj: list[list[int]] = [[] for _ in range(n)]
    for i, j, _ in net.edges:
        adj[i - 1].append(j - 1)
        adj[j - 1].append(i - 1)
    seen = [False] * n
    comps = 0
    for s in range(n):
        if seen[s]:
            continue
        comps += 1
        queue = [s]
        seen[s] = True
        while queue:
            u = queue.pop()
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
    return comps


def cycle_graph(n: int, weight: float = 1.0) -> Network:
    """The n-cycle 1-2-...-n-1 with uniform edge weight."""
    if n < 3:
        raise ValueError("cycle needs at least 3 nodes")
    edges = [(k, k + 1, weight) for k in range(1, n)] + [(1, n, weight)]
    return Network(n, tuple(edges))


def algebraic_connectivity(net: Network) -> float:
    """Second-smallest eigenvalue of the Laplacian."""
    eig = np.linalg.eigvalsh(laplacian(net))
    return float(eig[1]) if len(eig) > 1 else 0.0
