"""Electrical graph of the multi-machine network.

Builds the node-edge incidence matrix, the lossless susceptance matrix with
every machine's subtransient reactance folded into the adjacent lines, and
the Laplacian of the controller communication graph. Node indices in the
public edge specs are 1-based; every array is 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import FrozenSet, Iterable, List, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.linalg import eigvalsh, lstsq

from grid.shared import DimensionError, ParameterError, TopologyError, as_vector


# ---------------- TYPES ----------------


@dataclass(frozen=True)
class EdgeSpec:
    positive_end: int
    negative_end: int
    xt: float = 0.0  # line reactance X_T, p.u.


@dataclass(frozen=True)
class CommEdge:
    a: int
    b: int
    weight: float = 1.0


@dataclass(frozen=True, eq=False)
class CommGraph:
    n: int
    edges: Tuple[CommEdge, ...]
    laplacian: np.ndarray
    algebraic_connectivity: float


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    n: int
    edges: Tuple[EdgeSpec, ...]
    D: np.ndarray  # n x m incidence
    B: np.ndarray  # n x n susceptance
    edge_b: np.ndarray  # per-edge susceptance -1/X_l
    neighbors: Tuple[FrozenSet[int], ...]

    @property
    def m(self) -> int:
        return len(self.edges)

    @cached_property
    def heads(self) -> np.ndarray:
        """0-based positive end of every edge."""
        return np.array([e.positive_end - 1 for e in self.edges], dtype=int)

    @cached_property
    def tails(self) -> np.ndarray:
        """0-based negative end of every edge."""
        return np.array([e.negative_end - 1 for e in self.edges], dtype=int)


# ---------------- VALIDATION ----------------


def _check_edges(n: int, pairs: Iterable[Tuple[int, int]], kind: str) -> None:
    if n < 1:
        raise TopologyError(f"{kind}: need at least one node, got n={n}")
    for idx, (a, b) in enumerate(pairs):
        if not (1 <= a <= n) or not (1 <= b <= n):
            raise TopologyError(f"{kind}[{idx}]: node index out of range 1..{n}: ({a}, {b})")
        if a == b:
            raise TopologyError(f"{kind}[{idx}]: self-loop at node {a}")


def is_connected(n: int, pairs: Iterable[Tuple[int, int]]) -> bool:
    """Connectivity of the undirected graph on nodes 1..n."""
    graph = nx.MultiGraph()
    graph.add_nodes_from(range(1, n + 1))
    graph.add_edges_from(pairs)
    return nx.is_connected(graph)


# ---------------- INCIDENCE / SUSCEPTANCE ----------------


def build_incidence(n: int, edges: Sequence[EdgeSpec]) -> np.ndarray:
    """+1 at the positive end, -1 at the negative end; column order = edge order."""
    _check_edges(n, [(e.positive_end, e.negative_end) for e in edges], "edges")
    D = np.zeros((n, len(edges)))
    for col, edge in enumerate(edges):
        D[edge.positive_end - 1, col] = 1.0
        D[edge.negative_end - 1, col] = -1.0
    return D


def edge_susceptances(edges: Sequence[EdgeSpec], xdpp: Sequence[float]) -> np.ndarray:
    """B_l = -1 / (X_di'' + X_T + X_dk'') for every edge."""
    xdpp = as_vector(xdpp, None, "xdpp")
    out = np.empty(len(edges))
    for idx, edge in enumerate(edges):
        if edge.xt < 0:
            raise ParameterError(f"edges[{idx}].xt: nonpositive reactance {edge.xt}")
        xi = xdpp[edge.positive_end - 1]
        xk = xdpp[edge.negative_end - 1]
        if xi < 0 or xk < 0:
            raise ParameterError(f"edges[{idx}]: nonpositive machine reactance X_d''")
        x_line = xi + edge.xt + xk
        if x_line <= 0:
            raise ParameterError(f"edges[{idx}]: nonpositive total reactance {x_line}")
        out[idx] = -1.0 / x_line
    return out


def build_susceptance(edges: Sequence[EdgeSpec], xdpp: Sequence[float]) -> np.ndarray:
    """Susceptance matrix; parallel edges accumulate, B_ii = sum_k B_ik."""
    xdpp = as_vector(xdpp, None, "xdpp")
    n = xdpp.shape[0]
    _check_edges(n, [(e.positive_end, e.negative_end) for e in edges], "edges")
    b = edge_susceptances(edges, xdpp)
    B = np.zeros((n, n))
    for edge, b_l in zip(edges, b):
        i, k = edge.positive_end - 1, edge.negative_end - 1
        B[i, k] += b_l
        B[k, i] += b_l
    np.fill_diagonal(B, B.sum(axis=1))
    return B


def build_topology(n: int, edges: Sequence[EdgeSpec], xdpp: Sequence[float]) -> NetworkTopology:
    edges = tuple(edges)
    xdpp = as_vector(xdpp, n, "xdpp")
    D = build_incidence(n, edges)
    if not is_connected(n, [(e.positive_end, e.negative_end) for e in edges]):
        raise TopologyError("edges: electrical network is not connected")
    neighbors: List[set] = [set() for _ in range(n)]
    for edge in edges:
        neighbors[edge.positive_end - 1].add(edge.negative_end - 1)
        neighbors[edge.negative_end - 1].add(edge.positive_end - 1)
    return NetworkTopology(
        n=n,
        edges=edges,
        D=D,
        B=build_susceptance(edges, xdpp),
        edge_b=edge_susceptances(edges, xdpp),
        neighbors=tuple(frozenset(s) for s in neighbors),
    )


# ---------------- COMMUNICATION GRAPH ----------------


def build_comm_laplacian(n: int, edges: Sequence[CommEdge]) -> CommGraph:
    edges = tuple(edges)
    _check_edges(n, [(e.a, e.b) for e in edges], "comm")
    for idx, edge in enumerate(edges):
        if not edge.weight > 0:
            raise ParameterError(f"comm[{idx}].weight: must be > 0, got {edge.weight}")
    if not is_connected(n, [(e.a, e.b) for e in edges]):
        raise TopologyError("comm: communication graph is not connected")

    graph = nx.MultiGraph()
    graph.add_nodes_from(range(1, n + 1))
    for edge in edges:
        graph.add_edge(edge.a, edge.b, weight=float(edge.weight))
    adjacency = nx.to_numpy_array(graph, nodelist=range(1, n + 1), weight="weight")
    L = -adjacency
    np.fill_diagonal(L, adjacency.sum(axis=1))

    lam = eigvalsh(L)
    connectivity = float(lam[1]) if n > 1 else 0.0
    return CommGraph(n=n, edges=edges, laplacian=L, algebraic_connectivity=connectivity)


# ---------------- ANGLES ----------------


def angles_to_edges(topology: NetworkTopology, delta: Sequence[float]) -> np.ndarray:
    """eta = D^T delta."""
    return topology.D.T @ as_vector(delta, topology.n, "delta")


def reconstruct_angles(topology: NetworkTopology, eta: Sequence[float]) -> np.ndarray:
    """Rotor angles relative to machine 1 (delta_1 = 0) consistent with eta."""
    eta = as_vector(eta, topology.m, "eta")
    delta = np.zeros(topology.n)
    if topology.n == 1:
        return delta
    solution, *_ = lstsq(topology.D[1:, :].T, eta)
    delta[1:] = solution
    return delta


def pairwise_angles(topology: NetworkTopology, eta: Sequence[float]) -> np.ndarray:
    """n x n matrix with entry (i, k) = delta_i - delta_k for adjacent pairs, 0 elsewhere."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (topology.m,):
        raise DimensionError(f"eta: expected length {topology.m}, got shape {eta.shape}")
    out = np.zeros((topology.n, topology.n))
    heads, tails = topology.heads, topology.tails
    out[heads, tails] = eta
    out[tails, heads] = -eta
    return out
