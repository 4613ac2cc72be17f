"""Undirected agent networks and their weighted Laplacian-like matrix.

A connected graph over ``n`` agents induces the symmetric positive
semidefinite matrix ``P`` with ``[P]_ii = sum_j p_ij`` and
``[P]_ij = -p_ij`` on edges.  Its null space is the all-ones vector, its
Kronecker lift ``P (x) I_d`` acts on stacked agent vectors, and its two
extreme nonzero eigenvalues parameterize every convergence certificate.
The lift is never materialized: products are evaluated agent by agent
through neighbor sums.
"""

from __future__ import annotations

import heapq
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, ParameterError, ParseError

__all__ = [
    "Graph",
    "MatrixP",
    "SpectralSummary",
    "build_random_connected_graph",
    "laplacian_weights",
    "spectral_summary",
    "read_edge_list",
    "write_edge_list",
]


@dataclass(frozen=True)
class Graph:
    """Connected undirected graph with symmetric neighbor lists."""

    n_agents: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...]

    @classmethod
    def from_edges(cls, n_agents: int, edges) -> "Graph":
        if n_agents < 1:
            raise ParameterError(f"need at least one agent, got {n_agents}")
        canonical = set()
        for i, j in edges:
            if i == j:
                raise ParameterError(f"self-loop at agent {i}")
            if not (0 <= i < n_agents and 0 <= j < n_agents):
                raise ParameterError(f"edge ({i},{j}) outside 0..{n_agents - 1}")
            canonical.add((min(i, j), max(i, j)))
        adj = [set() for _ in range(n_agents)]
        for i, j in canonical:
            adj[i].add(j)
            adj[j].add(i)
        g = cls(
            n_agents=n_agents,
            edges=tuple(sorted(canonical)),
            neighbors=tuple(tuple(sorted(a)) for a in adj),
        )
        if not g.is_connected():
            raise ParameterError("graph is not connected")
        return g

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def average_degree(self) -> float:
        return 2.0 * self.n_edges / self.n_agents

    def is_connected(self) -> bool:
        if self.n_agents == 1:
            return True
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n_agents


def _tree_from_pruefer(seq: np.ndarray, n: int) -> list[tuple[int, int]]:
    # Standard Pruefer decoding; uniform over labeled spanning trees.
    degree = np.ones(n, dtype=int)
    for v in seq:
        degree[v] += 1
    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    edges = []
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, v)
    u = heapq.heappop(leaves)
    v = heapq.heappop(leaves)
    edges.append((min(u, v), max(u, v)))
    return edges


def build_random_connected_graph(n: int, target_avg_degree: float, seed: int) -> Graph:
    """Sample a connected graph whose average degree is within 1 of the target.

    A uniform random spanning tree (via a random Pruefer sequence) guarantees
    connectivity; uniformly chosen non-edges are then added until the edge
    count reaches ``ceil(n * target_avg_degree / 2)``.  Deterministic for a
    fixed seed.
    """
    if n < 2:
        raise ParameterError(f"need n >= 2 agents, got {n}")
    m_target = math.ceil(n * target_avg_degree / 2.0)
    max_edges = n * (n - 1) // 2
    if m_target > max_edges:
        raise ParameterError(
            f"average degree {target_avg_degree} needs {m_target} edges; "
            f"only {max_edges} exist on {n} nodes"
        )
    if m_target < n - 1:
        raise ParameterError(
            f"average degree {target_avg_degree} gives {m_target} edges; "
            f"a connected graph on {n} nodes needs at least {n - 1}"
        )
    rng = np.random.default_rng(seed)
    if n == 2:
        tree = [(0, 1)]
    else:
        tree = _tree_from_pruefer(rng.integers(0, n, size=n - 2), n)
    chosen = set(tree)
    missing = m_target - len(chosen)
    if missing > 0:
        pool = [
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if (i, j) not in chosen
        ]
        picks = rng.choice(len(pool), size=missing, replace=False)
        chosen.update(pool[k] for k in picks)
    return Graph.from_edges(n, chosen)


@dataclass
class MatrixP:
    """Weighted Laplacian-like matrix of a connected graph.

    ``matrix`` is the dense symmetric n x n form; ``weights`` maps each
    canonical edge ``(i, j)`` with ``i < j`` to its positive weight.  Rows
    sum to zero, so the matrix annihilates the all-ones vector.
    """

    graph: Graph
    matrix: np.ndarray
    weights: dict[tuple[int, int], float]
    _neighbor_idx: list[np.ndarray] = field(repr=False, default_factory=list)
    _neighbor_w: list[np.ndarray] = field(repr=False, default_factory=list)

    def __post_init__(self):
        self.matrix.setflags(write=False)
        if not self._neighbor_idx:
            for i in range(self.graph.n_agents):
                nb = np.array(self.graph.neighbors[i], dtype=int)
                w = np.array(
                    [self.weights[(min(i, j), max(i, j))] for j in nb], dtype=float
                )
                self._neighbor_idx.append(nb)
                self._neighbor_w.append(w)

    @property
    def n_agents(self) -> int:
        return self.graph.n_agents

    def disagreement(self, x: np.ndarray) -> np.ndarray:
        """Apply the Kronecker lift to stacked agent vectors, agent by agent.

        ``x`` has one row per agent; row ``i`` of the result is
        ``sum_j p_ij (x_i - x_j)`` over the neighbors of ``i``.
        """
        y = np.empty_like(x)
        for i in range(self.n_agents):
            nb = self._neighbor_idx[i]
            w = self._neighbor_w[i]
            y[i] = w @ (x[i] - x[nb])
        return y


def laplacian_weights(g: Graph, weight_rule=1.0) -> MatrixP:
    """Build ``P`` from a uniform weight or a per-edge weight mapping."""
    if isinstance(weight_rule, dict):
        weights = {}
        for i, j in g.edges:
            try:
                w = weight_rule[(i, j)]
            except KeyError:
                try:
                    w = weight_rule[(j, i)]
                except KeyError:
                    raise ParameterError(f"missing weight for edge ({i},{j})")
            weights[(i, j)] = float(w)
    else:
        weights = {e: float(weight_rule) for e in g.edges}
    for e, w in weights.items():
        if not w > 0:
            raise ParameterError(f"edge {e} has nonpositive weight {w}")
    n = g.n_agents
    P = np.zeros((n, n))
    for (i, j), w in weights.items():
        P[i, j] = -w
        P[j, i] = -w
        P[i, i] += w
        P[j, j] += w
    return MatrixP(graph=g, matrix=P, weights=weights)


@dataclass(frozen=True)
class SpectralSummary:
    """Smallest nonzero and largest eigenvalue of ``P`` (and of its lift)."""

    lambda_w: float
    lambda_max: float


def spectral_summary(p: MatrixP) -> SpectralSummary:
    """Eigenvalue summary via a dense symmetric solver.

    The lift ``P (x) I_d`` shares the spectrum of ``P`` up to multiplicity,
    so the n x n problem suffices at any dimension.
    """
    A = p.matrix
    sym_err = np.max(np.abs(A - A.T))
    scale = max(np.max(np.abs(A)), 1.0)
    if sym_err > 1e-12 * scale:
        raise InvariantViolation(f"matrix not symmetric (max asymmetry {sym_err})")
    eigs = np.linalg.eigvalsh(A)
    lam_max = eigs[-1]
    if eigs[0] < -1e-10 * max(lam_max, 1.0):
        raise InvariantViolation(f"matrix indefinite (min eigenvalue {eigs[0]})")
    lam_w = eigs[1]
    if not 0 < lam_w <= lam_max:
        raise InvariantViolation(
            f"expected simple zero eigenvalue, got spectrum head {eigs[:3]}"
        )
    return SpectralSummary(lambda_w=float(lam_w), lambda_max=float(lam_max))


def write_edge_list(p: MatrixP, dest) -> None:
    """Serialize as ``n m`` then ``i j p_ij`` lines (0-based indices)."""

    def _dump(f):
        f.write(f"{p.graph.n_agents} {p.graph.n_edges}\n")
        for i, j in p.graph.edges:
            f.write(f"{i} {j} {p.weights[(i, j)]!r}\n")

    if hasattr(dest, "write"):
        _dump(dest)
    else:
        with open(dest, "w") as f:
            _dump(f)


def read_edge_list(src) -> MatrixP:
    """Parse the edge-list format written by :func:`write_edge_list`."""
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src) as f:
            text = f.read()
    if isinstance(text, bytes):
        text = text.decode()
    lines = [ln for ln in text.splitlines()]
    header = None
    edges = {}
    lineno = 0
    for raw in lines:
        lineno += 1
        ln = raw.strip()
        if not ln or ln.startswith("#"):
            continue
        parts = ln.split()
        if header is None:
            if len(parts) != 2:
                raise ParseError("expected header 'n m'", line=lineno)
            try:
                header = (int(parts[0]), int(parts[1]))
            except ValueError:
                raise ParseError(f"bad header {ln!r}", line=lineno)
            continue
        if len(parts) != 3:
            raise ParseError(f"expected 'i j weight', got {ln!r}", line=lineno)
        try:
            i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise ParseError(f"bad edge line {ln!r}", line=lineno)
        edges[(min(i, j), max(i, j))] = w
    if header is None:
        raise ParseError("empty edge-list input", line=lineno or 1)
    n, m = header
    if len(edges) != m:
        raise ParseError(f"header promised {m} edges, found {len(edges)}")
    g = Graph.from_edges(n, edges.keys())
    return laplacian_weights(g, edges)
