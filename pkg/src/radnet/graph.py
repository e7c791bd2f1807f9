"""Road-network graph and the multi-head graph-attention layer.

Nodes are road links; undirected edges join links that share a junction.
Every node carries a self-loop so it always attends to its own features.
Attention is computed densely over an N x N mask (-inf off-neighborhood),
which keeps the layer shape-polymorphic over leading batch axes and makes
masked coefficients exactly zero after the softmax.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import DimensionError, GraphError
from .nn import DEFAULT_LEAKY_SLOPE, xavier_uniform
from .tensor import DiffArray, concat, leaky_relu, matmul, sigmoid, softmax, swap_last_axes


class RoadGraph:
    """Static undirected graph over `n_nodes` road links."""

    def __init__(self, n_nodes: int, edges):
        if n_nodes < 1:
            raise GraphError("graph needs at least one node")
        self.n_nodes = n_nodes
        cleaned = set()
        for i, j in edges:
            i, j = int(i), int(j)
            if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                raise GraphError(f"edge ({i}, {j}) outside node range [0, {n_nodes})")
            if i != j:
                cleaned.add((min(i, j), max(i, j)))
        self.edges = frozenset(cleaned)
        neighborhoods = [{i} for i in range(n_nodes)]
        for i, j in self.edges:
            neighborhoods[i].add(j)
            neighborhoods[j].add(i)
        self.neighborhoods = [sorted(ns) for ns in neighborhoods]
        mask = np.full((n_nodes, n_nodes), -np.inf)
        for i, ns in enumerate(self.neighborhoods):
            mask[i, ns] = 0.0
        self._attention_mask = mask

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def attention_mask(self) -> np.ndarray:
        """(N, N) additive mask: 0 on neighborhoods (incl. self), -inf elsewhere."""
        return self._attention_mask

    def permuted(self, perm) -> "RoadGraph":
        """The same graph with node i relabeled perm[i]."""
        perm = list(perm)
        return RoadGraph(self.n_nodes, [(perm[i], perm[j]) for i, j in self.edges])

    @classmethod
    def from_edge_csv(cls, path: str | Path, n_nodes: int) -> "RoadGraph":
        """Load an undirected edge list from a `src,dst` CSV with 0-based ids."""
        edges = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["src", "dst"]:
                raise GraphError(f"edge file {path} must have header 'src,dst'")
            for lineno, row in enumerate(reader, start=2):
                try:
                    i, j = int(row["src"]), int(row["dst"])
                except (TypeError, ValueError) as exc:
                    raise GraphError(f"{path}:{lineno}: non-integer node id") from exc
                if not (0 <= i < n_nodes and 0 <= j < n_nodes):
                    raise GraphError(
                        f"{path}:{lineno}: edge ({i}, {j}) outside [0, {n_nodes})"
                    )
                edges.append((i, j))
        return cls(n_nodes, edges)

    def to_edge_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["src", "dst"])
            for i, j in sorted(self.edges):
                writer.writerow([i, j])

    @classmethod
    def ring(cls, n_nodes: int) -> "RoadGraph":
        """A cycle graph; the default synthetic road topology."""
        if n_nodes == 1:
            return cls(1, [])
        if n_nodes == 2:
            return cls(2, [(0, 1)])
        return cls(n_nodes, [(i, (i + 1) % n_nodes) for i in range(n_nodes)])


class GatLayer:
    """Multi-head graph attention.

    Per head: project features with `theta`, score each edge (i, j) with an
    affine map over [theta h_i, theta h_j] through a LeakyReLU, softmax the
    scores over each neighborhood, then pass the attention-weighted neighbor
    sum through a sigmoid. Heads are concatenated, or averaged when the layer
    must preserve the input feature width.
    """

    def __init__(
        self,
        n_in: int,
        n_out: int,
        rng: np.random.Generator,
        n_heads: int = 1,
        aggregation: str = "mean",
        slope: float = DEFAULT_LEAKY_SLOPE,
    ):
        if aggregation not in ("concat", "mean"):
            raise ValueError(f"unknown aggregation {aggregation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.n_heads = n_heads
        self.aggregation = aggregation
        self.slope = slope
        self.thetas = [
            DiffArray(xavier_uniform(rng, n_in, n_out), requires_grad=True)
            for _ in range(n_heads)
        ]
        self.score_weights = [
            DiffArray(xavier_uniform(rng, 2 * n_out, 1), requires_grad=True)
            for _ in range(n_heads)
        ]
        self.score_biases = [
            DiffArray(np.zeros(1), requires_grad=True) for _ in range(n_heads)
        ]

    @property
    def out_width(self) -> int:
        return self.n_out * self.n_heads if self.aggregation == "concat" else self.n_out

    def _head_coefficients(self, x: DiffArray, graph: RoadGraph, head: int) -> DiffArray:
        h = matmul(x, self.thetas[head])
        w = self.score_weights[head]
        src = matmul(h, w[: self.n_out])          # (..., N, 1)
        dst = matmul(h, w[self.n_out :])          # (..., N, 1)
        scores = src + swap_last_axes(dst) + self.score_biases[head]
        scores = leaky_relu(scores, self.slope) + graph.attention_mask()
        return softmax(scores, axis=-1), h

    def attention_coefficients(self, x, graph: RoadGraph, head: int = 0) -> DiffArray:
        """(..., N, N) coefficients for one head; zero off the neighborhood."""
        x = x if isinstance(x, DiffArray) else DiffArray(x)
        if x.shape[-2] != graph.n_nodes:
            raise DimensionError(
                f"feature matrix rows {x.shape} do not match {graph.n_nodes} nodes"
            )
        alpha, _ = self._head_coefficients(x, graph, head)
        return alpha

    def __call__(self, x, graph: RoadGraph) -> DiffArray:
        """Apply the layer to (..., N, n_in); leading axes are batch axes.

        Stacked windows go through unchanged: each time slice is attended
        independently with the same parameters.
        """
        x = x if isinstance(x, DiffArray) else DiffArray(x)
        if x.shape[-2] != graph.n_nodes:
            raise DimensionError(
                f"feature matrix rows {x.shape} do not match {graph.n_nodes} nodes"
            )
        if x.shape[-1] != self.n_in:
            raise DimensionError(
                f"feature width {x.shape[-1]} does not match layer input {self.n_in}"
            )
        heads = []
        for m in range(self.n_heads):
            alpha, h = self._head_coefficients(x, graph, m)
            heads.append(sigmoid(matmul(alpha, h)))
        if self.n_heads == 1:
            return heads[0]
        if self.aggregation == "concat":
            return concat(heads, axis=-1)
        total = heads[0]
        for part in heads[1:]:
            total = total + part
        return total * (1.0 / self.n_heads)

    def named_parameters(self, prefix: str = "") -> dict[str, DiffArray]:
        out: dict[str, DiffArray] = {}
        for m in range(self.n_heads):
            out[f"{prefix}head{m}.theta"] = self.thetas[m]
            out[f"{prefix}head{m}.score_weight"] = self.score_weights[m]
            out[f"{prefix}head{m}.score_bias"] = self.score_biases[m]
        return out


def gat_over_window(layer: GatLayer, window, graph: RoadGraph) -> DiffArray:
    """Apply a GAT layer independently to each slice of a (K, N, D) window."""
    window = window if isinstance(window, DiffArray) else DiffArray(window)
    if window.ndim < 3:
        raise DimensionError(f"expected a stacked window, got shape {window.shape}")
    return layer(window, graph)
