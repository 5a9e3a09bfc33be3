"""Mean-concat aggregation layers: fine-grained, coarse-grained and skip-connection.

Every layer computes, for each output row, ``[h_self, mean(h_set)] @ W`` and
optionally a LeakyReLU. The three kinds differ only in which set is averaged:

* fine-grained: all one-hop neighbors ``N(t)``
* coarse-grained: sampled nodes that are also neighbors, ``S(t) ∩ N(t)``
* skip-connection: every sampled node except the target, ``S(t) \\ {t}``

The weight is applied in two halves (self half, mean half), which is the same
product as multiplying the concatenated row by the full weight.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import dense
from .graph import Graph
from .sampler import SampleSet


class AggregatorKind(str, Enum):
    FINE = "fine_grained"
    COARSE = "coarse_grained"
    SKIP = "skip_connection"


class MissingRowError(KeyError):
    pass


@dataclass
class LayerSpec:
    kind: AggregatorKind
    weight: np.ndarray
    apply_activation: bool = True
    slope: float = dense.DEFAULT_SLOPE

    def __post_init__(self):
        self.kind = AggregatorKind(self.kind)
        if self.weight.ndim != 2 or self.weight.shape[0] % 2:
            raise dense.ShapeError(f"layer weight must have an even row count, got {self.weight.shape}")

    @property
    def d_in(self) -> int:
        return self.weight.shape[0] // 2

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class LayerContext:
    self_rows: np.ndarray
    mean_op: sp.csr_matrix | None
    h_self: object
    h_mean: object
    pre_activation: np.ndarray
    weight: np.ndarray
    apply_activation: bool
    slope: float
    num_sources: int


def combine(h_self, neighbor_rows) -> np.ndarray:
    """CONCAT(h_self, mean(neighbor_rows)); an empty set gives a zero mean."""
    h_self = np.asarray(h_self, dtype=np.float64).ravel()
    rows = [np.asarray(r, dtype=np.float64).ravel() for r in neighbor_rows]
    for r in rows:
        if r.shape != h_self.shape:
            raise dense.ShapeError(f"neighbor width {r.shape[0]} != self width {h_self.shape[0]}")
    mean = np.mean(rows, axis=0) if rows else np.zeros_like(h_self)
    return np.concatenate([h_self, mean])


def aggregate(h_prev, self_rows, mean_sets, weight: np.ndarray, apply_activation: bool = True,
              slope: float = dense.DEFAULT_SLOPE, neighbor_means=None):
    """Row-index level layer: returns ``(out, ctx)``.

    ``mean_sets`` is a list of source-row index lists (or a prebuilt mean
    operator). If ``neighbor_means`` is given, it already holds the mean row
    for every source row and ``mean_sets`` is ignored; such layers cannot
    propagate gradients to ``h_prev``.
    """
    d_in = h_prev.shape[1]
    if weight.shape[0] != 2 * d_in:
        raise dense.ShapeError(f"weight has {weight.shape[0]} rows, expected 2*{d_in}")
    self_rows = np.asarray(self_rows, dtype=np.int64)
    n_src = h_prev.shape[0]
    if self_rows.size and (self_rows.min() < 0 or self_rows.max() >= n_src):
        raise MissingRowError("self row outside h_prev")
    h_self = h_prev[self_rows]
    if neighbor_means is not None:
        op = None
        h_mean = neighbor_means[self_rows]
    else:
        op = mean_sets if sp.issparse(mean_sets) else dense.mean_operator(mean_sets, n_src)
        h_mean = op @ h_prev
    w_self, w_mean = weight[:d_in], weight[d_in:]
    z = np.asarray(h_self @ w_self) + np.asarray(h_mean @ w_mean)
    out = dense.leaky_relu(z, slope) if apply_activation else z
    ctx = LayerContext(self_rows, op, h_self, h_mean, z, weight, apply_activation, slope, n_src)
    return out, ctx


def aggregate_backward(ctx: LayerContext, grad_out: np.ndarray, need_input_grad: bool = True):
    """Adjoint of :func:`aggregate`: returns ``(grad_h_prev, grad_weight)``."""
    if ctx is None:
        raise ValueError("missing forward context")
    dz = dense.leaky_relu_grad(ctx.pre_activation, grad_out, ctx.slope) if ctx.apply_activation else grad_out
    d_in = ctx.weight.shape[0] // 2
    w_self, w_mean = ctx.weight[:d_in], ctx.weight[d_in:]
    grad_w = np.vstack([np.asarray(ctx.h_self.T @ dz), np.asarray(ctx.h_mean.T @ dz)])
    if not need_input_grad:
        return None, grad_w
    if ctx.mean_op is None:
        raise ValueError("layer used precomputed neighbor means; no input gradient available")
    grad_h = np.asarray(ctx.mean_op.T @ (dz @ w_mean.T))
    np.add.at(grad_h, ctx.self_rows, dz @ w_self.T)
    return grad_h, grad_w


def _row_lookup(node_rows, num_rows: int):
    if node_rows is None:
        def lookup(u):
            if not 0 <= u < num_rows:
                raise MissingRowError(f"no source row for node {u}")
            return u
        return lookup

    def lookup(u):
        try:
            return node_rows[u]
        except (KeyError, IndexError):
            raise MissingRowError(f"no source row for node {u}") from None
    return lookup


def _sample_for(sample_sets, i: int, t: int) -> SampleSet:
    if isinstance(sample_sets, Mapping):
        try:
            return sample_sets[t]
        except KeyError:
            raise MissingRowError(f"no sample set for target {t}") from None
    if i >= len(sample_sets) or sample_sets[i].target != t:
        raise MissingRowError(f"no sample set for target {t}")
    return sample_sets[i]


def _run(h_prev, targets, sets, layer: LayerSpec, node_rows, neighbor_means=None):
    look = _row_lookup(node_rows, h_prev.shape[0])
    self_rows = [look(int(t)) for t in targets]
    mean_sets = None if neighbor_means is not None else [[look(u) for u in s] for s in sets]
    return aggregate(h_prev, self_rows, mean_sets, layer.weight, layer.apply_activation,
                     layer.slope, neighbor_means)


def fine_sets(g: Graph, targets) -> list:
    adj = g.adjacency_lists
    return [adj[int(t)] for t in targets]


def coarse_sets(g: Graph, targets, sample_sets) -> list:
    adj = g.adjacency_lists
    out = []
    for i, t in enumerate(targets):
        nbrs = set(adj[int(t)])
        out.append([u for u in _sample_for(sample_sets, i, int(t)).drawn if u in nbrs])
    return out


def skip_sets(targets, sample_sets) -> list:
    return [[u for u in _sample_for(sample_sets, i, int(t)).drawn if u != t]
            for i, t in enumerate(targets)]


def fine_forward(g: Graph, h_prev, targets, layer: LayerSpec, node_rows=None, neighbor_means=None):
    """One output row per target, averaging all of its neighbors.

    ``node_rows`` maps node id to row of ``h_prev`` (identity when omitted).
    Only targets get output rows; neighbors merely contribute their inputs.
    """
    if layer.kind is not AggregatorKind.FINE:
        raise ValueError(f"fine_forward called with a {layer.kind.value} layer")
    sets = None if neighbor_means is not None else fine_sets(g, targets)
    return _run(h_prev, targets, sets, layer, node_rows, neighbor_means)


def coarse_forward(g: Graph, h_prev, targets, sample_sets, layer: LayerSpec, node_rows=None):
    if layer.kind is not AggregatorKind.COARSE:
        raise ValueError(f"coarse_forward called with a {layer.kind.value} layer")
    return _run(h_prev, targets, coarse_sets(g, targets, sample_sets), layer, node_rows)


def skip_forward(g: Graph, h_prev, targets, sample_sets, layer: LayerSpec, node_rows=None):
    """Aggregate every sampled node of each target, adjacent or not."""
    if layer.kind is not AggregatorKind.SKIP:
        raise ValueError(f"skip_forward called with a {layer.kind.value} layer")
    return _run(h_prev, targets, skip_sets(targets, sample_sets), layer, node_rows)


fine_backward = coarse_backward = skip_backward = aggregate_backward
