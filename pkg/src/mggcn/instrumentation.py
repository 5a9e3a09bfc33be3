"""Involved-node accounting per batch, and sweeps over batch size, sample size and depth.

A node is "involved" when some layer has to materialize an embedding row for
it. How that grows with depth is the memory story of each model:

* full GCN / SGC: the whole L-hop neighborhood of the batch
* uniform node-wise sampling: the recursive per-target sample trees
* MG-GCN: the union of the per-target sample sets, whatever L is
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import Graph
from .models import GCN, MGGCN, MODEL_KINDS, SAMPLED, SGC, build_plan, sampled_tree_size
from .sampler import derive_stream


@dataclass
class ComplexityReport:
    model: str
    batch_size: int
    sample_size: int
    num_layers: int
    counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        if any(c < self.batch_size for c in self.counts):
            raise ValueError("an involved-node count is below the batch size")

    @property
    def mean_involved_nodes(self) -> float:
        return float(np.mean(self.counts))

    @property
    def max_involved_nodes(self) -> int:
        return int(max(self.counts))

    def row(self) -> tuple:
        return (self.model, self.batch_size, self.sample_size, self.num_layers,
                repr(self.mean_involved_nodes), self.max_involved_nodes)


def khop_nodes(g: Graph, batch: Sequence[int], hops: int) -> set[int]:
    adj = g.adjacency_lists
    reached = set(int(v) for v in batch)
    frontier = list(reached)
    for _ in range(hops):
        nxt = []
        for v in frontier:
            for u in adj[v]:
                if u not in reached:
                    reached.add(u)
                    nxt.append(u)
        frontier = nxt
    return reached


def count_involved(g: Graph, batch: Sequence[int], model_kind: str, sample_size: int = 1,
                   num_layers: int = 2, seed: int = 0) -> int:
    """Involved-node count for one batch.

    ``sample_size`` is M for MG-GCN and the per-layer s for the sampled model;
    the full-neighborhood models ignore it.
    """
    batch = [int(v) for v in batch]
    if not batch:
        raise ValueError("batch is empty")
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    if model_kind in (GCN, SGC):
        return len(khop_nodes(g, batch, num_layers))
    if model_kind == MGGCN:
        return build_plan(g, batch, sample_size, seed).involved_embedding_nodes
    if model_kind == SAMPLED:
        return sampled_tree_size(g, batch, [sample_size] * num_layers, seed)
    raise ValueError(f"unknown model kind {model_kind!r}; choose from {MODEL_KINDS}")


def sweep(g: Graph, model_kind: str, batch_sizes: Sequence[int], sample_sizes: Sequence[int],
          layers: Sequence[int], num_batches: int = 5, seed: int = 0) -> list[ComplexityReport]:
    """One report per grid point, each over the same ``num_batches`` seeded batches.

    Batches for a given b are prefixes of one seeded permutation, so counts
    are comparable across grid points.
    """
    if not batch_sizes or not sample_sizes or not layers:
        raise ValueError("sweep grids must be non-empty")
    if max(batch_sizes) > g.num_nodes:
        raise ValueError(f"batch size {max(batch_sizes)} exceeds {g.num_nodes} nodes")
    orders = [np.random.default_rng(derive_stream(seed, 5, i)).permutation(g.num_nodes)
              for i in range(num_batches)]
    reports = []
    for b in batch_sizes:
        for s in sample_sizes:
            for L in layers:
                counts = [count_involved(g, order[:b].tolist(), model_kind, s, L,
                                         derive_stream(seed, 6, i))
                          for i, order in enumerate(orders)]
                reports.append(ComplexityReport(model_kind, b, s, L, counts))
    return reports


REPORT_HEADER = ("model", "b", "s", "L", "mean_involved", "max_involved")


def report_rows(reports: Sequence[ComplexityReport]) -> list[tuple]:
    return [r.row() for r in reports]
