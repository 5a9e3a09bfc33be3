"""Trainable models: MG-GCN, full-batch GCN, SGC and a uniform-sampled GCN.

Each model exposes plain forward/backward functions plus a small wrapper
class used by the trainer. Weights carry no bias terms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import dense
from .aggregators import (AggregatorKind, LayerSpec, aggregate, aggregate_backward, coarse_sets,
                          fine_sets, skip_sets)
from .graph import Graph, NormalizedAdjacency, normalize, spmm
from .sampler import SampleSet, SamplerKind, batch_sample, derive_stream, sample_uniform_neighbors, target_rng

MGGCN = "mggcn"
GCN = "gcn"
SGC = "sgc"
SAMPLED = "sampled"
MODEL_KINDS = (MGGCN, GCN, SGC, SAMPLED)

CHECKPOINT_FORMAT = "mggcn-checkpoint/1"


class ModelError(ValueError):
    pass


@dataclass
class ModelParams:
    model: str
    weights: list[np.ndarray]
    kinds: list[str | None]
    num_classes: int
    hidden_dim: int
    extra: dict = field(default_factory=dict)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "ModelParams":
        return ModelParams(self.model, [w.copy() for w in self.weights], list(self.kinds),
                           self.num_classes, self.hidden_dim, dict(self.extra))

    def layer_specs(self, slope: float = dense.DEFAULT_SLOPE) -> list[LayerSpec]:
        last = len(self.weights) - 1
        return [LayerSpec(AggregatorKind(k), w, apply_activation=i != last, slope=slope)
                for i, (k, w) in enumerate(zip(self.kinds, self.weights))]


def mggcn_kinds(num_layers: int) -> list[str]:
    if num_layers < 2:
        raise ModelError("MG-GCN needs at least two layers")
    middle = [AggregatorKind.COARSE.value] * (num_layers - 2)
    return [AggregatorKind.FINE.value] + middle + [AggregatorKind.SKIP.value]


def init_params(model: str, in_dim: int, hidden_dim: int, num_classes: int, num_layers: int,
                rng: np.random.Generator, **extra) -> ModelParams:
    """Glorot-uniform weights laid out for ``model``.

    Aggregator layers take ``2*d_in`` rows because of the concatenation.
    """
    if model not in MODEL_KINDS:
        raise ModelError(f"unknown model {model!r}")
    if model == SGC:
        return ModelParams(model, [dense.glorot_uniform(in_dim, num_classes, rng)], [None],
                           num_classes, hidden_dim, extra)
    if num_layers < 1:
        raise ModelError("need at least one layer")
    dims = [in_dim] + [hidden_dim] * (num_layers - 1) + [num_classes]
    factor = 1 if model == GCN else 2
    weights = [dense.glorot_uniform(factor * a, b, rng) for a, b in zip(dims[:-1], dims[1:])]
    if model == GCN:
        kinds = [None] * num_layers
    elif model == MGGCN:
        kinds = mggcn_kinds(num_layers)
    else:
        kinds = [AggregatorKind.COARSE.value] * num_layers
    return ModelParams(model, weights, kinds, num_classes, hidden_dim, extra)


def check_chain(params: ModelParams, in_dim: int) -> None:
    factor = 1 if params.model in (GCN, SGC) else 2
    width = in_dim
    for i, w in enumerate(params.weights):
        if w.shape[0] != factor * width:
            raise ModelError(f"layer {i + 1} expects input width {w.shape[0] // factor}, got {width}")
        width = w.shape[1]
    if width != params.num_classes:
        raise ModelError(f"final width {width} != num_classes {params.num_classes}")


# ---------------------------------------------------------------- MG-GCN

@dataclass
class BatchPlan:
    batch_targets: np.ndarray
    sample_sets: list[SampleSet]
    embed_nodes: np.ndarray
    source_nodes: np.ndarray

    @property
    def involved_embedding_nodes(self) -> int:
        return len(self.embed_nodes)


def plan_from_sets(g: Graph, sample_sets: Sequence[SampleSet]) -> BatchPlan:
    targets = np.array([s.target for s in sample_sets], dtype=np.int64)
    embed = np.unique(np.fromiter((u for s in sample_sets for u in s.nodes), dtype=np.int64))
    adj = g.adjacency_lists
    reads = set(embed.tolist())
    for u in embed.tolist():
        reads.update(adj[u])
    return BatchPlan(targets, list(sample_sets), embed, np.array(sorted(reads), dtype=np.int64))


def build_plan(g: Graph, targets: Sequence[int], m: int, seed: int) -> BatchPlan:
    return plan_from_sets(g, batch_sample(g, list(targets), SamplerKind.degree_candidate(m), seed))


@dataclass
class MGGCNCache:
    plan: BatchPlan
    contexts: list
    pair_rows: np.ndarray | None
    num_embed: int


def mggcn_forward(g: Graph, features, plan: BatchPlan, params: ModelParams,
                  slope: float = dense.DEFAULT_SLOPE, neighbor_means=None):
    """Logits for ``plan.batch_targets`` and a cache for :func:`mggcn_backward`.

    Layer 1 (fine) produces a row for every node of ``∪ S(t)``. For three or
    more layers, middle (coarse) layers run per target on the sampled
    subgraph, so node u in S(t) averages over ``S(t) ∩ N(u)``. The last
    layer aggregates per target according to its kind (skip by default).
    """
    specs = params.layer_specs(slope)
    if specs[0].kind is not AggregatorKind.FINE:
        raise ModelError("first MG-GCN layer must be fine-grained")
    if features.shape[1] != specs[0].d_in:
        raise ModelError(f"feature width {features.shape[1]} != layer-1 input width {specs[0].d_in}")
    embed = plan.embed_nodes
    pos = {u: i for i, u in enumerate(embed.tolist())}
    targets = plan.batch_targets.tolist()
    sets = plan.sample_sets

    if neighbor_means is None:
        mean_sets = fine_sets(g, embed.tolist())
    else:
        mean_sets = None
    h, ctx1 = aggregate(features, embed, mean_sets, specs[0].weight, specs[0].apply_activation,
                        slope, neighbor_means)
    contexts = [ctx1]
    final = specs[-1]

    if len(specs) == 2:
        self_rows = [pos[t] for t in targets]
        node_sets = _final_sets(g, final.kind, targets, sets)
        mean_idx = [[pos[u] for u in s] for s in node_sets]
        logits, ctx = aggregate(h, self_rows, mean_idx, final.weight, final.apply_activation, slope)
        contexts.append(ctx)
        return logits, MGGCNCache(plan, contexts, None, len(embed))

    # Per-target pair rows: row (t, u) for every u in S(t), target first.
    pair_nodes, starts = [], []
    for s in sets:
        starts.append(len(pair_nodes))
        pair_nodes.extend(s.nodes)
    pair_rows = np.array([pos[u] for u in pair_nodes], dtype=np.int64)
    h = h[pair_rows]
    adj = g.adjacency_lists
    middle_sets = []
    for s, start in zip(sets, starts):
        local = {u: start + j for j, u in enumerate(s.nodes)}
        for u in s.nodes:
            nbrs = adj[u]
            middle_sets.append([local[w] for w in nbrs if w in local])
    middle_op = dense.mean_operator(middle_sets, len(pair_nodes))
    all_pairs = np.arange(len(pair_nodes))
    for spec in specs[1:-1]:
        if spec.kind is not AggregatorKind.COARSE:
            raise ModelError("middle MG-GCN layers must be coarse-grained")
        h, ctx = aggregate(h, all_pairs, middle_op, spec.weight, spec.apply_activation, slope)
        contexts.append(ctx)
    node_sets = _final_sets(g, final.kind, targets, sets)
    mean_idx = []
    for s, start, chosen in zip(sets, starts, node_sets):
        local = {u: start + j for j, u in enumerate(s.nodes)}
        mean_idx.append([local[u] for u in chosen])
    logits, ctx = aggregate(h, starts, mean_idx, final.weight, final.apply_activation, slope)
    contexts.append(ctx)
    return logits, MGGCNCache(plan, contexts, pair_rows, len(embed))


def _final_sets(g: Graph, kind: AggregatorKind, targets, sets):
    if kind is AggregatorKind.SKIP:
        return skip_sets(targets, sets)
    if kind is AggregatorKind.COARSE:
        return coarse_sets(g, targets, sets)
    raise ModelError(f"unsupported final layer kind {kind.value}")


def mggcn_backward(cache: MGGCNCache, loss_grad: np.ndarray) -> list[np.ndarray]:
    if cache is None or not cache.contexts:
        raise ModelError("missing forward cache")
    grads = [None] * len(cache.contexts)
    g_h = loss_grad
    for i in range(len(cache.contexts) - 1, 0, -1):
        g_h, grads[i] = aggregate_backward(cache.contexts[i], g_h)
    if cache.pair_rows is not None:
        g_embed = np.zeros((cache.num_embed, g_h.shape[1]))
        np.add.at(g_embed, cache.pair_rows, g_h)
        g_h = g_embed
    _, grads[0] = aggregate_backward(cache.contexts[0], g_h, need_input_grad=False)
    return grads


# ---------------------------------------------------------------- full GCN / SGC

def full_gcn_forward(a: NormalizedAdjacency, features, weights: Sequence[np.ndarray],
                     slope: float = dense.DEFAULT_SLOPE, activation: bool = True):
    """Logits for all nodes: ``Â·H·W`` per layer with LeakyReLU between layers."""
    if len(weights) < 1:
        raise ModelError("need at least one layer")
    h = features
    cache = []
    for i, w in enumerate(weights):
        if h.shape[1] != w.shape[0]:
            raise ModelError(f"layer {i + 1}: input width {h.shape[1]} != weight rows {w.shape[0]}")
        z = spmm(a, dense.matmul(h, w))
        cache.append((h, z))
        last = i == len(weights) - 1
        h = z if last or not activation else dense.leaky_relu(z, slope)
    return h, (a, list(weights), cache, slope, activation)


def full_gcn_backward(cache, loss_grad: np.ndarray) -> list[np.ndarray]:
    a, weights, layers, slope, activation = cache
    grads = [None] * len(weights)
    g_out = loss_grad
    for i in range(len(weights) - 1, -1, -1):
        h, z = layers[i]
        if i != len(weights) - 1 and activation:
            g_out = dense.leaky_relu_grad(z, g_out, slope)
        g_p = spmm(a.matrix.T, g_out)
        g_h, grads[i] = dense.matmul_grads(h, weights[i], g_p, need_a=i > 0)
        g_out = g_h
    return grads


def propagate(a: NormalizedAdjacency, features, k: int) -> np.ndarray:
    """``Â^k X`` as k successive sparse products."""
    if k < 1:
        raise ModelError("k must be >= 1")
    h = features.toarray() if sp.issparse(features) else features
    for _ in range(k):
        h = spmm(a, h)
    return h


def sgc_forward(a: NormalizedAdjacency, features, w: np.ndarray, k: int, propagated=None):
    ax = propagate(a, features, k) if propagated is None else propagated
    if ax.shape[1] != w.shape[0]:
        raise ModelError(f"feature width {ax.shape[1]} != weight rows {w.shape[0]}")
    return ax @ w, ax


def sgc_backward(propagated: np.ndarray, loss_grad: np.ndarray, rows=None) -> np.ndarray:
    x = propagated if rows is None else propagated[rows]
    return x.T @ loss_grad


# ---------------------------------------------------------------- uniform-sampled GCN

@dataclass
class SampledPlan:
    """Node-wise recursive samples, deduplicated per layer.

    ``layer_nodes[l]`` lists the nodes whose layer-l output is computed
    (``layer_nodes[L]`` is the batch, ``layer_nodes[0]`` the feature rows
    read). ``layer_samples[l-1]`` maps each node of ``layer_nodes[l]`` to the
    neighbors it aggregates at layer l.
    """

    batch_targets: np.ndarray
    layer_nodes: list[np.ndarray]
    layer_samples: list[dict]


def build_sampled_plan(g: Graph, targets: Sequence[int], sizes: Sequence[int], seed: int) -> SampledPlan:
    """``sizes[h]`` is the sample size at hop h+1 from the batch (outermost first)."""
    num_layers = len(sizes)
    nodes = [None] * (num_layers + 1)
    samples = [None] * num_layers
    nodes[num_layers] = np.asarray(targets, dtype=np.int64)
    for hop, s in enumerate(sizes, 1):
        layer = num_layers - hop + 1
        stream = derive_stream(seed, hop)
        chosen = {}
        for v in nodes[layer].tolist():
            chosen[v] = sample_uniform_neighbors(g, v, s, target_rng(stream, v))
        samples[layer - 1] = chosen
        reached = set(nodes[layer].tolist())
        for ss in chosen.values():
            reached.update(ss.drawn)
        nodes[layer - 1] = np.array(sorted(reached), dtype=np.int64)
    return SampledPlan(nodes[num_layers], nodes, samples)


def sampled_gcn_forward(g: Graph, features, plan: SampledPlan, params: ModelParams,
                        slope: float = dense.DEFAULT_SLOPE):
    specs = params.layer_specs(slope)
    if len(specs) != len(plan.layer_samples):
        raise ModelError(f"{len(specs)} layers but samples for {len(plan.layer_samples)}")
    if features.shape[1] != specs[0].d_in:
        raise ModelError(f"feature width {features.shape[1]} != layer-1 input width {specs[0].d_in}")
    h = features
    prev_pos = None
    contexts = []
    for l, spec in enumerate(specs, 1):
        out_nodes = plan.layer_nodes[l].tolist()
        chosen = plan.layer_samples[l - 1]
        look = (lambda u: u) if prev_pos is None else prev_pos.__getitem__
        self_rows = [look(v) for v in out_nodes]
        mean_idx = [[look(u) for u in chosen[v].drawn] for v in out_nodes]
        h, ctx = aggregate(h, self_rows, mean_idx, spec.weight, spec.apply_activation, slope)
        contexts.append(ctx)
        prev_pos = {u: i for i, u in enumerate(out_nodes)}
    return h, contexts


def sampled_gcn_backward(contexts, loss_grad: np.ndarray) -> list[np.ndarray]:
    grads = [None] * len(contexts)
    g_h = loss_grad
    for i in range(len(contexts) - 1, -1, -1):
        g_h, grads[i] = aggregate_backward(contexts[i], g_h, need_input_grad=i > 0)
    return grads


def sampled_tree_size(g: Graph, targets: Sequence[int], sizes: Sequence[int], seed: int) -> int:
    """Rows of the per-target recursive sample trees, no cross-target sharing.

    This is the b·s^L style accounting of node-wise sampling.
    """
    total = 0
    for t in targets:
        frontier = [int(t)]
        total += 1
        for hop, s in enumerate(sizes, 1):
            stream = derive_stream(seed, hop, int(t))
            nxt = []
            for v in frontier:
                nxt.extend(sample_uniform_neighbors(g, v, s, target_rng(stream, v)).drawn)
            total += len(nxt)
            frontier = nxt
    return total


# ---------------------------------------------------------------- trainer adapters

def _maybe_sparse(x: np.ndarray, threshold: float = 0.1):
    """CSR view of a mostly-zero feature matrix, used only as a layer-1 input."""
    if sp.issparse(x):
        return x.tocsr()
    if x.size and np.count_nonzero(x) / x.size < threshold:
        return sp.csr_matrix(x)
    return x


class Model:
    """Adapter between a model family and the training loop."""

    name = ""

    def __init__(self, graph: Graph, features: np.ndarray, config):
        self.graph = graph
        self.features = features
        self.config = config
        self.slope = config.leaky_slope

    def init_params(self, num_classes: int, rng: np.random.Generator) -> ModelParams:
        c = self.config
        return init_params(self.name, self.features.shape[1], c.hidden_dim, num_classes,
                           c.num_layers, rng)

    def loss_and_grads(self, params, batch, labels, seed):
        """Returns ``(loss, grads, involved_nodes)`` for one mini-batch."""
        raise NotImplementedError

    def logits(self, params, ids, seed) -> np.ndarray:
        raise NotImplementedError


def _loss(logits, labels):
    return dense.softmax_cross_entropy(logits, labels)


class MGGCNModel(Model):
    name = MGGCN

    def __init__(self, graph, features, config):
        super().__init__(graph, features, config)
        self.x = _maybe_sparse(features)
        op = dense.mean_operator(graph.adjacency_lists, graph.num_nodes)
        means = op @ self.x
        self.neighbor_means = means.tocsr() if sp.issparse(means) else means

    def _forward(self, params, targets, seed):
        plan = build_plan(self.graph, targets, self.config.sample_size, seed)
        logits, cache = mggcn_forward(self.graph, self.x, plan, params, self.slope, self.neighbor_means)
        return logits, cache, plan

    def loss_and_grads(self, params, batch, labels, seed):
        logits, cache, plan = self._forward(params, batch, seed)
        loss, g = _loss(logits, labels)
        return loss, mggcn_backward(cache, g), plan.involved_embedding_nodes

    def logits(self, params, ids, seed):
        chunk = max(self.config.batch_size, 1)
        parts = [self._forward(params, ids[i:i + chunk], seed)[0] for i in range(0, len(ids), chunk)]
        return np.vstack(parts) if parts else np.zeros((0, params.num_classes))


class GCNModel(Model):
    name = GCN

    def __init__(self, graph, features, config):
        super().__init__(graph, features, config)
        self.adj = normalize(graph)
        self.x = _maybe_sparse(features)

    def loss_and_grads(self, params, batch, labels, seed):
        logits, cache = full_gcn_forward(self.adj, self.x, params.weights, self.slope)
        loss, g = _loss(logits[batch], labels)
        full = np.zeros_like(logits)
        full[batch] = g
        return loss, full_gcn_backward(cache, full), self.graph.num_nodes

    def logits(self, params, ids, seed):
        return full_gcn_forward(self.adj, self.x, params.weights, self.slope)[0][ids]


class SGCModel(Model):
    name = SGC

    def __init__(self, graph, features, config):
        super().__init__(graph, features, config)
        self.adj = normalize(graph)
        self.propagated = propagate(self.adj, _maybe_sparse(features), config.sgc_k)

    def loss_and_grads(self, params, batch, labels, seed):
        logits = self.propagated[batch] @ params.weights[0]
        loss, g = _loss(logits, labels)
        return loss, [sgc_backward(self.propagated, g, batch)], self.graph.num_nodes

    def logits(self, params, ids, seed):
        return self.propagated[ids] @ params.weights[0]


class SampledModel(Model):
    name = SAMPLED

    def __init__(self, graph, features, config):
        super().__init__(graph, features, config)
        self.x = _maybe_sparse(features)
        sizes = tuple(config.sampled_sizes)
        if len(sizes) != config.num_layers:
            raise ModelError(f"{len(sizes)} sample sizes for {config.num_layers} layers")
        self.sizes = sizes

    def _forward(self, params, targets, seed):
        plan = build_sampled_plan(self.graph, targets, self.sizes, seed)
        logits, ctx = sampled_gcn_forward(self.graph, self.x, plan, params, self.slope)
        return logits, ctx, plan

    def loss_and_grads(self, params, batch, labels, seed):
        logits, ctx, plan = self._forward(params, batch, seed)
        loss, g = _loss(logits, labels)
        involved = sum(len(n) for n in plan.layer_nodes[1:])
        return loss, sampled_gcn_backward(ctx, g), involved

    def logits(self, params, ids, seed):
        chunk = max(self.config.batch_size, 1)
        parts = [self._forward(params, ids[i:i + chunk], seed)[0] for i in range(0, len(ids), chunk)]
        return np.vstack(parts) if parts else np.zeros((0, params.num_classes))


MODEL_CLASSES = {cls.name: cls for cls in (MGGCNModel, GCNModel, SGCModel, SampledModel)}


def make_model(kind: str, graph: Graph, features: np.ndarray, config) -> Model:
    try:
        cls = MODEL_CLASSES[kind]
    except KeyError:
        raise ModelError(f"unknown model {kind!r}; choose from {sorted(MODEL_CLASSES)}") from None
    return cls(graph, features, config)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    """Write an ``.npz`` archive: arrays ``W1..WL`` plus a JSON ``meta`` string."""
    meta = {"format": CHECKPOINT_FORMAT, "model": params.model, "kinds": params.kinds,
            "num_classes": params.num_classes, "hidden_dim": params.hidden_dim,
            "shapes": [list(w.shape) for w in params.weights], "extra": params.extra}
    arrays = {f"W{i + 1}": w for i, w in enumerate(params.weights)}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path: str | Path) -> ModelParams:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ModelError(f"{path}: not a {CHECKPOINT_FORMAT} file")
        weights = [np.array(data[f"W{i + 1}"]) for i in range(len(meta["shapes"]))]
    for w, shape in zip(weights, meta["shapes"]):
        if list(w.shape) != shape:
            raise ModelError(f"{path}: weight shape {w.shape} disagrees with header {shape}")
    return ModelParams(meta["model"], weights, meta["kinds"], meta["num_classes"],
                       meta["hidden_dim"], meta.get("extra", {}))
