"""Node samplers: the degree-biased candidate-set sampler and two baselines.

The candidate-set sampler grows a pool from the target's neighborhood. Each
round draws one node from the pool (minus what is already sampled) with
probability proportional to its degree, then adds that node's neighbors to
the pool. Sampling stops after ``m`` draws or when the pool runs dry.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from itertools import accumulate
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import Graph, GraphError, NormalizedAdjacency, _check_node, hop_distances, normalize

DEGREE_CANDIDATE = "degree_candidate"
UNIFORM_NEIGHBOR = "uniform_neighbor"
LAYER_IMPORTANCE = "layer_importance"
SAMPLER_TAGS = (DEGREE_CANDIDATE, UNIFORM_NEIGHBOR, LAYER_IMPORTANCE)


@dataclass(frozen=True)
class SampleSet:
    target: int
    drawn: tuple[int, ...]
    requested: int

    @property
    def nodes(self) -> tuple[int, ...]:
        """The target followed by the drawn nodes, i.e. the full S(v)."""
        return (self.target,) + self.drawn


@dataclass(frozen=True)
class SamplerKind:
    tag: str
    m: int = 0
    sizes: tuple[int, ...] = ()
    layer_size: int = 0

    def __post_init__(self):
        if self.tag not in SAMPLER_TAGS:
            raise ValueError(f"unknown sampler {self.tag!r}; expected one of {SAMPLER_TAGS}")
        if self.tag == DEGREE_CANDIDATE and self.m < 1:
            raise ValueError("degree_candidate sampler needs m >= 1")
        if self.tag == UNIFORM_NEIGHBOR and (not self.sizes or min(self.sizes) < 1):
            raise ValueError("uniform_neighbor sampler needs positive per-layer sizes")
        if self.tag == LAYER_IMPORTANCE and self.layer_size < 1:
            raise ValueError("layer_importance sampler needs layer_size >= 1")

    @classmethod
    def degree_candidate(cls, m: int) -> "SamplerKind":
        return cls(DEGREE_CANDIDATE, m=m)

    @classmethod
    def uniform_neighbor(cls, *sizes: int) -> "SamplerKind":
        return cls(UNIFORM_NEIGHBOR, sizes=tuple(sizes))

    @classmethod
    def layer_importance(cls, layer_size: int) -> "SamplerKind":
        return cls(LAYER_IMPORTANCE, layer_size=layer_size)


def derive_stream(seed: int, *path: int) -> int:
    """A 64-bit stream id that depends only on ``seed`` and ``path``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def target_rng(stream: int, target: int) -> np.random.Generator:
    """Independent generator for one target within a stream.

    Philox is counter based, so distinct keys give independent streams and the
    result does not depend on which other targets share the batch.
    """
    return np.random.Generator(np.random.Philox(key=[stream, int(target)]))


def draw_probability(g: Graph, candidate_pool: Iterable[int]) -> dict[int, float]:
    """Degree-proportional law over a candidate pool."""
    pool = sorted(set(int(u) for u in candidate_pool))
    if not pool:
        raise ValueError("candidate pool is empty")
    deg = g.degrees[pool].astype(np.float64)
    total = deg.sum()
    if total <= 0:
        raise ValueError("candidate pool has zero total degree")
    return dict(zip(pool, (deg / total).tolist()))


def sample_candidate(g: Graph, v: int, m: int, rng: np.random.Generator) -> SampleSet:
    """Draw up to ``m`` nodes around ``v`` with the growing candidate-set rule."""
    _check_node(g, v)
    if m < 1:
        raise ValueError("sample size m must be >= 1")
    adj = g.adjacency_lists
    deg = g.degree_list
    uniforms = rng.random(m).tolist()

    seen = {v}
    pool: list[int] = []
    weights: list[int] = []
    for u in adj[v]:
        seen.add(u)
        pool.append(u)
        weights.append(deg[u])

    drawn: list[int] = []
    for r in uniforms:
        if not pool:
            break
        cum = list(accumulate(weights))
        i = min(bisect_right(cum, r * cum[-1]), len(pool) - 1)
        u = pool.pop(i)
        del weights[i]
        drawn.append(u)
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                pool.append(w)
                weights.append(deg[w])
    return SampleSet(v, tuple(drawn), m)


def sample_uniform_neighbors(g: Graph, v: int, s: int, rng: np.random.Generator) -> SampleSet:
    """Up to ``s`` neighbors of ``v`` drawn uniformly without replacement."""
    _check_node(g, v)
    if s < 1:
        raise ValueError("sample size s must be >= 1")
    nbrs = g.adjacency_lists[v]
    if len(nbrs) <= s:
        return SampleSet(v, tuple(nbrs), s)
    # A full permutation keeps samples nested in s for a fixed generator state.
    picked = rng.permutation(len(nbrs))[:s]
    return SampleSet(v, tuple(nbrs[i] for i in picked.tolist()), s)


def layer_importance_distribution(a: NormalizedAdjacency) -> dict[int, float]:
    """p(v) proportional to the squared norm of column v of the normalized adjacency."""
    col_sq = np.asarray(a.matrix.multiply(a.matrix).sum(axis=0)).ravel()
    p = col_sq / col_sq.sum()
    return dict(enumerate(p.tolist()))


def sample_layer_importance(g: Graph, v: int, size: int, probs: np.ndarray,
                            rng: np.random.Generator) -> SampleSet:
    _check_node(g, v)
    p = probs.copy()
    p[v] = 0.0
    support = int(np.count_nonzero(p))
    k = min(size, support)
    picked = rng.choice(g.num_nodes, size=k, replace=False, p=p / p.sum()) if k else []
    return SampleSet(v, tuple(int(u) for u in picked), size)


def batch_sample(g: Graph, batch: Sequence[int], kind: SamplerKind, seed: int,
                 importance: np.ndarray | None = None) -> list[SampleSet]:
    """One SampleSet per target; target t always uses substream (seed, t)."""
    if len(batch) == 0:
        raise ValueError("batch is empty")
    stream = derive_stream(seed)
    if kind.tag == DEGREE_CANDIDATE:
        return [sample_candidate(g, t, kind.m, target_rng(stream, t)) for t in batch]
    if kind.tag == UNIFORM_NEIGHBOR:
        return [sample_uniform_neighbors(g, t, kind.sizes[0], target_rng(stream, t)) for t in batch]
    if importance is None:
        dist = layer_importance_distribution(normalize(g))
        importance = np.array([dist[i] for i in range(g.num_nodes)])
    return [sample_layer_importance(g, t, kind.layer_size, importance, target_rng(stream, t))
            for t in batch]


def check_sample_set(g: Graph, s: SampleSet) -> None:
    """Raise AssertionError if ``s`` breaks a SampleSet invariant."""
    assert s.target not in s.drawn, "target appears in drawn"
    assert len(set(s.drawn)) == len(s.drawn), "duplicate draws"
    assert len(s.drawn) <= s.requested, "more draws than requested"
    reach = set(g.adjacency_lists[s.target])
    for u in s.drawn:
        assert u in reach, f"node {u} was not in the candidate pool when drawn"
        reach.update(g.adjacency_lists[u])
    if len(s.drawn) < s.requested:
        pool = reach - set(s.nodes)
        assert not pool, "short sample set although candidates remained"


def sample_table(g: Graph, sets: Sequence[SampleSet]) -> list[dict]:
    """Per-draw rows (target, draw_index, node, degree, hop_distance)."""
    rows = []
    for s in sets:
        dist = hop_distances(g, s.target)
        for i, u in enumerate(s.drawn):
            rows.append({"target": s.target, "draw_index": i, "node": u,
                         "degree": int(g.degrees[u]), "hop_distance": int(dist[u])})
    return rows


def empirical_first_draw(g: Graph, v: int, trials: int, seed: int) -> Mapping[int, float]:
    stream = derive_stream(seed)
    counts: dict[int, int] = {}
    for i in range(trials):
        s = sample_candidate(g, v, 1, target_rng(stream, i))
        if s.drawn:
            counts[s.drawn[0]] = counts.get(s.drawn[0], 0) + 1
    return {u: c / trials for u, c in counts.items()}


__all__ = [
    "SampleSet", "SamplerKind", "sample_candidate", "draw_probability",
    "sample_uniform_neighbors", "layer_importance_distribution", "batch_sample",
    "derive_stream", "target_rng", "check_sample_set", "GraphError",
]
