import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, graphs, p4, random_graph, rel_err
from mggcn import dense
from mggcn.graph import build_graph, normalize
from mggcn.models import (GCN, MGGCN, SAMPLED, SGC, ModelError, ModelParams, build_plan,
                          build_sampled_plan, check_chain, full_gcn_forward, init_params, load_checkpoint,
                          make_model, mggcn_forward, mggcn_kinds, plan_from_sets, propagate,
                          sampled_gcn_forward, save_checkpoint, sgc_forward)
from mggcn.sampler import SampleSet
from mggcn.trainer import TrainConfig


def params_for(model, in_dim, hidden, classes, layers, seed=0, **kw):
    return init_params(model, in_dim, hidden, classes, layers, np.random.default_rng(seed), **kw)


def test_layer_patterns():
    assert mggcn_kinds(2) == ["fine_grained", "skip_connection"]
    assert mggcn_kinds(4) == ["fine_grained", "coarse_grained", "coarse_grained", "skip_connection"]
    with pytest.raises(ModelError):
        mggcn_kinds(1)


def test_cora_shapes():
    p = params_for(MGGCN, 1433, 16, 7, 2)
    assert [w.shape for w in p.weights] == [(2866, 16), (32, 7)]
    check_chain(p, 1433)
    with pytest.raises(ModelError):
        check_chain(p, 1000)
    g = random_graph(30, 0.2, 0)
    x = np.random.default_rng(0).standard_normal((30, 1433))
    logits, _ = mggcn_forward(g, x, build_plan(g, [0, 1, 2], 6, 0), p)
    assert logits.shape == (3, 7)


def test_mggcn_receptive_field_on_path():
    g = p4()
    plan = build_plan(g, [0], 1, 0)
    assert plan.sample_sets[0].drawn == (1,) and plan.involved_embedding_nodes == 2
    p = params_for(MGGCN, 3, 4, 2, 2)
    x = np.random.default_rng(1).standard_normal((4, 3))
    base = mggcn_forward(g, x, plan, p)[0]
    far = x.copy()
    far[3] += 10
    assert np.array_equal(mggcn_forward(g, far, plan, p)[0], base)
    near = x.copy()
    near[2] += 10
    assert not np.allclose(mggcn_forward(g, near, plan, p)[0], base)


def test_mggcn_full_sample_collapse():
    """Fine then neighbor-restricted final layer, with a sample covering 2 hops,
    equals the full-neighborhood batched two-layer model."""
    g = random_graph(25, 0.15, 2)
    x = np.random.default_rng(3).standard_normal((25, 4))
    p = params_for(MGGCN, 4, 5, 3, 2, seed=4)
    p.kinds = ["fine_grained", "coarse_grained"]
    batch = [0, 5, 9]
    plan = build_plan(g, batch, 25, 0)
    got = mggcn_forward(g, x, plan, p)[0]
    big = int(g.degrees.max()) + 1
    ref = sampled_gcn_forward(g, x, build_sampled_plan(g, batch, [big, big], 0), p)[0]
    np.testing.assert_allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_mggcn_permutation_equivariant():
    g = random_graph(40, 0.1, 5)
    x = np.random.default_rng(0).standard_normal((40, 3))
    for layers in (2, 3):
        p = params_for(MGGCN, 3, 4, 2, layers)
        batch = [3, 17, 8, 30]
        perm = [2, 0, 3, 1]
        a = mggcn_forward(g, x, build_plan(g, batch, 4, 7), p)[0]
        b = mggcn_forward(g, x, build_plan(g, [batch[i] for i in perm], 4, 7), p)[0]
        np.testing.assert_allclose(b, a[perm], atol=1e-14)


def test_mggcn_three_layers_matches_per_target_reference():
    g = random_graph(15, 0.25, 6)
    x = np.random.default_rng(2).standard_normal((15, 3))
    p = params_for(MGGCN, 3, 4, 2, 3)
    plan = build_plan(g, [0, 4], 4, 1)
    got = mggcn_forward(g, x, plan, p)[0]
    act = lambda z: np.where(z > 0, z, 0.01 * z)
    adj = g.adjacency_lists
    rows = []
    for s in plan.sample_sets:
        nodes = s.nodes
        h1 = {u: act(np.concatenate([x[u], x[adj[u]].mean(axis=0) if adj[u] else np.zeros(3)]) @ p.weights[0])
              for u in nodes}
        h2 = {}
        for u in nodes:
            inside = [w for w in adj[u] if w in h1]
            mean = np.mean([h1[w] for w in inside], axis=0) if inside else np.zeros(4)
            h2[u] = act(np.concatenate([h1[u], mean]) @ p.weights[1])
        mean = np.mean([h2[u] for u in s.drawn], axis=0) if s.drawn else np.zeros(4)
        rows.append(np.concatenate([h2[s.target], mean]) @ p.weights[2])
    np.testing.assert_allclose(got, np.array(rows), rtol=1e-12, atol=1e-12)


def test_full_gcn_examples():
    g = p4()
    a = normalize(g)
    w = np.random.default_rng(0).standard_normal((4, 2))
    np.testing.assert_allclose(full_gcn_forward(a, np.eye(4), [w])[0], a.todense() @ w, atol=1e-14)
    iso = build_graph([(0, 1)], 3)
    x = np.random.default_rng(1).standard_normal((3, 2))
    ws = [np.random.default_rng(2).standard_normal((2, 3)), np.random.default_rng(3).standard_normal((3, 2))]
    base = full_gcn_forward(normalize(iso), x, ws)[0]
    x2 = x.copy()
    x2[:2] += 5
    np.testing.assert_array_equal(full_gcn_forward(normalize(iso), x2, ws)[0][2], base[2])
    d = a.todense()
    x = np.random.default_rng(4).standard_normal((4, 3))
    w1, w2 = np.random.default_rng(5).standard_normal((3, 5)), np.random.default_rng(6).standard_normal((5, 2))
    h = d @ x @ w1
    h = np.where(h > 0, h, 0.01 * h)
    np.testing.assert_allclose(full_gcn_forward(a, x, [w1, w2])[0], d @ h @ w2, atol=1e-13)
    with pytest.raises(ModelError):
        full_gcn_forward(a, x, [w2])


def test_sgc_examples():
    g = random_graph(12, 0.3, 1)
    a = normalize(g)
    x = np.random.default_rng(0).standard_normal((12, 4))
    np.testing.assert_allclose(sgc_forward(a, x, np.eye(4), 1)[0], a.todense() @ x, atol=1e-14)
    np.testing.assert_allclose(propagate(a, x, 2), a.todense() @ (a.todense() @ x), atol=1e-13)
    w1, w2 = np.random.default_rng(1).standard_normal((4, 6)), np.random.default_rng(2).standard_normal((6, 3))
    linear = full_gcn_forward(a, x, [w1, w2], activation=False)[0]
    assert np.max(np.abs(sgc_forward(a, x, w1 @ w2, 2)[0] - linear)) <= 1e-10


def test_sampled_examples():
    g = p4()
    x = np.random.default_rng(0).standard_normal((4, 3))
    p = params_for(SAMPLED, 3, 4, 2, 2)
    plan = build_sampled_plan(g, [1], [1, 1], 0)
    read = set(plan.layer_nodes[0].tolist())
    assert len(read) <= 3
    base = sampled_gcn_forward(g, x, plan, p)[0]
    for u in set(range(4)) - read:
        x2 = x.copy()
        x2[u] += 9
        assert np.array_equal(sampled_gcn_forward(g, x2, plan, p)[0], base)
    cfg = TrainConfig()
    assert cfg.sampled_sizes == (25, 10)


def test_involved_bound():
    g = random_graph(200, 0.05, 9)
    for m in (1, 3, 6):
        batch = list(range(0, 200, 4))
        plan = build_plan(g, batch, m, 0)
        assert len(batch) <= plan.involved_embedding_nodes <= len(batch) * (m + 1)


def _loss_grad_check(model, params, batch, labels, seed):
    loss, grads, _ = model.loss_and_grads(params, np.array(batch), labels, seed)
    for w, g in zip(params.weights, grads):
        num = central_diff(lambda: model.loss_and_grads(params, np.array(batch), labels, seed)[0], w)
        assert rel_err(g, num) <= 1e-4, model.name


@pytest.mark.parametrize("kind,layers", [(MGGCN, 2), (MGGCN, 3), (GCN, 1), (GCN, 2), (SGC, 2),
                                         (SAMPLED, 2)])
def test_model_gradients(kind, layers):
    g = random_graph(10, 0.3, 11)
    x = np.random.default_rng(0).standard_normal((10, 3))
    cfg = TrainConfig(hidden_dim=4, num_layers=layers, sample_size=3, sampled_sizes=(2, 2))
    model = make_model(kind, g, x, cfg)
    params = model.init_params(3, np.random.default_rng(1))
    batch = [0, 2, 5, 7]
    _loss_grad_check(model, params, batch, np.array([0, 1, 2, 1]), 3)


def test_checkpoint_round_trip(tmp_path):
    p = params_for(MGGCN, 5, 4, 3, 3, extra_key=1)
    path = tmp_path / "ck.npz"
    save_checkpoint(p, path)
    q = load_checkpoint(path)
    assert q.model == p.model and q.kinds == p.kinds and q.extra == {"extra_key": 1}
    assert all(np.array_equal(a, b) for a, b in zip(p.weights, q.weights))
    np.savez(tmp_path / "bad.npz", meta=np.array('{"format": "other"}'))
    with pytest.raises(ModelError):
        load_checkpoint(tmp_path / "bad.npz")


def test_make_model_rejects_unknown():
    with pytest.raises(ModelError):
        make_model("gat", p4(), np.eye(4), TrainConfig())
    with pytest.raises(ModelError):
        make_model(SAMPLED, p4(), np.eye(4), TrainConfig(num_layers=3))


def test_plan_source_nodes_cover_reads():
    g = random_graph(30, 0.1, 2)
    plan = plan_from_sets(g, [SampleSet(0, tuple(g.adjacency_lists[0][:2]), 2)])
    needed = set(plan.embed_nodes.tolist())
    for u in plan.embed_nodes.tolist():
        needed.update(g.adjacency_lists[u])
    assert needed == set(plan.source_nodes.tolist())
