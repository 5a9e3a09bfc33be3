"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line shown in the pytest terminal summary.
"""
import time
from collections import Counter

import numpy as np
import pytest

from conftest import central_diff, random_graph, rel_err
from mggcn.aggregators import AggregatorKind, LayerSpec, aggregate_backward, coarse_forward, fine_forward, skip_forward
from mggcn.cli import main
from mggcn.data import SyntheticSpec, generate_synthetic, load_dataset
from mggcn.graph import build_graph, normalize, spmm
from mggcn.instrumentation import sweep
from mggcn.models import full_gcn_forward, make_model, sgc_forward
from mggcn.sampler import SampleSet, check_sample_set, derive_stream, sample_candidate, target_rng
from mggcn.trainer import TrainConfig, run_trials

TRIALS = 20
BUDGET_SECONDS = 300


@pytest.fixture(scope="module")
def cora(cora_dir):
    return load_dataset(cora_dir, normalize_features=True)


@pytest.fixture(scope="module")
def citeseer(citeseer_dir):
    return load_dataset(citeseer_dir, normalize_features=True)


@pytest.fixture(scope="module")
def cora_gcn(cora):
    t = time.perf_counter()
    s = run_trials(cora, "gcn", TrainConfig(), TRIALS)
    return s, time.perf_counter() - t


def pct(x):
    return f"{100 * x:.2f}%"


def test_criterion_01_gcn_cora(cora_gcn, report):
    s, seconds = cora_gcn
    ok = s.mean >= 0.835 and seconds <= BUDGET_SECONDS
    assert report(1, ok, f"GCN on Cora: {pct(s.mean)} ± {pct(s.std)} over {TRIALS} trials "
                         f"(need >= 83.5%), {seconds:.0f}s (need <= {BUDGET_SECONDS}s)")


def test_criterion_02_mggcn_cora(cora, cora_gcn, report):
    t = time.perf_counter()
    s = run_trials(cora, "mggcn", TrainConfig(sample_size=6), TRIALS)
    seconds = time.perf_counter() - t
    gap = cora_gcn[0].mean - s.mean
    ok = s.mean >= 0.825 and abs(gap) <= 0.02 and seconds <= BUDGET_SECONDS
    assert report(2, ok, f"MG-GCN (M=6) on Cora: {pct(s.mean)} ± {pct(s.std)} (need >= 82.5%), "
                         f"GCN minus MG-GCN {100 * gap:+.2f} pts (need within 2), {seconds:.0f}s")


def test_criterion_03_mggcn_citeseer(citeseer, report):
    s = run_trials(citeseer, "mggcn", TrainConfig(sample_size=6), TRIALS)
    assert report(3, s.mean >= 0.75, f"MG-GCN (M=6) on Citeseer: {pct(s.mean)} ± {pct(s.std)} "
                                     f"over {TRIALS} trials (need >= 75%)")


def test_criterion_04_depth_citeseer(citeseer, report):
    runs = {L: run_trials(citeseer, "gcn", TrainConfig(num_layers=L), TRIALS) for L in (1, 2, 3)}
    m1, m2, m3 = (runs[L].mean for L in (1, 2, 3))
    # Noise: two standard errors of the difference of the 2- and 3-layer means.
    noise = 2 * np.sqrt((runs[2].std ** 2 + runs[3].std ** 2) / TRIALS)
    ok = abs(m1 - m2) <= 0.015 and m3 - m2 <= noise
    assert report(4, ok, f"GCN depth on Citeseer: L1 {pct(m1)}, L2 {pct(m2)}, L3 {pct(m3)}; "
                         f"|L1-L2| {100 * abs(m1 - m2):.2f} pts (need <= 1.5), "
                         f"L3-L2 {100 * (m3 - m2):+.2f} pts (need <= noise {100 * noise:.2f})")


def test_criterion_05_sgc_below_gcn(cora, cora_gcn, report):
    s = run_trials(cora, "sgc", TrainConfig(sgc_k=2), TRIALS)
    gap = cora_gcn[0].mean - s.mean
    assert report(5, gap >= 0.02, f"SGC (k=2) on Cora: {pct(s.mean)} ± {pct(s.std)}, "
                                  f"GCN minus SGC {100 * gap:+.2f} pts (need >= 2)")


def test_criterion_06_complexity(report):
    t = time.perf_counter()
    g = generate_synthetic(SyntheticSpec("power_law", 1000, seed=0)).graph
    b, m, s = 64, 6, 5
    mg2 = sweep(g, "mggcn", [b], [m], [2])[0]
    mg3 = sweep(g, "mggcn", [b], [m], [3])[0]
    sa2 = sweep(g, "sampled", [b], [s], [2])[0]
    sa3 = sweep(g, "sampled", [b], [s], [3])[0]
    growth = sa3.mean_involved_nodes / sa2.mean_involved_nodes
    seconds = time.perf_counter() - t
    ok = (mg2.counts == mg3.counts and mg2.max_involved_nodes <= b * (m + 1) and growth >= 3
          and seconds < 60)
    assert report(6, ok, f"involved nodes on power_law(1000), b=64: MG-GCN L2 {mg2.counts} vs L3 {mg3.counts} "
                         f"(bound {b * (m + 1)}); sampled s=5 growth L2->L3 x{growth:.2f} (need >= 3); "
                         f"{seconds:.1f}s")


def _first_draw_tv(g, v, draws=100_000, seed=0):
    adj = g.adjacency_lists
    total = sum(len(adj[u]) for u in adj[v])
    law = {u: len(adj[u]) / total for u in adj[v]}
    stream = derive_stream(seed)
    counts = Counter(sample_candidate(g, v, 1, target_rng(stream, i)).drawn[0] for i in range(draws))
    return 0.5 * sum(abs(counts.get(u, 0) / draws - p) for u, p in law.items()) + \
        0.5 * sum(c / draws for u, c in counts.items() if u not in law)


def test_criterion_07_sampler_law(report):
    graphs = {
        "hub-and-leaves": (build_graph([(0, 1), (0, 2), (0, 3), (1, 4), (1, 5), (1, 6), (1, 7), (2, 8)], 9), 0),
        "two-triangles": (build_graph([(0, 1), (1, 2), (2, 0), (0, 3), (3, 4), (4, 5), (5, 3), (3, 6)], 7), 0),
        "lollipop": (build_graph([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3), (3, 4), (4, 5)], 6), 4),
    }
    tvs = {name: _first_draw_tv(g, v) for name, (g, v) in graphs.items()}
    r = np.random.default_rng(123)
    violations = 0
    for i in range(10_000):
        n = int(r.integers(1, 16))
        g = random_graph(n, float(r.uniform(0, 0.5)), int(r.integers(2**31)))
        v, m, seed = int(r.integers(n)), int(r.integers(1, 9)), int(r.integers(2**31))
        s = sample_candidate(g, v, m, target_rng(seed, v))
        try:
            check_sample_set(g, s)
            assert sample_candidate(g, v, m, target_rng(seed, v)) == s
        except AssertionError:
            violations += 1
    ok = max(tvs.values()) <= 0.01 and violations == 0
    detail = ", ".join(f"{k} TV {tv:.4f}" for k, tv in tvs.items())
    assert report(7, ok, f"first-draw law over 100k draws: {detail} (need <= 0.01); "
                         f"invariant violations {violations}/10000")


def _model_grad_errors(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(5, 13))
    g = random_graph(n, float(r.uniform(0.15, 0.5)), seed)
    x = r.standard_normal((n, int(r.integers(2, 5))))
    classes = int(r.integers(2, 4))
    batch = np.array(sorted(r.choice(n, size=min(n, 4), replace=False)))
    labels = r.integers(0, classes, size=len(batch))
    errs = {}
    cases = [("mggcn", 2), ("mggcn", 3), ("gcn", 1), ("gcn", 2), ("sgc", 2), ("sampled", 2)]
    for kind, layers in cases:
        cfg = TrainConfig(hidden_dim=3, num_layers=layers, sample_size=int(r.integers(1, 5)),
                          sampled_sizes=(2, 3))
        model = make_model(kind, g, x, cfg)
        params = model.init_params(classes, r)
        _, grads, _ = model.loss_and_grads(params, batch, labels, seed)
        worst = 0.0
        for w, gr in zip(params.weights, grads):
            num = central_diff(lambda: model.loss_and_grads(params, batch, labels, seed)[0], w)
            worst = max(worst, rel_err(gr, num))
        errs[f"{kind}-L{layers}"] = worst
    targets = sorted(set(r.integers(0, n, size=3).tolist()))
    sets = {t: sample_candidate(g, t, 3, target_rng(seed, t)) for t in targets}
    d = x.shape[1]
    for kind, fwd in ((AggregatorKind.FINE, lambda s, h: fine_forward(g, h, targets, s)),
                      (AggregatorKind.COARSE, lambda s, h: coarse_forward(g, h, targets, sets, s)),
                      (AggregatorKind.SKIP, lambda s, h: skip_forward(g, h, targets, sets, s))):
        spec = LayerSpec(kind, r.standard_normal((2 * d, 3)))
        out, ctx = fwd(spec, x)
        up = r.standard_normal(out.shape)
        gh, gw = aggregate_backward(ctx, up)
        h = x.copy()
        num_h = central_diff(lambda: float(np.sum(fwd(spec, h)[0] * up)), h)
        num_w = central_diff(lambda: float(np.sum(fwd(spec, x)[0] * up)), spec.weight)
        errs[kind.value] = max(rel_err(gh, num_h), rel_err(gw, num_w))
    return errs


def test_criterion_08_gradients(report):
    worst = {}
    for seed in range(50):
        for name, e in _model_grad_errors(seed).items():
            worst[name] = max(worst.get(name, 0.0), e)
    ok = max(worst.values()) <= 1e-4
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    assert report(8, ok, f"finite-difference max rel. err over 50 instances (need <= 1e-4): {detail}")


def test_criterion_09_equivalence_oracles(report):
    r = np.random.default_rng(9)
    worst_cf = worst_sgc = worst_spmm = 0.0
    for seed in range(30):
        n = int(r.integers(2, 60))
        g = random_graph(n, float(r.uniform(0.02, 0.4)), seed)
        h = r.standard_normal((n, 4))
        w = r.standard_normal((8, 3))
        targets = list(range(n))
        full = {t: SampleSet(t, tuple(g.adjacency_lists[t]), max(1, int(g.degrees[t]))) for t in targets}
        a = coarse_forward(g, h, targets, full, LayerSpec(AggregatorKind.COARSE, w))[0]
        b = fine_forward(g, h, targets, LayerSpec(AggregatorKind.FINE, w))[0]
        worst_cf = max(worst_cf, float(np.max(np.abs(a - b))))
        adj = normalize(g)
        w1, w2 = r.standard_normal((4, 5)), r.standard_normal((5, 3))
        lin = full_gcn_forward(adj, h, [w1, w2], activation=False)[0]
        worst_sgc = max(worst_sgc, float(np.max(np.abs(sgc_forward(adj, h, w1 @ w2, 2)[0] - lin))))
        dense_a = np.zeros((n, n))
        for u, v in g.edges():
            dense_a[u, v] = dense_a[v, u] = 1.0
        dense_a += np.eye(n)
        deg = dense_a.sum(axis=1)
        oracle = (dense_a / np.sqrt(np.outer(deg, deg))) @ h
        worst_spmm = max(worst_spmm, float(np.max(np.abs(spmm(adj, h) - oracle)) / max(1.0, np.max(np.abs(oracle)))))
    ok = worst_cf <= 1e-12 and worst_sgc <= 1e-10 and worst_spmm <= 1e-12
    assert report(9, ok, f"coarse vs fine {worst_cf:.1e} (<= 1e-12), SGC vs linear GCN {worst_sgc:.1e} "
                         f"(<= 1e-10), spmm vs dense {worst_spmm:.1e} (<= 1e-12)")


def test_criterion_10_determinism(cora_dir, tmp_path, capsys, report):
    outs = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["train", "--dataset", str(cora_dir), "--model", "mggcn", "--sample-size", "6",
                     "--trials", "2", "--seed", "7", "--out", str(out)])
        assert code == 0
        outs.append(out)
    capsys.readouterr()
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
               for f in ("metrics.csv", "metrics_all_trials.csv"))
    rows = len((outs[0] / "metrics_all_trials.csv").read_text().splitlines()) - 1
    assert report(10, same, f"two train runs on Cora (MG-GCN, seed 7, 2 trials): metrics CSVs "
                            f"{'byte-identical' if same else 'differ'} ({rows} epoch rows)")
