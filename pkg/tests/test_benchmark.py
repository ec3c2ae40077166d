import numpy as np
import pytest

from backdoor_diffusion.benchmark import (
    REGISTRY,
    BenchmarkConfig,
    Equation,
    GroundTruthScm,
    Term,
    build_scm,
    generate_benchmark,
    oracle_counterfactual,
    oracle_interventional,
)
from backdoor_diffusion.data import PanelDataset, load_dataset
from backdoor_diffusion.errors import InvalidSize, MissingExogenous, UnknownBenchmark, UnknownNode
from backdoor_diffusion.graph import simple_graph


def test_generation_is_deterministic():
    a, _ = generate_benchmark(BenchmarkConfig(n=30), 7)
    b, _ = generate_benchmark(BenchmarkConfig(n=30), 7)
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.exogenous, b.exogenous)
    c, _ = generate_benchmark(BenchmarkConfig(n=30), 8)
    assert not np.array_equal(a.values, c.values)


def test_shape_n200():
    ds, _ = generate_benchmark(BenchmarkConfig(n=200), 1)
    assert ds.values.shape == (200, 6, 33)


def test_unknown_benchmark_and_sizes():
    with pytest.raises(UnknownBenchmark, match="pfst33"):
        generate_benchmark(BenchmarkConfig(name="nope"), 0)
    with pytest.raises(InvalidSize):
        generate_benchmark(BenchmarkConfig(n=0), 0)
    assert set(REGISTRY) >= {"pfst33", "triangle", "linear_chain"}


def test_zero_noise_reproducible_from_equations():
    ds, scm = generate_benchmark(BenchmarkConfig(n=10, noise_scale=0.0), 3)
    cols = ds.columns
    for k in (31, 32, 33, 1, 2, 3, 22, 24, 26):
        assert np.all(ds.exogenous[:, :, cols[k]] == 0)
    # re-derive every non-root node from its parents' values with zero noise
    for k in (1, 2, 3, 22, 24, 26, 31, 32, 33):
        parents = {p: ds.values[:, :, cols[p]] for p in ds.graph.parents(k)}
        np.testing.assert_allclose(scm.structural_value(k, parents, 0.0), ds.values[:, :, cols[k]], atol=1e-12)


def test_shuffled_topological_order_gives_same_panel():
    cfg = BenchmarkConfig(n=12)
    base, scm = generate_benchmark(cfg, 4)
    g = scm.graph
    rng = np.random.default_rng(0)
    for _ in range(5):
        # random topological order: Kahn with random tie-breaking
        indeg = {k: len(g.parents(k)) for k in g.node_ids}
        ready = [k for k, d in indeg.items() if d == 0]
        order = []
        while ready:
            k = ready.pop(int(rng.integers(len(ready))))
            order.append(k)
            for c in g.children(k):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
        other, _ = generate_benchmark(cfg, 4, order=order)
        np.testing.assert_array_equal(base.values, other.values)


def test_equations_increasing_in_noise():
    scm = build_scm(BenchmarkConfig(n=5), 0)
    rng = np.random.default_rng(1)
    for k, eq in scm.equations.items():
        if eq.kind == "exogenous":
            continue
        for _ in range(20):
            parents = {p: rng.normal(size=scm.graph.node(p).dim) for p in scm.graph.parents(k)}
            u = rng.normal(size=scm.graph.node(k).dim)
            region = int(rng.integers(scm.n_regions))
            lo = scm.structural_value(k, parents, u, region)
            hi = scm.structural_value(k, parents, u + 1e-4, region)
            assert np.all(hi > lo), k


def test_temporal_correlation_of_hidden_confounder():
    ds, _ = generate_benchmark(BenchmarkConfig(n=200, rho_explanatory=0.4), 2)
    x = ds.values[:, :, ds.columns[28]][..., 0]
    lag1 = np.mean([np.corrcoef(x[:, j], x[:, j + 1])[0, 1] for j in range(5)])
    assert 0.25 < lag1 < 0.6
    lag3 = np.mean([np.corrcoef(x[:, j], x[:, j + 3])[0, 1] for j in range(3)])
    assert lag3 < lag1


def test_oracle_interventional_linear_chain():
    scm = build_scm(BenchmarkConfig("linear_chain", n=1000, J=5), 0)
    base = oracle_interventional(scm, {}, 100_000, 1)
    assert base[2].mean() == pytest.approx(2.0, abs=0.03)
    v = 3.0
    out = oracle_interventional(scm, {1: v}, 100_000, 1)
    assert np.all(out[1] == v)
    # X2 = 2 X1 + U2 and X3 = 1 + 0.5 X2 + U3: shifts of 2(v - 1) and (v - 1)
    assert out[2].mean() - base[2].mean() == pytest.approx(2 * (v - 1), abs=0.03)
    assert out[3].mean() - base[3].mean() == pytest.approx(v - 1, abs=0.03)
    with pytest.raises(UnknownNode):
        oracle_interventional(scm, {9: 0.0}, 10, 0)


def _two_node_scm():
    g = simple_graph([(1, 2)])
    eqs = {1: Equation(1, "exogenous"), 2: Equation(2, "additive", (Term(1, "lin", 2.0),))}
    return GroundTruthScm(g, eqs, [], 1, 1)


def test_oracle_counterfactual_closed_form():
    scm = _two_node_scm()
    U = np.array([[[2.0, 0.3]]])
    ds = PanelDataset(scm.graph, scm.evaluate(U), U)
    assert ds.values[0, 0, 1] == pytest.approx(4.3)
    cf = oracle_counterfactual(scm, ds, (0, 0), {1: 0.0})
    assert cf[2][0] == pytest.approx(0.3, abs=1e-12)
    same = oracle_counterfactual(scm, ds, (0, 0), {1: 2.0})
    assert same[2][0] == pytest.approx(4.3, abs=1e-12)
    with pytest.raises(MissingExogenous):
        oracle_counterfactual(scm, PanelDataset(scm.graph, ds.values), (0, 0), {1: 0.0})


def test_oracle_counterfactual_identity_and_sinks():
    ds, scm = generate_benchmark(BenchmarkConfig(n=8), 5)
    rec = oracle_counterfactual(scm, ds, (3, 2), {})
    for k, v in rec.items():
        np.testing.assert_array_equal(v, ds.values[3, 2, ds.columns[k]])
    rec = oracle_counterfactual(scm, ds, (3, 2), {31: 10.0})
    for k, v in rec.items():
        if k != 31:
            np.testing.assert_array_equal(v, ds.values[3, 2, ds.columns[k]])
    assert rec[31][0] == 10.0


def test_dataset_files_round_trip(tmp_path):
    ds, _ = generate_benchmark(BenchmarkConfig(n=5, J=3), 11)
    paths = ds.save(tmp_path)
    assert set(paths) == {"values", "sidecar", "curves"}
    with open(paths["values"]) as fh:
        assert fh.readline().strip() == "region,time,node,component,value"
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.values, ds.values)
    np.testing.assert_array_equal(back.exogenous, ds.exogenous)
    assert back.graph == ds.graph


def test_coefficients_rebuilt_from_curves(tmp_path):
    ds, _ = generate_benchmark(BenchmarkConfig(n=4, J=2), 11)
    ds.present = frozenset(k for k in ds.graph.node_ids if not 4 <= k <= 21)
    ds.save(tmp_path)
    back = load_dataset(tmp_path)
    assert back.present is None
    for k in range(4, 22):
        sl = ds.columns[k]
        np.testing.assert_allclose(back.values[:, :, sl], ds.values[:, :, sl], atol=1e-12)
