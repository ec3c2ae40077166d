import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from backdoor_diffusion.benchmark import BenchmarkConfig, build_scm
from backdoor_diffusion.errors import CycleDetected, UnknownNode, ValidationError
from backdoor_diffusion.graph import CausalGraph, NodeSpec, simple_graph, validate_dag


def test_validate_dag_examples():
    validate_dag([1, 2, 3], [(1, 2), (2, 3)])
    with pytest.raises(CycleDetected) as exc:
        validate_dag([1, 2], [(1, 2), (2, 1)])
    assert set(exc.value.cycle) == {1, 2}
    with pytest.raises(UnknownNode):
        validate_dag([1, 2], [(1, 5)])
    with pytest.raises(ValidationError):
        validate_dag([1, 2], [(1, 2), (1, 2)])


def test_topological_order_examples():
    assert simple_graph([(1, 2), (2, 3)]).topological_order() == [1, 2, 3]
    diamond = simple_graph([(1, 2), (1, 3), (2, 4), (3, 4)])
    assert diamond.topological_order() == [1, 2, 3, 4]
    # ties go to the smaller id even when edges are listed out of order
    assert simple_graph([(3, 1), (2, 1)]).topological_order() == [2, 3, 1]


def test_benchmark_order_places_confounders_first():
    g = build_scm(BenchmarkConfig(), 0).graph
    order = g.topological_order()
    pos = {k: i for i, k in enumerate(order)}
    assert pos[28] < pos[30] and pos[29] < pos[30]
    assert all(pos[30] < pos[k] for k in (31, 32, 33))
    assert len(g) == 33


def test_descendants_examples():
    chain = simple_graph([(1, 2), (2, 3)])
    assert chain.descendants(1) == {2, 3}
    assert chain.descendants(3) == set()
    diamond = simple_graph([(1, 2), (1, 3), (2, 4), (3, 4)])
    assert diamond.descendants(2) == {4}
    with pytest.raises(UnknownNode):
        chain.descendants(9)


def test_backdoor_check_examples():
    tri = simple_graph([(1, 2), (1, 3), (2, 3)])  # C=1, X=2, Y=3
    assert tri.backdoor_check(2, 3, {1})
    assert not tri.backdoor_check(2, 3, set())
    med = simple_graph([(1, 2), (2, 3), (1, 3)])  # X=1, M=2, Y=3
    assert not med.backdoor_check(1, 3, {2})


def test_backdoor_set_with_descendant_rejected():
    with pytest.raises(ValidationError):
        CausalGraph([NodeSpec(1, kind="root", backdoor=(2,)), NodeSpec(2, backdoor=(1,))], [(1, 2)])


# -- exhaustive oracle ---------------------------------------------------------


def _paths(edges, n, x, y):
    """All simple undirected paths x..y as node lists."""
    adj = {k: set() for k in range(1, n + 1)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    out = []

    def walk(path):
        last = path[-1]
        if last == y:
            out.append(list(path))
            return
        for nb in adj[last]:
            if nb not in path:
                path.append(nb)
                walk(path)
                path.pop()

    walk([x])
    return out


def _desc(edges, k):
    seen, stack = set(), [k]
    while stack:
        u = stack.pop()
        for a, b in edges:
            if a == u and b not in seen:
                seen.add(b)
                stack.append(b)
    return seen


def _oracle_backdoor(edges, n, x, y, z):
    if z & _desc(edges, x):
        return False
    es = set(edges)
    for p in _paths(edges, n, x, y):
        if (p[1], p[0]) not in es:  # must start with an edge into x
            continue
        blocked = False
        for a, m, b in zip(p, p[1:], p[2:]):
            collider = (a, m) in es and (b, m) in es
            if collider:
                if m not in z and not (_desc(edges, m) & z):
                    blocked = True
            elif m in z:
                blocked = True
            if blocked:
                break
        if not blocked:
            return False
    return True


def _random_dag(rng, n):
    perm = rng.permutation(n) + 1
    edges = [(int(perm[i]), int(perm[j])) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4]
    return edges


def test_backdoor_check_matches_path_enumeration():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(60):
        n = int(rng.integers(3, 8))
        edges = _random_dag(rng, n)
        g = simple_graph(edges, n_nodes=n)
        for x, y in itertools.permutations(range(1, n + 1), 2):
            others = [k for k in range(1, n + 1) if k not in (x, y)]
            for _ in range(3):
                z = {k for k in others if rng.random() < 0.4}
                assert g.backdoor_check(x, y, z) == _oracle_backdoor(edges, n, x, y, z), (edges, x, y, z)
                checked += 1
    assert checked > 1000


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=2**31))
def test_topological_order_is_valid_permutation(n, seed):
    edges = _random_dag(np.random.default_rng(seed), n)
    g = simple_graph(edges, n_nodes=n)
    order = g.topological_order()
    assert sorted(order) == list(range(1, n + 1))
    pos = {k: i for i, k in enumerate(order)}
    assert all(pos[u] < pos[v] for u, v in edges)
    for k in range(1, n + 1):
        for d in g.descendants(k):
            assert g.descendants(d) <= g.descendants(k)


def test_conditioning_sets_and_hidden_nodes():
    g = CausalGraph(
        [NodeSpec(1, kind="root"), NodeSpec(2, backdoor=(1,)), NodeSpec(3, backdoor=(1, 2))],
        [(1, 2), (1, 3), (2, 3)],
    )
    assert g.conditioning_set(3, "bdcm") == (1, 2)
    assert g.conditioning_set(3, "dcm") == (1, 2)
    h = g.with_hidden([1])
    assert h.conditioning_set(3, "bdcm") == (2,)
    assert h.conditioning_set(2, "dcm") == ()
    assert h.observed_ids() == [2, 3]


def test_pfst33_backdoor_sets_validate():
    assert build_scm(BenchmarkConfig(), 0).graph.validate_backdoor_sets() == []


def test_graph_json_round_trip(tmp_path):
    g = build_scm(BenchmarkConfig(), 0).graph
    p = tmp_path / "g.json"
    g.save(p)
    assert CausalGraph.load(p) == g
    bad = g.to_dict()
    bad["edges"].append([31, 1])
    with pytest.raises(CycleDetected):
        CausalGraph.from_dict(bad)
