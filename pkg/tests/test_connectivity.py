import random
from types import SimpleNamespace

import pytest

from rigcal.connectivity import (
    C,
    P,
    T,
    UnionFind,
    VariableId,
    build_interaction_graph,
    component_listing,
    connected_components,
    select_reference,
    split_components,
    to_dot,
)
from rigcal.dataset import build_frs
from rigcal.errors import EmptyInput
from rigcal.simulator import generate_scene, preset

from conftest import toy_scene


def fr(c, p, t):
    return SimpleNamespace(camera_id=c, pattern_id=p, time_id=t, key=(c, p, t))


def test_variable_order_and_names():
    assert C(5) < P(0) < T(0)
    assert P(1) < P(2)
    assert str(T(3)) == "T3" and VariableId.parse("C12") == C(12)


def test_single_fr_triangle():
    g = build_interaction_graph([fr(0, 0, 0)])
    assert g.nodes == {C(0), P(0), T(0)}
    assert set(g.edges) == {(C(0), P(0)), (C(0), T(0)), (P(0), T(0))}
    assert connected_components(g)[1] == 1
    assert select_reference([fr(0, 0, 0)]) == (0, 0)


def test_empty_input():
    with pytest.raises(EmptyInput):
        build_interaction_graph([])
    with pytest.raises(EmptyInput):
        select_reference([])


def test_toy_scenario_graph_and_reference():
    frs = build_frs(toy_scene()[0])
    g = build_interaction_graph(frs)
    assert g.nodes == {C(0), C(1), P(0), P(1), T(0), T(1)}
    assert connected_components(g)[1] == 1
    # p0 and p1 tie at 2 FRs; p0 is seen at t0 (1 FR) and t1 (3 FRs)
    assert select_reference(frs) == (0, 1)


def test_edge_support_counts():
    g = build_interaction_graph([fr(0, 0, 0), fr(0, 0, 1), fr(1, 0, 1)])
    assert g.edges[(C(0), P(0))] == 2
    assert g.edges[(P(0), T(1))] == 2
    assert g.neighbors(P(0)) == [C(0), C(1), T(0), T(1)]


def test_disjoint_sets_two_components():
    frs = [fr(0, 0, 0), fr(0, 1, 0), fr(1, 2, 1), fr(2, 2, 1)]
    labels, n = connected_components(build_interaction_graph(frs))
    assert n == 2
    assert labels[C(0)] == 0 and labels[C(1)] == 1
    groups = split_components(frs)
    assert [[f.key for f in g] for g in groups] == [[(0, 0, 0), (0, 1, 0)], [(1, 2, 1), (2, 2, 1)]]
    listing = component_listing(frs)
    assert listing[1] == {"component": 1, "cameras": [1, 2], "patterns": [2], "times": [1], "fr_count": 2}


def test_mult1_topology():
    frs = build_frs(generate_scene(preset("mult1")).dataset)
    g = build_interaction_graph(frs)
    assert g.nodes == {C(0), C(1), P(0), P(1)} | {T(i) for i in range(10)}
    assert connected_components(g)[1] == 1
    # every time is bridged to both cameras and both patterns
    for i in range(10):
        assert set(g.neighbors(T(i))) == {C(0), C(1), P(0), P(1)}
    assert select_reference(frs) == (0, 0)


def test_reference_ties_and_restriction():
    # p0 and p1 tie; time 2 is busiest overall but p0 is never seen there
    frs = [fr(0, 0, 0), fr(1, 0, 1), fr(0, 1, 2), fr(1, 1, 2), fr(2, 2, 2)]
    assert select_reference(frs) == (0, 0)


def test_reference_permutation_invariant():
    frs = build_frs(generate_scene(preset("net1", seed=3)).dataset)
    ref = select_reference(frs)
    rnd = random.Random(0)
    for _ in range(10):
        shuffled = frs[:]
        rnd.shuffle(shuffled)
        assert select_reference(shuffled) == ref
    p, t = ref
    assert any(f.pattern_id == p and f.time_id == t for f in frs)


def test_union_find_labels_reproducible():
    uf = UnionFind(range(6))
    uf.union(5, 3)
    uf.union(3, 1)
    assert uf.find(5) == 1
    assert not uf.union(1, 5)


def test_dot_output():
    g = build_interaction_graph([fr(0, 0, 0), fr(1, 0, 0)])
    dot = to_dot(g, reference=(0, 0))
    assert dot.startswith("graph interaction {")
    assert "C0 -- P0" in dot and 'label="1 component(s)"' in dot
    assert "gold" in dot
