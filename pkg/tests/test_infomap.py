import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import graph_corpus, random_graph
from echodistill.errors import AssignmentError, GraphError
from echodistill.graph_builder import ClassGraph
from echodistill.infomap import (
    BRUTE_FORCE_MAX_NODES,
    brute_force_optimum,
    canonical_assignment,
    count_set_partitions,
    detect_communities,
    flow_model,
    map_equation,
    one_module_codelength,
    set_partitions,
)


def reference_codelength(n, edges, assignment):
    """Map equation straight from its definition, with plain Python floats."""
    two_w = 2 * sum(w for _, _, w in edges)
    visit = [0.0] * n
    exit_ = {}
    for a, b, w in edges:
        visit[a] += w / two_w
        visit[b] += w / two_w
        if assignment[a] != assignment[b]:
            exit_[assignment[a]] = exit_.get(assignment[a], 0.0) + w / two_w
            exit_[assignment[b]] = exit_.get(assignment[b], 0.0) + w / two_w

    def entropy(ps):
        total = sum(ps)
        return -sum(p / total * math.log2(p / total) for p in ps if p > 0) if total > 0 else 0.0

    q = sum(exit_.values())
    length = q * entropy(list(exit_.values()))
    for m in set(assignment):
        stay = [visit[i] for i in range(n) if assignment[i] == m]
        codebook = [exit_.get(m, 0.0)] + stay
        length += sum(codebook) * entropy(codebook)
    return length


def test_map_equation_matches_reference_on_random_partitions():
    rng = np.random.default_rng(0)
    for g in graph_corpus(60, seed=1, n_range=(3, 15)):
        for _ in range(5):
            a = canonical_assignment(rng.integers(0, 4, g.n_nodes).tolist())
            assert map_equation(g, a) == pytest.approx(reference_codelength(g.n_nodes, g.edges, a), abs=1e-12)


def test_flow_model_bookkeeping(barbell):
    fm = flow_model(barbell, [0, 0, 0, 1, 1, 1])
    assert math.fsum(fm.visit_rate) == pytest.approx(1.0)
    assert fm.exit_rate.tolist() == pytest.approx([1 / 14, 1 / 14])
    assert fm.module_flow.tolist() == pytest.approx([8 / 14, 8 / 14])


def test_label_permutation_does_not_change_codelength(barbell):
    assert map_equation(barbell, [1, 1, 1, 0, 0, 0]) == map_equation(barbell, [0, 0, 0, 1, 1, 1])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(4, 9))
def test_node_relabelling_invariance(seed, n):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    perm = rng.permutation(n)
    h = ClassGraph.from_edges(n, [(perm[a], perm[b], w) for a, b, w in g.edges])
    a = rng.integers(0, 3, n)
    b = np.empty(n, dtype=int)
    b[perm] = a
    assert map_equation(g, canonical_assignment(a.tolist())) == pytest.approx(
        map_equation(h, canonical_assignment(b.tolist())), abs=1e-12)
    assert brute_force_optimum(g).codelength == pytest.approx(brute_force_optimum(h).codelength, abs=1e-12)


@pytest.mark.parametrize("bad", [[0, 2, 2, 0, 0, 0], [0, 0, 0], [-1, 0, 0, 0, 0, 0], [0.5] * 6])
def test_invalid_assignments(barbell, bad):
    with pytest.raises(AssignmentError):
        map_equation(barbell, bad)


def test_canonical_assignment():
    assert canonical_assignment([5, 5, 2, 9, 2]) == (0, 0, 1, 2, 1)


@pytest.mark.parametrize("n", range(0, 9))
def test_set_partitions_enumerates_bell_many_distinct_rgs(n):
    rows = set_partitions(n)
    assert len(rows) == count_set_partitions(n) == [1, 1, 2, 5, 15, 52, 203, 877, 4140][n]
    assert len({tuple(r) for r in rows.tolist()}) == len(rows)
    for r in rows.tolist():
        assert canonical_assignment(r) == tuple(r)


def test_brute_force_refuses_large_graphs():
    g = ClassGraph.from_edges(BRUTE_FORCE_MAX_NODES + 1, [(i, i + 1, 1.0) for i in range(BRUTE_FORCE_MAX_NODES)])
    with pytest.raises(GraphError):
        brute_force_optimum(g)


def test_brute_force_tie_break_prefers_fewer_modules():
    # a single edge: one module (1 bit) beats two singletons
    g = ClassGraph.from_edges(2, [(0, 1, 1.0)])
    part = brute_force_optimum(g)
    assert part.assignment == (0, 0) and part.codelength == 1.0


def test_detect_agrees_with_brute_force_on_a_wider_corpus():
    start = time.perf_counter()
    misses = [i for i, g in enumerate(graph_corpus(400, seed=77, n_range=(4, 11)))
              if detect_communities(g, seed=i).codelength > brute_force_optimum(g).codelength + 1e-9]
    assert misses == []
    assert time.perf_counter() - start < 120


def test_barbell_split_found(barbell):
    part = detect_communities(barbell)
    assert part.assignment == (0, 0, 0, 1, 1, 1)
    assert part.codelength == pytest.approx(2.3207303568337903, abs=1e-12)
    assert part.n_modules == 2 and part.modules() == [[0, 1, 2], [3, 4, 5]]


def test_disconnected_components_never_share_a_module():
    rng = np.random.default_rng(3)
    for seed in range(30):
        g = random_graph(rng, int(rng.integers(6, 20)), "disconnected")
        if not g.n_edges:
            continue
        part = detect_communities(g, seed=seed)
        # union-find over edges
        parent = list(range(g.n_nodes))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b, _ in g.edges:
            parent[find(a)] = find(b)
        for module in part.modules():
            touched = [m for m in module if g.adjacency()[m]]
            assert len({find(m) for m in touched}) <= 1


def test_seeded_runs_are_reproducible():
    g = random_graph(np.random.default_rng(12), 60, "planted")
    assert detect_communities(g, seed=4) == detect_communities(g, seed=4)
    more = detect_communities(g, seed=4, trials=4)
    assert more.codelength <= detect_communities(g, seed=4).codelength + 1e-12


def test_edgeless_graph_costs_nothing():
    part = detect_communities(ClassGraph.from_edges(3, []))
    assert part.codelength == 0.0


def test_detect_rejects_bad_arguments(barbell):
    with pytest.raises(GraphError):
        detect_communities(ClassGraph.from_edges(0, []))
    with pytest.raises(ValueError):
        detect_communities(barbell, trials=0)


def test_large_graph_trace_monotone_without_refinement():
    g = random_graph(np.random.default_rng(21), 120, "planted")
    trace = []
    part = detect_communities(g, seed=1, trace=trace)
    assert trace and all(b < a for a, b in zip(trace, trace[1:]))
    assert part.codelength <= one_module_codelength(g)
