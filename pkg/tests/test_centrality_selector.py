import numpy as np
import pytest

from conftest import graph_corpus
from echodistill.centrality import modular_centrality
from echodistill.errors import AssignmentError, ConfigError
from echodistill.graph_builder import ClassGraph
from echodistill.infomap import Partition, detect_communities, map_equation
from echodistill.selector import _quotas, select_representatives


def test_barbell_centrality_values(barbell):
    t = modular_centrality(barbell, (0, 0, 0, 1, 1, 1))
    assert t.local.tolist() == [2, 2, 2, 2, 2, 2]
    assert t.global_.tolist() == [0, 0, 1, 1, 0, 0]
    assert t.combined.tolist() == pytest.approx([1, 1, 2 ** 0.5, 2 ** 0.5, 1, 1])


def test_single_module_has_no_global_part(barbell):
    t = modular_centrality(barbell, (0,) * 6)
    assert not t.global_.any()
    assert t.combined.tolist() == pytest.approx((t.local / t.local.max()).tolist())


def test_local_plus_global_is_strength_on_random_partitions():
    rng = np.random.default_rng(8)
    for g in graph_corpus(100, seed=8, n_range=(3, 40)):
        t = modular_centrality(g, rng.integers(0, 5, g.n_nodes).tolist())
        assert np.array_equal(t.local + t.global_, t.strength)


def test_centrality_size_mismatch(barbell):
    with pytest.raises(AssignmentError):
        modular_centrality(barbell, (0, 0, 0))


def _clique_plus_pendant():
    """A 10-clique (nodes 0-9) with node 10 hanging off node 0."""
    edges = [(a, b, 1.0) for a in range(10) for b in range(a + 1, 10)] + [(0, 10, 1.0)]
    g = ClassGraph.from_edges([f"v{i:02d}" for i in range(11)], edges)
    assignment = (0,) * 10 + (1,)
    return g, Partition(assignment, map_equation(g, assignment), 0)


def test_round_robin_reaches_the_small_community():
    g, part = _clique_plus_pendant()
    sel = select_representatives(g, part, modular_centrality(g, part), vpc=4)
    assert len(sel.picks) == 4
    assert [p.module_id for p in sel.picks] == [0, 1, 0, 0]
    # node 0 carries the bridge, so it leads its community
    assert sel.video_ids[:2] == ["v00", "v10"]
    # the rest tie on centrality and fall back to id order
    assert sel.video_ids[2:] == ["v01", "v02"]


def test_proportional_allocation():
    g, part = _clique_plus_pendant()
    sel = select_representatives(g, part, modular_centrality(g, part), vpc=4, alloc="proportional")
    assert [p.module_id for p in sel.picks] == [0, 0, 0, 0]


@pytest.mark.parametrize(
    "sizes, budget, expected",
    [([10, 1], 4, [4, 0]), ([5, 5], 3, [2, 1]), ([1, 1, 1], 5, [1, 1, 1]), ([6, 3, 1], 5, [3, 2, 0]), ([2, 9], 11, [2, 9])],
)
def test_largest_remainder_quotas(sizes, budget, expected):
    assert _quotas(sizes, budget) == expected


def test_vpc_above_class_size_selects_all_with_warning(barbell):
    part = detect_communities(barbell)
    sel = select_representatives(barbell, part, modular_centrality(barbell, part), vpc=10)
    assert sorted(sel.video_ids) == list(barbell.node_ids)
    assert sel.warnings and "exceeds" in sel.warnings[0]


def test_selection_has_no_duplicates_and_respects_budget():
    for g in graph_corpus(50, seed=31, n_range=(4, 25)):
        part = detect_communities(g)
        table = modular_centrality(g, part)
        for vpc in (1, 3, 7):
            for alloc in ("equal", "proportional"):
                ids = select_representatives(g, part, table, vpc, alloc).video_ids
                assert len(ids) == min(vpc, g.n_nodes) == len(set(ids))


def test_selector_rejects_bad_arguments(barbell):
    part = detect_communities(barbell)
    table = modular_centrality(barbell, part)
    with pytest.raises(ConfigError):
        select_representatives(barbell, part, table, vpc=0)
    with pytest.raises(ConfigError):
        select_representatives(barbell, part, table, vpc=2, alloc="greedy")
