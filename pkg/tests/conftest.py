import numpy as np
import pytest

from echodistill.graph_builder import ClassGraph

BARBELL_EDGES = [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0), (2, 3, 1.0)]


@pytest.fixture
def barbell():
    """Two unit triangles {0,1,2} and {3,4,5} joined by the bridge 2-3."""
    return ClassGraph.from_edges(6, BARBELL_EDGES)


def random_graph(rng: np.random.Generator, n: int, family: str = "sparse", dyadic: bool = False) -> ClassGraph:
    """Random weighted graph on ``n`` nodes.

    ``sparse`` and ``planted`` graphs are connected (a random spanning tree
    is laid first); ``disconnected`` graphs may not be.  ``dyadic`` weights
    are multiples of 1/64 so that all float sums over them are exact.
    """

    def weight():
        w = rng.uniform(0.1, 5.0) if family != "lognormal" else rng.lognormal(0.0, 1.5)
        return max(round(w * 64), 1) / 64 if dyadic else float(w)

    edges = {}
    if family in ("sparse", "planted", "lognormal", "dense"):
        perm = rng.permutation(n)
        for i in range(1, n):
            j = int(rng.integers(0, i))
            a, b = sorted((int(perm[i]), int(perm[j])))
            edges[a, b] = weight()
    groups = rng.integers(0, 3, size=n)
    p_edge = {"sparse": 0.3, "dense": 0.8, "lognormal": 0.5, "disconnected": 0.3}.get(family)
    for a in range(n):
        for b in range(a + 1, n):
            p = p_edge if p_edge is not None else (0.8 if groups[a] == groups[b] else 0.15)
            if (a, b) not in edges and rng.random() < p:
                edges[a, b] = weight()
    return ClassGraph.from_edges(n, [(a, b, w) for (a, b), w in edges.items()])


FAMILIES = ("sparse", "dense", "lognormal", "planted", "disconnected")


def graph_corpus(count: int, seed: int, n_range=(4, 10), dyadic: bool = False):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        g = random_graph(rng, n, FAMILIES[len(out) % len(FAMILIES)], dyadic)
        if g.n_edges:
            out.append(g)
    return out


# one PASS/FAIL line per acceptance criterion in the terminal summary
_acceptance_results = []


def pytest_runtest_logreport(report):
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if "acceptance" in report.keywords:
            _acceptance_results.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance_results:
        terminalreporter.write_line(f"{'PASS' if outcome == 'passed' else 'FAIL'}  {name}")
