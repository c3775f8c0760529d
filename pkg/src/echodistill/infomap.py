"""Two-level map equation and its greedy minimization.

The random walker moves on an undirected weighted graph without
teleportation, so the stationary visit rate of a node is its strength over
twice the total edge weight, and the flow leaving a module per step is the
weight of its boundary edges over twice the total weight.

The optimizer is the usual Louvain-style core (local moves, aggregation,
repeat) followed by fine- and coarse-tuning rounds that restart the core from
the best partition so far, until a round stops improving the codelength.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AssignmentError, GraphError
from .graph_builder import ClassGraph

MOVE_THRESHOLD = 1e-10
TIE_TOLERANCE = 1e-12
BRUTE_FORCE_MAX_NODES = 12
DEFAULT_TRIALS = 1
# perturbation refinement is O(n * modules) core runs; only worth it on small graphs
PERTURB_MAX_NODES = 32


def _plogp(x: float) -> float:
    return x * math.log2(x) if x > 0 else 0.0


@dataclass(frozen=True)
class Partition:
    assignment: tuple[int, ...]
    codelength: float
    sweeps: int = field(default=0, compare=False)

    @property
    def n_modules(self) -> int:
        return max(self.assignment) + 1 if self.assignment else 0

    def modules(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n_modules)]
        for node, m in enumerate(self.assignment):
            out[m].append(node)
        return out


@dataclass(frozen=True)
class FlowModel:
    visit_rate: np.ndarray   # p_alpha per node
    exit_rate: np.ndarray    # q_i per module
    module_flow: np.ndarray  # p_i = q_i + sum of member visit rates

    @property
    def total_exit(self) -> float:
        return math.fsum(self.exit_rate.tolist())


def canonical_assignment(assignment: Sequence[int]) -> tuple[int, ...]:
    """Relabel modules by order of first appearance."""
    relabel: dict[int, int] = {}
    return tuple(relabel.setdefault(m, len(relabel)) for m in assignment)


def _check_assignment(graph: ClassGraph, assignment) -> np.ndarray:
    a = np.asarray(assignment)
    if a.shape != (graph.n_nodes,):
        raise AssignmentError(f"assignment covers {a.size} nodes, graph has {graph.n_nodes}")
    if a.size == 0:
        return a.astype(np.int64)
    if not np.issubdtype(a.dtype, np.integer):
        raise AssignmentError("module indices must be integers")
    if a.min() < 0:
        raise AssignmentError("negative module index")
    used = np.zeros(int(a.max()) + 1, dtype=bool)
    used[a] = True
    if not used.all():
        missing = int(np.flatnonzero(~used)[0])
        raise AssignmentError(f"module {missing} is empty; module indices must be contiguous from 0")
    return a.astype(np.int64)


def flow_model(graph: ClassGraph, assignment) -> FlowModel:
    a = _check_assignment(graph, assignment)
    m = int(a.max()) + 1 if a.size else 0
    two_w = 2.0 * graph.total_weight
    if two_w == 0:
        z = np.zeros(graph.n_nodes)
        return FlowModel(z, np.zeros(m), np.zeros(m))
    p = graph.strengths() / two_w
    crossing = a[graph.u] != a[graph.v]
    boundary: list[list[float]] = [[] for _ in range(m)]
    for x, y, w in zip(graph.u[crossing].tolist(), graph.v[crossing].tolist(), graph.weight[crossing].tolist()):
        boundary[a[x]].append(w)
        boundary[a[y]].append(w)
    q = np.array([math.fsum(ws) / two_w for ws in boundary])
    members: list[list[float]] = [[] for _ in range(m)]
    for node, mod in enumerate(a.tolist()):
        members[mod].append(p[node])
    module_flow = np.array([q[i] + math.fsum(members[i]) for i in range(m)])
    return FlowModel(p, q, module_flow)


def map_equation(graph: ClassGraph, assignment) -> float:
    """Codelength in bits per step of a two-level partition.

    ``L = q H(Q) + sum_i p_i H(P_i)`` where ``q`` is the total exit rate,
    ``H(Q)`` the entropy of module exits and ``H(P_i)`` the entropy of module
    ``i``'s exit and member visits.  Zero-probability terms contribute 0.
    """
    fm = flow_model(graph, assignment)
    a = np.asarray(assignment)
    q = fm.total_exit
    index = 0.0
    if q > 0:
        index = -q * sum(_plogp(qi / q) for qi in fm.exit_rate.tolist())
    module = 0.0
    for i, (qi, pi) in enumerate(zip(fm.exit_rate.tolist(), fm.module_flow.tolist())):
        if pi <= 0:
            continue
        h = -_plogp(qi / pi) - sum(_plogp(pa / pi) for pa in fm.visit_rate[a == i].tolist())
        module += pi * h
    return max(index + module, 0.0)


def one_module_codelength(graph: ClassGraph) -> float:
    return map_equation(graph, [0] * graph.n_nodes)


# --------------------------------------------------------------------------
# optimizer


class _Level:
    """Aggregated graph state for the move phase.

    Flows are in units of the walker's per-step probability: ``flow[n]`` is
    the visit rate of (super-)node ``n``, ``exit_[n]`` the flow across its
    boundary, and ``adj[n]`` the per-direction flow to each neighbor.
    """

    def __init__(self, flow, exit_, adj, members):
        self.flow = flow
        self.exit_ = exit_
        self.adj = adj
        self.members = members  # finest-level nodes inside each node

    @property
    def n(self) -> int:
        return len(self.flow)

    @classmethod
    def from_graph(cls, graph: ClassGraph) -> "_Level":
        n = graph.n_nodes
        two_w = 2.0 * graph.total_weight
        adj: list[dict[int, float]] = [{} for _ in range(n)]
        if two_w > 0:
            for a, b, w in zip(graph.u.tolist(), graph.v.tolist(), graph.weight.tolist()):
                f = w / two_w
                adj[a][b] = f
                adj[b][a] = f
            flow = (graph.strengths() / two_w).tolist()
        else:
            flow = [0.0] * n
        return cls(flow, list(flow), adj, [[i] for i in range(n)])

    def aggregate(self, module_of: list[int]) -> "_Level":
        """Collapse modules (labels 0..m-1) into super-nodes."""
        m = max(module_of) + 1
        flow = [[] for _ in range(m)]
        members: list[list[int]] = [[] for _ in range(m)]
        adj: list[dict[int, list[float]]] = [{} for _ in range(m)]
        for node in range(self.n):
            mod = module_of[node]
            flow[mod].append(self.flow[node])
            members[mod].extend(self.members[node])
            for nb, f in self.adj[node].items():
                other = module_of[nb]
                if other != mod:
                    adj[mod].setdefault(other, []).append(f)
        agg_adj = [{k: math.fsum(v) for k, v in sorted(d.items())} for d in adj]
        exit_ = [math.fsum(d.values()) for d in agg_adj]
        return _Level([math.fsum(f) for f in flow], exit_, agg_adj, members)


class _Optimizer:
    def __init__(self, level: _Level, rng: np.random.Generator, max_sweeps: int, trace):
        self.rng = rng
        self.max_sweeps = max_sweeps
        self.trace = trace
        self.sweeps = 0
        self.node_entropy = -math.fsum(_plogp(f) for f in level.flow)

    # codelength up to the constant node-entropy term
    @staticmethod
    def _partial(total_exit, mod_exit, mod_flow) -> float:
        return (
            _plogp(total_exit)
            - 2.0 * math.fsum(_plogp(e) for e in mod_exit)
            + math.fsum(_plogp(e + f) for e, f in zip(mod_exit, mod_flow))
        )

    def codelength(self, level: _Level, module_of) -> float:
        mod_exit, mod_flow, total = self._module_stats(level, module_of)
        return max(self._partial(total, mod_exit, mod_flow) + self.node_entropy, 0.0)

    @staticmethod
    def _module_stats(level: _Level, module_of):
        size = max(module_of) + 1 if module_of else 0
        flows = [[] for _ in range(size)]
        exits = [[] for _ in range(size)]
        for node in range(level.n):
            mod = module_of[node]
            flows[mod].append(level.flow[node])
            for nb, f in level.adj[node].items():
                if module_of[nb] != mod:
                    exits[mod].append(f)
        mod_flow = [math.fsum(f) for f in flows]
        mod_exit = [math.fsum(e) for e in exits]
        return mod_exit, mod_flow, math.fsum(mod_exit)

    def move_nodes(self, level: _Level, module_of: list[int]) -> tuple[list[int], int]:
        """Local-move phase; returns the new (uncompacted) labels and the move count."""
        n = level.n
        module_of = list(module_of)
        size = max(n, max(module_of) + 1)
        mod_exit, mod_flow, total_exit = self._module_stats(level, module_of)
        mod_exit += [0.0] * (size - len(mod_exit))
        mod_flow += [0.0] * (size - len(mod_flow))
        count = [0] * size
        for mod in module_of:
            count[mod] += 1
        empty = sorted(i for i in range(size) if count[i] == 0)
        current = self._partial(total_exit, mod_exit, mod_flow) + self.node_entropy
        total_moves = 0
        for _ in range(self.max_sweeps):
            self.sweeps += 1
            moved = 0
            for node in self.rng.permutation(n).tolist():
                src = module_of[node]
                to_mod: dict[int, float] = {}
                for nb, f in level.adj[node].items():
                    mod = module_of[nb]
                    to_mod[mod] = to_mod.get(mod, 0.0) + f
                w_src = to_mod.pop(src, 0.0)
                candidates = sorted(to_mod)
                if count[src] > 1 and empty:
                    candidates.append(empty[0])
                if not candidates:
                    continue
                fn, en = level.flow[node], level.exit_[node]
                es, fs = mod_exit[src], mod_flow[src]
                es_new = max(es - en + 2.0 * w_src, 0.0)
                fs_new = fs - fn
                src_delta = (
                    -2.0 * (_plogp(es_new) - _plogp(es))
                    + _plogp(es_new + fs_new) - _plogp(es + fs)
                )
                best, best_delta = -1, 0.0
                for dst in candidates:
                    w_dst = to_mod.get(dst, 0.0)
                    ed, fd = mod_exit[dst], mod_flow[dst]
                    ed_new = max(ed + en - 2.0 * w_dst, 0.0)
                    q_new = max(total_exit + (es_new - es) + (ed_new - ed), 0.0)
                    delta = (
                        src_delta
                        + _plogp(q_new) - _plogp(total_exit)
                        - 2.0 * (_plogp(ed_new) - _plogp(ed))
                        + _plogp(ed_new + fd + fn) - _plogp(ed + fd)
                    )
                    # candidates are visited in increasing label order
                    if best < 0 or delta < best_delta - TIE_TOLERANCE:
                        best, best_delta = dst, delta
                if best < 0 or best_delta >= -MOVE_THRESHOLD:
                    continue
                w_dst = to_mod.get(best, 0.0)
                ed = mod_exit[best]
                mod_exit[best] = max(ed + en - 2.0 * w_dst, 0.0)
                mod_flow[best] += fn
                mod_exit[src], mod_flow[src] = es_new, fs_new
                total_exit = max(total_exit + (es_new - es) + (mod_exit[best] - ed), 0.0)
                count[src] -= 1
                count[best] += 1
                if count[best] == 1:
                    empty.remove(best)
                if count[src] == 0:
                    mod_flow[src] = mod_exit[src] = 0.0
                    empty.append(src)
                    empty.sort()
                module_of[node] = best
                current += best_delta
                if self.trace is not None:
                    self.trace.append(current)
                moved += 1
            total_moves += moved
            if moved == 0:
                break
        return module_of, total_moves

    def core(self, level: _Level, module_of: list[int]) -> list[int]:
        """Move/aggregate until a level makes no move; returns finest-level labels."""
        while True:
            labels, moves = self.move_nodes(level, module_of)
            labels = list(canonical_assignment(labels))
            finest = _unfold(level, labels)
            if moves == 0 or max(labels) + 1 == level.n:
                return finest
            level = level.aggregate(labels)
            module_of = list(range(level.n))


def _unfold(level: _Level, labels: list[int]) -> list[int]:
    size = sum(len(m) for m in level.members)
    out = [0] * size
    for node, mod in enumerate(labels):
        for leaf in level.members[node]:
            out[leaf] = mod
    return out


def detect_communities(
    graph: ClassGraph,
    seed: int = 0,
    max_sweeps: int = 100,
    trace: list | None = None,
    trials: int = DEFAULT_TRIALS,
    tuning: bool = True,
    perturb: bool | None = None,
) -> Partition:
    """Search for the two-level partition minimizing the map equation.

    Runs ``trials`` independent searches with node orders drawn from child
    seeds of ``seed`` and keeps the shortest codelength (earliest trial on
    ties), so the result is deterministic for a fixed ``seed``.  If ``trace``
    is a list, the running codelength after every accepted node move of the
    winning trial is appended to it.

    ``perturb`` (default: graphs of at most 32 nodes) adds an iterated local
    search after tuning: each single-node reassignment is forced in turn and
    the core search rerun from there, keeping any strictly shorter result.
    Forced moves are not recorded in ``trace``; an accepted perturbation
    appears as one entry holding the improved codelength.
    """
    if graph.n_nodes < 1:
        raise GraphError("graph has no nodes")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base = _Level.from_graph(graph)
    best = None
    for child in np.random.SeedSequence(seed).spawn(trials):
        run_trace = [] if trace is not None else None
        opt = _Optimizer(base, np.random.default_rng(child), max_sweeps, run_trace)
        assignment, length = _search(graph, base, opt, seed, tuning)
        if perturb if perturb is not None else graph.n_nodes <= PERTURB_MAX_NODES:
            assignment, length = _perturb(base, opt, assignment, length)
        if best is None or length < best[1] - MOVE_THRESHOLD:
            best = (assignment, length, run_trace)
        sweeps = opt.sweeps if best[2] is run_trace else sweeps
    assignment, _, run_trace = best

    assignment = canonical_assignment(assignment)
    length = map_equation(graph, assignment)
    single = one_module_codelength(graph)
    if single < length - TIE_TOLERANCE:
        assignment, length = (0,) * graph.n_nodes, single
        if run_trace is not None:
            run_trace.append(single)
    if trace is not None:
        trace.extend(run_trace)
    return Partition(assignment, length, sweeps)


def _search(graph: ClassGraph, base: _Level, opt: "_Optimizer", seed: int, tuning: bool):
    best = opt.core(base, list(range(base.n)))
    best_len = opt.codelength(base, best)
    while tuning:
        improved = False
        # fine tuning: restart single-node moves from the current modules
        cand = opt.core(base, best)
        cand_len = opt.codelength(base, cand)
        if cand_len < best_len - MOVE_THRESHOLD:
            best, best_len, improved = cand, cand_len, True
        # coarse tuning: move sub-modules between the current modules
        cand = _coarse_tune(graph, base, best, opt, seed)
        if cand is not None:
            cand_len = opt.codelength(base, cand)
            if cand_len < best_len - MOVE_THRESHOLD:
                best, best_len, improved = cand, cand_len, True
        if not improved:
            break
    return best, best_len


def _perturb(base: _Level, opt: "_Optimizer", best: list[int], best_len: float):
    trace, opt.trace = opt.trace, None
    while True:
        cand = _single_kicks(base, opt, best, best_len)
        if cand is None:
            cand = _uphill_walk(base, opt, best, best_len)
        if cand is None:
            cand = _spectral_splits(base, opt, best, best_len)
        if cand is None:
            break
        best, best_len = cand
        if trace is not None:
            trace.append(best_len)
    opt.trace = trace
    return best, best_len


def _single_kicks(base: _Level, opt: "_Optimizer", best: list[int], best_len: float):
    """Force one node into another module, rerun the core; first improvement wins."""
    for node in range(base.n):
        mods = sorted({best[nb] for nb in base.adj[node]} - {best[node]})
        if best.count(best[node]) > 1:
            mods.append(max(best) + 1)
        for dst in mods:
            start = list(best)
            start[node] = dst
            cand = opt.core(base, list(canonical_assignment(start)))
            cand_len = opt.codelength(base, cand)
            if cand_len < best_len - MOVE_THRESHOLD:
                return cand, cand_len
    return None


def _uphill_walk(base: _Level, opt: "_Optimizer", best: list[int], best_len: float):
    """Kernighan-Lin pass: move every node once, each time taking the least
    costly move even when it lengthens the code, then rerun the core from
    the best point along the way."""
    labels = list(best)
    locked = [False] * base.n
    path_best, path_len = None, math.inf
    for _ in range(base.n):
        step = None
        for node in range(base.n):
            if locked[node]:
                continue
            mods = sorted({labels[nb] for nb in base.adj[node]} - {labels[node]})
            if labels.count(labels[node]) > 1:
                mods.append(max(labels) + 1)
            for dst in mods:
                trial = list(labels)
                trial[node] = dst
                trial = list(canonical_assignment(trial))
                length = opt.codelength(base, trial)
                if step is None or length < step[0] - TIE_TOLERANCE:
                    step = (length, node, trial)
        if step is None:
            break
        length, node, labels = step
        locked[node] = True
        if length < path_len - TIE_TOLERANCE:
            path_best, path_len = labels, length
    if path_best is None:
        return None
    cand = opt.core(base, path_best)
    cand_len = opt.codelength(base, cand)
    if cand_len < best_len - MOVE_THRESHOLD:
        return cand, cand_len
    return None


def _fiedler_order(base: _Level, nodes: list[int]):
    pos = {node: k for k, node in enumerate(nodes)}
    w = np.zeros((len(nodes), len(nodes)))
    for node in nodes:
        for nb, f in base.adj[node].items():
            if nb in pos:
                w[pos[node], pos[nb]] = f
    deg = w.sum(axis=1)
    if (deg <= 0).any():
        return None
    inv = 1.0 / np.sqrt(deg)
    lap = np.eye(len(nodes)) - inv[:, None] * w * inv[None, :]
    _, vecs = np.linalg.eigh(lap)
    return [nodes[k] for k in np.argsort(vecs[:, 1] * inv, kind="stable")]


def _sweep_cuts(base: _Level, labels: list[int]):
    """Every labelling obtained by splitting one module along a Fiedler sweep cut."""
    fresh = max(labels) + 1
    for mod in sorted(set(labels)):
        nodes = [i for i, m in enumerate(labels) if m == mod]
        if len(nodes) < 2:
            continue
        order = _fiedler_order(base, nodes) if len(nodes) > 2 else nodes
        if order is None:
            continue
        for cut in range(1, len(nodes)):
            split = list(labels)
            for node in order[:cut]:
                split[node] = fresh
            yield list(canonical_assignment(split))


def _spectral_splits(base: _Level, opt: "_Optimizer", best: list[int], best_len: float, depth: int = 4):
    """Split modules along spectral sweep cuts and rerun the core.

    First tries each single cut; failing that, greedily applies the cheapest
    cut ``depth`` times (uphill allowed) to reach multi-way splits.
    """
    for start in _sweep_cuts(base, best):
        cand = opt.core(base, start)
        cand_len = opt.codelength(base, cand)
        if cand_len < best_len - MOVE_THRESHOLD:
            return cand, cand_len
    labels = best
    for _ in range(depth):
        scored = [(opt.codelength(base, c), c) for c in _sweep_cuts(base, labels)]
        if not scored:
            break
        labels = min(scored, key=lambda t: t[0])[1]
        cand = opt.core(base, labels)
        cand_len = opt.codelength(base, cand)
        if cand_len < best_len - MOVE_THRESHOLD:
            return cand, cand_len
    return None


def _coarse_tune(graph: ClassGraph, base: _Level, assignment: list[int], opt: _Optimizer, seed: int):
    modules: dict[int, list[int]] = {}
    for node, mod in enumerate(assignment):
        modules.setdefault(mod, []).append(node)
    sub_labels = [0] * base.n
    parent: list[int] = []
    split_any = False
    for mod in sorted(modules):
        nodes = modules[mod]
        if len(nodes) > 2:
            sub = graph.subgraph(nodes)
            sub_part = detect_communities(sub, seed=seed, max_sweeps=opt.max_sweeps, trials=1, tuning=False).assignment
        else:
            sub_part = (0,) * len(nodes)
        offset = len(parent)
        n_sub = max(sub_part) + 1
        split_any |= n_sub > 1
        for node, s in zip(nodes, sub_part):
            sub_labels[node] = offset + s
        parent.extend([mod] * n_sub)
    if not split_any:
        return None
    level = base.aggregate(sub_labels)
    return opt.core(level, parent)


# --------------------------------------------------------------------------
# exhaustive oracle


def set_partitions(n: int) -> np.ndarray:
    """All set partitions of ``n`` items as restricted-growth strings, in lexicographic order."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int8)
    rows = np.zeros((1, 1), dtype=np.int8)
    top = np.zeros(1, dtype=np.int8)
    for _ in range(1, n):
        reps = (top + 2).astype(np.int64)
        idx = np.repeat(np.arange(rows.shape[0]), reps)
        starts = np.cumsum(reps) - reps
        choice = (np.arange(idx.size) - np.repeat(starts, reps)).astype(np.int8)
        rows = np.column_stack([rows[idx], choice])
        top = np.maximum(top[idx], choice)
    return rows


def _codelengths(graph: ClassGraph, parts: np.ndarray) -> np.ndarray:
    """Map equation for every row of ``parts`` via the expanded plogp form."""
    n = graph.n_nodes
    two_w = 2.0 * graph.total_weight
    count = parts.shape[0]
    if two_w == 0:
        return np.zeros(count)
    p = graph.strengths() / two_w
    width = int(parts.max()) + 1 if parts.size else 1
    rows = np.arange(count)
    mod_flow = np.zeros((count, width))
    for node in range(n):
        np.add.at(mod_flow, (rows, parts[:, node]), p[node])
    mod_exit = np.zeros((count, width))
    for a, b, w in graph.edges:
        cut = parts[:, a] != parts[:, b]
        f = w / two_w
        np.add.at(mod_exit, (rows[cut], parts[cut, a]), f)
        np.add.at(mod_exit, (rows[cut], parts[cut, b]), f)

    def plogp(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(x > 0, x * np.log2(np.where(x > 0, x, 1.0)), 0.0)

    q = mod_exit.sum(axis=1)
    return (
        plogp(q)
        - 2.0 * plogp(mod_exit).sum(axis=1)
        + plogp(mod_exit + mod_flow).sum(axis=1)
        - plogp(p).sum()
    )


def brute_force_optimum(graph: ClassGraph, chunk: int = 200_000) -> Partition:
    """Exact minimizer by enumerating every set partition (at most 12 nodes).

    Ties within 1e-12 bits go to fewer modules, then the lexicographically
    smallest assignment.
    """
    n = graph.n_nodes
    if n > BRUTE_FORCE_MAX_NODES:
        raise GraphError(f"brute force refused for {n} nodes (limit {BRUTE_FORCE_MAX_NODES})")
    if n == 0:
        raise GraphError("graph has no nodes")
    parts = set_partitions(n)
    lengths = np.concatenate([_codelengths(graph, parts[i:i + chunk]) for i in range(0, parts.shape[0], chunk)])
    best = lengths.min()
    tied = np.flatnonzero(lengths <= best + TIE_TOLERANCE)
    n_mods = parts[tied].max(axis=1)
    tied = tied[n_mods == n_mods.min()]
    # rows are already in lexicographic order
    winner = tuple(int(x) for x in parts[tied[0]])
    return Partition(winner, map_equation(graph, winner))


def count_set_partitions(n: int) -> int:
    """Bell number via the Bell triangle."""
    row = [1]
    for _ in range(n):
        nxt = [row[-1]]
        for x in row:
            nxt.append(nxt[-1] + x)
        row = nxt
    return row[0]


__all__ = [
    "Partition",
    "FlowModel",
    "flow_model",
    "map_equation",
    "one_module_codelength",
    "detect_communities",
    "brute_force_optimum",
    "set_partitions",
    "count_set_partitions",
    "canonical_assignment",
]
