"""Routing actions onto device nodes: the graph mapping solvers.

The objective is payload-weighted transfer cost: each dependency edge
(u, v) contributes payload_units x shortest-path cost between the nodes
hosting u and v, zero when co-located. Capability satisfaction is a hard
constraint; infeasible instances fail loudly.

Two solvers are provided. `place_exhaustive` enumerates all feasible
assignments (with a hard search-space guard) and returns the global
minimum, tie-broken to the lexicographically smallest assignment.
`place_greedy` walks actions in topological order and picks the node
minimizing incremental cost against already-placed predecessors, so its
cost is an upper bound on the optimum.

An optional per-node additive preference weight (default 0) lets callers
bias placement toward particular devices; it contributes weight x (number
of actions placed on that node) to the objective.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Mapping

from .errors import InfeasiblePlacementError, SearchSpaceError, UnreachablePairError
from .taskgraph import TaskDag, topo_order
from .topology import DeviceGraph, capability_satisfies

SEARCH_SPACE_GUARD = 10_000_000

_INF = float("inf")


@dataclass(frozen=True)
class Placement:
    assignment: tuple[tuple[str, str], ...]  # (action_id, node_id), ascending action_id
    total_cost: float

    def as_dict(self) -> dict[str, str]:
        return dict(self.assignment)

    def node_for(self, action_id: str) -> str:
        return self.as_dict()[action_id]


def shortest_path_costs(g: DeviceGraph) -> dict[str, dict[str, float]]:
    """All-pairs minimum transfer cost per payload unit.

    Each stored edge provides its cost in the forward direction; the
    reverse direction reuses that cost unless an explicit reverse edge
    overrides it (edges are bidirectional for connectivity, with
    optionally asymmetric costs). Unreachable pairs map to infinity.
    """
    ids = g.node_ids()
    arcs: dict[str, dict[str, float]] = {i: {} for i in ids}
    declared = {(e.from_node, e.to_node) for e in g.edges}
    for e in g.edges:
        cost = float(e.transfer_cost_per_unit)
        cur = arcs[e.from_node].get(e.to_node)
        arcs[e.from_node][e.to_node] = cost if cur is None else min(cur, cost)
        if (e.to_node, e.from_node) not in declared:
            rcur = arcs[e.to_node].get(e.from_node)
            arcs[e.to_node][e.from_node] = cost if rcur is None else min(rcur, cost)

    table: dict[str, dict[str, float]] = {}
    for src in ids:
        dist = {i: _INF for i in ids}
        dist[src] = 0.0
        heap: list[tuple[float, str]] = [(0.0, src)]
        while heap:
            d, cur = heapq.heappop(heap)
            if d > dist[cur]:
                continue
            for nxt, w in arcs[cur].items():
                nd = d + w
                if nd < dist[nxt]:
                    dist[nxt] = nd
                    heapq.heappush(heap, (nd, nxt))
        table[src] = dist
    return table


def feasible_nodes(dag: TaskDag, g: DeviceGraph) -> dict[str, list[str]]:
    """Per action, the ascending list of nodes satisfying its capabilities."""
    out: dict[str, list[str]] = {}
    for a in dag.actions:
        nodes = [n.node_id for n in sorted(g.nodes, key=lambda n: n.node_id)
                 if capability_satisfies(n.profile, a.required_capabilities)]
        out[a.action_id] = nodes
    return out


def placement_cost(
    dag: TaskDag,
    g: DeviceGraph,
    assignment: Mapping[str, str],
    *,
    preference: Mapping[str, float] | None = None,
    _spc: dict[str, dict[str, float]] | None = None,
) -> float:
    """Total transfer cost of a complete, capability-feasible assignment."""
    for a in dag.actions:
        node_id = assignment.get(a.action_id)
        if node_id is None:
            raise InfeasiblePlacementError(a.action_id, "not assigned")
        node = g.node(node_id)
        if not capability_satisfies(node.profile, a.required_capabilities):
            raise InfeasiblePlacementError(
                a.action_id, f"node {node_id!r} lacks required capabilities")
    spc = _spc if _spc is not None else shortest_path_costs(g)
    total = 0.0
    for d in dag.deps:
        src = assignment[d.from_action]
        dst = assignment[d.to_action]
        if src == dst:
            continue
        hop = spc[src][dst]
        if hop == _INF and d.payload_units > 0:
            raise UnreachablePairError(
                f"no sync path {src} -> {dst} for dependency "
                f"{d.from_action}->{d.to_action} with payload {d.payload_units}")
        if d.payload_units > 0:
            total += d.payload_units * hop
    if preference:
        for node_id in assignment.values():
            total += float(preference.get(node_id, 0.0))
    return total


def _assignment_cost(dag: TaskDag, assignment: Mapping[str, str],
                     spc: dict[str, dict[str, float]],
                     preference: Mapping[str, float] | None) -> float:
    """Like placement_cost but returns infinity on unreachable pairs."""
    total = 0.0
    for d in dag.deps:
        src = assignment[d.from_action]
        dst = assignment[d.to_action]
        if src == dst or d.payload_units == 0:
            continue
        hop = spc[src][dst]
        if hop == _INF:
            return _INF
        total += d.payload_units * hop
    if preference:
        for node_id in assignment.values():
            total += float(preference.get(node_id, 0.0))
    return total


def place_exhaustive(
    dag: TaskDag,
    g: DeviceGraph,
    *,
    preference: Mapping[str, float] | None = None,
) -> Placement:
    """Globally minimal placement by full enumeration.

    Among equal-cost minima, returns the lexicographically smallest
    assignment ordered by (action_id, node_id). The search space (product
    of per-action feasible-node counts) is capped at SEARCH_SPACE_GUARD.
    """
    feas = feasible_nodes(dag, g)
    order = sorted(feas)
    space = 1
    for aid in order:
        if not feas[aid]:
            raise InfeasiblePlacementError(aid, "no node satisfies its required capabilities")
        space *= len(feas[aid])
        if space > SEARCH_SPACE_GUARD:
            raise SearchSpaceError(
                f"search space exceeds guard ({space} > {SEARCH_SPACE_GUARD})")
    if not dag.actions:
        return Placement(tuple(), 0.0)

    spc = shortest_path_costs(g)
    best_cost = _INF
    best: tuple[str, ...] | None = None
    # Iterating actions in ascending id with nodes in ascending id means the
    # first minimum encountered is already the lexicographically smallest.
    for combo in itertools.product(*(feas[aid] for aid in order)):
        assignment = dict(zip(order, combo))
        cost = _assignment_cost(dag, assignment, spc, preference)
        if cost < best_cost:
            best_cost = cost
            best = combo
    if best is None or best_cost == _INF:
        raise UnreachablePairError(
            "every feasible assignment crosses a disconnected node pair with nonzero payload")
    return Placement(tuple(zip(order, best)), best_cost)


def place_greedy(
    dag: TaskDag,
    g: DeviceGraph,
    *,
    preference: Mapping[str, float] | None = None,
    balance_ties: bool = False,
) -> Placement:
    """Heuristic placement in topological order.

    Each action goes to the feasible node with the lowest incremental cost
    against already-placed predecessors; ties break by ascending node_id.
    With `balance_ties`, ties instead prefer the node currently holding
    fewer actions (then node_id), which spreads zero-cost work.
    """
    feas = feasible_nodes(dag, g)
    spc = shortest_path_costs(g)
    preds: dict[str, list[tuple[str, float]]] = {a.action_id: [] for a in dag.actions}
    for d in dag.deps:
        preds[d.to_action].append((d.from_action, d.payload_units))

    assignment: dict[str, str] = {}
    load: dict[str, int] = {}
    for aid in topo_order(dag):
        candidates = feas[aid]
        if not candidates:
            raise InfeasiblePlacementError(aid, "no node satisfies its required capabilities")
        best_node = None
        best_key: tuple | None = None
        for node_id in candidates:
            inc = 0.0
            for pred, payload in preds[aid]:
                src = assignment[pred]
                if src == node_id or payload == 0:
                    continue
                hop = spc[src][node_id]
                if hop == _INF:
                    inc = _INF
                    break
                inc += payload * hop
            if preference:
                inc += float(preference.get(node_id, 0.0))
            # Unreachable candidates sort last; picking one only happens when
            # every choice is unreachable, and the final costing then reports
            # the infeasibility.
            key = ((inc == _INF, inc, load.get(node_id, 0), node_id) if balance_ties
                   else (inc == _INF, inc, node_id))
            if best_key is None or key < best_key:
                best_key = key
                best_node = node_id
        assert best_node is not None
        assignment[aid] = best_node
        load[best_node] = load.get(best_node, 0) + 1

    total = placement_cost(dag, g, assignment, preference=preference, _spc=spc)
    return Placement(tuple(sorted(assignment.items())), total)


def optimality_gap(greedy: Placement, optimal: Placement) -> float:
    """Absolute cost gap between a heuristic placement and the optimum."""
    return greedy.total_cost - optimal.total_cost
