"""Scenario files: declarative cluster setups plus a timed stimulus script.

A scenario carries one device graph per user, the social graph, initial
workspace files, optional baseline-privilege overrides, and an ordered
list of stimuli. Stimulus kinds: "intent" (the actor submits an intent
script), "message" (the actor posts a payload into a space or trust-edge
channel), and "clock_advance" (move simulated time forward, letting cron
tasks fire).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from ..errors import ScenarioError
from ..topology import (
    DeviceGraph,
    SocialGraph,
    device_graph_from_dict,
    social_graph_from_dict,
    validate_graph,
)

STIMULUS_KINDS = ("intent", "message", "clock_advance")


class DeploymentMode(str, Enum):
    SINGLE_NODE = "single_node"
    SOCIAL_ONLY = "social_only"
    FULL_DUAL = "full_dual"


@dataclass(frozen=True)
class Stimulus:
    at: int
    actor: str
    kind: str
    body: dict

    def __post_init__(self):
        if self.kind not in STIMULUS_KINDS:
            raise ScenarioError(f"unknown stimulus kind {self.kind!r}")


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    mode: DeploymentMode
    device_graphs: tuple[tuple[str, DeviceGraph], ...]  # (user_id, graph), sorted
    social: SocialGraph
    workspaces: tuple[tuple[str, tuple[tuple[str, str], ...]], ...] = ()
    baseline_privileges: tuple[tuple[str, tuple[str, ...]], ...] = ()
    memory_window: int = 32
    script: tuple[Stimulus, ...] = ()

    def graph_for(self, user_id: str) -> DeviceGraph:
        for uid, g in self.device_graphs:
            if uid == user_id:
                return g
        raise ScenarioError(f"no device graph for user {user_id!r}")


def _validate(s: Scenario) -> None:
    users = {u.user_id for u in s.social.users}
    node_ids: set[str] = set()
    for uid, g in s.device_graphs:
        if uid not in users:
            raise ScenarioError(f"device graph owner {uid!r} is not a user")
        violations = validate_graph(g)
        if violations:
            raise ScenarioError(f"device graph for {uid!r}: " + "; ".join(violations))
        if not g.nodes:
            raise ScenarioError(f"device graph for {uid!r} has no nodes")
        for n in g.nodes:
            if n.node_id in node_ids:
                raise ScenarioError(f"node id {n.node_id!r} appears in two device graphs")
            node_ids.add(n.node_id)
    for uid in users:
        if not any(u == uid for u, _ in s.device_graphs):
            raise ScenarioError(f"user {uid!r} has no device graph")
    for node_id, _files in s.workspaces:
        if node_id not in node_ids:
            raise ScenarioError(f"workspace files for unknown node {node_id!r}")
    last = None
    for stim in s.script:
        if last is not None and stim.at < last:
            raise ScenarioError("stimuli must be time-ordered")
        last = stim.at
        if stim.actor and stim.actor not in users:
            raise ScenarioError(f"stimulus actor {stim.actor!r} is not a user")
        if stim.kind == "clock_advance":
            to = stim.body.get("to")
            if not isinstance(to, int) or to < stim.at:
                raise ScenarioError("clock_advance body.to must be an int >= its own time")


def check_mode(s: Scenario, mode: DeploymentMode) -> None:
    """Reject scenarios inconsistent with a deployment mode's shape."""
    total_nodes = sum(len(g.nodes) for _, g in s.device_graphs)
    if mode is DeploymentMode.SINGLE_NODE:
        if total_nodes != 1:
            raise ScenarioError(
                f"single_node mode requires exactly one node, scenario has {total_nodes}")
        if s.social.spaces:
            raise ScenarioError("single_node mode does not support shared spaces")
    elif mode is DeploymentMode.SOCIAL_ONLY:
        for uid, g in s.device_graphs:
            if len(g.nodes) != 1:
                raise ScenarioError(
                    f"social_only mode requires one node per user; {uid!r} has {len(g.nodes)}")


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        scenario_id = doc["scenario_id"]
        mode = DeploymentMode(doc.get("mode", "full_dual"))
        graphs = []
        for uid in sorted(doc.get("device_graphs", {})):
            graphs.append((uid, device_graph_from_dict(doc["device_graphs"][uid])))
        social = social_graph_from_dict(doc.get("social", {}))
        workspaces = tuple(
            (node_id, tuple(sorted(files.items())))
            for node_id, files in sorted(doc.get("workspaces", {}).items()))
        baseline = tuple(
            (user, tuple(sorted(caps)))
            for user, caps in sorted(doc.get("baseline_privileges", {}).items()))
        script = tuple(
            Stimulus(at=st["at"], actor=st.get("actor", ""), kind=st["kind"],
                     body=st.get("body", {}))
            for st in doc.get("script", []))
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario document: {exc}") from None
    except Exception as exc:
        raise ScenarioError(f"bad scenario document: {exc}") from None
    s = Scenario(
        scenario_id=scenario_id,
        mode=mode,
        device_graphs=tuple(graphs),
        social=social,
        workspaces=workspaces,
        baseline_privileges=baseline,
        memory_window=doc.get("memory_window", 32),
        script=script,
    )
    _validate(s)
    return s


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: bad JSON: {exc.msg}") from None
    return scenario_from_dict(doc)


def bundled_scenario_ids() -> list[str]:
    from .. import assets

    return sorted(p.stem for p in (assets.asset_root() / "scenarios").glob("*.json"))


def load_bundled_scenario(scenario_id: str) -> Scenario:
    from .. import assets

    path = assets.asset_root() / "scenarios" / f"{scenario_id}.json"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario {scenario_id!r}")
    return load_scenario(path)
