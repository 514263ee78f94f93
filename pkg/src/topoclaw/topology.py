"""Dual-topology model: the physical device graph and the social graph.

The physical side is a set of capability-profiled device nodes joined by
weighted synchronization edges; the social side is users joined by trust
edges plus shared multi-member spaces. Everything here is immutable after
construction and all queries are pure, so graphs can be shared freely
across concurrent executors.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .errors import GraphError, UnknownNodeError

CAPABILITY_RE = re.compile(r"^[a-z0-9_]+(\.[a-z0-9_]+)*$")


class EnvironmentClass(str, Enum):
    PC = "pc"
    MOBILE = "mobile"
    EDGE = "edge"


def is_valid_capability(cap: str) -> bool:
    """True iff `cap` is a non-empty, lowercase, dot-separated identifier."""
    return bool(CAPABILITY_RE.match(cap))


def _check_capabilities(caps: Iterable[str]) -> frozenset[str]:
    out = frozenset(caps)
    for cap in out:
        if not is_valid_capability(cap):
            raise GraphError(f"malformed capability identifier: {cap!r}")
    return out


@dataclass(frozen=True)
class CapabilityProfile:
    """What a device node can do, plus its broad environment class."""

    capabilities: frozenset[str]
    environment_class: EnvironmentClass

    def __post_init__(self):
        object.__setattr__(self, "capabilities", _check_capabilities(self.capabilities))
        object.__setattr__(self, "environment_class", EnvironmentClass(self.environment_class))


@dataclass(frozen=True)
class DeviceNode:
    node_id: str
    profile: CapabilityProfile
    workspace_root: str

    def __post_init__(self):
        if not self.node_id:
            raise GraphError("node_id must be non-empty")
        root = self.workspace_root
        if not root.startswith("/"):
            raise GraphError(f"workspace_root must be absolute: {root!r}")
        if root != "/" and root.endswith("/"):
            raise GraphError(f"workspace_root must not end with a separator: {root!r}")
        parts = root.split("/")
        if ".." in parts or "." in parts[1:] or "" in parts[1:]:
            raise GraphError(f"workspace_root must be normalized: {root!r}")


@dataclass(frozen=True)
class SyncEdge:
    from_node: str
    to_node: str
    transfer_cost_per_unit: float

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise GraphError(f"sync edge may not be a self-loop: {self.from_node!r}")
        if self.transfer_cost_per_unit < 0:
            raise GraphError(f"negative transfer cost on {self.from_node}->{self.to_node}")


@dataclass(frozen=True)
class DeviceGraph:
    """Physical topology: nodes with capability profiles, weighted sync edges.

    Edges are undirected for reachability; an explicit reverse edge may
    override the cost of the reverse direction, otherwise the forward cost
    applies both ways.
    """

    nodes: tuple[DeviceNode, ...]
    edges: tuple[SyncEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))

    def node(self, node_id: str) -> DeviceNode:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise UnknownNodeError(f"unknown node id: {node_id!r}")

    def has_node(self, node_id: str) -> bool:
        return any(n.node_id == node_id for n in self.nodes)

    def node_ids(self) -> list[str]:
        return sorted(n.node_id for n in self.nodes)


@dataclass(frozen=True)
class Identity:
    user_id: str
    display_name: str
    key_ref: str

    def __post_init__(self):
        if not self.user_id:
            raise GraphError("user_id must be non-empty")


@dataclass(frozen=True)
class TrustEdge:
    """`from_user` grants `to_user` the listed privileges over a channel."""

    from_user: str
    to_user: str
    channel_id: str
    privileges_granted: frozenset[str]

    def __post_init__(self):
        if not self.channel_id:
            raise GraphError("trust edge channel_id must be non-empty")
        object.__setattr__(self, "privileges_granted", _check_capabilities(self.privileges_granted))


@dataclass(frozen=True)
class SharedSpace:
    space_id: str
    members: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))


@dataclass(frozen=True)
class SocialGraph:
    users: tuple[Identity, ...]
    edges: tuple[TrustEdge, ...]
    spaces: tuple[SharedSpace, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "spaces", tuple(self.spaces))
        errors = validate_social_graph(self)
        if errors:
            raise GraphError("; ".join(errors))

    def user(self, user_id: str) -> Identity:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise GraphError(f"unknown user id: {user_id!r}")

    def has_user(self, user_id: str) -> bool:
        return any(u.user_id == user_id for u in self.users)

    def space(self, space_id: str) -> SharedSpace:
        for s in self.spaces:
            if s.space_id == space_id:
                return s
        raise GraphError(f"unknown space id: {space_id!r}")

    def channel_ids(self) -> set[str]:
        ids = {e.channel_id for e in self.edges}
        ids.update(s.space_id for s in self.spaces)
        return ids

    def grant_for(self, owner: str, requester: str, channel_id: str) -> frozenset[str] | None:
        """Privileges `owner` granted `requester` over `channel_id`, or None."""
        for e in self.edges:
            if e.from_user == owner and e.to_user == requester and e.channel_id == channel_id:
                return e.privileges_granted
        return None


def validate_graph(g: DeviceGraph) -> list[str]:
    """Report-style invariant check; empty list means the graph is valid."""
    violations: list[str] = []
    seen: set[str] = set()
    for n in g.nodes:
        if n.node_id in seen:
            violations.append(f"duplicate node id {n.node_id!r}")
        seen.add(n.node_id)
    pairs: set[tuple[str, str]] = set()
    for e in g.edges:
        for endpoint in (e.from_node, e.to_node):
            if endpoint not in seen:
                violations.append(f"dangling edge endpoint {endpoint!r}")
        if e.transfer_cost_per_unit < 0:
            violations.append(f"negative cost on edge {e.from_node}->{e.to_node}")
        key = (e.from_node, e.to_node)
        if key in pairs:
            violations.append(f"duplicate edge for ordered pair {key}")
        pairs.add(key)
    return violations


def validate_social_graph(g: SocialGraph) -> list[str]:
    violations: list[str] = []
    seen: set[str] = set()
    for u in g.users:
        if u.user_id in seen:
            violations.append(f"duplicate user id {u.user_id!r}")
        seen.add(u.user_id)
    for e in g.edges:
        for endpoint in (e.from_user, e.to_user):
            if endpoint not in seen:
                violations.append(f"dangling trust edge endpoint {endpoint!r}")
    space_ids: set[str] = set()
    for s in g.spaces:
        if s.space_id in space_ids:
            violations.append(f"duplicate space id {s.space_id!r}")
        space_ids.add(s.space_id)
        for m in s.members:
            if m not in seen:
                violations.append(f"space {s.space_id!r} member {m!r} does not exist")
    return violations


def capability_satisfies(profile: CapabilityProfile, required: Iterable[str]) -> bool:
    """True iff every required capability is in the profile."""
    return set(required) <= profile.capabilities


def reachable(g: DeviceGraph, a: str, b: str) -> bool:
    """True iff an undirected path of sync edges connects `a` and `b`."""
    if not g.has_node(a):
        raise UnknownNodeError(f"unknown node id: {a!r}")
    if not g.has_node(b):
        raise UnknownNodeError(f"unknown node id: {b!r}")
    if a == b:
        return True
    adjacency: dict[str, set[str]] = {}
    for e in g.edges:
        adjacency.setdefault(e.from_node, set()).add(e.to_node)
        adjacency.setdefault(e.to_node, set()).add(e.from_node)
    frontier = [a]
    visited = {a}
    while frontier:
        cur = frontier.pop()
        for nxt in adjacency.get(cur, ()):
            if nxt == b:
                return True
            if nxt not in visited:
                visited.add(nxt)
                frontier.append(nxt)
    return False


# ── JSON document format ─────────────────────────────────────────────
#
# A single document may carry both graphs. Top-level keys: "nodes",
# "sync_edges", "users", "trust_edges", "spaces". Unknown keys anywhere
# are rejected.

_TOP_KEYS = {"nodes", "sync_edges", "users", "trust_edges", "spaces"}


def _require_keys(obj: dict, allowed: set[str], required: set[str], what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise GraphError(f"{what}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise GraphError(f"{what}: missing keys {sorted(missing)}")


def _parse_node(obj: dict) -> DeviceNode:
    _require_keys(obj, {"node_id", "profile", "workspace_root"},
                  {"node_id", "profile", "workspace_root"}, "node")
    prof = obj["profile"]
    _require_keys(prof, {"capabilities", "environment_class"},
                  {"capabilities", "environment_class"}, "profile")
    try:
        env = EnvironmentClass(prof["environment_class"])
    except ValueError:
        raise GraphError(f"bad environment_class: {prof['environment_class']!r}") from None
    return DeviceNode(
        node_id=obj["node_id"],
        profile=CapabilityProfile(frozenset(prof["capabilities"]), env),
        workspace_root=obj["workspace_root"],
    )


def device_graph_from_dict(doc: dict) -> DeviceGraph:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise GraphError(f"graph document: unknown keys {sorted(unknown)}")
    nodes = [_parse_node(n) for n in doc.get("nodes", [])]
    edges = []
    for e in doc.get("sync_edges", []):
        _require_keys(e, {"from_node", "to_node", "transfer_cost_per_unit"},
                      {"from_node", "to_node", "transfer_cost_per_unit"}, "sync_edge")
        edges.append(SyncEdge(e["from_node"], e["to_node"], e["transfer_cost_per_unit"]))
    g = DeviceGraph(tuple(nodes), tuple(edges))
    violations = validate_graph(g)
    if violations:
        raise GraphError("; ".join(violations))
    return g


def social_graph_from_dict(doc: dict) -> SocialGraph:
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise GraphError(f"graph document: unknown keys {sorted(unknown)}")
    users = []
    for u in doc.get("users", []):
        _require_keys(u, {"user_id", "display_name", "key_ref"},
                      {"user_id", "display_name", "key_ref"}, "user")
        users.append(Identity(u["user_id"], u["display_name"], u["key_ref"]))
    edges = []
    for e in doc.get("trust_edges", []):
        _require_keys(e, {"from_user", "to_user", "channel_id", "privileges_granted"},
                      {"from_user", "to_user", "channel_id", "privileges_granted"}, "trust_edge")
        edges.append(TrustEdge(e["from_user"], e["to_user"], e["channel_id"],
                               frozenset(e["privileges_granted"])))
    spaces = []
    for s in doc.get("spaces", []):
        _require_keys(s, {"space_id", "members"}, {"space_id", "members"}, "space")
        spaces.append(SharedSpace(s["space_id"], tuple(s["members"])))
    return SocialGraph(tuple(users), tuple(edges), tuple(spaces))


def load_graph_document(path: str | Path) -> tuple[DeviceGraph, SocialGraph]:
    """Load a combined graph document from a JSON file."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return device_graph_from_dict(doc), social_graph_from_dict(doc)


def device_graph_to_dict(g: DeviceGraph) -> dict:
    return {
        "nodes": [
            {
                "node_id": n.node_id,
                "profile": {
                    "capabilities": sorted(n.profile.capabilities),
                    "environment_class": n.profile.environment_class.value,
                },
                "workspace_root": n.workspace_root,
            }
            for n in g.nodes
        ],
        "sync_edges": [
            {"from_node": e.from_node, "to_node": e.to_node,
             "transfer_cost_per_unit": e.transfer_cost_per_unit}
            for e in g.edges
        ],
    }
