"""Shared fixtures: reference graphs, keystore, small builders."""

from __future__ import annotations

import pytest

from topoclaw.eventbus import KeyStore, derive_demo_secret
from topoclaw.topology import (
    CapabilityProfile,
    DeviceGraph,
    DeviceNode,
    EnvironmentClass,
    Identity,
    SharedSpace,
    SocialGraph,
    SyncEdge,
    TrustEdge,
)

DESKTOP_CAPS = frozenset({
    "fs.search", "fs.write", "cron.schedule", "msg.send", "memory.edit",
    "skill.author", "skill.list", "contacts.manage", "identity.assert",
})
MOBILE_CAPS = frozenset({
    "sms.send", "clipboard.sync", "deeplink.open", "msg.send", "memory.edit",
    "skill.list", "contacts.manage", "identity.assert",
})


def make_node(node_id: str, caps, env="pc", root=None) -> DeviceNode:
    return DeviceNode(
        node_id=node_id,
        profile=CapabilityProfile(frozenset(caps), EnvironmentClass(env)),
        workspace_root=root or f"/ws/{node_id}",
    )


@pytest.fixture
def dual_graph() -> DeviceGraph:
    """The reference dual-topology device graph: one PC, one mobile."""
    return DeviceGraph(
        nodes=(
            make_node("desktop", DESKTOP_CAPS, "pc"),
            make_node("mobile", MOBILE_CAPS, "mobile"),
        ),
        edges=(SyncEdge("desktop", "mobile", 1.0),),
    )


@pytest.fixture
def line_graph() -> DeviceGraph:
    """n1 - n2 - n3 with unit edge costs."""
    caps = {"fs.search"}
    return DeviceGraph(
        nodes=(make_node("n1", caps), make_node("n2", caps), make_node("n3", caps)),
        edges=(SyncEdge("n1", "n2", 1.0), SyncEdge("n2", "n3", 1.0)),
    )


@pytest.fixture
def alice() -> Identity:
    return Identity("alice", "Alice", "k:alice")


@pytest.fixture
def bob() -> Identity:
    return Identity("bob", "Bob", "k:bob")


@pytest.fixture
def keystore(alice, bob) -> KeyStore:
    ks = KeyStore()
    ks.register(alice, derive_demo_secret("alice"))
    ks.register(bob, derive_demo_secret("bob"))
    return ks


@pytest.fixture
def social(alice, bob) -> SocialGraph:
    return SocialGraph(
        users=(alice, bob),
        edges=(
            TrustEdge("alice", "bob", "team", frozenset({"msg.send", "fs.read"})),
            TrustEdge("bob", "alice", "team", frozenset({"msg.send"})),
        ),
        spaces=(SharedSpace("team", ("alice", "bob")),),
    )
