"""Attributed events and the simulated synchronization bus.

Every cross-boundary step travels as an event tuple binding the payload to
the human delegator, the acting twin, a delegated role, and an ordered
delegation chain. Authenticity uses a keyed hash (HMAC-SHA256) with
pre-shared per-user keys over a canonical byte serialization, so
verification is bit-exact and dependency-free.

Canonical byte layout (governs the tag, independent of JSON transport):
fields in the fixed order payload_m, human_id, twin_id, role_rho,
delegation_chain, seq, channel_id; each field is prefixed by an 8-byte
big-endian unsigned byte count. The chain field is the concatenation of
its elements, each element itself length-prefixed; seq is an 8-byte
big-endian unsigned integer.

The in-process bus delivers exactly once, in order, per (sender twin,
recipient, channel). Sequence numbers are allocated per (twin, channel),
and point-to-point traffic uses per-recipient channels in the reserved
"system" namespace so that every recipient observes a gapless stream.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import AttributionError, BroadcastError, KeyLookupError
from .topology import Identity, SharedSpace, SocialGraph

SYSTEM_CHANNEL = "system"
TAG_ALGO = "sha256"


class Role(str, Enum):
    OWNER = "owner"
    DELEGATE = "delegate"
    OBSERVER = "observer"


class KeyStore:
    """Pre-shared secret store: key refs plus user-id bindings."""

    def __init__(self):
        self._secrets: dict[str, bytes] = {}
        self._bindings: dict[str, str] = {}

    def add_secret(self, key_ref: str, secret: bytes) -> None:
        self._secrets[key_ref] = bytes(secret)

    def bind_user(self, user_id: str, key_ref: str) -> None:
        if key_ref not in self._secrets:
            raise KeyLookupError(f"unknown key_ref {key_ref!r}")
        self._bindings[user_id] = key_ref

    def register(self, identity: Identity, secret: bytes) -> None:
        self.add_secret(identity.key_ref, secret)
        self.bind_user(identity.user_id, identity.key_ref)

    def secret_for_ref(self, key_ref: str) -> bytes:
        try:
            return self._secrets[key_ref]
        except KeyError:
            raise KeyLookupError(f"unknown key_ref {key_ref!r}") from None

    def secret_for_user(self, user_id: str) -> bytes:
        ref = self._bindings.get(user_id)
        if ref is None:
            raise KeyLookupError(f"no key bound for user {user_id!r}")
        return self.secret_for_ref(ref)

    def has_user(self, user_id: str) -> bool:
        return user_id in self._bindings


def derive_demo_secret(user_id: str) -> bytes:
    """Deterministic per-user demo secret for scenario keyrings."""
    return hashlib.sha256(b"topoclaw:key:" + user_id.encode("utf-8")).digest()


class SequenceCounters:
    """Monotone per-(twin, channel) sequence allocation, starting at 1."""

    def __init__(self):
        self._next: dict[tuple[str, str], int] = {}

    def allocate(self, twin_id: str, channel_id: str) -> int:
        key = (twin_id, channel_id)
        seq = self._next.get(key, 1)
        self._next[key] = seq + 1
        return seq


_DEFAULT_COUNTERS = SequenceCounters()


@dataclass(frozen=True)
class AttributedEvent:
    payload_m: bytes
    human_id: str
    twin_id: str
    role_rho: Role
    delegation_chain: tuple[str, ...]
    seq: int
    channel_id: str
    auth_tag: bytes

    def __post_init__(self):
        object.__setattr__(self, "role_rho", Role(self.role_rho))
        object.__setattr__(self, "delegation_chain", tuple(self.delegation_chain))


@dataclass(frozen=True)
class VerificationResult:
    ok: bool
    reason: str = "ok"

    def __bool__(self) -> bool:
        return self.ok


@dataclass(frozen=True)
class Envelope:
    event: AttributedEvent
    src_node: str
    dst_node: str
    channel_id: str
    delivery_id: str


def _len8(data: bytes) -> bytes:
    return len(data).to_bytes(8, "big") + data


def canonical_bytes(
    payload_m: bytes,
    human_id: str,
    twin_id: str,
    role_rho: Role,
    delegation_chain: tuple[str, ...],
    seq: int,
    channel_id: str,
) -> bytes:
    chain_block = b"".join(_len8(t.encode("utf-8")) for t in delegation_chain)
    fields = (
        payload_m,
        human_id.encode("utf-8"),
        twin_id.encode("utf-8"),
        Role(role_rho).value.encode("utf-8"),
        chain_block,
        seq.to_bytes(8, "big"),
        channel_id.encode("utf-8"),
    )
    return b"".join(_len8(f) for f in fields)


def event_canonical_bytes(e: AttributedEvent) -> bytes:
    return canonical_bytes(e.payload_m, e.human_id, e.twin_id, e.role_rho,
                           e.delegation_chain, e.seq, e.channel_id)


def _tag(secret: bytes, canonical: bytes) -> bytes:
    return hmac.new(secret, canonical, TAG_ALGO).digest()


def attribute(
    m: bytes,
    human: Identity,
    twin_id: str,
    rho: Role,
    keystore: KeyStore,
    *,
    channel_id: str = SYSTEM_CHANNEL,
    counters: SequenceCounters | None = None,
) -> AttributedEvent:
    """Wrap a payload in a verifiable, freshly-sequenced attributed event."""
    secret = keystore.secret_for_ref(human.key_ref)
    counters = counters if counters is not None else _DEFAULT_COUNTERS
    seq = counters.allocate(twin_id, channel_id)
    chain = (twin_id,)
    tag = _tag(secret, canonical_bytes(m, human.user_id, twin_id, rho, chain, seq, channel_id))
    return AttributedEvent(
        payload_m=bytes(m),
        human_id=human.user_id,
        twin_id=twin_id,
        role_rho=Role(rho),
        delegation_chain=chain,
        seq=seq,
        channel_id=channel_id,
        auth_tag=tag,
    )


def verify_attribution(e: AttributedEvent, keystore: KeyStore) -> VerificationResult:
    """Check chain invariants and the keyed-hash tag; never raises."""
    if not e.delegation_chain:
        return VerificationResult(False, "empty delegation chain")
    if e.delegation_chain[-1] != e.twin_id:
        return VerificationResult(False, "chain tail does not match acting twin")
    if e.seq < 1:
        return VerificationResult(False, "non-positive sequence number")
    try:
        secret = keystore.secret_for_user(e.human_id)
    except KeyLookupError:
        return VerificationResult(False, "unknown delegator identity")
    expected = _tag(secret, event_canonical_bytes(e))
    if not hmac.compare_digest(expected, e.auth_tag):
        return VerificationResult(False, "tag mismatch")
    return VerificationResult(True)


def delegate(
    parent: AttributedEvent,
    sub_twin_id: str,
    keystore: KeyStore,
    *,
    counters: SequenceCounters | None = None,
) -> AttributedEvent:
    """Extend a verified event's chain to a sub-twin; same human delegator."""
    check = verify_attribution(parent, keystore)
    if not check:
        raise AttributionError(f"invalid parent event: {check.reason}")
    counters = counters if counters is not None else _DEFAULT_COUNTERS
    chain = parent.delegation_chain + (sub_twin_id,)
    seq = counters.allocate(sub_twin_id, parent.channel_id)
    secret = keystore.secret_for_user(parent.human_id)
    tag = _tag(secret, canonical_bytes(parent.payload_m, parent.human_id, sub_twin_id,
                                       Role.DELEGATE, chain, seq, parent.channel_id))
    return replace(parent, twin_id=sub_twin_id, role_rho=Role.DELEGATE,
                   delegation_chain=chain, seq=seq, auth_tag=tag)


def delivery_id_for(e: AttributedEvent, dst: str) -> str:
    """Deterministic per-run-unique delivery id."""
    return f"{e.channel_id}:{e.twin_id}:{e.seq}:{dst}"


def broadcast(
    space: SharedSpace,
    e: AttributedEvent,
    g_soc: SocialGraph,
    keystore: KeyStore,
    *,
    home_nodes: dict[str, str] | None = None,
    src_node: str | None = None,
) -> list[Envelope]:
    """Fan an event out to every member twin except the sender's own.

    `home_nodes` maps user ids to the device node hosting that user's
    twin; without it, envelopes are addressed by user id (the runtime
    substitutes physical nodes in clustered modes). Recipient order is
    ascending user_id.
    """
    check = verify_attribution(e, keystore)
    if not check:
        raise BroadcastError(f"unverifiable event: {check.reason}")
    if e.human_id not in space.members:
        raise BroadcastError(f"sender {e.human_id!r} is not a member of {space.space_id!r}")
    sender_src = src_node if src_node is not None else (
        home_nodes.get(e.human_id, e.human_id) if home_nodes else e.human_id)
    envelopes = []
    for member in sorted(set(space.members)):
        if member == e.human_id:
            continue
        dst = home_nodes.get(member, member) if home_nodes else member
        envelopes.append(Envelope(
            event=e,
            src_node=sender_src,
            dst_node=dst,
            channel_id=e.channel_id,
            delivery_id=delivery_id_for(e, member),
        ))
    return envelopes


# ── JSON wire format ─────────────────────────────────────────────────

def event_to_dict(e: AttributedEvent) -> dict:
    return {
        "payload_m": base64.b64encode(e.payload_m).decode("ascii"),
        "human_id": e.human_id,
        "twin_id": e.twin_id,
        "role_rho": e.role_rho.value,
        "delegation_chain": list(e.delegation_chain),
        "seq": e.seq,
        "channel_id": e.channel_id,
        "auth_tag": base64.b64encode(e.auth_tag).decode("ascii"),
    }


def event_from_dict(doc: dict) -> AttributedEvent:
    return AttributedEvent(
        payload_m=base64.b64decode(doc["payload_m"]),
        human_id=doc["human_id"],
        twin_id=doc["twin_id"],
        role_rho=Role(doc["role_rho"]),
        delegation_chain=tuple(doc["delegation_chain"]),
        seq=doc["seq"],
        channel_id=doc["channel_id"],
        auth_tag=base64.b64decode(doc["auth_tag"]),
    )


def envelope_to_dict(env: Envelope) -> dict:
    return {
        "event": event_to_dict(env.event),
        "src_node": env.src_node,
        "dst_node": env.dst_node,
        "channel_id": env.channel_id,
        "delivery_id": env.delivery_id,
    }


def envelope_from_dict(doc: dict) -> Envelope:
    return Envelope(
        event=event_from_dict(doc["event"]),
        src_node=doc["src_node"],
        dst_node=doc["dst_node"],
        channel_id=doc["channel_id"],
        delivery_id=doc["delivery_id"],
    )


def is_reserved_channel(channel_id: str) -> bool:
    return channel_id == SYSTEM_CHANNEL or channel_id.startswith(SYSTEM_CHANNEL + "/")


def system_channel_for(dst: str) -> str:
    """Per-destination system channel, keeping point-to-point streams gapless."""
    return f"{SYSTEM_CHANNEL}/{dst}"
