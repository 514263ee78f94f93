from __future__ import annotations

import random
from dataclasses import replace

import pytest

from topoclaw.errors import AttributionError, BroadcastError, KeyLookupError
from topoclaw.eventbus import (
    AttributedEvent,
    KeyStore,
    Role,
    SequenceCounters,
    attribute,
    broadcast,
    canonical_bytes,
    delegate,
    derive_demo_secret,
    envelope_from_dict,
    envelope_to_dict,
    event_canonical_bytes,
    event_from_dict,
    event_to_dict,
    verify_attribution,
)
from topoclaw.topology import Identity, SharedSpace


class TestAttribute:
    def test_round_trip_verifies(self, alice, keystore):
        e = attribute(b"hello", alice, "alice.twin", Role.OWNER, keystore,
                      counters=SequenceCounters())
        assert verify_attribution(e, keystore)
        assert e.delegation_chain == ("alice.twin",)
        assert e.human_id == "alice"

    def test_seq_strictly_increases(self, alice, keystore):
        counters = SequenceCounters()
        seqs = [attribute(b"m", alice, "alice.twin", Role.OWNER, keystore,
                          counters=counters).seq for _ in range(5)]
        assert seqs == [1, 2, 3, 4, 5]

    def test_seq_is_per_twin_and_channel(self, alice, keystore):
        counters = SequenceCounters()
        a = attribute(b"m", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="c1", counters=counters)
        b = attribute(b"m", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="c2", counters=counters)
        c = attribute(b"m", alice, "other.twin", Role.OWNER, keystore,
                      channel_id="c1", counters=counters)
        assert (a.seq, b.seq, c.seq) == (1, 1, 1)

    def test_unknown_key_ref(self, keystore):
        ghost = Identity("ghost", "Ghost", "missing")
        with pytest.raises(KeyLookupError):
            attribute(b"m", ghost, "ghost.twin", Role.OWNER, keystore)


class TestVerifyAttribution:
    def make(self, alice, keystore, **kw):
        return attribute(b"payload", alice, "alice.twin", Role.OWNER, keystore,
                         counters=SequenceCounters(), **kw)

    def test_payload_flip_fails(self, alice, keystore):
        e = self.make(alice, keystore)
        tampered = replace(e, payload_m=b"Payload")
        result = verify_attribution(tampered, keystore)
        assert not result and result.reason == "tag mismatch"

    def test_rewritten_human_fails(self, alice, bob, keystore):
        e = self.make(alice, keystore)
        tampered = replace(e, human_id="bob")
        result = verify_attribution(tampered, keystore)
        assert not result and result.reason == "tag mismatch"

    def test_chain_tail_must_match_twin(self, alice, keystore):
        e = self.make(alice, keystore)
        tampered = replace(e, delegation_chain=("alice.twin", "evil.twin"))
        assert not verify_attribution(tampered, keystore)

    def test_unknown_human(self, alice, keystore):
        e = self.make(alice, keystore)
        tampered = replace(e, human_id="stranger")
        result = verify_attribution(tampered, keystore)
        assert not result and result.reason == "unknown delegator identity"


class TestTamperEvidence:
    def test_single_byte_mutations_always_fail(self, alice, keystore):
        counters = SequenceCounters()
        events = [
            attribute(f"msg-{i}".encode(), alice, "alice.twin", Role.OWNER, keystore,
                      channel_id=f"ch{i % 3}", counters=counters)
            for i in range(20)
        ]
        rng = random.Random(1234)
        mutations = 0
        while mutations < 10_000:
            e = rng.choice(events)
            field = rng.randrange(6)
            if field == 0:
                data = bytearray(e.payload_m)
                data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
                mutated = replace(e, payload_m=bytes(data))
            elif field == 1:
                mutated = replace(e, human_id=_flip_char(e.human_id, rng))
            elif field == 2:
                mutated = replace(e, twin_id=_flip_char(e.twin_id, rng))
            elif field == 3:
                new_role = rng.choice([r for r in Role if r is not e.role_rho])
                mutated = replace(e, role_rho=new_role)
            elif field == 4:
                mutated = replace(e, seq=e.seq + rng.choice([-1, 1, 7]))
            else:
                data = bytearray(e.auth_tag)
                data[rng.randrange(len(data))] ^= 1 << rng.randrange(8)
                mutated = replace(e, auth_tag=bytes(data))
            assert not verify_attribution(mutated, keystore)
            mutations += 1


def _flip_char(s: str, rng: random.Random) -> str:
    i = rng.randrange(len(s))
    replacement = chr((ord(s[i]) - 97 + 1 + rng.randrange(24)) % 26 + 97)
    return s[:i] + replacement + s[i + 1:]


class TestDelegate:
    def test_chain_appends_and_human_unchanged(self, alice, keystore):
        counters = SequenceCounters()
        parent = attribute(b"m", alice, "t1", Role.OWNER, keystore, counters=counters)
        child = delegate(parent, "t2", keystore, counters=counters)
        assert child.delegation_chain == ("t1", "t2")
        assert child.human_id == "alice"
        assert child.role_rho is Role.DELEGATE
        assert child.twin_id == "t2"
        assert verify_attribution(child, keystore)

    def test_double_delegation(self, alice, keystore):
        counters = SequenceCounters()
        e = attribute(b"m", alice, "t1", Role.OWNER, keystore, counters=counters)
        e = delegate(e, "t2", keystore, counters=counters)
        e = delegate(e, "t3", keystore, counters=counters)
        assert e.delegation_chain == ("t1", "t2", "t3")
        assert verify_attribution(e, keystore)

    def test_invalid_parent_rejected(self, alice, keystore):
        parent = attribute(b"m", alice, "t1", Role.OWNER, keystore,
                           counters=SequenceCounters())
        broken = replace(parent, payload_m=b"tampered")
        with pytest.raises(AttributionError, match="invalid parent"):
            delegate(broken, "t2", keystore)


class TestBroadcast:
    def space(self, *members):
        return SharedSpace("room", tuple(members))

    def test_fan_out_excludes_sender_sorted(self, alice, keystore, social):
        e = attribute(b"hi", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        space = self.space("carol", "alice", "bob")
        envs = broadcast(space, e, social, keystore)
        assert [env.dst_node for env in envs] == ["bob", "carol"]
        assert all(env.event is e for env in envs)
        assert len({env.delivery_id for env in envs}) == 2

    def test_singleton_space_delivers_nothing(self, alice, keystore, social):
        e = attribute(b"hi", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        assert broadcast(self.space("alice"), e, social, keystore) == []

    def test_non_member_sender_rejected(self, bob, keystore, social):
        e = attribute(b"hi", bob, "bob.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        with pytest.raises(BroadcastError, match="not a member"):
            broadcast(self.space("alice", "carol"), e, social, keystore)

    def test_unverifiable_event_rejected(self, alice, keystore, social):
        e = attribute(b"hi", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        broken = replace(e, payload_m=b"x")
        with pytest.raises(BroadcastError, match="unverifiable"):
            broadcast(self.space("alice", "bob"), broken, social, keystore)

    def test_home_nodes_map_recipients(self, alice, keystore, social):
        e = attribute(b"hi", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        envs = broadcast(self.space("alice", "bob"), e, social, keystore,
                         home_nodes={"alice": "alice.pc", "bob": "bob.pc"})
        assert [env.dst_node for env in envs] == ["bob.pc"]
        assert envs[0].src_node == "alice.pc"


class TestCanonicalSerialization:
    def test_byte_layout(self):
        raw = canonical_bytes(b"ab", "u", "t", Role.OWNER, ("t",), 1, "c")

        def field(data, offset):
            n = int.from_bytes(data[offset:offset + 8], "big")
            return data[offset + 8:offset + 8 + n], offset + 8 + n

        payload, off = field(raw, 0)
        assert payload == b"ab"
        human, off = field(raw, off)
        assert human == b"u"
        twin, off = field(raw, off)
        assert twin == b"t"
        role, off = field(raw, off)
        assert role == b"owner"
        chain, off = field(raw, off)
        inner, _ = field(chain, 0)
        assert inner == b"t"
        seq, off = field(raw, off)
        assert int.from_bytes(seq, "big") == 1
        channel, off = field(raw, off)
        assert channel == b"c"
        assert off == len(raw)

    def test_chain_is_injective(self):
        # ["ab"] and ["a", "b"] must not collide.
        one = canonical_bytes(b"", "u", "ab", Role.OWNER, ("ab",), 1, "c")
        two = canonical_bytes(b"", "u", "ab", Role.OWNER, ("a", "b"), 1, "c")
        assert one != two

    def test_wire_round_trip_preserves_canonical_bytes(self, alice, keystore):
        e = attribute(b"\x00binary\xff", alice, "alice.twin", Role.OWNER, keystore,
                      counters=SequenceCounters())
        again = event_from_dict(event_to_dict(e))
        assert again == e
        assert event_canonical_bytes(again) == event_canonical_bytes(e)
        assert verify_attribution(again, keystore)

    def test_envelope_wire_round_trip(self, alice, keystore, social):
        e = attribute(b"hi", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="room", counters=SequenceCounters())
        envs = broadcast(SharedSpace("room", ("alice", "bob")), e, social, keystore)
        doc = envelope_to_dict(envs[0])
        assert envelope_from_dict(doc) == envs[0]


def test_demo_secret_is_stable():
    assert derive_demo_secret("alice") == derive_demo_secret("alice")
    assert derive_demo_secret("alice") != derive_demo_secret("bob")
