from __future__ import annotations

import pytest

from topoclaw.eventbus import (
    Envelope,
    Role,
    SequenceCounters,
    attribute,
    delivery_id_for,
    verify_attribution,
)
from topoclaw.transport import EnvelopeReceiver, send_envelope


@pytest.fixture
def receiver():
    r = EnvelopeReceiver()
    yield r
    r.stop()


def test_loopback_envelope_round_trip(alice, keystore, receiver):
    event = attribute(b"over the wire", alice, "alice.twin", Role.OWNER, keystore,
                      channel_id="team", counters=SequenceCounters())
    env = Envelope(event, src_node="alice.pc", dst_node="bob.pc", channel_id="team",
                   delivery_id=delivery_id_for(event, "bob"))
    send_envelope(receiver.host, receiver.port, env)

    import time
    deadline = time.time() + 5
    while not receiver.received and time.time() < deadline:
        time.sleep(0.02)
    assert len(receiver.received) == 1
    delivered = receiver.received[0]
    assert delivered == env
    assert verify_attribution(delivered.event, keystore)
