"""Auditable run transcripts and their offline invariant checks.

A transcript is an append-only list of timestamped records (stimuli,
placements, events, policy decisions, transfers, effects, cron fires)
that serializes deterministically: the same scenario and mode always
produce byte-identical output. The header embeds the demo keyring so the
`verify` command can re-check event authenticity offline.
"""

from __future__ import annotations

import json
from pathlib import Path

from ..errors import TranscriptError
from ..eventbus import KeyStore, event_from_dict, verify_attribution

FORMAT = "topoclaw-transcript-v1"


class Transcript:
    def __init__(self, scenario_id: str, mode: str, solver: str, keyring: dict[str, str]):
        self.header = {
            "format": FORMAT,
            "scenario_id": scenario_id,
            "mode": mode,
            "solver": solver,
            "keyring": dict(sorted(keyring.items())),
        }
        self.records: list[dict] = []

    def add(self, time: int, node: str, rtype: str, **fields) -> None:
        record = {"time": time, "node": node, "type": rtype}
        record.update(fields)
        self.records.append(record)

    def to_json_bytes(self) -> bytes:
        doc = {"header": self.header, "records": self.records}
        return (json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")

    @staticmethod
    def from_json(data: bytes | str) -> "Transcript":
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise TranscriptError(f"bad transcript JSON: {exc.msg}") from None
        header = doc.get("header", {})
        if header.get("format") != FORMAT:
            raise TranscriptError(f"unknown transcript format {header.get('format')!r}")
        t = Transcript(header.get("scenario_id", ""), header.get("mode", ""),
                       header.get("solver", ""), header.get("keyring", {}))
        t.records = doc.get("records", [])
        return t

    @staticmethod
    def load(path: str | Path) -> "Transcript":
        return Transcript.from_json(Path(path).read_text(encoding="utf-8"))

    # ── Queries used by tests and the verifier ──────────────────────

    def of_type(self, rtype: str) -> list[dict]:
        return [r for r in self.records if r["type"] == rtype]

    def keystore(self) -> KeyStore:
        ks = KeyStore()
        for user_id, secret_hex in self.header["keyring"].items():
            ref = f"k:{user_id}"
            ks.add_secret(ref, bytes.fromhex(secret_hex))
            ks.bind_user(user_id, ref)
        return ks


def verify_transcript(t: Transcript) -> list[str]:
    """Offline invariant re-check; returns violations (empty when clean)."""
    violations: list[str] = []
    ks = t.keystore()

    last_time = None
    for i, r in enumerate(t.records):
        if last_time is not None and r["time"] < last_time:
            violations.append(f"record {i}: time regression {r['time']} < {last_time}")
        last_time = r["time"]

    # Event authenticity and provenance chains.
    for i, r in enumerate(t.records):
        if r["type"] != "event":
            continue
        env = r["envelope"]
        event = event_from_dict(env["event"])
        result = verify_attribution(event, ks)
        if not result:
            violations.append(f"record {i}: event fails verification: {result.reason}")
            continue
        if not event.delegation_chain:
            violations.append(f"record {i}: empty delegation chain")
        if event.human_id not in t.header["keyring"]:
            violations.append(f"record {i}: human {event.human_id!r} not in keyring")

    # Every effect needs one allow decision from each enforcement stage.
    for i, r in enumerate(t.records):
        if r["type"] != "effect":
            continue
        action_id = r["action_id"]
        delivery_id = r.get("delivery_id")
        stages = {"hub": False, "edge": False}
        for prior in t.records[:i]:
            if prior["type"] != "decision" or prior["action_id"] != action_id:
                continue
            if delivery_id is not None and prior.get("delivery_id") != delivery_id:
                continue
            if prior["decision"]["overall"] == "allow":
                stages[prior["stage"]] = True
        for stage, seen in stages.items():
            if not seen:
                violations.append(
                    f"record {i}: effect for {action_id!r} lacks an allow {stage} decision")

    # Per-(twin, channel) delivered sequences are gapless at each recipient.
    streams: dict[tuple[str, str, str], list[int]] = {}
    for r in t.records:
        if r["type"] == "event" and r.get("direction") == "deliver":
            ev = r["envelope"]["event"]
            key = (ev["twin_id"], ev["channel_id"], r["envelope"]["dst_node"])
            streams.setdefault(key, []).append(ev["seq"])
    for key, seqs in sorted(streams.items()):
        expected = list(range(1, len(seqs) + 1))
        if seqs != expected:
            violations.append(
                f"stream {key}: delivered seqs {seqs} are not the gapless run {expected}")

    return violations
