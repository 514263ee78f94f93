"""Layered plain-text memory: short buffer, long-term notes, audit log.

State is a triple of a sliding window over recent observations, a keyed
long-term note map, and an append-only chronological log. Consolidation
is rule-based and synchronous: append to the log, refresh the window,
and promote an explicit remember directive (if any) into the long-term
map. Replaying the log from scratch always reproduces the live state.

Workspace layout under a node's workspace root:

    memory/log.jsonl   one observation per line (append-only)
    memory/short.json  the current window, as one JSON document
    memory/long.md     "## <section>" headings with "key: value" lines

The log and long-term files are meant to be read and edited by hand; a
directive key's section is its first dot-separated component ("general"
for bare keys), and lines always carry the full key so grouping is purely
presentational.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MemoryFormatError, TimestampOrderError

DEFAULT_WINDOW = 32

OBSERVATION_KINDS = ("user_msg", "twin_msg", "action_result", "system")


@dataclass(frozen=True)
class Observation:
    timestamp: int
    kind: str
    content: str
    remember_directive: str | None = None

    def __post_init__(self):
        if self.kind not in OBSERVATION_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.remember_directive is not None and "\n" in self.remember_directive:
            raise ValueError("remember directives must be single-line")


@dataclass(frozen=True)
class MemoryState:
    m_short: tuple[Observation, ...] = ()
    m_long: tuple[tuple[str, str], ...] = ()  # sorted (key, value) pairs
    m_log: tuple[Observation, ...] = ()
    window: int = DEFAULT_WINDOW

    def long_value(self, key: str) -> str | None:
        for k, v in self.m_long:
            if k == key:
                return v
        return None


def empty_state(window: int = DEFAULT_WINDOW) -> MemoryState:
    return MemoryState(window=window)


def parse_directive(directive: str) -> tuple[str, str]:
    """Split "key: value"; the key must be non-empty."""
    key, sep, value = directive.partition(":")
    key = key.strip()
    if not sep or not key:
        raise ValueError(f"malformed remember directive {directive!r}")
    return key, value.strip()


def consolidate(s: MemoryState, o: Observation) -> MemoryState:
    """Fold one observation into the state; deterministic and pure."""
    if s.m_log and o.timestamp < s.m_log[-1].timestamp:
        raise TimestampOrderError(
            len(s.m_log),
            f"timestamp {o.timestamp} regresses below {s.m_log[-1].timestamp}")
    log = s.m_log + (o,)
    short = log[-s.window:] if s.window > 0 else ()
    long_map = dict(s.m_long)
    if o.remember_directive is not None:
        key, value = parse_directive(o.remember_directive)
        long_map[key] = value
    return MemoryState(
        m_short=short,
        m_long=tuple(sorted(long_map.items())),
        m_log=log,
        window=s.window,
    )


def replay(log: list[Observation] | tuple[Observation, ...],
           window: int = DEFAULT_WINDOW) -> MemoryState:
    """Rebuild state by folding consolidate over an empty state."""
    state = empty_state(window)
    for i, o in enumerate(log):
        if state.m_log and o.timestamp < state.m_log[-1].timestamp:
            raise TimestampOrderError(i, f"timestamp regression at entry {i}")
        state = consolidate(state, o)
    return state


# ── Serialization ────────────────────────────────────────────────────

def serialize_observation(o: Observation) -> str:
    doc = {"timestamp": o.timestamp, "kind": o.kind, "content": o.content}
    if o.remember_directive is not None:
        doc["remember_directive"] = o.remember_directive
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def _parse_observation(line: str, path: str, lineno: int) -> Observation:
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MemoryFormatError(path, lineno, f"bad JSON: {exc.msg}") from None
    try:
        return Observation(
            timestamp=doc["timestamp"],
            kind=doc["kind"],
            content=doc["content"],
            remember_directive=doc.get("remember_directive"),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise MemoryFormatError(path, lineno, f"bad observation: {exc}") from None


def serialize_log(log: tuple[Observation, ...]) -> str:
    return "".join(serialize_observation(o) + "\n" for o in log)


def _section_of(key: str) -> str:
    head, _, _ = key.partition(".")
    return head if head != key else "general"


def serialize_long(m_long: tuple[tuple[str, str], ...]) -> str:
    sections: dict[str, list[tuple[str, str]]] = {}
    for key, value in m_long:
        sections.setdefault(_section_of(key), []).append((key, value))
    lines: list[str] = []
    for section in sorted(sections):
        lines.append(f"## {section}")
        for key, value in sorted(sections[section]):
            lines.append(f"{key}: {value}")
        lines.append("")
    return "\n".join(lines)


def parse_long(text: str, path: str = "long.md") -> tuple[tuple[str, str], ...]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("## "):
            continue
        key, sep, value = line.partition(":")
        if not sep or not key.strip():
            raise MemoryFormatError(path, lineno, f"expected 'key: value', got {raw!r}")
        entries[key.strip()] = value.strip()
    return tuple(sorted(entries.items()))


def memory_dir(root: str | Path) -> Path:
    return Path(root) / "memory"


def save_workspace(s: MemoryState, root: str | Path) -> None:
    """Write all three files; the log is written append-equivalent, so any
    earlier save's log file is a byte prefix of any later one."""
    d = memory_dir(root)
    d.mkdir(parents=True, exist_ok=True)
    (d / "log.jsonl").write_text(serialize_log(s.m_log), encoding="utf-8")
    (d / "short.json").write_text(
        json.dumps({"window": s.window,
                    "entries": [json.loads(serialize_observation(o)) for o in s.m_short]},
                   sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (d / "long.md").write_text(serialize_long(s.m_long), encoding="utf-8")


def append_observation(s: MemoryState, o: Observation, root: str | Path) -> MemoryState:
    """Consolidate and persist incrementally: append one log line, rewrite
    the derived files."""
    state = consolidate(s, o)
    d = memory_dir(root)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "log.jsonl", "a", encoding="utf-8") as fh:
        fh.write(serialize_observation(o) + "\n")
    (d / "short.json").write_text(
        json.dumps({"window": state.window,
                    "entries": [json.loads(serialize_observation(x)) for x in state.m_short]},
                   sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (d / "long.md").write_text(serialize_long(state.m_long), encoding="utf-8")
    return state


def load_workspace(root: str | Path, window: int = DEFAULT_WINDOW) -> MemoryState:
    """Load state from workspace files.

    The log is authoritative for the window; the long-term file is read
    as-is so direct human edits are always honored.
    """
    d = memory_dir(root)
    log_path = d / "log.jsonl"
    log: list[Observation] = []
    if log_path.exists():
        text = log_path.read_text(encoding="utf-8")
        if text and not text.endswith("\n"):
            lineno = text.count("\n") + 1
            raise MemoryFormatError(str(log_path), lineno, "truncated last line")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                raise MemoryFormatError(str(log_path), lineno, "blank line in log")
            log.append(_parse_observation(line, str(log_path), lineno))
    for i in range(1, len(log)):
        if log[i].timestamp < log[i - 1].timestamp:
            raise TimestampOrderError(i, f"timestamp regression at entry {i}")
    long_path = d / "long.md"
    m_long = parse_long(long_path.read_text(encoding="utf-8"), str(long_path)) \
        if long_path.exists() else ()
    log_t = tuple(log)
    return MemoryState(
        m_short=log_t[-window:] if window > 0 else (),
        m_long=m_long,
        m_log=log_t,
        window=window,
    )
