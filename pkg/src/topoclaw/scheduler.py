"""Context-aware proactivity: cron wakeups through the full defense pipeline.

Classic 5-field cron (minute, hour, day-of-month, month, day-of-week;
dow 0 = Sunday) over a zoneless simulated millisecond clock whose zero is
1970-01-01T00:00. Scheduler-originated actions are compiled, placed, and
verified through exactly the same layers as user commands; only the
context's origin differs, and verdicts must not depend on it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

from .errors import CronError, ScenarioError
from .taskgraph import IntentScript, intent_from_dict, intent_to_dict

if TYPE_CHECKING:
    from .governance import PolicyDecision

EPOCH = datetime(1970, 1, 1)
_FOUR_YEARS_DAYS = 4 * 366

_FIELDS = (
    ("minute", 0, 59),
    ("hour", 0, 23),
    ("day_of_month", 1, 31),
    ("month", 1, 12),
    ("day_of_week", 0, 6),
)


@dataclass(frozen=True)
class CronSpec:
    minute: frozenset[int]
    hour: frozenset[int]
    day_of_month: frozenset[int]
    month: frozenset[int]
    day_of_week: frozenset[int]
    dom_restricted: bool
    dow_restricted: bool
    text: str

    def matches(self, dt: datetime) -> bool:
        if dt.minute not in self.minute or dt.hour not in self.hour:
            return False
        if dt.month not in self.month:
            return False
        return self._day_matches(dt)

    def _day_matches(self, dt: datetime) -> bool:
        # Cron convention: when both day fields are restricted they combine
        # as a union; otherwise the restricted one decides.
        dom_ok = dt.day in self.day_of_month
        dow_ok = _cron_dow(dt) in self.day_of_week
        if self.dom_restricted and self.dow_restricted:
            return dom_ok or dow_ok
        if self.dom_restricted:
            return dom_ok
        if self.dow_restricted:
            return dow_ok
        return True


def _cron_dow(dt: datetime) -> int:
    # datetime.weekday(): Monday=0; cron: Sunday=0.
    return (dt.weekday() + 1) % 7


def _parse_field(text: str, name: str, lo: int, hi: int) -> tuple[frozenset[int], bool]:
    if text == "*":
        return frozenset(range(lo, hi + 1)), False
    values: set[int] = set()
    for part in text.split(","):
        step = 1
        if "/" in part:
            base, _, step_str = part.partition("/")
            try:
                step = int(step_str)
            except ValueError:
                raise CronError(f"{name}: malformed step {step_str!r}") from None
            if step < 1:
                raise CronError(f"{name}: step must be positive, got {step}")
            part = base
        if part == "*":
            lo_v, hi_v = lo, hi
        elif "-" in part:
            lo_str, _, hi_str = part.partition("-")
            try:
                lo_v, hi_v = int(lo_str), int(hi_str)
            except ValueError:
                raise CronError(f"{name}: malformed range {part!r}") from None
            if lo_v > hi_v:
                raise CronError(f"{name}: inverted range {part!r}")
        else:
            try:
                lo_v = hi_v = int(part)
            except ValueError:
                raise CronError(f"{name}: malformed value {part!r}") from None
        if lo_v < lo or hi_v > hi:
            raise CronError(f"{name}: value out of range {lo}-{hi}: {part!r}")
        values.update(range(lo_v, hi_v + 1, step))
    if not values:
        raise CronError(f"{name}: empty value set")
    return frozenset(values), True


def parse_cron(text: str) -> CronSpec:
    """Parse a 5-field cron expression."""
    fields = text.split()
    if len(fields) != 5:
        raise CronError(f"expected 5 fields, got {len(fields)}: {text!r}")
    parsed = []
    restricted = []
    for raw, (name, lo, hi) in zip(fields, _FIELDS):
        values, is_restricted = _parse_field(raw, name, lo, hi)
        parsed.append(values)
        restricted.append(is_restricted)
    return CronSpec(
        minute=parsed[0], hour=parsed[1], day_of_month=parsed[2],
        month=parsed[3], day_of_week=parsed[4],
        dom_restricted=restricted[2], dow_restricted=restricted[4],
        text=text,
    )


def ms_to_datetime(ms: int) -> datetime:
    return EPOCH + timedelta(milliseconds=ms)


def datetime_to_ms(dt: datetime) -> int:
    return round((dt - EPOCH).total_seconds() * 1000)


def next_fire(spec: CronSpec, after: int) -> int:
    """Smallest minute-aligned simulated time strictly greater than `after`
    matching the spec; errors if none exists within four years."""
    start = ms_to_datetime(after)
    candidate_day = start.replace(hour=0, minute=0, second=0, microsecond=0)
    for day_offset in range(_FOUR_YEARS_DAYS + 1):
        day = candidate_day + timedelta(days=day_offset)
        if day.month not in spec.month or not spec._day_matches(day):
            continue
        for hour in sorted(spec.hour):
            for minute in sorted(spec.minute):
                dt = day.replace(hour=hour, minute=minute)
                ms = datetime_to_ms(dt)
                if ms > after:
                    return ms
    raise CronError(f"cron spec never fires within four years: {spec.text!r}")


def is_due(spec: CronSpec, now: int) -> bool:
    """True iff `now` is minute-aligned and matches the spec."""
    if now % 60_000 != 0:
        return False
    return spec.matches(ms_to_datetime(now))


@dataclass(frozen=True)
class ScheduledTask:
    task_id: str
    spec: CronSpec
    intent: IntentScript
    owner: str
    enabled: bool = True


@dataclass(frozen=True)
class FileExistsMonitor:
    """Stub non-cron monitor: fires once when a workspace file appears.

    Placeholder for richer system-event monitoring; the runtime checks
    monitors at deterministic points (after each stimulus and cron tick)
    and disables a monitor after it triggers.
    """

    monitor_id: str
    path: str
    intent: IntentScript
    owner: str
    enabled: bool = True


@dataclass(frozen=True)
class TickOutcome:
    task_id: str
    action_id: str
    decision: "PolicyDecision | None"
    executed: bool
    detail: str


class IntentSubmitter(Protocol):
    def submit_scheduled(self, owner: str, script: IntentScript, now: int): ...


def tick(now: int, tasks: list[ScheduledTask], runtime: IntentSubmitter) -> list[TickOutcome]:
    """Run every enabled task due at `now` through the runtime pipeline.

    Due tasks are processed in ascending task_id; per-task failures land in
    the outcome list, never as exceptions.
    """
    outcomes: list[TickOutcome] = []
    for task in sorted(tasks, key=lambda t: t.task_id):
        if not task.enabled or not is_due(task.spec, now):
            continue
        try:
            results = runtime.submit_scheduled(task.owner, task.intent, now)
        except Exception as exc:
            outcomes.append(TickOutcome(task.task_id, "", None, False, f"error: {exc}"))
            continue
        for r in results:
            outcomes.append(TickOutcome(
                task.task_id, r.action_id, r.edge_decision or r.hub_decision,
                r.executed, r.detail))
    return outcomes


# ── Task table file ──────────────────────────────────────────────────

def tasks_from_dict(doc: list[dict]) -> list[ScheduledTask]:
    tasks = []
    ids: set[str] = set()
    for entry in doc:
        task_id = entry["task_id"]
        if task_id in ids:
            raise ScenarioError(f"duplicate task id {task_id!r} in schedule")
        ids.add(task_id)
        tasks.append(ScheduledTask(
            task_id=task_id,
            spec=parse_cron(entry["cron"]),
            intent=intent_from_dict(entry["intent"]),
            owner=entry["owner"],
            enabled=entry.get("enabled", True),
        ))
    return tasks


def tasks_to_dict(tasks: list[ScheduledTask]) -> list[dict]:
    return [
        {"task_id": t.task_id, "cron": t.spec.text, "owner": t.owner,
         "enabled": t.enabled, "intent": intent_to_dict(t.intent)}
        for t in tasks
    ]


def load_schedule(path: str | Path) -> list[ScheduledTask]:
    return tasks_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def monitors_from_dict(doc: list[dict]) -> list[FileExistsMonitor]:
    monitors = []
    ids: set[str] = set()
    for entry in doc:
        monitor_id = entry["monitor_id"]
        if monitor_id in ids:
            raise ScenarioError(f"duplicate monitor id {monitor_id!r}")
        ids.add(monitor_id)
        monitors.append(FileExistsMonitor(
            monitor_id=monitor_id,
            path=entry["path"],
            intent=intent_from_dict(entry["intent"]),
            owner=entry["owner"],
            enabled=entry.get("enabled", True),
        ))
    return monitors
