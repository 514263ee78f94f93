"""Action DAGs and the deterministic intent compiler.

Intent scripts are declarative step lists; the compiler is a fixed
table-driven translation (one action per step, dependency edges from the
"needs" relation), standing in for a reasoning engine so that every
downstream behavior is reproducible. Identical input yields byte-identical
output; all tie-breaking is lexicographic on ids.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import CycleError, DagError, UnknownVerbError


class EffectKind(str, Enum):
    READ = "read"
    WRITE = "write"
    EXEC = "exec"
    SEND = "send"
    NOOP = "noop"


@dataclass(frozen=True)
class EffectDescriptor:
    """Classifies what an action does to the world, for policy evaluation."""

    kind: EffectKind
    target: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", EffectKind(self.kind))
        if self.kind in (EffectKind.READ, EffectKind.WRITE) and not self.target:
            raise DagError(f"{self.kind.value} effect requires a path target")
        if self.kind is EffectKind.EXEC and not self.target:
            raise DagError("exec effect requires a command line")
        if self.kind is EffectKind.SEND and not self.target:
            raise DagError("send effect requires a channel target")


@dataclass(frozen=True)
class ActionSpec:
    action_id: str
    required_capabilities: frozenset[str]
    effect: EffectDescriptor
    params: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "required_capabilities", frozenset(self.required_capabilities))
        object.__setattr__(self, "params", tuple(self.params))
        if not self.required_capabilities and self.effect.kind is not EffectKind.NOOP:
            raise DagError(f"action {self.action_id!r} needs capabilities unless its effect is noop")

    def param(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.params:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class DependencyEdge:
    from_action: str
    to_action: str
    payload_units: float = 0.0

    def __post_init__(self):
        if self.from_action == self.to_action:
            raise DagError(f"dependency self-loop on {self.from_action!r}")
        if self.payload_units < 0:
            raise DagError("payload_units must be non-negative")


@dataclass(frozen=True)
class TaskDag:
    actions: tuple[ActionSpec, ...]
    deps: tuple[DependencyEdge, ...]

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "deps", tuple(self.deps))
        ids = [a.action_id for a in self.actions]
        if len(ids) != len(set(ids)):
            raise DagError("duplicate action ids")
        known = set(ids)
        for d in self.deps:
            if d.from_action not in known or d.to_action not in known:
                raise DagError(f"dependency references unknown action: {d.from_action}->{d.to_action}")
        topo_order(self)  # raises CycleError on a cycle

    def action(self, action_id: str) -> ActionSpec:
        for a in self.actions:
            if a.action_id == action_id:
                return a
        raise DagError(f"unknown action id: {action_id!r}")


@dataclass(frozen=True)
class IntentStep:
    step_id: str
    verb: str
    args: tuple[tuple[str, str], ...] = field(default_factory=tuple)
    needs: tuple[str, ...] = field(default_factory=tuple)
    payload_units: float = 0.0


@dataclass(frozen=True)
class IntentScript:
    intent_id: str
    steps: tuple[IntentStep, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        seen: set[str] = set()
        for step in self.steps:
            for need in step.needs:
                if need not in seen:
                    raise DagError(
                        f"step {step.step_id!r} needs {need!r} which is not an earlier step")
            if step.step_id in seen:
                raise DagError(f"duplicate step id {step.step_id!r}")
            seen.add(step.step_id)


@dataclass(frozen=True)
class VerbEntry:
    """One verb the compiler understands: capabilities + an effect template.

    The effect target is a template; "{key}" placeholders are substituted
    from the step's args at compile time.
    """

    verb: str
    required_capabilities: frozenset[str]
    effect_kind: EffectKind
    target_template: str


# A step with this verb compiles to a no-effect action without consulting
# the verb table; the shipped table holds only real skill verbs.
NOOP_VERB = "noop"


def _render_target(template: str, args: dict[str, str], step_id: str) -> str:
    out = template
    idx = 0
    while True:
        start = out.find("{", idx)
        if start < 0:
            return out
        end = out.find("}", start)
        if end < 0:
            raise DagError(f"step {step_id!r}: unbalanced placeholder in target template")
        key = out[start + 1:end]
        if key not in args:
            raise DagError(f"step {step_id!r}: missing argument {key!r} for verb target")
        out = out[:start] + args[key] + out[end + 1:]
        idx = start + len(args[key])


def compile_intent(script: IntentScript, verb_table: dict[str, VerbEntry]) -> TaskDag:
    """Translate an intent script into a task DAG, one action per step.

    Dependency edges are exactly the step "needs" relation; each incoming
    edge of a step carries that step's payload_units.
    """
    actions: list[ActionSpec] = []
    deps: list[DependencyEdge] = []
    for step in script.steps:
        args = dict(step.args)
        if step.verb == NOOP_VERB:
            effect = EffectDescriptor(EffectKind.NOOP, "")
            caps: frozenset[str] = frozenset()
        else:
            entry = verb_table.get(step.verb)
            if entry is None:
                raise UnknownVerbError(f"unknown verb {step.verb!r} in step {step.step_id!r}")
            effect = EffectDescriptor(entry.effect_kind,
                                      _render_target(entry.target_template, args, step.step_id))
            caps = entry.required_capabilities
        actions.append(ActionSpec(
            action_id=step.step_id,
            required_capabilities=caps,
            effect=effect,
            params=tuple(step.args),
        ))
        for need in step.needs:
            deps.append(DependencyEdge(need, step.step_id, step.payload_units))
    return TaskDag(tuple(actions), tuple(deps))


def topo_order(dag: TaskDag) -> list[str]:
    """Topological order with lexicographic tie-breaks; fully deterministic."""
    indeg = {a.action_id: 0 for a in dag.actions}
    succ: dict[str, list[str]] = {a.action_id: [] for a in dag.actions}
    for d in dag.deps:
        indeg[d.to_action] += 1
        succ[d.from_action].append(d.to_action)
    ready = sorted(aid for aid, deg in indeg.items() if deg == 0)
    order: list[str] = []
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        changed = False
        for nxt in succ[cur]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
                changed = True
        if changed:
            ready.sort()
    if len(order) != len(indeg):
        remaining = sorted(aid for aid, deg in indeg.items() if deg > 0)
        raise CycleError(_find_cycle(remaining, succ))
    return order


def _find_cycle(candidates: list[str], succ: dict[str, list[str]]) -> list[str]:
    # Walk successors among the unresolved vertices until one repeats.
    inside = set(candidates)
    cur = candidates[0]
    seen: list[str] = []
    while cur not in seen:
        seen.append(cur)
        cur = sorted(n for n in succ[cur] if n in inside)[0]
    return seen[seen.index(cur):] + [cur]


# ── JSON file formats ────────────────────────────────────────────────

def intent_from_dict(doc: dict) -> IntentScript:
    steps = []
    for s in doc.get("steps", []):
        steps.append(IntentStep(
            step_id=s["step_id"],
            verb=s["verb"],
            args=tuple(sorted((k, str(v)) for k, v in s.get("args", {}).items())),
            needs=tuple(s.get("needs", [])),
            payload_units=s.get("payload_units", 0.0),
        ))
    return IntentScript(intent_id=doc["intent_id"], steps=tuple(steps))


def intent_to_dict(script: IntentScript) -> dict:
    return {
        "intent_id": script.intent_id,
        "steps": [
            {
                "step_id": s.step_id,
                "verb": s.verb,
                "args": dict(s.args),
                "needs": list(s.needs),
                "payload_units": s.payload_units,
            }
            for s in script.steps
        ],
    }


def dag_from_dict(doc: dict) -> TaskDag:
    actions = []
    for a in doc.get("actions", []):
        actions.append(ActionSpec(
            action_id=a["action_id"],
            required_capabilities=frozenset(a.get("required_capabilities", [])),
            effect=EffectDescriptor(EffectKind(a["effect"]["kind"]), a["effect"].get("target", "")),
            params=tuple(sorted((k, str(v)) for k, v in a.get("params", {}).items())),
        ))
    deps = []
    for d in doc.get("deps", []):
        deps.append(DependencyEdge(d["from_action"], d["to_action"], d.get("payload_units", 0.0)))
    return TaskDag(tuple(actions), tuple(deps))


def dag_to_dict(dag: TaskDag) -> dict:
    return {
        "actions": [
            {
                "action_id": a.action_id,
                "required_capabilities": sorted(a.required_capabilities),
                "effect": {"kind": a.effect.kind.value, "target": a.effect.target},
                "params": dict(a.params),
            }
            for a in dag.actions
        ],
        "deps": [
            {"from_action": d.from_action, "to_action": d.to_action,
             "payload_units": d.payload_units}
            for d in dag.deps
        ],
    }


def load_intent(path: str | Path) -> IntentScript:
    return intent_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_dag(path: str | Path) -> TaskDag:
    return dag_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def load_verb_table(doc: dict) -> dict[str, VerbEntry]:
    table: dict[str, VerbEntry] = {}
    for verb, entry in doc.items():
        table[verb] = VerbEntry(
            verb=verb,
            required_capabilities=frozenset(entry["required_capabilities"]),
            effect_kind=EffectKind(entry["effect"]["kind"]),
            target_template=entry["effect"].get("target", ""),
        )
    return table


def builtin_verb_table() -> dict[str, VerbEntry]:
    """The shipped verb table covering the built-in skills."""
    from . import assets

    return load_verb_table(assets.load_json("verb_table.json"))
