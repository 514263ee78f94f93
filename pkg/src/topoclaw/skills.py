"""Skill manifests, the local registry, and portable assistant templates.

Skills are standardized manifests declaring a category, a target execution
environment, required capabilities, and the verb they bind into the intent
compiler. The registry is file-based and deterministic: loading the same
manifest directory yields the same registry regardless of enumeration
order. Twelve built-in skills ship with the package, three per category.

Assistant templates bundle a system prompt (carried opaquely), a skill
set, behavioral defaults, platform constraints, and author provenance.
They serialize to a canonical byte form so a template can travel as an
attributed event payload and instantiate identically on the recipient
side, author metadata intact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import SkillError
from .taskgraph import VerbEntry, EffectKind
from .topology import DeviceGraph, EnvironmentClass, capability_satisfies


class SkillCategory(str, Enum):
    UTILITY = "utility"
    CROSS_DEVICE = "cross_device"
    SOCIAL = "social"
    SYSTEM = "system"


class RequiredEnv(str, Enum):
    PC = "pc"
    MOBILE = "mobile"
    ANY = "any"

    def admits(self, env: EnvironmentClass) -> bool:
        if self is RequiredEnv.ANY:
            return True
        return self.value == env.value


_MANIFEST_FIELDS = ("name", "version", "description", "category", "required_env",
                    "required_capabilities", "verb", "entry")


@dataclass(frozen=True)
class SkillManifest:
    name: str
    version: str
    description: str
    category: SkillCategory
    required_env: RequiredEnv
    required_capabilities: frozenset[str]
    verb: str
    entry: str

    def __post_init__(self):
        object.__setattr__(self, "category", SkillCategory(self.category))
        object.__setattr__(self, "required_env", RequiredEnv(self.required_env))
        object.__setattr__(self, "required_capabilities", frozenset(self.required_capabilities))


def manifest_from_dict(doc: dict) -> SkillManifest:
    for key in _MANIFEST_FIELDS:
        if key not in doc:
            raise SkillError(f"manifest missing field {key!r}")
    try:
        category = SkillCategory(doc["category"])
    except ValueError:
        raise SkillError(f"bad category {doc['category']!r}") from None
    try:
        env = RequiredEnv(doc["required_env"])
    except ValueError:
        raise SkillError(f"bad required_env {doc['required_env']!r}") from None
    return SkillManifest(
        name=doc["name"],
        version=doc["version"],
        description=doc["description"],
        category=category,
        required_env=env,
        required_capabilities=frozenset(doc["required_capabilities"]),
        verb=doc["verb"],
        entry=doc["entry"],
    )


def manifest_to_dict(m: SkillManifest) -> dict:
    return {
        "name": m.name,
        "version": m.version,
        "description": m.description,
        "category": m.category.value,
        "required_env": m.required_env.value,
        "required_capabilities": sorted(m.required_capabilities),
        "verb": m.verb,
        "entry": m.entry,
    }


def load_manifest(path: str | Path) -> SkillManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SkillError(f"{path}: bad JSON: {exc.msg}") from None
    return manifest_from_dict(doc)


class SkillRegistry:
    """Immutable-after-build skill collection keyed by (name, version)."""

    def __init__(self):
        self._by_key: dict[tuple[str, str], SkillManifest] = {}
        self._verbs: dict[str, SkillManifest] = {}

    def add(self, m: SkillManifest) -> None:
        key = (m.name, m.version)
        if key in self._by_key:
            raise SkillError(f"duplicate skill {m.name} {m.version}")
        if m.verb in self._verbs:
            raise SkillError(
                f"duplicate verb {m.verb!r} ({self._verbs[m.verb].name} vs {m.name})")
        self._by_key[key] = m
        self._verbs[m.verb] = m

    def manifests(self) -> list[SkillManifest]:
        return [self._by_key[k] for k in sorted(self._by_key)]

    def by_name(self, name: str) -> SkillManifest:
        matches = sorted(k for k in self._by_key if k[0] == name)
        if not matches:
            raise SkillError(f"unknown skill {name!r}")
        return self._by_key[matches[-1]]

    def by_verb(self, verb: str) -> SkillManifest:
        m = self._verbs.get(verb)
        if m is None:
            raise SkillError(f"no skill provides verb {verb!r}")
        return m

    def verb_table(self) -> dict[str, VerbEntry]:
        from .taskgraph import builtin_verb_table

        shipped = builtin_verb_table()
        table: dict[str, VerbEntry] = {}
        for m in self.manifests():
            if m.verb in shipped:
                table[m.verb] = shipped[m.verb]
            else:
                # Third-party skill: a generic no-target read effect template.
                table[m.verb] = VerbEntry(m.verb, m.required_capabilities,
                                          EffectKind.READ, m.name)
        return table


def load_registry(directory: str | Path) -> SkillRegistry:
    """Load every skills/<name>/manifest.json under `directory`, sorted by
    (name, version), so the result is independent of filesystem order."""
    loaded = []
    root = Path(directory)
    for manifest_path in root.glob("*/manifest.json"):
        loaded.append(load_manifest(manifest_path))
    registry = SkillRegistry()
    for m in sorted(loaded, key=lambda m: (m.name, m.version)):
        registry.add(m)
    return registry


def builtin_registry() -> SkillRegistry:
    from . import assets

    return load_registry(assets.asset_root() / "skills")


def resolve_skill_node(m: SkillManifest, g: DeviceGraph) -> str:
    """Lexicographically smallest node matching the skill's environment and
    capability constraints."""
    env_ok = [n for n in sorted(g.nodes, key=lambda n: n.node_id)
              if m.required_env.admits(n.profile.environment_class)]
    if not env_ok:
        raise SkillError(
            f"skill {m.name!r}: no node has environment {m.required_env.value!r}")
    for n in env_ok:
        if capability_satisfies(n.profile, m.required_capabilities):
            return n.node_id
    missing = sorted(m.required_capabilities)
    raise SkillError(
        f"skill {m.name!r}: no node offers required capabilities {missing}")


# ── Assistant templates ──────────────────────────────────────────────

@dataclass(frozen=True)
class AssistantTemplate:
    template_id: str
    system_prompt: str
    skill_names: tuple[str, ...]
    behavioral_defaults: tuple[tuple[str, str], ...]
    platform_constraints: RequiredEnv
    author_user_id: str
    author_display_name: str
    author_key_ref: str
    use_case: str

    def __post_init__(self):
        object.__setattr__(self, "skill_names", tuple(self.skill_names))
        object.__setattr__(self, "behavioral_defaults", tuple(self.behavioral_defaults))
        object.__setattr__(self, "platform_constraints", RequiredEnv(self.platform_constraints))
        if not self.author_user_id:
            raise SkillError("template author metadata is required")


def serialize_template(t: AssistantTemplate) -> bytes:
    """Canonical portable record: sorted-key compact JSON, UTF-8."""
    doc = {
        "template_id": t.template_id,
        "system_prompt": t.system_prompt,
        "skill_names": list(t.skill_names),
        "behavioral_defaults": {k: v for k, v in t.behavioral_defaults},
        "platform_constraints": t.platform_constraints.value,
        "author": {
            "user_id": t.author_user_id,
            "display_name": t.author_display_name,
            "key_ref": t.author_key_ref,
        },
        "use_case": t.use_case,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def template_from_record(record: bytes | dict) -> AssistantTemplate:
    if isinstance(record, (bytes, bytearray)):
        try:
            doc = json.loads(record.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SkillError(f"bad template record: {exc}") from None
    else:
        doc = record
    author = doc.get("author", {})
    return AssistantTemplate(
        template_id=doc["template_id"],
        system_prompt=doc["system_prompt"],
        skill_names=tuple(doc["skill_names"]),
        behavioral_defaults=tuple(sorted(doc.get("behavioral_defaults", {}).items())),
        platform_constraints=RequiredEnv(doc["platform_constraints"]),
        author_user_id=author.get("user_id", ""),
        author_display_name=author.get("display_name", ""),
        author_key_ref=author.get("key_ref", ""),
        use_case=doc.get("use_case", ""),
    )


@dataclass(frozen=True)
class BoundAssistant:
    """A template instantiated against a concrete device graph."""

    template: AssistantTemplate
    bindings: tuple[tuple[str, str], ...]  # (skill name, node_id)
    verbs: tuple[str, ...]

    def node_for(self, skill_name: str) -> str:
        return dict(self.bindings)[skill_name]


def instantiate_template(
    record: bytes | dict | AssistantTemplate,
    g: DeviceGraph,
    registry: SkillRegistry,
) -> BoundAssistant:
    """Bind a portable template to the local topology.

    Fails when the platform constraint matches no node or any skill cannot
    resolve; author provenance is preserved verbatim.
    """
    t = record if isinstance(record, AssistantTemplate) else template_from_record(record)
    if not any(t.platform_constraints.admits(n.profile.environment_class) for n in g.nodes):
        raise SkillError(
            f"template {t.template_id!r}: platform constraint "
            f"{t.platform_constraints.value!r} unsatisfiable on this graph")
    bindings = []
    verbs = []
    for name in t.skill_names:
        m = registry.by_name(name)  # raises on unresolvable skill
        bindings.append((name, resolve_skill_node(m, g)))
        verbs.append(m.verb)
    return BoundAssistant(template=t, bindings=tuple(bindings), verbs=tuple(verbs))
