"""Cross-topology boundary defense.

An action is safe only if every configured policy layer allows it: the
overall verdict is the boolean conjunction of per-layer verdicts, and all
layers are evaluated and reported even after a deny so decisions stay
fully explainable. Requests arriving over a social edge run with the
intersection of the owner's baseline privileges and the requester's
granted privileges, so an external participant can never widen the twin's
authority. Write effects are confined to the node's workspace by lexical
path normalization, and exec effects pass a declarative deny ruleset that
unconditionally intercepts dangerous command idioms.

Enforcement is distributed: the hub evaluates before routing, and the
receiving node independently re-evaluates with its own layer set and
workspace root (`edge_verify`). A hub allow never bypasses edge denial.
"""

from __future__ import annotations

import json
import posixpath
import re
import shlex
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import PolicyConfigError
from .eventbus import AttributedEvent, KeyStore, verify_attribution
from .taskgraph import ActionSpec, EffectDescriptor, EffectKind
from .topology import DeviceNode, Identity, SocialGraph


class Origin(str, Enum):
    USER = "user"
    SCHEDULER = "scheduler"
    EXTERNAL = "external"


@dataclass(frozen=True)
class PrivilegeSet:
    privileges: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "privileges", frozenset(self.privileges))

    def __contains__(self, cap: str) -> bool:
        return cap in self.privileges

    def issuperset(self, caps: Iterable[str]) -> bool:
        return self.privileges >= set(caps)


def effective_privileges(baseline: PrivilegeSet, requester_privs: PrivilegeSet) -> PrivilegeSet:
    """Effective authority is strictly the intersection of both sets."""
    return PrivilegeSet(baseline.privileges & requester_privs.privileges)


@dataclass(frozen=True)
class ActionContext:
    origin: Origin
    node_id: str
    workspace_root: str
    requester: Identity | None = None
    channel_id: str | None = None
    event: AttributedEvent | None = None

    def __post_init__(self):
        object.__setattr__(self, "origin", Origin(self.origin))
        if self.origin is Origin.EXTERNAL and self.requester is None:
            raise PolicyConfigError("external origin requires a requester identity")


@dataclass(frozen=True)
class Verdict:
    allowed: bool
    reason: str | None = None

    @staticmethod
    def allow() -> "Verdict":
        return Verdict(True)

    @staticmethod
    def deny(reason: str) -> "Verdict":
        return Verdict(False, reason)

    def __bool__(self) -> bool:
        return self.allowed


@dataclass(frozen=True)
class PolicyLayer:
    layer_id: str
    evaluate: Callable[[ActionSpec, ActionContext], Verdict]


@dataclass(frozen=True)
class PolicyDecision:
    verdicts: tuple[tuple[str, Verdict], ...]

    @property
    def overall(self) -> bool:
        return all(v.allowed for _, v in self.verdicts)

    def verdict_for(self, layer_id: str) -> Verdict:
        for lid, v in self.verdicts:
            if lid == layer_id:
                return v
        raise KeyError(layer_id)

    def deny_reasons(self) -> list[str]:
        return [f"{lid}: {v.reason}" for lid, v in self.verdicts if not v.allowed]

    def as_dict(self) -> dict:
        return {
            "overall": "allow" if self.overall else "deny",
            "verdicts": [
                {"layer_id": lid, "verdict": "allow" if v.allowed else "deny",
                 **({"reason": v.reason} if v.reason else {})}
                for lid, v in self.verdicts
            ],
        }


def evaluate_safe(a: ActionSpec, c: ActionContext, layers: list[PolicyLayer]) -> PolicyDecision:
    """Run every layer and conjoin; an empty pipeline fails closed."""
    if not layers:
        return PolicyDecision(
            (("config", Verdict.deny("no policy layers configured")),))
    verdicts = []
    for layer in layers:
        try:
            verdict = layer.evaluate(a, c)
        except Exception as exc:  # a crashing layer must fail closed, not open
            verdict = Verdict.deny(f"layer error: {exc}")
        verdicts.append((layer.layer_id, verdict))
    return PolicyDecision(tuple(verdicts))


# ── Sandbox confinement ──────────────────────────────────────────────

def normalize_path(target: str, workspace_root: str) -> str | None:
    """Lexical normalization; relative targets resolve against the root.

    Returns None when the target cannot be normalized (empty, NUL bytes).
    Symbolic links are deliberately not resolved: the boundary is lexical
    and the harness refuses to follow links during simulated writes.
    """
    if not target or "\x00" in target:
        return None
    if not target.startswith("/"):
        target = workspace_root.rstrip("/") + "/" + target
    normalized = posixpath.normpath(target)
    # POSIX permits exactly two leading slashes to survive normpath.
    if normalized.startswith("//") and not normalized.startswith("///"):
        normalized = normalized[1:]
    return normalized


def path_within(path: str, root: str) -> bool:
    root = root.rstrip("/") or "/"
    return path == root or path.startswith(root + "/")


def sandbox_check(effect: EffectDescriptor, workspace_root: str) -> Verdict:
    """Deny writes whose normalized target leaves the workspace scope.

    Reads, sends, and noops pass here (reads are unconstrained by the
    sandbox; exec is the command auditor's job).
    """
    if effect.kind is not EffectKind.WRITE:
        return Verdict.allow()
    normalized = normalize_path(effect.target, workspace_root)
    if normalized is None:
        return Verdict.deny("malformed path")
    if not path_within(normalized, workspace_root):
        return Verdict.deny("outside workspace")
    return Verdict.allow()


# ── Semantic command auditing ────────────────────────────────────────

@dataclass(frozen=True)
class DenyRule:
    rule_id: str
    reason: str
    command: tuple[str, ...] = ()
    flags: tuple[str, ...] = ()
    any_arg: tuple[str, ...] = ()
    any_token: tuple[str, ...] = ()
    pattern: str | None = None

    def matches(self, cmdline: str, segments: list[list[str]]) -> bool:
        if self.pattern is not None and not re.search(self.pattern, cmdline):
            return False
        if self.command:
            # Token conditions apply per shell segment, so an idiom hidden
            # behind ";"/"&&"/"|" still matches its own command word.
            return any(
                tokens and tokens[0] in self.command and self._tokens_match(tokens)
                for tokens in segments)
        all_tokens = [t for tokens in segments for t in tokens]
        return self._tokens_match(all_tokens) if (
            self.flags or self.any_arg or self.any_token) else self.pattern is not None

    def _tokens_match(self, tokens: list[str]) -> bool:
        if self.flags:
            present: set[str] = set()
            for tok in tokens:
                if tok.startswith("-") and not tok.startswith("--"):
                    present.update(tok[1:])
            if not set(self.flags) <= present:
                return False
        if self.any_arg:
            args = [t for t in tokens[1:] if not t.startswith("-")]
            if not any(a in self.any_arg for a in args):
                return False
        if self.any_token:
            if not any(t in self.any_token for t in tokens):
                return False
        return True


def _segments(cmdline: str) -> list[list[str]]:
    """Tokenized shell segments, split at ';', '&&', '||', '|', '&'."""
    out: list[list[str]] = []
    for part in re.split(r"[;&|]+", cmdline):
        part = part.strip()
        if not part:
            continue
        try:
            tokens = shlex.split(part, posix=True)
        except ValueError:
            tokens = part.split()
        if tokens:
            out.append(tokens)
    return out


def load_deny_rules(doc: dict) -> list[DenyRule]:
    rules = []
    for r in doc.get("rules", []):
        m = r.get("match", {})
        rules.append(DenyRule(
            rule_id=r["id"],
            reason=r["reason"],
            command=tuple(m.get("command", [])),
            flags=tuple(m.get("flags", [])),
            any_arg=tuple(m.get("any_arg", [])),
            any_token=tuple(m.get("any_token", [])),
            pattern=m.get("pattern"),
        ))
    return rules


def default_deny_rules() -> list[DenyRule]:
    from . import assets

    return load_deny_rules(assets.load_json("deny_rules.json"))


def audit_command(cmdline: str, rules: list[DenyRule] | None = None) -> Verdict:
    """Deny when the command matches any configured dangerous idiom.

    Matching is order-insensitive where the idiom is (flags and arguments
    may appear in any order) and case-sensitive on command words.
    """
    if rules is None:
        rules = default_deny_rules()
    segments = _segments(cmdline)
    for rule in rules:
        if rule.matches(cmdline, segments):
            return Verdict.deny(rule.reason)
    return Verdict.allow()


# ── Standard layer factories ─────────────────────────────────────────

def make_attribution_layer(keystore: KeyStore, layer_id: str = "attribution") -> PolicyLayer:
    """Deny any action whose carrying event is absent or unverifiable."""

    def check(a: ActionSpec, c: ActionContext) -> Verdict:
        if c.event is None:
            return Verdict.deny("unattributed action")
        result = verify_attribution(c.event, keystore)
        if not result:
            return Verdict.deny("unattributed action")
        return Verdict.allow()

    return PolicyLayer(layer_id, check)


def make_privilege_layer(
    baseline: Mapping[str, PrivilegeSet],
    node_owner: Mapping[str, str],
    social: SocialGraph | None = None,
    layer_id: str = "privileges",
) -> PolicyLayer:
    """Bound the action's capabilities by owner baseline, intersected with
    the requester's trust-edge grant for external origins."""

    def check(a: ActionSpec, c: ActionContext) -> Verdict:
        owner = node_owner.get(c.node_id)
        if owner is None:
            return Verdict.deny(f"node {c.node_id!r} has no owner baseline")
        own = baseline.get(owner)
        if own is None:
            return Verdict.deny(f"no baseline privileges for owner {owner!r}")
        if c.origin is Origin.EXTERNAL:
            requester = c.requester.user_id if c.requester else None
            granted: frozenset[str] | None = None
            if social is not None and requester is not None and c.channel_id:
                granted = social.grant_for(owner, requester, c.channel_id)
            if granted is None:
                granted = frozenset()
            eff = effective_privileges(own, PrivilegeSet(granted))
        else:
            eff = own
        missing = sorted(set(a.required_capabilities) - eff.privileges)
        if missing:
            return Verdict.deny(
                "insufficient privileges: missing "
                f"{', '.join(missing)} (effective {sorted(eff.privileges)})")
        return Verdict.allow()

    return PolicyLayer(layer_id, check)


def make_sandbox_layer(layer_id: str = "sandbox") -> PolicyLayer:
    def check(a: ActionSpec, c: ActionContext) -> Verdict:
        return sandbox_check(a.effect, c.workspace_root)

    return PolicyLayer(layer_id, check)


def make_audit_layer(rules: list[DenyRule] | None = None,
                     layer_id: str = "command_audit") -> PolicyLayer:
    resolved = rules if rules is not None else default_deny_rules()

    def check(a: ActionSpec, c: ActionContext) -> Verdict:
        if a.effect.kind is not EffectKind.EXEC:
            return Verdict.allow()
        return audit_command(a.effect.target, resolved)

    return PolicyLayer(layer_id, check)


def standard_layers(
    keystore: KeyStore,
    baseline: Mapping[str, PrivilegeSet],
    node_owner: Mapping[str, str],
    social: SocialGraph | None = None,
    deny_rules: list[DenyRule] | None = None,
    extra: list[PolicyLayer] | None = None,
) -> list[PolicyLayer]:
    """Default pipeline order: attribution, privileges, sandbox, command
    audit, then any per-node local rules. Order affects only the report
    layout; the overall verdict is a conjunction."""
    layers = [
        make_attribution_layer(keystore),
        make_privilege_layer(baseline, node_owner, social),
        make_sandbox_layer(),
        make_audit_layer(deny_rules),
    ]
    if extra:
        layers.extend(extra)
    return layers


def edge_verify(
    node: DeviceNode,
    a: ActionSpec,
    c: ActionContext,
    local_layers: list[PolicyLayer],
) -> PolicyDecision:
    """Independent re-verification at the receiving node.

    The context is rebased to the node's own workspace root before
    evaluation, so edge denial cannot be bypassed by a hub allow.
    """
    from dataclasses import replace

    rebased = replace(c, node_id=node.node_id, workspace_root=node.workspace_root)
    return evaluate_safe(a, rebased, local_layers)


# ── Policy configuration file ────────────────────────────────────────

def load_policy_config(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise PolicyConfigError("policy config must be a JSON object")
    return doc


def layers_from_config(
    doc: dict,
    keystore: KeyStore | None = None,
    node_owner: Mapping[str, str] | None = None,
    social: SocialGraph | None = None,
) -> list[PolicyLayer]:
    """Build a pipeline from the config's ordered "layers" list.

    Known kinds: attribution, privileges, sandbox, command_audit. The
    config may also carry "deny_rules" and "baseline_privileges".
    """
    baseline = {
        user: PrivilegeSet(frozenset(caps))
        for user, caps in doc.get("baseline_privileges", {}).items()
    }
    rules = load_deny_rules({"rules": doc["deny_rules"]}) if "deny_rules" in doc else None
    layers: list[PolicyLayer] = []
    for entry in doc.get("layers", []):
        kind = entry.get("kind")
        layer_id = entry.get("layer_id", kind)
        if kind == "attribution":
            if keystore is None:
                raise PolicyConfigError("attribution layer requires a key store")
            layers.append(make_attribution_layer(keystore, layer_id))
        elif kind == "privileges":
            layers.append(make_privilege_layer(baseline, node_owner or {}, social, layer_id))
        elif kind == "sandbox":
            layers.append(make_sandbox_layer(layer_id))
        elif kind == "command_audit":
            layers.append(make_audit_layer(rules, layer_id))
        else:
            raise PolicyConfigError(f"unknown layer kind {kind!r}")
    return layers
