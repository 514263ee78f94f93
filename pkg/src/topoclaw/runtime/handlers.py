"""Deterministic stub handlers for the built-in skills.

Handlers realize an allowed action's effect against the node's virtual
workspace or the bus; none of them touch the network or run real
commands. Dispatch is by required capability (each built-in skill owns a
unique one); actions without a matching handler fall back to a generic
interpretation of their effect kind.
"""

from __future__ import annotations

import json
from typing import TYPE_CHECKING, Callable

from ..taskgraph import ActionSpec, EffectKind

if TYPE_CHECKING:
    from .core import ExecutionSite


def _generic_read(site: "ExecutionSite", action: ActionSpec) -> str:
    ws = site.workspace
    target = action.effect.target
    listing = ws.walk_files(target)
    if listing is not None:
        return f"listed {target}: {', '.join(listing)}" if listing else f"listed {target}: empty"
    content = ws.read(target)
    if content is None:
        return f"no content at {target}"
    return f"read {target} ({len(content.encode('utf-8'))} bytes)"


def _generic_write(site: "ExecutionSite", action: ActionSpec) -> str:
    content = action.param("content", "") or ""
    n = site.workspace.write(action.effect.target, content)
    return f"wrote {action.effect.target} ({n} bytes)"


def _generic_send(site: "ExecutionSite", action: ActionSpec) -> str:
    content = action.param("content", "") or ""
    return site.send(action.effect.target, content)


def _generic_exec(site: "ExecutionSite", action: ActionSpec) -> str:
    return f"exec simulated: {action.effect.target}"


def handle_search_files(site: "ExecutionSite", action: ActionSpec) -> str:
    ws = site.workspace
    target = action.effect.target
    query = action.param("query", "") or ""
    files = ws.walk_files(target)
    if files is None:
        content = ws.read(target)
        if content is None:
            return f"no matches under {target}"
        return f"read {target} ({len(content.encode('utf-8'))} bytes)"
    hits = [f for f in files if query in f]
    return f"found: {', '.join(hits)}" if hits else f"no matches under {target}"


def handle_schedule_cron(site: "ExecutionSite", action: ActionSpec) -> str:
    entry = {
        "task_id": action.param("task_id", action.action_id),
        "cron": action.param("cron", "0 9 * * *"),
        "owner": site.owner,
        "enabled": True,
        "intent": {"intent_id": f"cron-{action.action_id}", "steps": []},
    }
    existing = site.workspace.read("schedule.json")
    table = json.loads(existing) if existing else []
    table = [t for t in table if t.get("task_id") != entry["task_id"]]
    table.append(entry)
    table.sort(key=lambda t: t["task_id"])
    site.workspace.write("schedule.json", json.dumps(table, indent=2, sort_keys=True) + "\n")
    return f"scheduled {entry['task_id']} ({entry['cron']})"


def handle_send_sms(site: "ExecutionSite", action: ActionSpec) -> str:
    to = action.param("to", "") or ""
    text = action.param("text", "") or ""
    return site.send(to, text, kind="sms")


def handle_sync_clipboard(site: "ExecutionSite", action: ActionSpec) -> str:
    content = action.param("content", "") or ""
    site.workspace.write("clipboard.txt", content)
    return f"clipboard synced ({len(content)} chars)"


def handle_assert_twin_identity(site: "ExecutionSite", action: ActionSpec) -> str:
    assertion = json.dumps({
        "type": "identity_assertion",
        "human_id": site.event.human_id,
        "twin_id": site.event.twin_id,
        "delegation_chain": list(site.event.delegation_chain),
    }, sort_keys=True, separators=(",", ":"))
    return site.send(action.effect.target, assertion)


def handle_manage_contacts(site: "ExecutionSite", action: ActionSpec) -> str:
    name = action.param("name", "") or ""
    details = action.param("details", "") or ""
    existing = site.workspace.read("contacts.md") or ""
    entries = {}
    for line in existing.splitlines():
        key, sep, value = line.partition(":")
        if sep:
            entries[key.strip()] = value.strip()
    entries[name] = details
    text = "".join(f"{k}: {v}\n" for k, v in sorted(entries.items()))
    site.workspace.write("contacts.md", text)
    return f"contact upserted: {name}"


def handle_edit_memory(site: "ExecutionSite", action: ActionSpec) -> str:
    key = action.param("key", "") or ""
    value = action.param("value", "") or ""
    site.remember(f"{key}: {value}")
    return f"remembered {key}"


def handle_author_skill(site: "ExecutionSite", action: ActionSpec) -> str:
    name = action.param("name", "new_skill") or "new_skill"
    skeleton = {
        "name": name,
        "version": "0.1.0",
        "description": action.param("description", "") or "",
        "category": "utility",
        "required_env": "any",
        "required_capabilities": [],
        "verb": name,
        "entry": f"workspace.{name}",
    }
    site.workspace.write(f"skills/{name}/manifest.json",
                         json.dumps(skeleton, indent=2, sort_keys=True) + "\n")
    return f"authored skill skeleton {name}"


def handle_list_skills(site: "ExecutionSite", action: ActionSpec) -> str:
    names = [m.name for m in site.registry.manifests()]
    return f"skills: {', '.join(names)}"


# Built-in handler dispatch: unique capability -> handler.
HANDLERS: dict[str, Callable[["ExecutionSite", ActionSpec], str]] = {
    "fs.search": handle_search_files,
    "cron.schedule": handle_schedule_cron,
    "sms.send": handle_send_sms,
    "clipboard.sync": handle_sync_clipboard,
    "identity.assert": handle_assert_twin_identity,
    "contacts.manage": handle_manage_contacts,
    "memory.edit": handle_edit_memory,
    "skill.author": handle_author_skill,
    "skill.list": handle_list_skills,
}

GENERIC = {
    EffectKind.READ: _generic_read,
    EffectKind.WRITE: _generic_write,
    EffectKind.SEND: _generic_send,
    EffectKind.EXEC: _generic_exec,
}


def execute_action(site: "ExecutionSite", action: ActionSpec) -> str:
    for cap in sorted(action.required_capabilities):
        handler = HANDLERS.get(cap)
        if handler is not None:
            return handler(site, action)
    if action.effect.kind is EffectKind.NOOP:
        return "noop"
    return GENERIC[action.effect.kind](site, action)
