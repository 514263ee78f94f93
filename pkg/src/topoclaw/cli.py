"""Command-line interface.

Subcommands: run, verify, place, policy check, cron next, skills
list/resolve, template pack/install. Exit codes for `run` and `verify`:
0 ok, 2 scenario error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime
from pathlib import Path

from .errors import ScenarioError, TopoClawError
from . import governance, placement, scheduler, skills, taskgraph, topology
from .runtime import (
    DeploymentMode,
    Transcript,
    load_scenario,
    run_scenario,
    verify_transcript,
)
from .runtime.scenario import bundled_scenario_ids, load_bundled_scenario


def _read_json(path: str) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def cmd_run(args) -> int:
    try:
        if Path(args.scenario).exists():
            scenario = load_scenario(args.scenario)
        else:
            scenario = load_bundled_scenario(args.scenario)
        mode = DeploymentMode(args.mode) if args.mode else scenario.mode
        result = run_scenario(scenario, mode, run_root=args.workdir, solver=args.solver)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except TopoClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    data = result.transcript.to_json_bytes()
    if args.transcript:
        Path(args.transcript).write_bytes(data)
        print(f"transcript written to {args.transcript} "
              f"({len(result.transcript.records)} records)")
    else:
        sys.stdout.write(data.decode("utf-8"))
    violations = verify_transcript(result.transcript)
    if violations:
        for v in violations:
            print(f"invariant violation: {v}", file=sys.stderr)
        return 3
    return 0


def cmd_verify(args) -> int:
    try:
        transcript = Transcript.load(args.transcript)
    except TopoClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    violations = verify_transcript(transcript)
    if violations:
        for v in violations:
            print(f"invariant violation: {v}", file=sys.stderr)
        return 3
    print(f"ok: {len(transcript.records)} records, all invariants hold")
    return 0


def cmd_place(args) -> int:
    g, _ = topology.load_graph_document(args.graph)
    dag = taskgraph.load_dag(args.dag)
    out: dict = {}
    try:
        if args.solver in ("exhaustive", "both"):
            opt = placement.place_exhaustive(dag, g)
            out = {"assignment": opt.as_dict(), "total_cost": opt.total_cost,
                   "solver": "exhaustive"}
        if args.solver in ("greedy", "both"):
            greedy = placement.place_greedy(dag, g)
            if args.solver == "both":
                out["optimality_gap"] = placement.optimality_gap(greedy, opt)
                out["greedy_cost"] = greedy.total_cost
            else:
                out = {"assignment": greedy.as_dict(), "total_cost": greedy.total_cost,
                       "solver": "greedy"}
    except TopoClawError as exc:
        print(f"placement error: {exc}", file=sys.stderr)
        return 1
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def cmd_policy_check(args) -> int:
    action_doc = _read_json(args.action)
    context_doc = _read_json(args.context)
    action = taskgraph.ActionSpec(
        action_id=action_doc["action_id"],
        required_capabilities=frozenset(action_doc.get("required_capabilities", [])),
        effect=taskgraph.EffectDescriptor(
            taskgraph.EffectKind(action_doc["effect"]["kind"]),
            action_doc["effect"].get("target", "")),
        params=tuple(sorted((k, str(v))
                     for k, v in action_doc.get("params", {}).items())),
    )
    requester = None
    if "requester" in context_doc:
        r = context_doc["requester"]
        requester = topology.Identity(r["user_id"], r.get("display_name", ""),
                                      r.get("key_ref", ""))
    context = governance.ActionContext(
        origin=governance.Origin(context_doc["origin"]),
        node_id=context_doc.get("node_id", ""),
        workspace_root=context_doc["workspace_root"],
        requester=requester,
        channel_id=context_doc.get("channel_id"),
    )
    if args.config:
        doc = governance.load_policy_config(args.config)
        layers = governance.layers_from_config(doc)
    else:
        layers = [governance.make_sandbox_layer(), governance.make_audit_layer()]
    decision = governance.evaluate_safe(action, context, layers)
    print(json.dumps(decision.as_dict(), indent=2))
    return 0 if decision.overall else 1


def cmd_cron_next(args) -> int:
    try:
        spec = scheduler.parse_cron(args.spec)
        after_ms = scheduler.datetime_to_ms(datetime.fromisoformat(args.after))
        fire = scheduler.next_fire(spec, after_ms)
    except (TopoClawError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(scheduler.ms_to_datetime(fire).isoformat())
    return 0


def cmd_skills_list(args) -> int:
    registry = skills.builtin_registry()
    for m in registry.manifests():
        print(f"{m.name} {m.version}  [{m.category.value}/{m.required_env.value}]  "
              f"verb={m.verb}  caps={','.join(sorted(m.required_capabilities))}")
    return 0


def cmd_skills_resolve(args) -> int:
    registry = skills.builtin_registry()
    g, _ = topology.load_graph_document(args.graph)
    try:
        m = registry.by_name(args.name)
        node = skills.resolve_skill_node(m, g)
    except TopoClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(node)
    return 0


def cmd_template_pack(args) -> int:
    doc = _read_json(args.file)
    template = skills.template_from_record(doc)
    record = skills.serialize_template(template)
    if args.out:
        Path(args.out).write_bytes(record + b"\n")
    else:
        sys.stdout.write(record.decode("utf-8") + "\n")
    return 0


def cmd_template_install(args) -> int:
    record = Path(args.file).read_bytes().strip()
    g, _ = topology.load_graph_document(args.graph)
    registry = skills.builtin_registry()
    try:
        bound = skills.instantiate_template(record, g, registry)
    except TopoClawError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"installed {bound.template.template_id} "
          f"(author {bound.template.author_user_id})")
    for name, node in bound.bindings:
        print(f"  {name} -> {node}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="topoclaw")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and emit its transcript")
    p.add_argument("--scenario", required=True,
                   help=f"scenario file or bundled id ({', '.join(bundled_scenario_ids())})")
    p.add_argument("--mode", choices=[m.value for m in DeploymentMode], default=None)
    p.add_argument("--transcript", help="write the transcript to this path")
    p.add_argument("--solver", choices=["greedy", "exhaustive"], default="greedy")
    p.add_argument("--workdir", help="directory for materialized workspaces")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="re-check a transcript's invariants offline")
    p.add_argument("--transcript", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("place", help="solve a placement instance")
    p.add_argument("--graph", required=True)
    p.add_argument("--dag", required=True)
    p.add_argument("--solver", choices=["exhaustive", "greedy", "both"], default="exhaustive")
    p.add_argument("--out")
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("policy", help="policy tools")
    psub = p.add_subparsers(dest="policy_command", required=True)
    pc = psub.add_parser("check", help="evaluate one action against the pipeline")
    pc.add_argument("--action", required=True)
    pc.add_argument("--context", required=True)
    pc.add_argument("--config", help="policy configuration JSON")
    pc.set_defaults(func=cmd_policy_check)

    p = sub.add_parser("cron", help="cron tools")
    csub = p.add_subparsers(dest="cron_command", required=True)
    cn = csub.add_parser("next", help="next fire time after a given instant")
    cn.add_argument("spec")
    cn.add_argument("--after", required=True, help="ISO time, e.g. 2026-01-01T10:02")
    cn.set_defaults(func=cmd_cron_next)

    p = sub.add_parser("skills", help="skill registry tools")
    ssub = p.add_subparsers(dest="skills_command", required=True)
    sl = ssub.add_parser("list")
    sl.set_defaults(func=cmd_skills_list)
    sr = ssub.add_parser("resolve")
    sr.add_argument("name")
    sr.add_argument("--graph", required=True)
    sr.set_defaults(func=cmd_skills_resolve)

    p = sub.add_parser("template", help="assistant template tools")
    tsub = p.add_subparsers(dest="template_command", required=True)
    tp = tsub.add_parser("pack")
    tp.add_argument("file")
    tp.add_argument("--out")
    tp.set_defaults(func=cmd_template_pack)
    ti = tsub.add_parser("install")
    ti.add_argument("file")
    ti.add_argument("--graph", required=True)
    ti.set_defaults(func=cmd_template_install)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
