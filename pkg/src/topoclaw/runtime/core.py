"""The cluster simulator: hub + per-node enforcement + bus + memory + cron.

Scenarios run on a single logical event loop: stimuli are processed in
time order, bus deliveries drain FIFO at the current simulated time, and
cron tasks fire between stimuli in chronological order. Every action
follows the same pipeline regardless of origin: compile, place on the
acting user's device graph, wrap as an attributed event, evaluate at the
hub, independently re-verify at the assigned node, then execute (or log
the denial). Transcripts contain only virtual paths and deterministic
content, so identical scenario + mode yields byte-identical output.
"""

from __future__ import annotations

import json
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import PlacementError, ScenarioError, TopoClawError
from ..eventbus import (
    AttributedEvent,
    Envelope,
    KeyStore,
    Role,
    SequenceCounters,
    attribute,
    broadcast,
    delivery_id_for,
    derive_demo_secret,
    envelope_to_dict,
    system_channel_for,
)
from ..governance import (
    ActionContext,
    Origin,
    PolicyDecision,
    PrivilegeSet,
    edge_verify,
    evaluate_safe,
    standard_layers,
)
from ..memory import MemoryState, Observation, append_observation, empty_state
from ..placement import Placement, place_exhaustive, place_greedy
from ..scheduler import ScheduledTask, is_due, next_fire, tasks_from_dict
from ..scheduler import tick as scheduler_tick
from ..skills import SkillRegistry, builtin_registry
from ..taskgraph import (
    ActionSpec,
    DependencyEdge,
    EffectDescriptor,
    EffectKind,
    IntentScript,
    IntentStep,
    TaskDag,
    compile_intent,
    intent_from_dict,
    topo_order,
)
from ..topology import DeviceNode, Identity
from .handlers import execute_action
from .scenario import DeploymentMode, Scenario, Stimulus, check_mode
from .transcript import Transcript
from .workspace import VirtualWorkspace


def twin_of(user_id: str) -> str:
    return f"{user_id}.twin"


def action_to_dict(a: ActionSpec) -> dict:
    return {
        "action_id": a.action_id,
        "required_capabilities": sorted(a.required_capabilities),
        "effect": {"kind": a.effect.kind.value, "target": a.effect.target},
        "params": dict(a.params),
    }


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


@dataclass
class NodeRuntime:
    node: DeviceNode
    owner: str
    workspace: VirtualWorkspace
    memory: MemoryState
    local_layers: list

    def consolidate(self, obs: Observation) -> None:
        self.memory = append_observation(self.memory, obs, self.workspace.real_dir)


@dataclass(frozen=True)
class ActionOutcome:
    action_id: str
    node_id: str
    hub_decision: PolicyDecision | None
    edge_decision: PolicyDecision | None
    executed: bool
    detail: str
    delivery_id: str | None = None


@dataclass
class ExecutionSite:
    """What a skill handler may touch while realizing an effect."""

    runtime: "ClusterRuntime"
    node: NodeRuntime
    event: AttributedEvent
    pending_directive: str | None = None

    @property
    def workspace(self) -> VirtualWorkspace:
        return self.node.workspace

    @property
    def owner(self) -> str:
        return self.node.owner

    @property
    def registry(self) -> SkillRegistry:
        return self.runtime.registry

    def remember(self, directive: str) -> None:
        self.pending_directive = directive

    def send(self, target: str, content: str, kind: str = "msg") -> str:
        return self.runtime._send_payload(self, target, content, kind)


@dataclass(frozen=True)
class RunResult:
    transcript: Transcript
    states: dict[str, MemoryState]
    run_dir: Path
    outcomes: list[ActionOutcome]


class ClusterRuntime:
    def __init__(
        self,
        scenario: Scenario,
        mode: DeploymentMode,
        run_root: str | Path | None = None,
        solver: str = "greedy",
    ):
        check_mode(scenario, mode)
        if solver not in ("greedy", "exhaustive"):
            raise ScenarioError(f"unknown solver {solver!r}")
        self.scenario = scenario
        self.mode = mode
        self.solver = solver
        self.social = scenario.social
        self.registry = builtin_registry()
        self.verb_table = self.registry.verb_table()
        self.counters = SequenceCounters()
        self.now = 0
        self._msg_seq = 0
        self._req_seq = 0
        self._open_proposals: dict[str, str] = {}
        self._pending: list[Envelope] = []
        self.outcomes: list[ActionOutcome] = []

        if run_root is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="topoclaw-run-")
            self.run_dir = Path(self._tmp.name)
        else:
            self._tmp = None
            self.run_dir = Path(run_root)
            self.run_dir.mkdir(parents=True, exist_ok=True)

        self.keystore = KeyStore()
        keyring: dict[str, str] = {}
        for user in self.social.users:
            secret = derive_demo_secret(user.user_id)
            self.keystore.register(user, secret)
            keyring[user.user_id] = secret.hex()

        self.hub_of: dict[str, str] = {}
        self.node_owner: dict[str, str] = {}
        self.nodes: dict[str, NodeRuntime] = {}
        baseline_default: dict[str, set[str]] = {}
        for user_id, graph in scenario.device_graphs:
            self.hub_of[user_id] = min(n.node_id for n in graph.nodes)
            caps: set[str] = set()
            for node in graph.nodes:
                self.node_owner[node.node_id] = user_id
                caps.update(node.profile.capabilities)
            baseline_default[user_id] = caps

        overrides = dict(scenario.baseline_privileges)
        self.baseline: dict[str, PrivilegeSet] = {}
        for user_id, caps in sorted(baseline_default.items()):
            chosen = overrides.get(user_id)
            self.baseline[user_id] = PrivilegeSet(
                frozenset(chosen) if chosen is not None else frozenset(caps))

        self.hub_layers = standard_layers(
            self.keystore, self.baseline, self.node_owner, self.social)
        initial_files = {node_id: dict(files) for node_id, files in scenario.workspaces}
        for user_id, graph in scenario.device_graphs:
            for node in graph.nodes:
                ws = VirtualWorkspace(node.workspace_root,
                                      self.run_dir / "workspaces" / node.node_id)
                for relpath, content in sorted(initial_files.get(node.node_id, {}).items()):
                    ws.write(relpath, content)
                self.nodes[node.node_id] = NodeRuntime(
                    node=node,
                    owner=user_id,
                    workspace=ws,
                    memory=empty_state(scenario.memory_window),
                    local_layers=standard_layers(
                        self.keystore, self.baseline, self.node_owner, self.social),
                )

        self.tasks: list[ScheduledTask] = []
        for node_id in sorted(self.nodes):
            raw = self.nodes[node_id].workspace.read("schedule.json")
            if raw:
                try:
                    self.tasks.extend(tasks_from_dict(json.loads(raw)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ScenarioError(f"bad schedule.json on {node_id}: {exc}") from None

        self.transcript = Transcript(scenario.scenario_id, mode.value, solver, keyring)

    # ── Top-level loop ───────────────────────────────────────────────

    def run(self) -> RunResult:
        for stim in self.scenario.script:
            self._advance_to(stim.at)
            self._process_stimulus(stim)
            self._drain()
        return RunResult(
            transcript=self.transcript,
            states={nid: rt.memory for nid, rt in sorted(self.nodes.items())},
            run_dir=self.run_dir,
            outcomes=list(self.outcomes),
        )

    def _advance_to(self, target: int) -> None:
        if target < self.now:
            raise ScenarioError(f"time must not regress: {target} < {self.now}")
        while True:
            fire_times = []
            for task in self.tasks:
                if not task.enabled:
                    continue
                try:
                    nf = next_fire(task.spec, self.now)
                except TopoClawError:
                    continue
                if nf <= target:
                    fire_times.append(nf)
            if not fire_times:
                break
            t = min(fire_times)
            self.now = t
            for task in sorted(self.tasks, key=lambda t: t.task_id):
                if task.enabled and is_due(task.spec, t):
                    self.transcript.add(t, self.hub_of[task.owner], "cron_fire",
                                        task_id=task.task_id)
                    self._consolidate(self.hub_of[task.owner],
                                      Observation(t, "system", f"cron fire {task.task_id}"))
            scheduler_tick(t, self.tasks, self)
            self._drain()
        self.now = target

    def _process_stimulus(self, stim: Stimulus) -> None:
        self.transcript.add(self.now, self.hub_of.get(stim.actor, ""), "stimulus",
                            actor=stim.actor, kind=stim.kind, body=stim.body)
        if stim.kind == "clock_advance":
            self._advance_to(stim.body["to"])
            return
        if stim.kind == "intent":
            script = intent_from_dict(stim.body)
            hub = self.hub_of[stim.actor]
            self._consolidate(hub, Observation(self.now, "user_msg",
                                               f"intent {script.intent_id}"))
            self.submit_intent(stim.actor, script, origin=Origin.USER)
            return
        # kind == "message"
        channel = stim.body.get("space_id") or stim.body.get("channel_id")
        if not channel:
            raise ScenarioError("message stimulus needs space_id or channel_id")
        payload = stim.body.get("payload", "")
        if isinstance(payload, dict) and payload.get("type") == "meeting_proposal" \
                and "slots" not in payload:
            payload = dict(payload)
            payload["slots"] = self._read_slots(stim.actor)
        content = _canonical(payload) if isinstance(payload, dict) else str(payload)
        hub = self.hub_of[stim.actor]
        self._consolidate(hub, Observation(self.now, "user_msg",
                                           f"message to {channel}: {content}"))
        self._submit_message(stim.actor, channel, content, origin=Origin.USER)

    # ── Intent and message submission ────────────────────────────────

    def submit_intent(
        self,
        user_id: str,
        script: IntentScript,
        *,
        origin: Origin,
        requester: Identity | None = None,
        channel_id: str | None = None,
    ) -> list[ActionOutcome]:
        dag = compile_intent(script, self.verb_table)
        return self._run_dag(user_id, dag, origin=origin, requester=requester,
                             channel_id=channel_id, intent_id=script.intent_id)

    def submit_scheduled(self, owner: str, script: IntentScript, now: int) -> list[ActionOutcome]:
        return self.submit_intent(owner, script, origin=Origin.SCHEDULER)

    def _submit_message(self, user_id: str, channel: str, content: str, *,
                        origin: Origin, requester: Identity | None = None) -> list[ActionOutcome]:
        self._msg_seq += 1
        action = ActionSpec(
            action_id=f"send{self._msg_seq:04d}",
            required_capabilities=frozenset({"msg.send"}),
            effect=EffectDescriptor(EffectKind.SEND, channel),
            params=(("content", content),),
        )
        dag = TaskDag((action,), ())
        outcomes = self._run_dag(user_id, dag, origin=origin, requester=requester,
                                 channel_id=channel, intent_id=None)
        if outcomes and outcomes[0].executed:
            try:
                doc = json.loads(content)
            except json.JSONDecodeError:
                doc = None
            if isinstance(doc, dict) and doc.get("type") == "meeting_proposal":
                self._open_proposals[channel] = user_id
        return outcomes

    def _run_dag(
        self,
        user_id: str,
        dag: TaskDag,
        *,
        origin: Origin,
        requester: Identity | None,
        channel_id: str | None,
        intent_id: str | None,
    ) -> list[ActionOutcome]:
        user = self.social.user(user_id)
        graph = self.scenario.graph_for(user_id)
        hub = self.hub_of[user_id]
        solve = place_exhaustive if self.solver == "exhaustive" else place_greedy
        try:
            placement = solve(dag, graph)
        except PlacementError as exc:
            self.transcript.add(self.now, hub, "outcome", action_id="",
                                status="placement_error", detail=str(exc))
            outcome = ActionOutcome("", "", None, None, False, f"placement error: {exc}")
            self.outcomes.append(outcome)
            return [outcome]
        if intent_id is not None:
            self.transcript.add(self.now, hub, "placement", intent_id=intent_id,
                                assignment=placement.as_dict(),
                                total_cost=placement.total_cost, solver=self.solver)
        assignment = placement.as_dict()
        denied: set[str] = set()
        outcomes = []
        for aid in topo_order(dag):
            action = dag.action(aid)
            blocked_preds = sorted(d.from_action for d in dag.deps
                                   if d.to_action == aid and d.from_action in denied)
            if blocked_preds:
                denied.add(aid)
                self.transcript.add(self.now, assignment[aid], "outcome", action_id=aid,
                                    status="skipped",
                                    detail=f"predecessor denied: {', '.join(blocked_preds)}")
                outcomes.append(ActionOutcome(aid, assignment[aid], None, None, False,
                                              "skipped: predecessor denied"))
                continue
            outcome = self._run_action(user, action, dag, assignment, origin=origin,
                                       requester=requester, channel_id=channel_id)
            if not outcome.executed:
                denied.add(aid)
            outcomes.append(outcome)
        self.outcomes.extend(outcomes)
        return outcomes

    def _run_action(
        self,
        user: Identity,
        action: ActionSpec,
        dag: TaskDag,
        assignment: dict[str, str],
        *,
        origin: Origin,
        requester: Identity | None,
        channel_id: str | None,
    ) -> ActionOutcome:
        aid = action.action_id
        node_id = assignment[aid]
        node_rt = self.nodes[node_id]
        hub = self.hub_of[user.user_id]
        channel = system_channel_for(node_id)
        event = attribute(_canonical(action_to_dict(action)).encode("utf-8"),
                          user, twin_of(user.user_id), Role.OWNER, self.keystore,
                          channel_id=channel, counters=self.counters)
        envelope = Envelope(event, src_node=hub, dst_node=node_id, channel_id=channel,
                            delivery_id=delivery_id_for(event, node_id))
        self.transcript.add(self.now, hub, "event", direction="send",
                            envelope=envelope_to_dict(envelope))
        ctx = ActionContext(origin=origin, node_id=node_id,
                            workspace_root=node_rt.node.workspace_root,
                            requester=requester, channel_id=channel_id, event=event)
        hub_decision = evaluate_safe(action, ctx, self.hub_layers)
        self.transcript.add(self.now, hub, "decision", stage="hub", action_id=aid,
                            action=action_to_dict(action), origin=origin.value,
                            decision=hub_decision.as_dict(),
                            delivery_id=envelope.delivery_id)
        if not hub_decision.overall:
            reasons = "; ".join(hub_decision.deny_reasons())
            self._consolidate(hub, Observation(self.now, "system", f"denied {aid}: {reasons}"))
            self.transcript.add(self.now, hub, "outcome", action_id=aid, status="denied_hub",
                                detail=reasons)
            return ActionOutcome(aid, node_id, hub_decision, None, False,
                                 f"hub denied: {reasons}", envelope.delivery_id)
        self.transcript.add(self.now, node_id, "event", direction="deliver",
                            envelope=envelope_to_dict(envelope))
        edge_decision = edge_verify(node_rt.node, action, ctx, node_rt.local_layers)
        self.transcript.add(self.now, node_id, "decision", stage="edge", action_id=aid,
                            action=action_to_dict(action), origin=origin.value,
                            decision=edge_decision.as_dict(),
                            delivery_id=envelope.delivery_id)
        if not edge_decision.overall:
            reasons = "; ".join(edge_decision.deny_reasons())
            self._consolidate(node_id, Observation(self.now, "system",
                                                   f"denied {aid}: {reasons}"))
            self.transcript.add(self.now, node_id, "outcome", action_id=aid,
                                status="denied_edge", detail=reasons)
            return ActionOutcome(aid, node_id, hub_decision, edge_decision, False,
                                 f"edge denied: {reasons}", envelope.delivery_id)

        for dep in dag.deps:
            if dep.to_action == aid and dep.payload_units > 0 \
                    and assignment[dep.from_action] != node_id:
                self.transcript.add(self.now, node_id, "transfer",
                                    from_node=assignment[dep.from_action],
                                    to_node=node_id,
                                    payload_units=dep.payload_units,
                                    dependency=[dep.from_action, aid])

        site = ExecutionSite(runtime=self, node=node_rt, event=event)
        result = execute_action(site, action)
        if action.effect.kind is not EffectKind.NOOP:
            self.transcript.add(self.now, node_id, "effect", action_id=aid,
                                effect={"kind": action.effect.kind.value,
                                        "target": action.effect.target},
                                result=result, delivery_id=envelope.delivery_id)
        self._consolidate(node_id, Observation(self.now, "action_result",
                                               f"{aid}: {result}",
                                               remember_directive=site.pending_directive))
        self.transcript.add(self.now, node_id, "outcome", action_id=aid,
                            status="executed", detail=result)
        return ActionOutcome(aid, node_id, hub_decision, edge_decision, True, result,
                             envelope.delivery_id)

    # ── Social sends and deliveries ──────────────────────────────────

    def _send_payload(self, site: ExecutionSite, target: str, content: str,
                      kind: str = "msg") -> str:
        if kind == "sms":
            return f"sms to {target}: {content}"
        user = self.social.user(site.owner)
        space = next((s for s in self.social.spaces if s.space_id == target), None)
        if space is not None:
            event = attribute(content.encode("utf-8"), user, twin_of(user.user_id),
                              Role.OWNER, self.keystore, channel_id=target,
                              counters=self.counters)
            envelopes = broadcast(space, event, self.social, self.keystore,
                                  home_nodes=self.hub_of, src_node=site.node.node.node_id)
            for env in envelopes:
                self.transcript.add(self.now, env.src_node, "event", direction="send",
                                    envelope=envelope_to_dict(env))
                self._pending.append(env)
            return f"sent to space {target} ({len(envelopes)} recipients)"
        peers = sorted(
            {e.to_user for e in self.social.edges
             if e.from_user == site.owner and e.channel_id == target}
            | {e.from_user for e in self.social.edges
               if e.to_user == site.owner and e.channel_id == target})
        if peers:
            event = attribute(content.encode("utf-8"), user, twin_of(user.user_id),
                              Role.OWNER, self.keystore, channel_id=target,
                              counters=self.counters)
            for peer in peers:
                env = Envelope(event, src_node=site.node.node.node_id,
                               dst_node=self.hub_of[peer], channel_id=target,
                               delivery_id=delivery_id_for(event, peer))
                self.transcript.add(self.now, env.src_node, "event", direction="send",
                                    envelope=envelope_to_dict(env))
                self._pending.append(env)
            return f"sent to channel {target} ({len(peers)} peers)"
        return f"sent to {target}"

    def _drain(self) -> None:
        while self._pending:
            env = self._pending.pop(0)
            self._deliver(env)

    def _deliver(self, env: Envelope) -> None:
        node_rt = self.nodes[env.dst_node]
        self.transcript.add(self.now, env.dst_node, "event", direction="deliver",
                            envelope=envelope_to_dict(env))
        content = env.event.payload_m.decode("utf-8", errors="replace")
        self._consolidate(env.dst_node, Observation(
            self.now, "twin_msg",
            f"from {env.event.human_id} on {env.channel_id}: {content}"))
        try:
            doc = json.loads(content)
        except json.JSONDecodeError:
            return
        if isinstance(doc, dict):
            self._react(node_rt.owner, env, doc)

    def _react(self, recipient: str, env: Envelope, payload: dict) -> None:
        sender = self.social.user(env.event.human_id)
        channel = env.channel_id
        ptype = payload.get("type")
        if ptype == "meeting_proposal" and sender.user_id != recipient:
            mine = self._read_slots(recipient)
            if mine is None:
                return
            common = sorted(set(payload.get("slots", [])) & set(mine))
            reply = ({"type": "meeting_accept", "slot": common[0]} if common
                     else {"type": "meeting_decline"})
            self._submit_message(recipient, channel, _canonical(reply),
                                 origin=Origin.EXTERNAL, requester=sender)
        elif ptype == "meeting_accept":
            if self._open_proposals.get(channel) == recipient:
                del self._open_proposals[channel]
                reply = {"type": "meeting_confirm", "slot": payload.get("slot")}
                self._submit_message(recipient, channel, _canonical(reply),
                                     origin=Origin.EXTERNAL, requester=sender)
        elif ptype == "request_action":
            self._req_seq += 1
            step = IntentStep(
                step_id=f"req{self._req_seq:04d}",
                verb=payload.get("verb", ""),
                args=tuple(sorted((k, str(v))
                           for k, v in payload.get("args", {}).items())),
            )
            script = IntentScript(intent_id=f"request-{self._req_seq:04d}", steps=(step,))
            try:
                self.submit_intent(recipient, script, origin=Origin.EXTERNAL,
                                   requester=sender, channel_id=channel)
            except TopoClawError as exc:
                self.transcript.add(self.now, env.dst_node, "outcome", action_id="",
                                    status="request_error", detail=str(exc))

    # ── Helpers ──────────────────────────────────────────────────────

    def _consolidate(self, node_id: str, obs: Observation) -> None:
        self.nodes[node_id].consolidate(obs)

    def _read_slots(self, user_id: str) -> list[str] | None:
        hub = self.nodes[self.hub_of[user_id]]
        raw = hub.workspace.read("prefs/slots.txt")
        if raw is None:
            return None
        return [line.strip() for line in raw.splitlines() if line.strip()]


def run_scenario(
    scenario: Scenario,
    mode: DeploymentMode | str,
    *,
    run_root: str | Path | None = None,
    solver: str = "greedy",
) -> RunResult:
    """Execute a scenario under a deployment mode; fully deterministic."""
    runtime = ClusterRuntime(scenario, DeploymentMode(mode), run_root, solver)
    return runtime.run()
