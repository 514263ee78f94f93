from __future__ import annotations

import random

import pytest

from topoclaw.errors import CycleError, DagError, UnknownVerbError
from topoclaw.taskgraph import (
    ActionSpec,
    DependencyEdge,
    EffectDescriptor,
    EffectKind,
    IntentScript,
    IntentStep,
    TaskDag,
    builtin_verb_table,
    compile_intent,
    dag_from_dict,
    dag_to_dict,
    intent_from_dict,
    intent_to_dict,
    topo_order,
)


@pytest.fixture(scope="module")
def verbs():
    return builtin_verb_table()


def step(step_id, verb, args=None, needs=(), payload=0.0):
    return IntentStep(step_id=step_id, verb=verb,
                      args=tuple(sorted((args or {}).items())),
                      needs=tuple(needs), payload_units=payload)


class TestCompileIntent:
    def test_search_then_sms(self, verbs):
        script = IntentScript("crossdev", (
            step("v_read", "search_files", {"path": "docs"}),
            step("v_sms", "send_sms", {"to": "+1", "text": "hi"}, needs=["v_read"], payload=1),
        ))
        dag = compile_intent(script, verbs)
        assert [a.action_id for a in dag.actions] == ["v_read", "v_sms"]
        assert len(dag.deps) == 1
        dep = dag.deps[0]
        assert (dep.from_action, dep.to_action, dep.payload_units) == ("v_read", "v_sms", 1)
        assert dag.action("v_read").effect.kind is EffectKind.READ
        assert dag.action("v_sms").effect == EffectDescriptor(EffectKind.SEND, "+1")

    def test_empty_script(self, verbs):
        dag = compile_intent(IntentScript("empty", ()), verbs)
        assert dag.actions == () and dag.deps == ()

    def test_unknown_verb(self, verbs):
        script = IntentScript("bad", (step("s1", "frobnicate"),))
        with pytest.raises(UnknownVerbError, match="frobnicate"):
            compile_intent(script, verbs)

    def test_forward_needs_rejected_at_construction(self):
        with pytest.raises(DagError, match="earlier step"):
            IntentScript("fwd", (
                step("s1", "search_files", {"path": "x"}, needs=["s2"]),
                step("s2", "search_files", {"path": "y"}),
            ))

    def test_noop_verb_is_structural(self, verbs):
        dag = compile_intent(IntentScript("n", (step("only", "noop"),)), verbs)
        assert dag.action("only").effect.kind is EffectKind.NOOP
        assert dag.action("only").required_capabilities == frozenset()

    def test_missing_template_argument(self, verbs):
        with pytest.raises(DagError, match="missing argument"):
            compile_intent(IntentScript("m", (step("s1", "search_files"),)), verbs)

    def test_deterministic(self, verbs):
        script = IntentScript("d", (
            step("a", "search_files", {"path": "p"}),
            step("b", "manage_files", {"path": "q", "content": "z"}, needs=["a"], payload=2),
        ))
        assert compile_intent(script, verbs) == compile_intent(script, verbs)


class TestTopoOrder:
    def chain(self):
        actions = tuple(
            ActionSpec(x, frozenset({"fs.search"}), EffectDescriptor(EffectKind.READ, "p"))
            for x in "abc")
        deps = (DependencyEdge("a", "b"), DependencyEdge("b", "c"))
        return TaskDag(actions, deps)

    def test_chain_order(self):
        assert topo_order(self.chain()) == ["a", "b", "c"]

    def test_lexicographic_tiebreak(self):
        actions = tuple(
            ActionSpec(x, frozenset({"fs.search"}), EffectDescriptor(EffectKind.READ, "p"))
            for x in ("b", "a"))
        assert topo_order(TaskDag(actions, ())) == ["a", "b"]

    def test_cycle_reported(self):
        actions = tuple(
            ActionSpec(x, frozenset({"fs.search"}), EffectDescriptor(EffectKind.READ, "p"))
            for x in "ab")
        with pytest.raises(CycleError) as exc:
            TaskDag(actions, (DependencyEdge("a", "b"), DependencyEdge("b", "a")))
        assert set(exc.value.cycle) >= {"a", "b"}

    def test_output_is_a_permutation(self, verbs):
        rng = random.Random(7)
        for _ in range(200):
            script = _random_script(rng)
            dag = compile_intent(script, verbs)
            order = topo_order(dag)
            assert sorted(order) == sorted(a.action_id for a in dag.actions)
            position = {aid: i for i, aid in enumerate(order)}
            for d in dag.deps:
                assert position[d.from_action] < position[d.to_action]


def _random_script(rng: random.Random) -> IntentScript:
    n = rng.randint(0, 6)
    steps = []
    for i in range(n):
        needs = [f"s{j}" for j in range(i) if rng.random() < 0.4]
        steps.append(step(f"s{i}", "search_files", {"path": f"d{i}"},
                          needs=needs, payload=rng.choice([0, 1, 2])))
    return IntentScript(f"r{rng.randint(0, 10**6)}", tuple(steps))


class TestFileFormats:
    def test_dag_round_trip_is_identity(self, verbs):
        script = IntentScript("rt", (
            step("a", "search_files", {"path": "p"}),
            step("b", "send_sms", {"to": "+1", "text": "t"}, needs=["a"], payload=3),
        ))
        dag = compile_intent(script, verbs)
        assert dag_from_dict(dag_to_dict(dag)) == dag

    def test_intent_round_trip(self):
        doc = {"intent_id": "x", "steps": [
            {"step_id": "s0", "verb": "noop", "args": {}, "needs": [], "payload_units": 0}]}
        script = intent_from_dict(doc)
        assert intent_from_dict(intent_to_dict(script)) == script

    def test_random_dag_round_trips(self, verbs):
        rng = random.Random(11)
        for _ in range(100):
            dag = compile_intent(_random_script(rng), verbs)
            assert dag_from_dict(dag_to_dict(dag)) == dag


def test_compile_never_produces_cycles(verbs):
    # Structural guarantee: needs may only reference earlier steps.
    rng = random.Random(42)
    for _ in range(10_000):
        dag = compile_intent(_random_script(rng), verbs)
        topo_order(dag)  # raises CycleError if cyclic


def test_builtin_verb_table_has_twelve_verbs(verbs):
    assert len(verbs) == 12
