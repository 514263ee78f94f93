from __future__ import annotations

import json

import pytest

from topoclaw.errors import SkillError
from topoclaw.eventbus import Role, SequenceCounters, attribute, broadcast, verify_attribution
from topoclaw.skills import (
    AssistantTemplate,
    RequiredEnv,
    SkillCategory,
    SkillRegistry,
    builtin_registry,
    instantiate_template,
    load_manifest,
    load_registry,
    manifest_from_dict,
    manifest_to_dict,
    resolve_skill_node,
    serialize_template,
    template_from_record,
)
from topoclaw.taskgraph import IntentScript, IntentStep, builtin_verb_table, compile_intent
from topoclaw.topology import DeviceGraph, SharedSpace

from conftest import DESKTOP_CAPS, MOBILE_CAPS, make_node

BUILTINS = {
    "utility": {"search_files", "manage_files", "schedule_cron"},
    "cross_device": {"send_sms", "sync_clipboard", "open_deeplink"},
    "social": {"send_group_msg", "assert_twin_identity", "manage_contacts"},
    "system": {"edit_memory", "author_skill", "list_skills"},
}


class TestManifests:
    def test_builtin_send_sms_loads(self):
        registry = builtin_registry()
        m = registry.by_name("send_sms")
        assert m.category is SkillCategory.CROSS_DEVICE
        assert m.required_env is RequiredEnv.MOBILE
        assert m.verb == "send_sms"

    def test_missing_field_named(self):
        doc = manifest_to_dict(builtin_registry().by_name("send_sms"))
        del doc["version"]
        with pytest.raises(SkillError, match="version"):
            manifest_from_dict(doc)

    def test_bad_enum_value(self):
        doc = manifest_to_dict(builtin_registry().by_name("send_sms"))
        doc["category"] = "sorcery"
        with pytest.raises(SkillError, match="sorcery"):
            manifest_from_dict(doc)

    def test_duplicate_verb_rejected_at_registry_add(self):
        registry = SkillRegistry()
        a = manifest_from_dict({
            "name": "searcher_a", "version": "1.0.0", "description": "",
            "category": "utility", "required_env": "any",
            "required_capabilities": ["fs.search"], "verb": "search", "entry": "a"})
        b = manifest_from_dict({
            "name": "searcher_b", "version": "1.0.0", "description": "",
            "category": "utility", "required_env": "any",
            "required_capabilities": ["fs.search"], "verb": "search", "entry": "b"})
        registry.add(a)
        with pytest.raises(SkillError, match="duplicate verb"):
            registry.add(b)

    def test_load_manifest_from_file(self, tmp_path):
        doc = manifest_to_dict(builtin_registry().by_name("list_skills"))
        path = tmp_path / "manifest.json"
        path.write_text(json.dumps(doc))
        assert load_manifest(path) == builtin_registry().by_name("list_skills")


class TestBuiltinCoverage:
    def test_twelve_builtins_three_per_category(self):
        registry = builtin_registry()
        manifests = registry.manifests()
        assert len(manifests) == 12
        by_category: dict[str, set[str]] = {}
        for m in manifests:
            by_category.setdefault(m.category.value, set()).add(m.name)
        assert by_category == BUILTINS

    def test_every_builtin_verb_compiles_and_places(self, dual_graph):
        from topoclaw.placement import place_greedy

        registry = builtin_registry()
        table = builtin_verb_table()
        args_for = {
            "search_files": {"path": "docs", "query": ""},
            "manage_files": {"path": "out.txt", "content": "x"},
            "schedule_cron": {"task_id": "t", "cron": "0 9 * * *"},
            "send_sms": {"to": "+1", "text": "hi"},
            "sync_clipboard": {"content": "clip"},
            "open_deeplink": {"url": "app://x"},
            "send_group_msg": {"space_id": "team", "content": "hello"},
            "assert_twin_identity": {"space_id": "team"},
            "manage_contacts": {"name": "Bob", "details": "+1"},
            "edit_memory": {"key": "owner.tz", "value": "UTC+8"},
            "author_skill": {"name": "fresh", "description": "d"},
            "list_skills": {},
        }
        for m in registry.manifests():
            script = IntentScript(f"use-{m.name}", (
                IntentStep(step_id="s0", verb=m.verb,
                           args=tuple(sorted(args_for[m.name].items()))),))
            dag = compile_intent(script, table)
            placed = place_greedy(dag, dual_graph)
            node = dual_graph.node(placed.node_for("s0"))
            assert m.required_capabilities <= node.profile.capabilities

    def test_registry_load_is_order_independent(self, tmp_path):
        registry = builtin_registry()
        # Write the same manifests under differently-ordered directory names.
        for prefix in ("a", "z"):
            root = tmp_path / prefix
            for i, m in enumerate(registry.manifests()):
                d = root / f"{prefix}{i:02d}-{m.name}"
                d.mkdir(parents=True)
                (d / "manifest.json").write_text(json.dumps(manifest_to_dict(m)))
        first = load_registry(tmp_path / "a")
        second = load_registry(tmp_path / "z")
        assert first.manifests() == second.manifests()


class TestResolveSkillNode:
    def test_mobile_skill_routes_to_mobile(self, dual_graph):
        m = builtin_registry().by_name("send_sms")
        assert resolve_skill_node(m, dual_graph) == "mobile"

    def test_any_env_takes_lexicographically_first(self, dual_graph):
        m = builtin_registry().by_name("send_group_msg")
        assert resolve_skill_node(m, dual_graph) == "desktop"

    def test_unmet_capability_named(self, dual_graph):
        doc = manifest_to_dict(builtin_registry().by_name("send_sms"))
        doc.update(name="nfc_tap", verb="nfc_tap", required_capabilities=["nfc.read"],
                   required_env="any")
        m = manifest_from_dict(doc)
        with pytest.raises(SkillError, match="nfc.read"):
            resolve_skill_node(m, dual_graph)

    def test_unmet_environment_named(self):
        g = DeviceGraph((make_node("pc1", DESKTOP_CAPS, "pc"),), ())
        m = builtin_registry().by_name("send_sms")
        with pytest.raises(SkillError, match="mobile"):
            resolve_skill_node(m, g)


@pytest.fixture
def template(alice):
    return AssistantTemplate(
        template_id="meeting-helper",
        system_prompt="You schedule meetings politely.",
        skill_names=("search_files", "send_group_msg"),
        behavioral_defaults=(("tone", "formal"),),
        platform_constraints=RequiredEnv.ANY,
        author_user_id=alice.user_id,
        author_display_name=alice.display_name,
        author_key_ref=alice.key_ref,
        use_case="team meeting coordination",
    )


class TestTemplates:
    def test_round_trip_bytes_identical(self, template):
        record = serialize_template(template)
        again = serialize_template(template_from_record(record))
        assert again == record

    def test_instantiate_binds_two_verbs(self, template, dual_graph):
        bound = instantiate_template(template, dual_graph, builtin_registry())
        assert bound.verbs == ("search_files", "send_group_msg")
        assert dict(bound.bindings) == {"search_files": "desktop",
                                        "send_group_msg": "desktop"}
        assert bound.template.author_user_id == "alice"

    def test_unresolvable_skill(self, template, dual_graph):
        broken = template_from_record(
            json.loads(serialize_template(template)) | {"skill_names": ["warp_drive"]})
        with pytest.raises(SkillError, match="warp_drive"):
            instantiate_template(broken, dual_graph, builtin_registry())

    def test_mobile_constrained_template_fails_on_pc_only_graph(self, template):
        single_pc = DeviceGraph((make_node("pc1", DESKTOP_CAPS, "pc"),), ())
        doc = json.loads(serialize_template(template))
        doc["platform_constraints"] = "mobile"
        doc["skill_names"] = ["send_group_msg"]
        with pytest.raises(SkillError, match="platform constraint"):
            instantiate_template(template_from_record(doc), single_pc, builtin_registry())

    def test_author_metadata_required(self, template):
        doc = json.loads(serialize_template(template))
        doc["author"]["user_id"] = ""
        with pytest.raises(SkillError, match="author"):
            template_from_record(doc)

    def test_template_travels_as_event_payload(self, template, alice, bob,
                                               keystore, dual_graph):
        # Serialize, wrap as an attributed event, broadcast across the social
        # edge, instantiate on the recipient side: author survives verbatim.
        record = serialize_template(template)
        event = attribute(record, alice, "alice.twin", Role.OWNER, keystore,
                          channel_id="team", counters=SequenceCounters())
        space = SharedSpace("team", ("alice", "bob"))
        from topoclaw.topology import SocialGraph
        social = SocialGraph(users=(alice, bob), edges=(), spaces=(space,))
        envelopes = broadcast(space, event, social, keystore)
        assert len(envelopes) == 1
        delivered = envelopes[0].event
        assert verify_attribution(delivered, keystore)
        bound = instantiate_template(delivered.payload_m, dual_graph, builtin_registry())
        assert bound.template.author_user_id == "alice"
        assert serialize_template(bound.template) == record
