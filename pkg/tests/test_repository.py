"""Tests for the component stores, usage analytics, and op-log persistence."""

import random

import pytest

from policyweaver.model import ModelError, Param, PolicySignature
from policyweaver.repository import (
    PROVENANCE_LEARNED,
    PROVENANCE_SEED_MODIFIED,
    PROVENANCE_SEED_UNCHANGED,
    USAGE_DIRECT,
    USAGE_INDIRECT,
    Component,
    ComponentDraft,
    ComponentRepository,
    UsageRecord,
)


def sig(name, *params):
    return PolicySignature(name=name, params=tuple(Param(p, "string") for p in params))


def body_for(name, params=("x",)):
    return f"fn {name}({', '.join(params)}) {{ return true }}"


def add(repo, name, *, domains=("d1",), params=("x",)):
    return repo.add_learned(
        name=name,
        signature=sig(name, *params),
        body=body_for(name, params),
        description=f"{name} helper",
        usage_info=f"call {name} before the main flow",
        origin_domains=domains,
    )


def draft(name, *, domains=("d1",), params=("x",)):
    return ComponentDraft(
        name=name,
        signature=sig(name, *params),
        body=body_for(name, params),
        description=f"{name} helper",
        usage_info=f"call {name} before the main flow",
        origin_domains=domains,
    )


class TestComponent:
    def test_body_must_parse(self):
        with pytest.raises(Exception):
            Component(
                id="c001-bad",
                name="bad",
                signature=sig("bad"),
                body="fn bad( {",
                description="d",
                usage_info="u",
                provenance=PROVENANCE_LEARNED,
                origin_domains=("d1",),
                created_at=1,
            )

    def test_body_name_must_match(self):
        with pytest.raises(ModelError, match="body defines"):
            Component(
                id="c001-a",
                name="a",
                signature=sig("a"),
                body="fn b() { return true }",
                description="d",
                usage_info="u",
                provenance=PROVENANCE_LEARNED,
                origin_domains=("d1",),
                created_at=1,
            )

    def test_body_params_must_match_signature(self):
        with pytest.raises(ModelError, match="do not match signature"):
            Component(
                id="c001-a",
                name="a",
                signature=sig("a", "x", "y"),
                body="fn a(y, x) { return true }",
                description="d",
                usage_info="u",
                provenance=PROVENANCE_LEARNED,
                origin_domains=("d1",),
                created_at=1,
            )

    def test_unknown_provenance_and_empty_origins(self):
        with pytest.raises(ModelError, match="provenance"):
            Component(
                id="c001-a", name="a", signature=sig("a"),
                body="fn a() { return true }", description="d", usage_info="u",
                provenance="fresh", origin_domains=("d1",), created_at=1,
            )
        with pytest.raises(ModelError, match="origin_domains"):
            Component(
                id="c001-a", name="a", signature=sig("a"),
                body="fn a() { return true }", description="d", usage_info="u",
                provenance=PROVENANCE_LEARNED, origin_domains=(), created_at=1,
            )

    def test_round_trip(self):
        repo = ComponentRepository()
        component = add(repo, "login_pay")
        assert Component.from_dict(component.to_dict()) == component


class TestAddLearned:
    def test_add_then_get_same(self):
        repo = ComponentRepository()
        component = add(repo, "login_pay")
        assert component.id == "c001-login_pay"
        assert component.provenance == PROVENANCE_LEARNED
        assert repo.get(component.id) == component

    def test_ids_increment(self):
        repo = ComponentRepository()
        assert add(repo, "a").id == "c001-a"
        assert add(repo, "b").id == "c002-b"
        assert len(repo.learned_components()) == 2

    def test_duplicate_names_allowed_in_learned(self):
        repo = ComponentRepository()
        first, second = add(repo, "login"), add(repo, "login")
        assert first.id != second.id
        assert len(repo.learned_components()) == 2

    def test_added_components_are_searchable(self):
        repo = ComponentRepository()
        component = add(repo, "login_pay")
        results = repo.index.search(repo.provider.embed("login_pay helper"), k=1)
        assert results[0][0] == component.id


class TestPromote:
    def test_merge_two_into_one(self):
        repo = ComponentRepository()
        a, b = add(repo, "login_mail"), add(repo, "login_pay")
        before = len(repo.live_components())
        (merged,) = repo.promote([draft("login_app", params=("app",))], [a.id, b.id])
        assert len(repo.live_components()) == before - 1
        assert merged.id == "c003-login_app"
        assert merged.provenance == PROVENANCE_LEARNED
        assert not repo.is_live(a.id) and not repo.is_live(b.id)
        assert repo.get_any(a.id) == a

    def test_seed_derived_merge_is_seed_modified(self):
        repo = ComponentRepository()
        a, b = add(repo, "login_mail"), add(repo, "login_pay")
        repo.seal_seed()
        (merged,) = repo.promote([draft("login_app")], [a.id, b.id])
        assert merged.provenance == PROVENANCE_SEED_MODIFIED

    def test_learned_never_becomes_seed(self):
        repo = ComponentRepository()
        a = add(repo, "one")
        (out,) = repo.promote([draft("two")], [a.id])
        assert out.provenance == PROVENANCE_LEARNED

    def test_name_collision_leaves_store_unchanged(self):
        repo = ComponentRepository()
        keeper = add(repo, "alpha")
        repo.move_to_validated([keeper.id])
        victim = add(repo, "beta")
        live_before = [c.id for c in repo.live_components()]
        log_before = len(repo._log)
        with pytest.raises(ModelError, match="already live"):
            repo.promote([draft("alpha")], [victim.id])
        assert [c.id for c in repo.live_components()] == live_before
        assert len(repo._log) == log_before
        assert repo.is_live(victim.id)

    def test_replacing_frees_the_name(self):
        repo = ComponentRepository()
        old = add(repo, "alpha")
        repo.move_to_validated([old.id])
        (new,) = repo.promote([draft("alpha")], [old.id])
        assert new.name == "alpha" and new.id != old.id

    def test_replacing_must_be_live_and_unique(self):
        repo = ComponentRepository()
        a = add(repo, "a")
        with pytest.raises(ModelError, match="duplicate id"):
            repo.promote([], [a.id, a.id])
        with pytest.raises(ModelError, match="no live component"):
            repo.promote([], ["c999-ghost"])

    def test_tombstoned_leave_search_and_summaries(self):
        repo = ComponentRepository()
        a = add(repo, "login_mail")
        repo.promote([draft("login_app")], [a.id])
        assert a.id not in repo.index
        with pytest.raises(ModelError, match="no live component"):
            repo.summaries_for_prompt([a.id])
        assert repo.get_any(a.id).name == "login_mail"


class TestMoveAndSeal:
    def test_move_to_validated_keeps_identity(self):
        repo = ComponentRepository()
        a = add(repo, "a")
        repo.move_to_validated([a.id])
        assert repo.learned_components() == []
        assert repo.validated_components() == [a]

    def test_move_name_collision(self):
        repo = ComponentRepository()
        a, b = add(repo, "same"), add(repo, "same")
        repo.move_to_validated([a.id])
        with pytest.raises(ModelError, match="already live"):
            repo.move_to_validated([b.id])

    def test_move_unknown_id(self):
        repo = ComponentRepository()
        with pytest.raises(ModelError, match="no learned component"):
            repo.move_to_validated(["c009-nope"])

    def test_seal_seed_relabels_and_moves(self):
        repo = ComponentRepository()
        add(repo, "a"), add(repo, "b")
        repo.seal_seed()
        assert repo.learned_components() == []
        assert [c.provenance for c in repo.validated_components()] == [
            PROVENANCE_SEED_UNCHANGED,
            PROVENANCE_SEED_UNCHANGED,
        ]

    def test_seal_does_not_touch_tombstones(self):
        repo = ComponentRepository()
        a = add(repo, "a")
        repo.promote([draft("b")], [a.id])
        repo.seal_seed()
        assert repo.get_any(a.id).provenance == PROVENANCE_LEARNED


class TestUsage:
    def test_record_and_dedupe(self):
        repo = ComponentRepository()
        a = add(repo, "a")
        assert repo.record_usage(a.id, "d1", USAGE_DIRECT, iteration=1)
        assert not repo.record_usage(a.id, "d1", USAGE_DIRECT, iteration=2)
        assert repo.record_usage(a.id, "d1", USAGE_INDIRECT, iteration=2)
        assert len(repo.usage_records()) == 2

    def test_unknown_component_rejected(self):
        repo = ComponentRepository()
        with pytest.raises(ModelError, match="no live component"):
            repo.record_usage("c009-ghost", "d1", USAGE_DIRECT, iteration=0)

    def test_bad_mode_rejected(self):
        with pytest.raises(ModelError, match="mode"):
            UsageRecord(component_id="c001-a", domain_id="d1", mode="weird", iteration=0)


class TestUsageStats:
    def test_zero_scenarios_rejected(self):
        with pytest.raises(ModelError, match="scenario count"):
            ComponentRepository().usage_stats(0)

    def test_no_records_all_zeros(self):
        repo = ComponentRepository()
        add(repo, "a")
        stats = repo.usage_stats(3)[PROVENANCE_LEARNED]
        assert stats.available == 1
        assert stats.total_used == 0
        assert stats.utilization_pct == 0.0
        assert stats.reuse_rate == 0.0
        assert stats.multi_use_pct == 0.0

    def test_one_component_in_three_of_three_scenarios(self):
        repo = ComponentRepository()
        a = add(repo, "a")
        for domain in ("d1", "d2", "d3"):
            repo.record_usage(a.id, domain, USAGE_DIRECT, iteration=0)
        stats = repo.usage_stats(3)[PROVENANCE_LEARNED]
        assert stats.utilization_pct == 100.0
        assert stats.per_scenario_mean == 1.0
        assert stats.reuse_rate == 3.0
        assert stats.multi_use_pct == 100.0

    def test_published_learned_row_at_display_precision(self):
        # 271 available, 203 used, 213 scenario-uses over 56 scenarios,
        # 3 components used in more than one scenario.
        repo = ComponentRepository()
        components = [add(repo, f"comp_{i:03d}") for i in range(271)]
        extra = {0: 4, 1: 4, 2: 2}
        for i in range(203):
            repo.record_usage(components[i].id, f"d{i % 56:02d}", USAGE_DIRECT, 0)
            for j in range(extra.get(i, 0)):
                repo.record_usage(components[i].id, f"extra-{i}-{j}", USAGE_DIRECT, 0)
        stats = repo.usage_stats(56)[PROVENANCE_LEARNED]
        assert stats.available == 271
        assert stats.total_used == 203
        assert round(stats.utilization_pct) == 75
        assert round(stats.per_scenario_mean, 1) == 3.8
        assert round(stats.reuse_rate, 1) == 1.0
        assert round(stats.multi_use_pct, 1) == 1.5

    def test_identities_on_random_usage(self):
        rng = random.Random(0)
        repo = ComponentRepository()
        components = [add(repo, f"c{i}") for i in range(12)]
        for _ in range(60):
            repo.record_usage(
                rng.choice(components).id, f"d{rng.randrange(6)}", USAGE_DIRECT, 0
            )
        for stats in repo.usage_stats(6).values():
            assert stats.total_used <= stats.available
            assert stats.multi_use_pct <= 100.0
            if stats.total_used:
                assert stats.reuse_rate >= 1.0


class TestSummaries:
    def test_blocks_in_input_order_without_bodies(self):
        repo = ComponentRepository()
        a, b = add(repo, "login_pay"), add(repo, "send_mail")
        text = repo.summaries_for_prompt([b.id, a.id])
        assert text.index("send_mail") < text.index("login_pay")
        assert "signature: login_pay(x: string)" in text
        assert "call login_pay before the main flow" in text
        assert "return true" not in text

    def test_empty_ids_empty_text(self):
        assert ComponentRepository().summaries_for_prompt([]) == ""


class TestResolver:
    def test_resolver_parses_bodies(self):
        repo = ComponentRepository()
        a = add(repo, "login_pay")
        resolver = repo.resolver_for([a.id])
        assert resolver["login_pay"].name == "login_pay"

    def test_duplicate_names_rejected(self):
        repo = ComponentRepository()
        a, b = add(repo, "login"), add(repo, "login")
        with pytest.raises(ModelError, match="duplicate component name"):
            repo.resolver_for([a.id, b.id])


class TestPersistence:
    def build(self):
        repo = ComponentRepository()
        a, b = add(repo, "login_mail"), add(repo, "login_pay")
        c = add(repo, "send_report", params=("to",))
        repo.record_usage(a.id, "d1", USAGE_DIRECT, iteration=1)
        repo.record_usage(c.id, "d2", USAGE_INDIRECT, iteration=4)
        repo.promote([draft("login_app", params=("app",))], [a.id, b.id])
        repo.move_to_validated([c.id])
        return repo

    def test_save_load_save_is_byte_identical(self, tmp_path):
        first, second = tmp_path / "one", tmp_path / "two"
        repo = self.build()
        repo.save(first)
        loaded = ComponentRepository.load(first)
        loaded.save(second)
        for name in ("components.jsonl", "index.json"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_load_restores_stores_and_records(self, tmp_path):
        repo = self.build()
        repo.save(tmp_path)
        loaded = ComponentRepository.load(tmp_path)
        assert [c.id for c in loaded.live_components()] == [
            c.id for c in repo.live_components()
        ]
        assert loaded.usage_records() == repo.usage_records()
        assert [e.id for e in loaded.index.entries()] == [
            e.id for e in repo.index.entries()
        ]
        assert [c.id for c in loaded.tombstoned_components()] == [
            c.id for c in repo.tombstoned_components()
        ]

    def test_ordinals_continue_after_load(self, tmp_path):
        repo = self.build()
        repo.save(tmp_path)
        loaded = ComponentRepository.load(tmp_path)
        fresh = add(loaded, "next_one")
        assert fresh.created_at == max(c.created_at for c in repo.live_components() + repo.tombstoned_components()) + 1

    def test_tampered_sidecar_rejected(self, tmp_path):
        repo = self.build()
        repo.save(tmp_path)
        sidecar = tmp_path / "index.json"
        sidecar.write_text(sidecar.read_text().replace("login_app", "loginxapp"))
        with pytest.raises(ModelError, match="sidecar"):
            ComponentRepository.load(tmp_path)

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(ModelError, match="no repository"):
            ComponentRepository.load(tmp_path / "absent")
