"""Acceptance criteria, one test per criterion.

The conftest summary hook prints one PASS/FAIL line per test here. Everything
runs offline against the bundled scenario pack and scripted backend.
"""

import json
import random
import time
from pathlib import Path

import numpy as np

from policyweaver.cli import main as cli_main
from policyweaver.gateway import CostLedger, Gateway, ScriptedBackend, ScriptedRule, Usage
from policyweaver.generalize import greedy_cluster
from policyweaver.metrics import anytime_curve, tgc_sgc
from policyweaver.miniworld.scenarios import load_pack
from policyweaver.model import (
    Domain,
    EngineConfig,
    GoalTest,
    PolicySignature,
    TaskInstance,
)
from policyweaver.orchestrator import (
    EVENT_DEBUG_ITERATION,
    EVENT_GENERALIZATION,
    MODE_HCLGP,
    Engine,
)
from policyweaver.repository import USAGE_DIRECT, ComponentRepository
from policyweaver.retrieval import (
    MockEmbedder,
    VectorIndex,
    component_text,
    cosine,
    ir_metrics,
)
from policyweaver.scriptpack import (
    GENERALIZE_KEEP_REPLY,
    MERGED_COMPONENT_BODY,
    full_rules,
)
from test_retrieval import appendix_fixture


def read_tree(directory):
    return {
        p.relative_to(directory).as_posix(): p.read_bytes()
        for p in sorted(Path(directory).rglob("*"))
        if p.is_file()
    }


def brute_force_ir(rankings, relevants, ks):
    """Independent re-derivation of MRR/MAP/R@k from hit-rank lists."""
    n = len(rankings)
    mrr = 0.0
    ap = 0.0
    recall = {k: 0 for k in ks}
    for ranking, relevant in zip(rankings, relevants):
        hit_ranks = [
            position
            for position, entry in enumerate(ranking, start=1)
            if entry in set(relevant)
        ]
        if hit_ranks:
            mrr += 1.0 / hit_ranks[0]
            ap += sum(
                (j + 1) / rank for j, rank in enumerate(hit_ranks)
            ) / len(hit_ranks)
            for k in ks:
                if hit_ranks[0] <= k:
                    recall[k] += 1
    return {
        "mrr": mrr / n,
        "map": ap / n,
        "r_at_k": {k: recall[k] / n for k in ks},
    }


def test_ir_metric_oracle_equivalence():
    rng = random.Random(11)
    ids = [f"e{i:03d}" for i in range(200)]
    rankings, relevants = [], []
    for _ in range(100):
        rankings.append(rng.sample(ids, k=rng.randint(20, 200)))
        relevants.append(set(rng.sample(ids, k=rng.randint(1, 5))))
    start = time.perf_counter()
    got = ir_metrics(rankings, relevants, ks=(5, 10, 20))
    elapsed = time.perf_counter() - start
    oracle = brute_force_ir(rankings, relevants, (5, 10, 20))
    assert abs(got["mrr"] - oracle["mrr"]) < 1e-12
    assert abs(got["map"] - oracle["map"]) < 1e-12
    for k in (5, 10, 20):
        assert abs(got["r_at_k"][k] - oracle["r_at_k"][k]) < 1e-12
    assert elapsed < 1.0

    rankings, relevants = appendix_fixture()
    fixture = ir_metrics(rankings, relevants)
    assert fixture["mrr"] == 0.24
    assert fixture["r_at_k"][10] == 0.565


def test_search_exactness():
    rng = np.random.default_rng(5)
    vectors = rng.normal(size=(1000, 32))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    index = VectorIndex(32)
    for i, vector in enumerate(vectors):
        index.add(f"e{i:04d}", "api-doc", vector, f"text {i}")
    query = rng.normal(size=32)
    unit = query / np.linalg.norm(query)
    scores = {f"e{i:04d}": float(np.dot(vector, unit)) for i, vector in enumerate(vectors)}
    full_scan = sorted(scores.items(), key=lambda pair: (-pair[1], pair[0]))
    for k in (1, 20, 1000):
        assert index.search(query, k) == full_scan[:k]

    dup = VectorIndex(32)
    shared = vectors[0]
    for entry_id in ("z2", "z1", "a9"):
        dup.add(entry_id, "api-doc", shared, "same text")
    assert [entry_id for entry_id, _ in dup.search(shared, 3)] == ["a9", "z1", "z2"]


def _clustering_repo():
    """Four near-identical login components plus three unrelated ones."""
    from policyweaver.scriptpack import (
        _LOGIN_DESCRIPTION,
        _TRAIN_APPS,
        login_component_body,
    )

    repo = ComponentRepository()
    for domain_id, app in _TRAIN_APPS.items():
        repo.add_learned(
            name=f"login_{app}",
            signature=PolicySignature(name=f"login_{app}", params=()),
            body=login_component_body(f"login_{app}", app),
            description=_LOGIN_DESCRIPTION.format(app=app),
            usage_info="call before other requests",
            origin_domains=(domain_id,),
        )
    unrelated = {
        "sum_cart": "Add up the price of every item sitting in the shopping cart.",
        "pick_song": "Choose the first track whose title mentions the given word.",
        "next_free_day": "Scan the calendar for the earliest date with no events.",
    }
    for name, description in unrelated.items():
        repo.add_learned(
            name=name,
            signature=PolicySignature(name=name, params=()),
            body=f"fn {name}() {{\n  return true\n}}",
            description=description,
            usage_info="standalone helper",
            origin_domains=("misc",),
        )
    return repo


def test_clustering_properties():
    repo = _clustering_repo()
    components = repo.live_components()

    singletons = greedy_cluster(components, 1.0, repo.provider)
    assert all(len(c.member_ids) == 1 for c in singletons)
    assert len(singletons) == len(components)

    clusters = greedy_cluster(components, 0.85, repo.provider)
    by_id = {c.id: c for c in components}
    for cluster in clusters:
        seed_vector = repo.provider.embed(component_text(by_id[cluster.seed_id]))
        for member_id in cluster.member_ids:
            member_vector = repo.provider.embed(component_text(by_id[member_id]))
            assert cosine(seed_vector, member_vector) >= 0.85
    login_cluster = next(c for c in clusters if "login" in c.seed_id)
    assert len(login_cluster.member_ids) == 4

    shapes = [
        [(c.seed_id, c.member_ids) for c in greedy_cluster(components, 0.85, repo.provider)]
        for _ in range(10)
    ]
    assert all(shape == shapes[0] for shape in shapes)


def test_end_to_end_deterministic_pipeline(tmp_path):
    pack = load_pack()
    assert len(pack.train) + len(pack.test) >= 6
    assert len(pack.challenge_ids) == 2

    start = time.perf_counter()
    assert cli_main(["seed", "--out", str(tmp_path / "seed")]) == 0
    assert (
        cli_main(
            ["run", "--mode", "hclgp", "--repo", str(tmp_path / "seed"),
             "--out", str(tmp_path / "hclgp")]
        )
        == 0
    )
    assert cli_main(["run", "--mode", "gp", "--out", str(tmp_path / "gp")]) == 0
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0

    hclgp = json.loads((tmp_path / "hclgp" / "summary.json").read_text())
    gp = json.loads((tmp_path / "gp" / "summary.json").read_text())
    assert hclgp["sgc"] == 100.0
    assert gp["debug_iterations"] > hclgp["debug_iterations"]
    domains_csv = (tmp_path / "hclgp" / "domains.csv").read_text()
    for challenge_id in pack.challenge_ids:
        assert f"{challenge_id},solved" in domains_csv

    cli_main(["seed", "--out", str(tmp_path / "seed2")])
    cli_main(
        ["run", "--mode", "hclgp", "--repo", str(tmp_path / "seed2"),
         "--out", str(tmp_path / "hclgp2")]
    )
    cli_main(["run", "--mode", "gp", "--out", str(tmp_path / "gp2")])
    assert read_tree(tmp_path / "seed") == read_tree(tmp_path / "seed2")
    assert read_tree(tmp_path / "hclgp") == read_tree(tmp_path / "hclgp2")
    assert read_tree(tmp_path / "gp") == read_tree(tmp_path / "gp2")


def _audit_suite():
    """Eight unsolvable domains: every one burns its full 1+3 iterations."""
    domains = []
    rules = []
    for i in range(1, 9):
        domain_id = f"aud{i}"
        domains.append(
            Domain(
                id=domain_id,
                tasks=(
                    TaskInstance(
                        id=f"{domain_id}-t",
                        instruction="do the impossible",
                        initial_state_seed="base",
                        goal_tests=(
                            GoalTest(
                                name="never",
                                kind="record_exists",
                                args={"app": "pay", "where": {"note": "impossible"}},
                            ),
                        ),
                    ),
                ),
            )
        )
        rules.append(
            ScriptedRule(
                match=f"agent=abstract domain={domain_id}",
                reply=(
                    "```steps\ntry anyway\n```\n\n"
                    "```signature\nnoop()\n```\n\n"
                    "```bindings\n"
                    + json.dumps({"task": f"{domain_id}-t", "values": {}})
                    + "\n```"
                ),
            )
        )
    rules.append(
        ScriptedRule(match="agent=policy", reply="```policy\nfn noop() {\n  return true\n}\n```")
    )
    rules.append(ScriptedRule(match="", reply=GENERALIZE_KEEP_REPLY))
    return domains, rules


def test_budget_and_atomicity_laws(tmp_path):
    # Revision budget: per domain, iterations beyond the first never exceed
    # the budget; audited from the event logs of both pipeline modes.
    config = EngineConfig()
    pack = load_pack()
    for mode, repo in (("gp", None), ("hclgp", None)):
        engine = Engine(
            Gateway(ScriptedBackend(full_rules(pack)), CostLedger(config)), repo=repo
        )
        if mode == "hclgp":
            engine.seed_repository(pack.train)
            engine = Engine(
                Gateway(ScriptedBackend(full_rules(pack)), CostLedger(config)),
                repo=engine.repo,
            )
        report = engine.run_suite(pack.test, mode)
        per_domain: dict[str, int] = {}
        for event in report.events:
            if event.kind == EVENT_DEBUG_ITERATION:
                per_domain[event.domain_id] = per_domain.get(event.domain_id, 0) + 1
        for domain_id, iterations in per_domain.items():
            assert iterations - 1 <= config.debug_budget, domain_id
        by_id = {result.domain_id: result for result in report.results}
        assert {d: r.iterations for d, r in by_id.items()} == per_domain

    # Generalization cadence: 32 cumulative debugging iterations fire exactly
    # one pass, immediately after the domain that crosses the trigger.
    domains, rules = _audit_suite()
    engine = Engine(Gateway(ScriptedBackend(rules), CostLedger(config)))
    report = engine.run_suite(domains, MODE_HCLGP)
    assert report.debug_iterations == 32
    passes = [e for e in report.events if e.kind == EVENT_GENERALIZATION]
    assert len(passes) == 1
    iterations_before = sum(
        1
        for event in report.events
        if event.kind == EVENT_DEBUG_ITERATION and event.ordinal < passes[0].ordinal
    )
    assert iterations_before == 20

    # Atomicity: a generalization pass whose proposals never validate leaves
    # the repository byte-identical.
    assert (
        cli_main(
            ["run", "--mode", "hclgp", "--phase", "train",
             "--out", str(tmp_path / "train")]
        )
        == 0
    )
    repo_dir = tmp_path / "train" / "repo"
    before = read_tree(repo_dir)
    from policyweaver.cli import load_archive
    from policyweaver.scriptpack import _generalize_merge_reply

    broken_body = "fn login_app(app) {\n  return true\n}"
    sabotage = [
        ScriptedRule(
            match="agent=generalize",
            reply=_generalize_merge_reply().replace(MERGED_COMPONENT_BODY, broken_body),
        )
    ]
    engine = Engine(
        Gateway(ScriptedBackend(sabotage), CostLedger(config)),
        repo=ComponentRepository.load(repo_dir),
    )
    engine.archive.update(load_archive(tmp_path / "train" / "archive.json"))
    pass_report = engine.run_generalization_pass()
    assert pass_report["accepted"] == 0 and pass_report["rejected"] == 1
    engine.repo.save(tmp_path / "after")
    assert read_tree(tmp_path / "after") == before


def test_metrics_arithmetic():
    # Pricing: two (1000-in, 500-out) calls at $3/$15 per million tokens.
    ledger = CostLedger(EngineConfig())
    ledger.record("policy", "d1", Usage(1000, 500))
    ledger.record("policy", "d2", Usage(1000, 500))
    assert ledger.cost() == 0.021

    # SGC never exceeds TGC across randomized result sets of uniform task count.
    from policyweaver.orchestrator import DomainResult

    rng = random.Random(3)
    for _ in range(1000):
        tasks = rng.randint(1, 5)
        results = []
        for d in range(rng.randint(1, 6)):
            passes = {f"t{i}": rng.random() < 0.5 for i in range(tasks)}
            results.append(
                DomainResult(
                    domain_id=f"d{d}",
                    status="solved" if all(passes.values()) else "failed",
                    task_passes=passes,
                    iterations=1,
                    usage=Usage(0, 0),
                    policy_id="",
                    components_learned=(),
                )
            )
        rates = tgc_sgc(results)
        assert rates["sgc"] <= rates["tgc"] + 1e-9

    # Final anytime-curve value equals SGC on a real suite run.
    pack = load_pack()
    engine = Engine(Gateway(ScriptedBackend(full_rules(pack)), CostLedger()))
    engine.seed_repository(pack.train)
    engine = Engine(
        Gateway(ScriptedBackend(full_rules(pack)), CostLedger()), repo=engine.repo
    )
    report = engine.run_suite(pack.test, MODE_HCLGP)
    curve = anytime_curve(report.events, len(report.results))
    assert curve[-1].y == tgc_sgc(report.results)["sgc"] / 100.0

    # Usage table reproduces the reference learned-component row
    # (203 used, 75%, 3.8, 1.0, 1.5%) from a synthetic log: 270 components,
    # 200 used in one scenario each, 3 used in two, over 54 scenarios.
    repo = ComponentRepository()
    components = [
        repo.add_learned(
            name=f"u{i:03d}",
            signature=PolicySignature(name=f"u{i:03d}", params=()),
            body=f"fn u{i:03d}() {{\n  return true\n}}",
            description=f"synthetic component {i}",
            usage_info="none",
            origin_domains=("syn",),
        )
        for i in range(270)
    ]
    for i, component in enumerate(components[:200]):
        repo.record_usage(component.id, f"s{i % 54:02d}", USAGE_DIRECT, 1)
    for i, component in enumerate(components[200:203]):
        repo.record_usage(component.id, f"s{i:02d}", USAGE_DIRECT, 1)
        repo.record_usage(component.id, f"s{i + 10:02d}", USAGE_DIRECT, 1)
    row = repo.usage_stats(scenario_count=54)["learned"]
    assert row.available == 270
    assert row.total_used == 203
    assert round(row.utilization_pct) == 75
    assert round(row.per_scenario_mean, 1) == 3.8
    assert round(row.reuse_rate, 1) == 1.0
    assert round(row.multi_use_pct, 1) == 1.5


def test_correctness_preservation():
    pack = load_pack()
    engine = Engine(Gateway(ScriptedBackend(full_rules(pack)), CostLedger()))

    def assert_archive_valid():
        resolver = engine._live_resolver()
        for entry in engine.archive.values():
            outcomes = engine._validate_policy(
                entry.domain, entry.bindings, entry.policy, resolver
            )
            assert all(outcome.passed for outcome in outcomes), entry.domain.id

    # After the training phase (every accepted decomposition already
    # re-validated its updated policy; confirm from the outside).
    engine.run_suite(pack.train, MODE_HCLGP)
    assert len(engine.archive) == len(pack.train)
    assert_archive_valid()

    # After each generalization pass, including the one that rewrites every
    # archived policy onto the merged component.
    engine.run_generalization_pass()
    assert_archive_valid()
    engine.run_generalization_pass()
    assert_archive_valid()

    # After the evaluation phase on the sealed library.
    engine.repo.seal_seed()
    evaluation = Engine(
        Gateway(ScriptedBackend(full_rules(pack)), CostLedger()), repo=engine.repo
    )
    evaluation.run_suite(pack.test, MODE_HCLGP)
    assert len(evaluation.archive) == len(pack.test)
    resolver = evaluation._live_resolver()
    for entry in evaluation.archive.values():
        outcomes = evaluation._validate_policy(
            entry.domain, entry.bindings, entry.policy, resolver
        )
        assert all(outcome.passed for outcome in outcomes), entry.domain.id
