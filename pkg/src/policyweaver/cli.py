"""Command line entry points: run suites, seed the component library,
inspect repositories and the bundled meta-domain, and re-render reports.

`run` exits 0 only when every requested domain is solved, so shell scripts
can gate on suite success.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Mapping, Sequence

from .agents import (
    AbstractionResult,
    AgentReplyError,
    build_abstract_prompt,
    build_policy_prompt,
)
from .gateway import (
    CostLedger,
    Gateway,
    GatewayError,
    HttpBackend,
    ScriptedBackend,
    Usage,
)
from .metrics import CURVES_CSV, emit_reports, render_curves_csv
from .miniworld.scenarios import describe, load_pack
from .miniworld.world import MiniWorld
from .model import (
    Domain,
    EngineConfig,
    ModelError,
    ParameterBinding,
    Policy,
    PolicySignature,
    canonical_json,
)
from .orchestrator import MODES, ArchiveEntry, Engine, RunEvent
from .repository import ComponentRepository
from .scriptpack import full_rules

ARCHIVE_JSON = "archive.json"
REPO_DIR = "repo"
PHASES = ("test", "train", "all")


def save_archive(path: str | Path, archive: Mapping[str, ArchiveEntry]) -> None:
    """Persist solved-domain policies with their bindings for re-validation."""
    data = {
        "entries": [
            {
                "domain": entry.domain.to_dict(),
                "policy": entry.policy.to_dict(),
                "bindings": [binding.to_dict() for binding in entry.bindings],
            }
            for _, entry in sorted(archive.items())
        ]
    }
    Path(path).write_text(canonical_json(data, indent=2) + "\n", encoding="utf-8")


def load_archive(path: str | Path) -> dict[str, ArchiveEntry]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    archive = {}
    for raw in data["entries"]:
        domain = Domain.from_dict(raw["domain"])
        archive[domain.id] = ArchiveEntry(
            domain=domain,
            policy=Policy.from_dict(raw["policy"]),
            bindings=tuple(ParameterBinding.from_dict(b) for b in raw["bindings"]),
        )
    return archive


def load_events(path: str | Path) -> list[RunEvent]:
    events = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        raw = json.loads(line)
        events.append(
            RunEvent(
                ordinal=raw["ordinal"],
                kind=raw["kind"],
                domain_id=raw["domain_id"],
                usage=Usage(raw["input_tokens"], raw["output_tokens"]),
            )
        )
    return events


def _load_config(args: argparse.Namespace) -> EngineConfig:
    overrides: dict = {}
    if getattr(args, "config", None):
        overrides.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    if getattr(args, "threshold", None) is not None:
        overrides["cluster_threshold"] = args.threshold
    if getattr(args, "budget", None) is not None:
        overrides["debug_budget"] = args.budget
    return EngineConfig.from_dict(overrides)


def _make_gateway(args: argparse.Namespace, config: EngineConfig) -> Gateway:
    if args.backend == "http":
        backend = HttpBackend()
    elif getattr(args, "rules", None):
        backend = ScriptedBackend.from_file(args.rules)
    else:
        backend = ScriptedBackend(full_rules(load_pack(args.scenarios)))
    return Gateway(backend, CostLedger(config))


def _print_suite_line(report) -> None:
    print(
        f"{report.mode}: solved {report.solved_domains}/{len(report.results)} domains"
        f" in {report.debug_iterations} debugging iterations"
        f" ({len(report.generalization_passes)} generalization passes)"
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = _load_config(args)
    pack = load_pack(args.scenarios)
    domains = {
        "test": pack.test,
        "train": pack.train,
        "all": pack.train + pack.test,
    }[args.phase]
    repo = ComponentRepository.load(args.repo) if args.repo else ComponentRepository()
    engine = Engine(_make_gateway(args, config), config=config, repo=repo)
    report = engine.run_suite(domains, args.mode)

    out = Path(args.out)
    emit_reports(out, report, config, engine.repo.usage_stats(len(domains)))
    save_archive(out / ARCHIVE_JSON, engine.archive)
    engine.repo.save(out / REPO_DIR)
    _print_suite_line(report)
    print(f"reports written to {out}")
    return 0 if report.all_solved else 1


def cmd_seed(args: argparse.Namespace) -> int:
    config = _load_config(args)
    pack = load_pack(args.scenarios)
    engine = Engine(_make_gateway(args, config), config=config)
    report = engine.seed_repository(pack.train, out_dir=args.out)
    save_archive(Path(args.out) / ARCHIVE_JSON, engine.archive)
    _print_suite_line(report)
    validated = engine.repo.validated_components()
    print(f"seed library: {len(validated)} validated components at {args.out}")
    for component in validated:
        print(f"  {component.id}  {component.name}")
    return 0 if report.all_solved else 1


def cmd_repo_stats(args: argparse.Namespace) -> int:
    repo = ComponentRepository.load(args.dir)
    count = args.scenario_count
    if count is None:
        count = max(1, len({r.domain_id for r in repo.usage_records()}))
    stats = repo.usage_stats(scenario_count=count)
    table = {provenance: s.to_dict() for provenance, s in stats.items()}
    print(canonical_json({"scenario_count": count, "stats": table}, indent=2))
    return 0


def cmd_repo_list(args: argparse.Namespace) -> int:
    repo = ComponentRepository.load(args.dir)
    for component in repo.live_components():
        print(f"{component.id:<24} {component.provenance:<14} {component.name}")
    if args.all:
        for component in repo.tombstoned_components():
            print(f"{component.id:<24} {'tombstoned':<14} {component.name}")
    return 0


def cmd_repo_show(args: argparse.Namespace) -> int:
    repo = ComponentRepository.load(args.dir)
    print(canonical_json(repo.get_any(args.id).to_dict(), indent=2))
    return 0


def cmd_generalize(args: argparse.Namespace) -> int:
    config = _load_config(args)
    repo = ComponentRepository.load(args.repo)
    engine = Engine(_make_gateway(args, config), config=config, repo=repo)
    if args.archive:
        engine.archive.update(load_archive(args.archive))
    report = engine.run_generalization_pass()
    engine.repo.save(args.repo)
    if args.archive:
        save_archive(args.archive, engine.archive)
    print(canonical_json(report, indent=2))
    return 0


def cmd_miniworld_describe(args: argparse.Namespace) -> int:
    print(describe(MiniWorld.from_bundled(), load_pack(args.scenarios)))
    return 0


def cmd_agents_dry_run(args: argparse.Namespace) -> int:
    pack = load_pack(args.scenarios)
    domain = pack.domain(args.domain)
    if args.agent == "abstract":
        print(build_abstract_prompt(domain))
        return 0
    # Stand-in abstraction so the policy prompt renders without a model call:
    # instructions as steps, no shared parameters.
    abstraction = AbstractionResult(
        domain_id=domain.id,
        high_level_steps=tuple(task.instruction for task in domain.tasks),
        signature=PolicySignature(name=f"solve_{domain.id}", params=()),
        bindings=tuple(
            ParameterBinding(task_id=task.id, values={}) for task in domain.tasks
        ),
    )
    config = _load_config(args)
    repo = ComponentRepository.load(args.repo) if args.repo else ComponentRepository()
    engine = Engine(
        Gateway(ScriptedBackend([]), CostLedger(config)), config=config, repo=repo
    )
    docs = engine._retrieve_api_docs(abstraction)
    offered = engine._offered_components(abstraction) if args.repo else []
    print(build_policy_prompt(abstraction, offered, docs))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    events_path = Path(args.events)
    events = load_events(events_path)
    config = EngineConfig()
    total = args.domains
    summary_path = events_path.parent / "summary.json"
    if summary_path.is_file():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        config = EngineConfig.from_dict(summary.get("config", {}))
        if total is None:
            total = summary["domains"]
    if total is None:
        total = len({e.domain_id for e in events})
    out_dir = Path(args.out) if args.out else events_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / CURVES_CSV
    target.write_text(render_curves_csv(events, total, config), encoding="utf-8")
    print(f"wrote {target}")
    return 0


def _add_backend_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--backend",
        choices=("mock", "http"),
        default="mock",
        help="scripted replies (default) or an OpenAI-style HTTP endpoint",
    )
    parser.add_argument("--rules", help="scripted-rule JSON file for the mock backend")
    parser.add_argument("--config", help="engine config JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="policyweaver",
        description="Learn generalized policies and a reusable component library",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve a scenario phase and write reports")
    run.add_argument("--mode", choices=MODES, required=True)
    run.add_argument("--scenarios", default="default", help="pack name or JSON path")
    run.add_argument("--phase", choices=PHASES, default="test")
    run.add_argument("--repo", help="component repository directory to start from")
    run.add_argument("--out", required=True, help="report output directory")
    _add_backend_options(run)
    run.set_defaults(func=cmd_run)

    seed = sub.add_parser("seed", help="build the seed component library")
    seed.add_argument("--scenarios", default="default", help="pack name or JSON path")
    seed.add_argument("--out", required=True, help="repository output directory")
    _add_backend_options(seed)
    seed.set_defaults(func=cmd_seed)

    repo = sub.add_parser("repo", help="inspect a component repository")
    repo_sub = repo.add_subparsers(dest="repo_command", required=True)
    stats = repo_sub.add_parser("stats", help="usage table per provenance")
    stats.add_argument("--dir", required=True)
    stats.add_argument("--scenario-count", type=int, default=None)
    stats.set_defaults(func=cmd_repo_stats)
    listing = repo_sub.add_parser("list", help="one line per live component")
    listing.add_argument("--dir", required=True)
    listing.add_argument("--all", action="store_true", help="include tombstoned")
    listing.set_defaults(func=cmd_repo_list)
    show = repo_sub.add_parser("show", help="full component record")
    show.add_argument("id")
    show.add_argument("--dir", required=True)
    show.set_defaults(func=cmd_repo_show)

    generalize = sub.add_parser(
        "generalize", help="run one consolidation pass over a repository"
    )
    generalize.add_argument("--repo", required=True)
    generalize.add_argument(
        "--archive", help="archive.json with solved policies for re-validation"
    )
    generalize.add_argument("--scenarios", default="default")
    generalize.add_argument("--threshold", type=float, help="cluster threshold override")
    generalize.add_argument("--budget", type=int, help="revision budget override")
    _add_backend_options(generalize)
    generalize.set_defaults(func=cmd_generalize)

    miniworld = sub.add_parser("miniworld", help="inspect the bundled meta-domain")
    mini_sub = miniworld.add_subparsers(dest="miniworld_command", required=True)
    desc = mini_sub.add_parser("describe", help="list apps, APIs, and scenarios")
    desc.add_argument("--scenarios", default="default")
    desc.set_defaults(func=cmd_miniworld_describe)

    agents = sub.add_parser("agents", help="inspect agent prompts")
    agents_sub = agents.add_subparsers(dest="agents_command", required=True)
    dry = agents_sub.add_parser(
        "dry-run", help="print the exact prompt for a domain without a backend call"
    )
    dry.add_argument("--domain", required=True)
    dry.add_argument("--agent", choices=("abstract", "policy"), default="abstract")
    dry.add_argument("--scenarios", default="default")
    dry.add_argument("--repo", help="offer components from this repository")
    dry.add_argument("--config")
    dry.set_defaults(func=cmd_agents_dry_run)

    report = sub.add_parser("report", help="re-render curves from a saved event log")
    report.add_argument("--events", required=True, help="events.jsonl path")
    report.add_argument("--domains", type=int, help="total domains in the run")
    report.add_argument("--out", help="output directory (default: alongside events)")
    report.set_defaults(func=cmd_report)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, AgentReplyError, GatewayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
