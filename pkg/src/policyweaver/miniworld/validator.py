"""Goal-test evaluation and plan validation against the simulated world."""

from __future__ import annotations

from typing import Any, Callable, Mapping

from ..lang import nodes
from ..lang.interp import execute
from ..model import GoalTest, ModelError, Plan, TaskInstance, ValidationOutcome
from .world import MiniWorld, WorldState

Checker = Callable[[MiniWorld, WorldState, Mapping[str, Any]], bool]

CHECKERS: dict[str, Checker] = {}


def _checker(kind: str) -> Callable[[Checker], Checker]:
    def register(fn: Checker) -> Checker:
        CHECKERS[kind] = fn
        return fn

    return register


def _matches(record: Mapping[str, Any], where: Mapping[str, Any]) -> bool:
    return all(record.get(field) == value for field, value in where.items())


def _matching(state: WorldState, args: Mapping[str, Any]) -> list[dict[str, Any]]:
    store = state.records.get(args["app"], {})
    return [rec for rec in store.values() if _matches(rec, args.get("where", {}))]


@_checker("record_exists")
def _record_exists(world: MiniWorld, state: WorldState, args: Mapping[str, Any]) -> bool:
    return bool(_matching(state, args))


@_checker("record_absent")
def _record_absent(world: MiniWorld, state: WorldState, args: Mapping[str, Any]) -> bool:
    return not _matching(state, args)


@_checker("record_count")
def _record_count(world: MiniWorld, state: WorldState, args: Mapping[str, Any]) -> bool:
    return len(_matching(state, args)) == args["count"]


@_checker("field_equals")
def _field_equals(world: MiniWorld, state: WorldState, args: Mapping[str, Any]) -> bool:
    record = state.records.get(args["app"], {}).get(args["record_id"])
    return record is not None and record.get(args["field"]) == args["value"]


def check_goal(world: MiniWorld, state: WorldState, test: GoalTest) -> bool:
    fn = CHECKERS.get(test.kind)
    if fn is None:
        raise ModelError(f"unknown goal-test kind {test.kind!r}")
    return fn(world, state, test.args)


class StateExecutor:
    """ApiExecutor over a world state; each successful call advances the state."""

    def __init__(self, world: MiniWorld, state: WorldState):
        self.world = world
        self.state = state

    def call(self, app: str, api: str, args: dict[str, Any]) -> Any:
        new_state, response = self.world.apply_api(self.state, app, api, args)
        self.state = new_state
        return response


def validate(
    world: MiniWorld,
    plan: Plan,
    task: TaskInstance,
    components: Mapping[str, nodes.Function] | None = None,
) -> ValidationOutcome:
    """Execute the plan from the task's initial state and run its goal tests.

    Failures never raise; they are encoded in the outcome together with the
    trace and the first runtime error, which is what the debugging agent sees.
    """
    executor = StateExecutor(world, world.reset(task))
    trace = execute(plan, executor, components)
    failed = tuple(t.name for t in task.goal_tests if not check_goal(world, executor.state, t))
    if trace.completed and not failed:
        return ValidationOutcome(task_id=task.id, passed=True, trace=trace.records)
    return ValidationOutcome(
        task_id=task.id,
        passed=False,
        failed_tests=failed,
        error=trace.error,
        trace=trace.records,
    )
