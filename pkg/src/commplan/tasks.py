"""Task specifications, online detection, and temporal-relation checking."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .workspace import GridMap, Position, los_obstacle_length


class RelationKind(str, Enum):
    PRECEDENCE = "precedence"
    MUTEX = "mutex"
    CONCURRENCY = "concurrency"


@dataclass
class Task:
    id: int
    region_center: Position
    region_radius: float
    duration: float
    requirements: tuple[tuple[int, str], ...]  # (agent count, action id)
    release_time: float = 0.0
    detected_at: Optional[float] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"task {self.id}: duration must be > 0")
        if self.region_radius < 0:
            raise ValueError(f"task {self.id}: region_radius must be >= 0")
        self.requirements = tuple((int(n), str(a)) for n, a in self.requirements)
        if not self.requirements:
            raise ValueError(f"task {self.id}: at least one requirement needed")
        for n, a in self.requirements:
            if n < 1:
                raise ValueError(f"task {self.id}: requirement count must be >= 1")

    @property
    def agents_required(self) -> int:
        return sum(n for n, _ in self.requirements)


@dataclass(frozen=True)
class TemporalRelation:
    first: int
    second: int
    kind: RelationKind

    def __post_init__(self):
        if self.first == self.second:
            raise ValueError("relation endpoints must differ")
        object.__setattr__(self, "kind", RelationKind(self.kind))

    def involves(self, task_id: int) -> bool:
        return task_id in (self.first, self.second)

    def other(self, task_id: int) -> int:
        return self.second if task_id == self.first else self.first


@dataclass(frozen=True)
class ExecutionInterval:
    task_id: int
    start: float
    finish: float

    def __post_init__(self):
        if self.finish < self.start:
            raise ValueError(f"task {self.task_id}: finish before start")


def detect_tasks(agent_pos: Position, sensor_range: float, undetected: Iterable[Task],
                 now: float, grid: GridMap) -> list[int]:
    """Mark and return tasks the agent can currently see.

    A task is detected when it has been released, its region center is within
    sensor range, and the line of sight to the center crosses no obstacle.
    Detection is permanent: detected_at is stamped with `now`.
    """
    if now < 0:
        raise ValueError("now must be >= 0")
    found = []
    for task in undetected:
        if task.detected_at is not None:
            continue
        if task.release_time > now:
            continue
        if agent_pos.dist(task.region_center) > sensor_range:
            continue
        if los_obstacle_length(agent_pos, task.region_center, grid) > 0.0:
            continue
        task.detected_at = now
        found.append(task.id)
    return found


def check_schedule(intervals: Iterable[ExecutionInterval],
                   relations: Iterable[TemporalRelation],
                   known_tasks: Optional[set[int]] = None) -> tuple[bool, list[TemporalRelation]]:
    """Validate execution intervals against the temporal relations.

    Intervals are closed. Precedence holds iff first finishes no later than
    second starts; mutex requires strictly disjoint intervals (a shared
    endpoint violates); concurrency requires a nonempty intersection.
    Relations with an unscheduled endpoint are vacuously satisfied for
    precedence and mutex but violated for concurrency.
    """
    by_id: dict[int, ExecutionInterval] = {}
    for iv in intervals:
        if known_tasks is not None and iv.task_id not in known_tasks:
            raise ValueError(f"interval references unknown task {iv.task_id}")
        if iv.task_id in by_id:
            raise ValueError(f"duplicate interval for task {iv.task_id}")
        by_id[iv.task_id] = iv

    violated = []
    for rel in relations:
        a = by_id.get(rel.first)
        b = by_id.get(rel.second)
        if rel.kind is RelationKind.PRECEDENCE:
            if a is not None and b is not None and not a.finish <= b.start:
                violated.append(rel)
        elif rel.kind is RelationKind.MUTEX:
            if a is not None and b is not None and not (a.finish < b.start or b.finish < a.start):
                violated.append(rel)
        else:  # concurrency: both must be scheduled and overlap
            if a is None or b is None or not max(a.start, b.start) <= min(a.finish, b.finish):
                violated.append(rel)
    return (len(violated) == 0, violated)


def relations_between(relations: Iterable[TemporalRelation], ids: set[int]) -> list[TemporalRelation]:
    """Relations whose endpoints both lie in `ids`."""
    return [r for r in relations if r.first in ids and r.second in ids]


def concurrency_partners(task_id: int, relations: Iterable[TemporalRelation]) -> list[int]:
    return sorted(r.other(task_id) for r in relations
                  if r.kind is RelationKind.CONCURRENCY and r.involves(task_id))


def predecessors(task_id: int, relations: Iterable[TemporalRelation]) -> list[int]:
    return sorted(r.first for r in relations
                  if r.kind is RelationKind.PRECEDENCE and r.second == task_id)
