"""Min-makespan timetabling for fixed assignments and per-agent task orders.

Start times are earliest-start solutions of a difference-constraint graph
(longest path from a virtual source). Edges encode per-agent travel chains,
synchronized multi-agent starts, precedence, and oriented mutex pairs.
Earliest starts minimize every start simultaneously, hence the makespan, for
a fixed mutex orientation; orientations are enumerated exhaustively while
their count is small and oriented greedily from the unconstrained schedule
otherwise. Concurrency relations are checked on the resulting intervals and
the schedule is rejected if they fail.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .tasks import ExecutionInterval, RelationKind, Task, TemporalRelation
from .workspace import GridMap, Position, astar_travel_time

MUTEX_GAP = 1e-6  # strict separation between mutex intervals, seconds
CONC_MARGIN = 0.5  # required overlap width for concurrency pairs, seconds
EXHAUSTIVE_MUTEX_LIMIT = 12


class InfeasibleSchedule(Exception):
    """No start times satisfy the constraint graph."""


class CapabilityError(ValueError):
    """An assigned group cannot cover a task's requirements."""


@dataclass(frozen=True)
class AgentContext:
    """An agent's state at the start of a planning cycle."""
    id: int
    position: Position
    ready_time: float
    v_max: float
    capabilities: frozenset[str]


@dataclass
class AssignedPlan:
    sequences: dict[int, list[int]]        # agent id -> ordered task ids
    groups: dict[int, tuple[int, ...]]     # task id -> sorted agent ids

    def assigned_ids(self) -> set[int]:
        return set(self.groups)

    def copy(self) -> "AssignedPlan":
        return AssignedPlan({a: list(s) for a, s in self.sequences.items()},
                            dict(self.groups))


@dataclass
class Timetable:
    intervals: dict[int, ExecutionInterval]
    arrivals: dict[int, list[tuple[int, float]]]  # agent -> [(task, arrival time)]
    makespan: float

    def interval_list(self) -> list[ExecutionInterval]:
        return [self.intervals[t] for t in sorted(self.intervals)]


def group_covers(task: Task, agent_ids: Sequence[int], team: Mapping[int, AgentContext]) -> bool:
    """True if the agents can be partitioned onto the task's requirement slots."""
    slots: list[str] = []
    for n, action in task.requirements:
        slots.extend([action] * n)
    if len(agent_ids) != len(slots):
        return False

    def match(i: int, used: set[int]) -> bool:
        if i == len(slots):
            return True
        for a in agent_ids:
            if a in used or slots[i] not in team[a].capabilities:
                continue
            used.add(a)
            if match(i + 1, used):
                return True
            used.remove(a)
        return False

    return match(0, set())


def eligible_groups(task: Task, team: Mapping[int, AgentContext]) -> list[tuple[int, ...]]:
    """All minimal agent groups able to cover the task, as sorted id tuples."""
    out: set[tuple[int, ...]] = set()
    per_req: list[list[tuple[int, ...]]] = []
    for n, action in task.requirements:
        capable = [a for a in sorted(team) if action in team[a].capabilities]
        per_req.append([c for c in itertools.combinations(capable, n)])
    for combo in itertools.product(*per_req):
        flat = [a for part in combo for a in part]
        if len(set(flat)) == len(flat):
            out.add(tuple(sorted(flat)))
    return sorted(out)


def _longest_path(task_ids: list[int], source_bound: dict[int, float],
                  edges: list[tuple[int, int, float]]) -> Optional[dict[int, float]]:
    """Earliest start times via Kahn propagation; None when the graph cycles."""
    succ: dict[int, list[tuple[int, float]]] = {t: [] for t in task_ids}
    indeg: dict[int, int] = {t: 0 for t in task_ids}
    for u, v, w in edges:
        succ[u].append((v, w))
        indeg[v] += 1
    start = {t: source_bound.get(t, 0.0) for t in task_ids}
    queue = sorted(t for t in task_ids if indeg[t] == 0)
    done = 0
    while queue:
        u = queue.pop(0)
        done += 1
        for v, w in succ[u]:
            if start[u] + w > start[v]:
                start[v] = start[u] + w
            indeg[v] -= 1
            if indeg[v] == 0:
                queue.append(v)
        queue.sort()
    if done != len(task_ids):
        return None
    return start


def schedule_min_makespan(plan: AssignedPlan, tasks: Mapping[int, Task],
                          relations: Sequence[TemporalRelation], grid: GridMap,
                          team: Mapping[int, AgentContext], *,
                          zero_travel: bool = False,
                          mutex_gap: float = MUTEX_GAP,
                          conc_margin: float = CONC_MARGIN,
                          exhaustive_limit: int = EXHAUSTIVE_MUTEX_LIMIT,
                          enforce_concurrency: bool = True) -> Timetable:
    """Timetable with minimal makespan for the given assignment and orders.

    Raises CapabilityError when a group cannot cover its task and
    InfeasibleSchedule when constraints are cyclic or a concurrency relation
    cannot hold under earliest starts.
    """
    assigned = plan.assigned_ids()
    for agent_id, seq in plan.sequences.items():
        if len(seq) != len(set(seq)):
            raise ValueError(f"agent {agent_id}: a task appears twice in its sequence")
    if {t for seq in plan.sequences.values() for t in seq} != assigned:
        raise ValueError("sequences and groups disagree on the assigned task set")
    for tid, group in plan.groups.items():
        members = [a for a, seq in plan.sequences.items() if tid in seq]
        if tuple(sorted(members)) != tuple(sorted(group)):
            raise ValueError(f"task {tid}: group does not match the sequences")
        if not group_covers(tasks[tid], group, team):
            raise CapabilityError(f"task {tid}: group {group} cannot cover requirements")

    task_ids = sorted(assigned)
    if not task_ids:
        return Timetable({}, {a: [] for a in plan.sequences}, 0.0)

    # Chain and source constraints from each agent's sequence.
    source_bound: dict[int, float] = {}
    chain_edges: list[tuple[int, int, float]] = []
    first_arrival: dict[tuple[int, int], float] = {}  # (agent, task) -> arrival lower bound
    for agent_id in sorted(plan.sequences):
        seq = plan.sequences[agent_id]
        if not seq:
            continue
        ctx = team[agent_id]
        pos = ctx.position
        prev: Optional[int] = None
        clock = ctx.ready_time
        for tid in seq:
            target = tasks[tid].region_center
            travel = 0.0 if zero_travel else astar_travel_time(pos, target, grid, ctx.v_max)
            if prev is None:
                bound = ctx.ready_time + travel
                source_bound[tid] = max(source_bound.get(tid, 0.0), bound)
            else:
                chain_edges.append((prev, tid, tasks[prev].duration + travel))
            first_arrival[(agent_id, tid)] = travel  # offset past the predecessor finish
            prev = tid
            pos = target

    rel_edges: list[tuple[int, int, float]] = []
    mutex_pairs: list[tuple[int, int]] = []
    conc_pairs: list[tuple[int, int]] = []
    for rel in relations:
        if rel.first not in assigned or rel.second not in assigned:
            continue
        if rel.kind is RelationKind.PRECEDENCE:
            rel_edges.append((rel.first, rel.second, tasks[rel.first].duration))
        elif rel.kind is RelationKind.MUTEX:
            pair = (min(rel.first, rel.second), max(rel.first, rel.second))
            if pair not in mutex_pairs:
                mutex_pairs.append(pair)
        else:
            conc_pairs.append((rel.first, rel.second))

    fixed_edges = chain_edges + rel_edges

    def solve(oriented: list[tuple[int, int]]) -> Optional[dict[int, float]]:
        edges = list(fixed_edges)
        for u, v in oriented:
            edges.append((u, v, tasks[u].duration + mutex_gap))
        return _longest_path(task_ids, source_bound, edges)

    def conc_ok(starts: dict[int, float]) -> bool:
        if not enforce_concurrency:
            return True
        # Overlap must leave a margin so tick-quantized execution cannot
        # squeeze the intersection shut at runtime.
        for a, b in conc_pairs:
            sa, fa = starts[a], starts[a] + tasks[a].duration
            sb, fb = starts[b], starts[b] + tasks[b].duration
            if not max(sa, sb) + conc_margin <= min(fa, fb):
                return False
        return True

    best: Optional[dict[int, float]] = None
    best_mk = float("inf")
    if len(mutex_pairs) <= exhaustive_limit:
        for bits in range(1 << len(mutex_pairs)):
            oriented = [(p if not (bits >> k) & 1 else (p[1], p[0]))
                        for k, p in enumerate(mutex_pairs)]
            starts = solve(oriented)
            if starts is None or not conc_ok(starts):
                continue
            mk = max(starts[t] + tasks[t].duration for t in task_ids)
            if mk < best_mk:
                best_mk = mk
                best = starts
    else:
        # Orient every pair along one total order taken from the mutex-free
        # schedule; a single consistent order can never create a cycle.
        base = solve([])
        if base is not None:
            order = sorted(task_ids, key=lambda t: (base[t], t))
            rank = {t: i for i, t in enumerate(order)}
            oriented = [(u, v) if rank[u] < rank[v] else (v, u) for u, v in mutex_pairs]
            starts = solve(oriented)
            if starts is not None and conc_ok(starts):
                best = starts
                best_mk = max(starts[t] + tasks[t].duration for t in task_ids)

    if best is None:
        raise InfeasibleSchedule("no feasible orientation of the constraint graph")

    intervals = {t: ExecutionInterval(t, best[t], best[t] + tasks[t].duration) for t in task_ids}
    arrivals: dict[int, list[tuple[int, float]]] = {a: [] for a in plan.sequences}
    for agent_id in sorted(plan.sequences):
        seq = plan.sequences[agent_id]
        prev_finish = team[agent_id].ready_time
        for tid in seq:
            arrival = prev_finish + first_arrival[(agent_id, tid)]
            arrivals[agent_id].append((tid, arrival))
            prev_finish = intervals[tid].finish
    return Timetable(intervals, arrivals, best_mk)
