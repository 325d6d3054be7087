"""Joint optimization of task assignment and the next communication event.

Best-first branch and bound over partial collective plans. Each node fixes a
set of assigned tasks with per-agent orders; its lower bound is the rate of
the best full plan reachable by greedily appending tasks (scheduling each
candidate and optimizing its communication event), and its upper bound is a
zero-travel relaxation that dominates every descendant's achievable rate.
The search is anytime: the incumbent is always a feasible full plan.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .meeting import AgentFinish, CommEvent, LastTaskState, com_opt, com_opt_fast
from .radio import CommParams, comm_graph, is_connected
from .schedule import (AgentContext, AssignedPlan, InfeasibleSchedule, Timetable,
                       eligible_groups, schedule_min_makespan)
from .tasks import RelationKind, Task, TemporalRelation, concurrency_partners
from .workspace import GridMap, astar_travel_time

IMPROVEMENT_EPS = 1e-9


@dataclass
class CollectivePlan:
    cycle_start: float
    sequences: dict[int, tuple[int, ...]]   # agent -> ordered task ids
    groups: dict[int, tuple[int, ...]]      # task -> agent group
    timetable: Timetable
    event: CommEvent
    rate: float

    def task_count(self) -> int:
        return len(self.groups)


@dataclass
class PlanNode:
    node_id: int
    depth: int
    sequences: dict[int, tuple[int, ...]]
    groups: dict[int, tuple[int, ...]]
    lb: float = -math.inf
    ub: float = math.inf
    plan: Optional[CollectivePlan] = None

    def assigned(self) -> frozenset[int]:
        return frozenset(self.groups)


@dataclass
class PlannerProblem:
    """Inputs shared by every bound evaluation of one planning cycle."""
    team: dict[int, AgentContext]
    tasks: dict[int, Task]                  # detected, not yet completed
    relations: Sequence[TemporalRelation]
    grid: GridMap
    params: CommParams
    now: float
    completed: frozenset[int] = frozenset()
    event_optimizer: Optional[Callable[[LastTaskState], Optional[CommEvent]]] = None
    gap: float = 0.5
    _clusters: Optional[dict[int, tuple[int, ...]]] = field(default=None, repr=False)
    _groups_memo: dict[int, list[tuple[int, ...]]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.event_optimizer is None:
            self.event_optimizer = self._default_event
        if not self.team:
            raise ValueError("team must be nonempty")

    def _default_event(self, last: LastTaskState) -> CommEvent:
        at_start = all(fin.time == self.team[a].ready_time and fin.position == self.team[a].position
                       for a, fin in last.finishes.items())
        if at_start:
            positions = {a: fin.position for a, fin in last.finishes.items()}
            if is_connected(comm_graph(positions, self.grid, self.params)):
                return CommEvent(self.now, positions)
        return com_opt_fast(last, self.grid, self.params, gap=self.gap)

    def groups_for(self, task_id: int) -> list[tuple[int, ...]]:
        if task_id not in self._groups_memo:
            self._groups_memo[task_id] = eligible_groups(self.tasks[task_id], self.team)
        return self._groups_memo[task_id]

    def cluster_of(self, task_id: int) -> tuple[int, ...]:
        """Concurrency component of a task over the known task set.

        Concurrency-linked tasks must execute with overlapping intervals, so
        plans admit them only jointly; the component is the unit of insertion.
        """
        if self._clusters is None:
            parent = {t: t for t in self.tasks}

            def find(x: int) -> int:
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for rel in self.relations:
                if rel.kind is RelationKind.CONCURRENCY and rel.first in parent and rel.second in parent:
                    ra, rb = find(rel.first), find(rel.second)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
            comps: dict[int, list[int]] = {}
            for t in self.tasks:
                comps.setdefault(find(t), []).append(t)
            self._clusters = {}
            for members in comps.values():
                tup = tuple(sorted(members))
                for t in tup:
                    self._clusters[t] = tup
        return self._clusters[task_id]


def _predecessor_map(problem: PlannerProblem) -> dict[int, list[int]]:
    preds: dict[int, list[int]] = {}
    for rel in problem.relations:
        if rel.kind is RelationKind.PRECEDENCE:
            preds.setdefault(rel.second, []).append(rel.first)
    return preds


def get_feasible_tasks(assigned: frozenset[int], problem: PlannerProblem) -> list[int]:
    """Representative tasks whose concurrency cluster can be added next.

    A cluster is addable when every member is detected, unassigned, not
    completed, coverable by the team, and has all precedence predecessors
    already assigned or completed. Only the lowest member id is returned for
    each cluster; expansion inserts the whole cluster jointly.
    """
    preds = _predecessor_map(problem)
    done = assigned | problem.completed

    def member_ok(t: int, cluster: set[int]) -> bool:
        if t not in problem.tasks or t in assigned or t in problem.completed:
            return False
        if not problem.groups_for(t):
            return False
        # Predecessors must be assigned, completed, or co-added in the same
        # cluster insertion.
        if not all(p in done or p in cluster for p in preds.get(t, ())):
            return False
        # A concurrency partner outside the known set (undetected, or already
        # completed in an earlier cycle) makes the required overlap impossible
        # for now, so the whole cluster stays out.
        partners = concurrency_partners(t, problem.relations)
        return all(p in problem.tasks for p in partners)

    out = []
    seen: set[int] = set()
    for t in sorted(problem.tasks):
        if t in assigned or t in problem.completed or t in seen:
            continue
        cluster = [m for m in problem.cluster_of(t) if m not in assigned]
        seen.update(cluster)
        if any(m in problem.completed for m in cluster):
            continue  # overlap with an already-finished partner is impossible
        cset = set(cluster)
        if all(member_ok(m, cset) for m in cluster):
            out.append(min(cluster))
    return out


def _related_to_assigned(cluster: Sequence[int], assigned: frozenset[int],
                         relations: Sequence[TemporalRelation]) -> bool:
    cset = set(cluster)
    for rel in relations:
        if (rel.first in cset and rel.second in assigned) or (rel.second in cset and rel.first in assigned):
            return True
    return False


def expand_node(node: PlanNode, task_id: int, problem: PlannerProblem,
                next_id: Callable[[], int]) -> list[PlanNode]:
    """Children assigning the task's cluster to every eligible group choice.

    Tasks unrelated to the already-assigned set are appended at sequence
    tails only; related tasks are additionally tried at every interior
    insertion position, since only relations can make interiors matter.
    Multi-task clusters always use interior insertion so every relative
    placement of the jointly added members stays reachable.
    """
    cluster = sorted(m for m in problem.cluster_of(task_id) if m not in node.groups)
    interior = (len(cluster) > 1
                or _related_to_assigned(cluster, node.assigned(), problem.relations))
    children: list[PlanNode] = []

    def place(idx: int, seqs: dict[int, list[int]], groups: dict[int, tuple[int, ...]]):
        if idx == len(cluster):
            children.append(PlanNode(
                node_id=next_id(), depth=node.depth + 1,
                sequences={a: tuple(s) for a, s in seqs.items()},
                groups=dict(groups)))
            return
        t = cluster[idx]
        for group in problem.groups_for(t):
            if interior:
                slots = [range(len(seqs[a]) + 1) for a in group]
                for combo in itertools.product(*slots):
                    new_seqs = {a: list(s) for a, s in seqs.items()}
                    for a, pos in zip(group, combo):
                        new_seqs[a].insert(pos, t)
                    new_groups = dict(groups)
                    new_groups[t] = group
                    place(idx + 1, new_seqs, new_groups)
            else:
                new_seqs = {a: list(s) for a, s in seqs.items()}
                for a in group:
                    new_seqs[a].append(t)
                new_groups = dict(groups)
                new_groups[t] = group
                place(idx + 1, new_seqs, new_groups)

    place(0, {a: list(s) for a, s in node.sequences.items()}, dict(node.groups))
    return children


def _last_state(sequences: Mapping[int, Sequence[int]], timetable: Timetable,
                problem: PlannerProblem) -> LastTaskState:
    finishes = {}
    for a, ctx in problem.team.items():
        seq = sequences.get(a, ())
        if seq:
            last = seq[-1]
            finishes[a] = AgentFinish(a, timetable.intervals[last].finish,
                                      problem.tasks[last].region_center, ctx.v_max)
        else:
            finishes[a] = AgentFinish(a, ctx.ready_time, ctx.position, ctx.v_max)
    return LastTaskState(finishes)


def plan_last_state(plan: CollectivePlan, team: Mapping[int, AgentContext],
                    tasks: Mapping[int, Task]) -> LastTaskState:
    """Per-agent finish time and position implied by a collective plan."""
    finishes = {}
    for a, ctx in team.items():
        seq = plan.sequences.get(a, ())
        if seq:
            last = seq[-1]
            finishes[a] = AgentFinish(a, plan.timetable.intervals[last].finish,
                                      tasks[last].region_center, ctx.v_max)
        else:
            finishes[a] = AgentFinish(a, ctx.ready_time, ctx.position, ctx.v_max)
    return LastTaskState(finishes)


def build_plan(sequences: Mapping[int, Sequence[int]], groups: Mapping[int, tuple[int, ...]],
               problem: PlannerProblem) -> Optional[CollectivePlan]:
    """Schedule + event-optimize a candidate assignment; None when infeasible."""
    plan = AssignedPlan({a: list(sequences.get(a, ())) for a in problem.team}, dict(groups))
    try:
        timetable = schedule_min_makespan(plan, problem.tasks, problem.relations,
                                          problem.grid, problem.team)
    except InfeasibleSchedule:
        return None
    event = problem.event_optimizer(_last_state(sequences, timetable, problem))
    if event is None:
        return None
    if groups and event.time > problem.now:
        rate = len(groups) / (event.time - problem.now)
    else:
        rate = 0.0
    return CollectivePlan(problem.now, {a: tuple(sequences.get(a, ())) for a in problem.team},
                          dict(groups), timetable, event, rate)


def objective_rate(plan: CollectivePlan, cycle_start: float) -> float:
    """Tasks finished by the event divided by the cycle span."""
    if plan.event.time <= cycle_start:
        raise ValueError("event time must lie strictly after the cycle start")
    count = sum(1 for iv in plan.timetable.intervals.values() if iv.finish <= plan.event.time)
    return count / (plan.event.time - cycle_start)


def low_bound(node: PlanNode, problem: PlannerProblem) -> Optional[CollectivePlan]:
    """Best full plan from greedy completion of the node's partial plan.

    Iteratively appends the feasible cluster whose cheapest eligible group
    minimizes the worst member travel time, re-schedules, re-optimizes the
    event, and keeps going while the completion rate strictly improves.
    Returns the best plan seen (the node's own plan counts), or None when no
    candidate schedules.
    """
    best = build_plan(node.sequences, node.groups, problem)
    seqs = {a: list(s) for a, s in node.sequences.items()}
    groups = dict(node.groups)
    end_pos = {}
    for a, ctx in problem.team.items():
        seq = seqs.get(a, [])
        end_pos[a] = problem.tasks[seq[-1]].region_center if seq else ctx.position

    skipped: set[int] = set()
    while True:
        feas = [t for t in get_feasible_tasks(frozenset(groups), problem) if t not in skipped]
        if not feas:
            break
        scored = []
        for rep in feas:
            cluster = sorted(m for m in problem.cluster_of(rep) if m not in groups)
            chosen: dict[int, tuple[int, ...]] = {}
            cost = 0.0
            for t in cluster:
                target = problem.tasks[t].region_center
                best_group, best_cost = None, math.inf
                for group in problem.groups_for(t):
                    c = max(astar_travel_time(end_pos[a], target, problem.grid,
                                              problem.team[a].v_max) for a in group)
                    if c < best_cost:
                        best_group, best_cost = group, c
                chosen[t] = best_group
                cost = max(cost, best_cost)
            scored.append((cost, rep, cluster, chosen))
        scored.sort(key=lambda s: (s[0], s[1]))

        progressed = False
        for cost, rep, cluster, chosen in scored:
            new_seqs = {a: list(s) for a, s in seqs.items()}
            new_groups = dict(groups)
            for t in cluster:
                for a in chosen[t]:
                    new_seqs[a].append(t)
                new_groups[t] = chosen[t]
            cand = build_plan(new_seqs, new_groups, problem)
            if cand is None:
                skipped.add(rep)
                continue
            if best is None or cand.rate > best.rate + IMPROVEMENT_EPS:
                seqs, groups = new_seqs, new_groups
                for t in cluster:
                    for a in chosen[t]:
                        end_pos[a] = problem.tasks[t].region_center
                best = cand
                progressed = True
            break
        if not progressed:
            break
    return best


def up_bound(node: PlanNode, problem: PlannerProblem) -> float:
    """Rate bound under instantaneous travel, sound for the whole subtree.

    Descendants only insert tasks, so their event can never precede the
    zero-travel makespan of this node's plan; adding j tasks also costs at
    least the j-th smallest remaining duration and the matching agent-seconds
    of capacity. The best count/time quotient over j dominates every
    descendant's achievable rate.
    """
    plan = AssignedPlan({a: list(node.sequences.get(a, ())) for a in problem.team},
                        dict(node.groups))
    try:
        tt0 = schedule_min_makespan(plan, problem.tasks, problem.relations, problem.grid,
                                    problem.team, zero_travel=True, enforce_concurrency=False)
    except InfeasibleSchedule:
        return -math.inf  # constraint cycle: no descendant can schedule either
    count0 = len(node.groups)
    floor0 = max(tt0.makespan - problem.now, 0.0)
    rates = [count0 / floor0 if count0 and floor0 > 0 else 0.0]

    addable = [problem.tasks[t] for t in sorted(problem.tasks)
               if t not in node.groups and t not in problem.completed and problem.groups_for(t)]
    durs = sorted(t.duration for t in addable)
    works = sorted(t.duration * t.agents_required for t in addable)
    w_assigned = sum(problem.tasks[t].duration * problem.tasks[t].agents_required
                     for t in node.groups)
    n_team = len(problem.team)
    w_prefix = 0.0
    for j in range(1, len(addable) + 1):
        w_prefix += works[j - 1]
        t_floor = max(floor0, durs[j - 1], (w_assigned + w_prefix) / n_team)
        rates.append((count0 + j) / t_floor)
    return max(rates)


@dataclass
class SearchStats:
    nodes_generated: int = 0
    nodes_expanded: int = 0
    nodes_pruned: int = 0
    extraction_trace: list[tuple[float, Optional[float]]] = field(default_factory=list)
    incumbent_trace: list[float] = field(default_factory=list)
    elapsed: float = 0.0
    keep_nodes: bool = False
    nodes: list[PlanNode] = field(default_factory=list)


def zero_task_plan(problem: PlannerProblem) -> CollectivePlan:
    """Fallback plan assigning nothing; rendezvous at the current positions
    when they are already connected, otherwise a gathered event."""
    empty_seqs = {a: () for a in problem.team}
    plan = build_plan(empty_seqs, {}, problem)
    if plan is not None:
        return plan
    # Custom event optimizers may refuse even the empty plan; gather instead.
    last = LastTaskState({a: AgentFinish(a, ctx.ready_time, ctx.position, ctx.v_max)
                          for a, ctx in problem.team.items()})
    event = com_opt(last, problem.grid, problem.params, budget=None, gap=problem.gap)
    tt = Timetable({}, {a: [] for a in problem.team}, 0.0)
    return CollectivePlan(problem.now, empty_seqs, {}, tt, event, 0.0)


def cocoplan(team: Mapping[int, AgentContext], tasks: Mapping[int, Task],
             relations: Sequence[TemporalRelation], grid: GridMap, params: CommParams,
             budget: Optional[float] = None, *, now: float = 0.0,
             completed: frozenset[int] = frozenset(),
             event_optimizer: Optional[Callable[[LastTaskState], Optional[CommEvent]]] = None,
             gap: float = 0.5, node_limit: Optional[int] = None,
             generated_limit: Optional[int] = None,
             stats: Optional[SearchStats] = None) -> CollectivePlan:
    """Best collective plan for the current cycle, found by branch and bound.

    Anytime: with a wall-clock budget or node limit the incumbent found so
    far is returned; with neither, the search is exhaustive and exact. The
    returned plan always has a connected communication event and a timetable
    satisfying every temporal relation among its tasks.
    """
    problem = PlannerProblem(team=dict(team), tasks=dict(tasks), relations=list(relations),
                             grid=grid, params=params, now=now, completed=completed,
                             event_optimizer=event_optimizer, gap=gap)
    if stats is None:
        stats = SearchStats()
    t_start = _time.monotonic()

    def time_left() -> bool:
        if generated_limit is not None and stats.nodes_generated >= generated_limit:
            return False
        return budget is None or (_time.monotonic() - t_start) < budget

    incumbent = zero_task_plan(problem)
    lb_star = incumbent.rate

    next_node_id = itertools.count()
    root = PlanNode(node_id=next(next_node_id), depth=0,
                    sequences={a: () for a in problem.team}, groups={})
    root_plan = low_bound(root, problem)
    if root_plan is not None and root_plan.rate > lb_star:
        incumbent, lb_star = root_plan, root_plan.rate
    root.lb = root_plan.rate if root_plan else -math.inf
    root.ub = up_bound(root, problem)
    root.plan = root_plan
    stats.nodes_generated += 1
    if stats.keep_nodes:
        stats.nodes.append(root)

    heap: list[tuple[float, int, int]] = []
    nodes: dict[int, PlanNode] = {}
    if root.ub > lb_star:
        heap.append((-root.ub, -root.depth, root.node_id))
        nodes[root.node_id] = root

    while heap and time_left():
        if node_limit is not None and stats.nodes_expanded >= node_limit:
            break
        neg_ub, _, nid = heapq.heappop(heap)
        node = nodes.pop(nid)
        next_ub = -heap[0][0] if heap else None
        stats.extraction_trace.append((node.ub, next_ub))
        stats.incumbent_trace.append(lb_star)
        if not node.ub > lb_star:
            stats.nodes_pruned += 1
            continue
        stats.nodes_expanded += 1
        for rep in get_feasible_tasks(node.assigned(), problem):
            if not time_left():
                break
            for child in expand_node(node, rep, problem, lambda: next(next_node_id)):
                if not time_left():
                    break
                child_plan = low_bound(child, problem)
                child.plan = child_plan
                child.lb = child_plan.rate if child_plan is not None else -math.inf
                child.ub = up_bound(child, problem)
                stats.nodes_generated += 1
                if stats.keep_nodes:
                    stats.nodes.append(child)
                if child_plan is not None and child_plan.rate > lb_star:
                    incumbent, lb_star = child_plan, child_plan.rate
                if child.ub > lb_star:
                    nodes[child.node_id] = child
                    heapq.heappush(heap, (-child.ub, -child.depth, child.node_id))
                else:
                    stats.nodes_pruned += 1
    stats.elapsed = _time.monotonic() - t_start
    return incumbent
