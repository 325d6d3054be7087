"""Coordination strategies: the adaptive planner plus six baselines.

All team-cycle strategies (cocoplan, fix, fpmr, frdt, fimr) share the same
planner core and differ only in when they replan and how the communication
event is chosen. RING replaces team events with rotating pairwise meetings;
GREEDY has no scheduled events at all and coordinates opportunistically
whenever two agents come into range.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .meeting import AgentFinish, CommEvent, LastTaskState, chain_event, com_opt
from .planner import SearchStats, cocoplan, plan_last_state
from .radio import quality
from .schedule import group_covers
from .simulator import CycleRecord, Simulator
from .workspace import Position, astar_travel_time

STRATEGY_KINDS = ("cocoplan", "fix", "fpmr", "frdt", "fimr", "ring", "greedy")


@dataclass
class StrategyConfig:
    kind: str
    threshold_n: Optional[int] = None      # fix
    interval: Optional[float] = None       # fimr
    fixed_point: Optional[Position] = None  # fpmr
    leader: Optional[int] = None           # frdt
    ring_order: Optional[tuple[int, ...]] = None  # ring

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        required = {"fix": "threshold_n", "fimr": "interval",
                    "fpmr": "fixed_point", "frdt": "leader"}
        fld = required.get(self.kind)
        if fld is not None and getattr(self, fld) is None:
            raise ValueError(f"strategy {self.kind!r} requires {fld}")


@dataclass
class PlannerOptions:
    budget: Optional[float] = None
    node_limit: Optional[int] = 200
    generated_limit: Optional[int] = 2000
    gap: float = 0.5


def _pending_known(sim: Simulator, agent_ids) -> dict:
    known = sim.known_tasks(agent_ids)
    return {tid: task for tid, task in known.items() if sim.task_state[tid] == "pending"}


class TeamCycleController:
    """Shared execute/communicate/replan cycle for team-event strategies."""

    scheduled_events = True

    def __init__(self, cfg: StrategyConfig, options: PlannerOptions):
        self.cfg = cfg
        self.options = options
        self.pending_event: Optional[float] = None
        self.recheck_at: Optional[float] = None
        self.cycle = 0
        self.fimr_index = 0
        self.last_stats: Optional[SearchStats] = None

    def on_start(self, sim: Simulator) -> None:
        pass

    def on_tick(self, sim: Simulator, t: float) -> None:
        if self.cycle == 0:
            # Bootstrap: plans are distributed before the mission starts.
            self._replan(sim, t)
            return
        if self.pending_event is not None:
            ids = sorted(sim.agents)
            actual = sim.comm_ready(ids, self.pending_event, t)
            if actual is None:
                return
            sim.fire_comm_event(ids, actual)
            if self.cycle_records_open(sim):
                rec = sim.cycle_records[-1]
                rec.actual_event = actual
                rec.finish_times = {tid: sim.task_finish[tid] for tid in rec.assigned}
            self.pending_event = None
            self._replan(sim, actual)
        elif self.recheck_at is not None and t >= self.recheck_at - 1e-9:
            sim.merge_knowledge(sorted(sim.agents))  # agents are still co-located
            self.recheck_at = None
            self._replan(sim, t)

    def cycle_records_open(self, sim: Simulator) -> bool:
        return bool(sim.cycle_records) and sim.cycle_records[-1].actual_event is None

    def _event_optimizer(self, sim: Simulator, now: float):
        cfg, grid, params = self.cfg, sim.grid, sim.params
        if cfg.kind == "fpmr":
            point = cfg.fixed_point

            def fpmr_event(last: LastTaskState) -> CommEvent:
                positions = {a: point for a in last.finishes}
                t_c = max(f.time + astar_travel_time(f.position, point, grid, f.v_max)
                          for f in last.finishes.values())
                return CommEvent(t_c, positions)
            return fpmr_event
        if cfg.kind == "frdt":
            leader = cfg.leader

            def frdt_event(last: LastTaskState) -> Optional[CommEvent]:
                anchor = last.finishes[leader].position
                return chain_event(last, anchor, grid, params, resident=leader)
            return frdt_event
        if cfg.kind == "fimr":
            deadline = (self.fimr_index + 1) * cfg.interval
            # Reserve slack for tick-quantized execution so agents are in
            # place when the fixed-interval event fires.
            margin = 30.0 * sim.dt

            def fimr_event(last: LastTaskState) -> Optional[CommEvent]:
                anchor = last.latest().position
                ev = chain_event(last, anchor, grid, params, deadline=deadline - margin)
                if ev is None:
                    return None
                return CommEvent(deadline, ev.positions)
            return fimr_event
        return None  # default com_opt

    def _replan(self, sim: Simulator, now: float) -> None:
        team = {aid: sim.agents[aid].context(now) for aid in sorted(sim.agents)}
        tasks = _pending_known(sim, sorted(sim.agents))
        if self.cfg.kind == "fix" and len(tasks) < self.cfg.threshold_n:
            tasks = {}
        stats = SearchStats()
        plan = cocoplan(team, tasks, sim.relations, sim.grid, sim.params,
                        self.options.budget, now=now, completed=sim.done_ids(),
                        event_optimizer=self._event_optimizer(sim, now),
                        gap=self.options.gap, node_limit=self.options.node_limit,
                        generated_limit=self.options.generated_limit, stats=stats)
        self.last_stats = stats
        self.cycle += 1
        if self.cfg.kind == "fimr":
            self.fimr_index += 1
        assigned = tuple(sorted(plan.groups))
        sim.log(now, "replanned", self.cycle, *assigned)

        degenerate = plan.task_count() == 0 and plan.event.time <= now + 1e-9
        if degenerate:
            # Nothing to do and nowhere to go: poll again later if tasks may
            # still appear, otherwise the mission is over for this team.
            if self.cfg.kind == "fimr":
                sim.apply_team_plan({a: () for a in team}, {}, plan.event.time,
                                    plan.event.positions)
                self.pending_event = plan.event.time
            elif sim.has_future_work():
                self.recheck_at = now + sim.recheck_interval
            else:
                self.recheck_at = None
            return
        event = plan.event
        if self.cfg.kind in ("cocoplan", "fix") and plan.task_count() > 0:
            # Bound evaluation uses the fast single-pass optimizer; polish the
            # executed event with the thorough one.
            refined = com_opt(plan_last_state(plan, team, sim.tasks), sim.grid, sim.params,
                              gap=self.options.gap)
            if refined.time < event.time:
                event = refined
        sim.apply_team_plan(plan.sequences, plan.groups, event.time,
                            dict(event.positions),
                            planned_starts={tid: iv.start for tid, iv
                                            in plan.timetable.intervals.items()})
        self.pending_event = event.time
        sim.cycle_records.append(CycleRecord(start=now, participants=tuple(sorted(sim.agents)),
                                             assigned=assigned, planned_event=event.time))


class RingController:
    """Rotating pairwise meetings along a fixed ring of partners.

    Meetings advance in fixed rotation once both endpoints are free; when a
    meeting assigned nothing, the rotation pauses for a few recheck intervals
    so idle co-located pairs do not re-meet every tick.
    """

    scheduled_events = True

    def __init__(self, cfg: StrategyConfig, options: PlannerOptions):
        self.cfg = cfg
        self.options = options
        self.edge_idx = 0
        self.meeting: Optional[tuple[tuple[int, int], float]] = None
        self.edges: list[tuple[int, int]] = []
        self.next_meeting_at = 0.0

    def on_start(self, sim: Simulator) -> None:
        order = list(self.cfg.ring_order or sorted(sim.agents))
        if sorted(order) != sorted(sim.agents):
            raise ValueError("ring_order must be a permutation of the agent ids")
        n = len(order)
        edges = []
        for k in range(n):
            a, b = order[k], order[(k + 1) % n]
            if a != b and (min(a, b), max(a, b)) not in [(min(x, y), max(x, y)) for x, y in edges]:
                edges.append((a, b))
        self.edges = edges

    def on_tick(self, sim: Simulator, t: float) -> None:
        if not self.edges:
            return
        if self.meeting is not None:
            pair, planned = self.meeting
            actual = sim.comm_ready(pair, planned, t)
            if actual is None:
                return
            sim.fire_comm_event(pair, actual)
            assigned_any = self._plan_pair(sim, pair, actual)
            self.meeting = None
            self.edge_idx += 1
            if not assigned_any:
                self.next_meeting_at = actual + 4.0 * sim.recheck_interval
        else:
            if t < self.next_meeting_at - 1e-9:
                return
            pair = self.edges[self.edge_idx % len(self.edges)]
            if not all(self._free(sim, a) for a in pair):
                return
            last = LastTaskState({a: AgentFinish(a, t, sim.agents[a].position,
                                                 sim.agents[a].v_max) for a in pair})
            event = com_opt(last, sim.grid, sim.params, gap=self.options.gap)
            planned = max(event.time, t + sim.dt)
            for a in pair:
                ag = sim.agents[a]
                ag.comm_target = event.positions[a]
                ag.comm_time = planned
                ag.depart_time = None
                ag.arrived_comm_at = None
            self.meeting = (pair, planned)

    def _free(self, sim: Simulator, aid: int) -> bool:
        ag = sim.agents[aid]
        return ag.status in ("idle",) and not ag.queue and ag.comm_target is None

    def _plan_pair(self, sim: Simulator, pair, now: float) -> bool:
        team = {a: sim.agents[a].context(now) for a in pair}
        tasks = _pending_known(sim, pair)
        plan = cocoplan(team, tasks, sim.relations, sim.grid, sim.params,
                        self.options.budget, now=now, completed=sim.done_ids(),
                        gap=self.options.gap, node_limit=self.options.node_limit,
                        generated_limit=self.options.generated_limit)
        for tid in sorted(plan.groups):
            sim.groups[tid] = plan.groups[tid]
            sim.task_state[tid] = "claimed"
            sim.planned_start[tid] = plan.timetable.intervals[tid].start
        for a in sorted(pair):
            ag = sim.agents[a]
            ag.queue = list(plan.sequences.get(a, ()))
            ag.status = "idle"
            ag.leg = None
        sim.log(now, "replanned", self.edge_idx + 1, *sorted(plan.groups))
        sim.cycle_records.append(CycleRecord(start=now, participants=tuple(sorted(pair)),
                                             assigned=tuple(sorted(plan.groups)),
                                             planned_event=None, actual_event=now))
        return bool(plan.groups)


class GreedyController:
    """Opportunistic coordination whenever two agents come into range."""

    scheduled_events = False

    def __init__(self, cfg: StrategyConfig, options: PlannerOptions):
        self.cfg = cfg
        self.options = options
        self.in_range: set[tuple[int, int]] = set()
        self.last_sig: dict[tuple[int, int], tuple] = {}

    def on_start(self, sim: Simulator) -> None:
        pass

    def on_tick(self, sim: Simulator, t: float) -> None:
        self._solo_claims(sim, t)
        ids = sorted(sim.agents)
        done_count = sum(1 for s in sim.task_state.values() if s == "done")
        now_in_range = set()
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                a, b = ids[i], ids[j]
                q = quality(sim.agents[a].position, sim.agents[b].position, sim.grid, sim.params)
                if q > sim.params.threshold:
                    now_in_range.add((a, b))
        for pair in sorted(now_in_range):
            # One exchange per piece of news: a fresh encounter, a knowledge
            # difference, or a completion since this pair last talked.
            sig = (len(sim.agents[pair[0]].known | sim.agents[pair[1]].known), done_count)
            fresh = pair not in self.in_range
            delta = sim.agents[pair[0]].known != sim.agents[pair[1]].known
            stale = self.last_sig.get(pair) != sig
            if fresh or delta or stale:
                sim.log(t, "comm_event", *pair)
                sim.merge_knowledge(pair)
                self._pair_claims(sim, pair, t)
                self.last_sig[pair] = (len(sim.agents[pair[0]].known), done_count)
        self.in_range = now_in_range

    def _claimable(self, sim: Simulator, tid: int, agents: tuple[int, ...]) -> Optional[tuple[int, ...]]:
        """Smallest group from `agents` able to run the task now; None if none."""
        task = sim.tasks[tid]
        if sim.task_state[tid] != "pending":
            return None
        if any(sim.task_state.get(p) != "done" for p in sim._preds.get(tid, ())):
            return None
        slots = [(n, a) for n, a in task.requirements]
        needed = task.agents_required
        if needed > len(agents):
            return None
        candidates = []
        if needed == 1:
            action = slots[0][1]
            for a in agents:
                if action in sim.agents[a].capabilities:
                    travel = astar_travel_time(sim.agents[a].position, task.region_center,
                                               sim.grid, sim.agents[a].v_max)
                    candidates.append((travel, (a,)))
            if candidates:
                return min(candidates)[1]
            return None
        if needed == 2 and len(agents) == 2:
            team = {a: sim.agents[a].context(0.0) for a in agents}
            if group_covers(task, tuple(sorted(agents)), team):
                return tuple(sorted(agents))
        return None

    def _cluster_ids(self, sim: Simulator, tid: int) -> list[int]:
        return sorted(set([tid] + [p for p in sim._conc.get(tid, ()) if p in sim.tasks]))

    def _solo_claims(self, sim: Simulator, t: float) -> None:
        for aid in sorted(sim.agents):
            ag = sim.agents[aid]
            for tid in sorted(ag.known):
                if sim.task_state[tid] != "pending" or sim._conc.get(tid):
                    continue
                group = self._claimable(sim, tid, (aid,))
                if group is not None:
                    sim.assign(tid, group)

    def _pair_claims(self, sim: Simulator, pair: tuple[int, int], t: float) -> None:
        known = sorted(sim.agents[pair[0]].known | sim.agents[pair[1]].known)
        for tid in known:
            if sim.task_state[tid] != "pending":
                continue
            cluster = self._cluster_ids(sim, tid)
            if len(cluster) == 1:
                group = self._claimable(sim, tid, pair)
                if group is not None:
                    sim.assign(tid, group)
            elif len(cluster) == 2:
                # Overlapping execution needs disjoint solo groups, one per agent,
                # and both tasks must already be known to the pair.
                a, b = cluster
                if a not in known or b not in known:
                    continue
                if sim.task_state.get(a) != "pending" or sim.task_state.get(b) != "pending":
                    continue
                g_a = self._claimable(sim, a, (pair[0],))
                g_b = self._claimable(sim, b, (pair[1],))
                if g_a and g_b:
                    sim.assign(a, g_a)
                    sim.assign(b, g_b)
                    continue
                g_a = self._claimable(sim, a, (pair[1],))
                g_b = self._claimable(sim, b, (pair[0],))
                if g_a and g_b:
                    sim.assign(a, g_a)
                    sim.assign(b, g_b)


def make_controller(cfg: StrategyConfig, options: Optional[PlannerOptions] = None):
    options = options or PlannerOptions()
    if cfg.kind == "ring":
        return RingController(cfg, options)
    if cfg.kind == "greedy":
        return GreedyController(cfg, options)
    return TeamCycleController(cfg, options)
