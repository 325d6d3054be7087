"""Scenario configuration: loading, validation, serialization, task generation.

Configs are JSON files. Agent starts and task centers are snapped to free
cell centers at load time so planned travel matches simulated motion
exactly. Validation collects every problem and reports the offending field.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .radio import CommParams
from .simulator import AgentState, Simulator
from .strategies import PlannerOptions, StrategyConfig, make_controller
from .tasks import RelationKind, Task, TemporalRelation
from .workspace import GridMap, MapError, Position, load_grid

SPATIAL_PATTERNS = ("clustered", "uniform", "sparse")
TEMPORAL_PATTERNS = ("spiky", "uniform", "low_frequency")


class ScenarioError(ValueError):
    """Validation failure; message lists every offending field."""


@dataclass(frozen=True)
class AgentSpec:
    id: int
    start: Position
    v_max: float
    sensor_range: float
    capabilities: tuple[str, ...]


@dataclass
class Phase:
    start: float
    end: float
    spatial: str
    temporal: str


@dataclass
class GeneratorSpec:
    phases: list[Phase]
    rate: float = 0.05
    low_frequency_factor: float = 0.3
    burst_rate: float = 0.01
    burst_size: float = 4.0
    burst_window: float = 5.0
    cluster_count: int = 3
    cluster_std: float = 2.0
    sparse_min_dist: float = 5.0
    duration_range: tuple[float, float] = (5.0, 15.0)
    radius: float = 1.0
    requirement_options: tuple[tuple[tuple[int, str], ...], ...] = (((1, "work"),),)

    def __post_init__(self):
        prev_end = -math.inf
        for i, ph in enumerate(self.phases):
            if ph.spatial not in SPATIAL_PATTERNS:
                raise ScenarioError(f"generator.phases[{i}].spatial: unknown pattern {ph.spatial!r}")
            if ph.temporal not in TEMPORAL_PATTERNS:
                raise ScenarioError(f"generator.phases[{i}].temporal: unknown pattern {ph.temporal!r}")
            if ph.start < prev_end:
                raise ScenarioError(f"generator.phases[{i}]: phases overlap or are unordered")
            prev_end = ph.end


@dataclass
class ScenarioConfig:
    map_path: str
    grid: GridMap
    agents: list[AgentSpec]
    params: CommParams
    tasks: list[Task]
    relations: list[TemporalRelation]
    strategy: StrategyConfig
    horizon: float
    seed: int = 0
    dt: float = 0.1
    planner_budget: Optional[float] = None
    node_limit: Optional[int] = 200
    gap: float = 0.5
    recheck_interval: float = 5.0
    generator: Optional[GeneratorSpec] = None

    @property
    def env(self) -> str:
        return Path(self.map_path).stem

    def __eq__(self, other) -> bool:
        return isinstance(other, ScenarioConfig) and serialize_scenario(self) == serialize_scenario(other)


def _poisson(lam: float, rng: random.Random) -> int:
    if lam <= 0:
        return 0
    # Knuth's method underflows for large rates; split into chunks and sum
    # (a sum of independent Poisson draws is Poisson in the summed rate).
    total = 0
    while lam > 30.0:
        total += _poisson_small(30.0, rng)
        lam -= 30.0
    return total + _poisson_small(lam, rng)


def _poisson_small(lam: float, rng: random.Random) -> int:
    limit = math.exp(-lam)
    k, p = 0, 1.0
    while True:
        p *= rng.random()
        if p <= limit:
            return k
        k += 1


def generate_tasks(spec: GeneratorSpec, seed: int, grid: GridMap, start_id: int = 0) -> list[Task]:
    """Deterministic task stream for the given seed.

    Arrival times follow per-phase Poisson processes (plain, thinned, or
    bursty); positions are drawn uniformly over free cells, around cluster
    centers, or with a minimum pairwise separation.
    """
    rng = random.Random(seed)
    free = grid.free_cells()
    if not free:
        raise ScenarioError("generator: map has no free cells")

    def uniform_pos() -> Position:
        return grid.center(free[rng.randrange(len(free))])

    tasks: list[Task] = []
    next_id = start_id
    for ph in spec.phases:
        span = ph.end - ph.start
        if span <= 0:
            continue
        times: list[float] = []
        if ph.temporal == "uniform":
            times = [ph.start + rng.random() * span for _ in range(_poisson(spec.rate * span, rng))]
        elif ph.temporal == "low_frequency":
            lam = spec.rate * spec.low_frequency_factor * span
            times = [ph.start + rng.random() * span for _ in range(_poisson(lam, rng))]
        else:  # spiky
            for _ in range(_poisson(spec.burst_rate * span, rng)):
                burst_at = ph.start + rng.random() * span
                size = 1 + _poisson(max(spec.burst_size - 1.0, 0.0), rng)
                for _ in range(size):
                    t = burst_at + rng.random() * spec.burst_window
                    if t < ph.end:
                        times.append(t)
        times.sort()

        centers = [uniform_pos() for _ in range(spec.cluster_count)] if ph.spatial == "clustered" else []
        placed: list[Position] = []
        for t_release in times:
            if ph.spatial == "uniform":
                pos = uniform_pos()
            elif ph.spatial == "clustered":
                pos = None
                for _ in range(200):
                    c = centers[rng.randrange(len(centers))]
                    cand = Position(rng.gauss(c.x, spec.cluster_std), rng.gauss(c.y, spec.cluster_std))
                    if grid.contains(cand) and grid.is_free(cand):
                        pos = grid.snap(cand)
                        break
                if pos is None:
                    pos = uniform_pos()
            else:  # sparse
                pos = None
                for _ in range(200):
                    cand = uniform_pos()
                    if all(cand.dist(p) >= spec.sparse_min_dist for p in placed):
                        pos = cand
                        break
                if pos is None:
                    pos = uniform_pos()
                placed.append(pos)
            duration = rng.uniform(*spec.duration_range)
            req = spec.requirement_options[rng.randrange(len(spec.requirement_options))]
            tasks.append(Task(next_id, pos, spec.radius, duration, tuple(req),
                              release_time=t_release))
            next_id += 1
    return tasks


# -- config parsing ---------------------------------------------------------

def _parse_generator(raw: dict, errors: list[str]) -> Optional[GeneratorSpec]:
    try:
        phases = [Phase(float(p["start"]), float(p["end"]), p["spatial"], p["temporal"])
                  for p in raw.get("phases", [])]
        opts = {k: v for k, v in raw.items() if k != "phases"}
        if "duration_range" in opts:
            opts["duration_range"] = tuple(opts["duration_range"])
        if "requirement_options" in opts:
            opts["requirement_options"] = tuple(
                tuple((int(n), str(a)) for n, a in option) for option in opts["requirement_options"])
        return GeneratorSpec(phases=phases, **opts)
    except (KeyError, TypeError, ValueError, ScenarioError) as exc:
        errors.append(f"generator: {exc}")
        return None


def scenario_from_dict(raw: dict, base_dir: Path) -> ScenarioConfig:
    errors: list[str] = []

    map_path = raw.get("map")
    grid = None
    if not isinstance(map_path, str):
        errors.append("map: required string path")
    else:
        try:
            grid = load_grid(base_dir / map_path)
        except (OSError, MapError) as exc:
            errors.append(f"map: {exc}")
    if errors:
        raise ScenarioError("; ".join(errors))

    agents: list[AgentSpec] = []
    seen_ids = set()
    for i, a in enumerate(raw.get("agents", [])):
        fieldname = f"agents[{i}]"
        try:
            aid = int(a["id"])
            start = Position(float(a["start"][0]), float(a["start"][1]))
            if aid in seen_ids:
                errors.append(f"{fieldname}.id: duplicate agent id {aid}")
            seen_ids.add(aid)
            if not grid.contains(start):
                errors.append(f"{fieldname}.start: outside the map")
            elif not grid.is_free(start):
                errors.append(f"{fieldname}.start: agent {aid} starts on an obstacle")
            else:
                agents.append(AgentSpec(aid, grid.snap(start), float(a["v_max"]),
                                        float(a["sensor_range"]),
                                        tuple(sorted(set(a["capabilities"])))))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            errors.append(f"{fieldname}: {exc}")
    if not agents:
        errors.append("agents: at least one agent required")

    try:
        params = CommParams(**raw.get("comm", {}))
    except (TypeError, ValueError) as exc:
        errors.append(f"comm: {exc}")
        params = CommParams()

    tasks: list[Task] = []
    task_ids = set()
    for i, t in enumerate(raw.get("tasks", [])):
        fieldname = f"tasks[{i}]"
        try:
            tid = int(t["id"])
            center = Position(float(t["center"][0]), float(t["center"][1]))
            if tid in task_ids:
                errors.append(f"{fieldname}.id: duplicate task id {tid}")
            task_ids.add(tid)
            if not grid.contains(center):
                errors.append(f"{fieldname}.center: outside the map")
            elif not grid.is_free(center):
                errors.append(f"{fieldname}.center: task {tid} lies on an obstacle")
            else:
                tasks.append(Task(tid, grid.snap(center), float(t.get("radius", 1.0)),
                                  float(t["duration"]),
                                  tuple((int(n), str(act)) for n, act in t["requirements"]),
                                  release_time=float(t.get("release_time", 0.0))))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            errors.append(f"{fieldname}: {exc}")

    generator = None
    if "generator" in raw:
        generator = _parse_generator(raw["generator"], errors)

    relations: list[TemporalRelation] = []
    pair_seen = set()
    for i, r in enumerate(raw.get("relations", [])):
        fieldname = f"relations[{i}]"
        try:
            rel = TemporalRelation(int(r[0]), int(r[1]), RelationKind(r[2]))
            key = (min(rel.first, rel.second), max(rel.first, rel.second))
            if key in pair_seen:
                errors.append(f"{fieldname}: duplicate relation for pair {key}")
            pair_seen.add(key)
            if generator is None:
                if rel.first not in task_ids:
                    errors.append(f"{fieldname}: dangling task id {rel.first}")
                if rel.second not in task_ids:
                    errors.append(f"{fieldname}: dangling task id {rel.second}")
            relations.append(rel)
        except (TypeError, ValueError, IndexError) as exc:
            errors.append(f"{fieldname}: {exc}")

    strategy = None
    try:
        s = dict(raw.get("strategy", {}))
        if "fixed_point" in s and s["fixed_point"] is not None:
            fp = Position(float(s["fixed_point"][0]), float(s["fixed_point"][1]))
            if not grid.contains(fp) or not grid.is_free(fp):
                errors.append("strategy.fixed_point: not a free position")
            s["fixed_point"] = grid.snap(fp)
        if "ring_order" in s and s["ring_order"] is not None:
            s["ring_order"] = tuple(int(x) for x in s["ring_order"])
        strategy = StrategyConfig(**s)
        if strategy.kind == "frdt" and strategy.leader not in {a.id for a in agents}:
            errors.append("strategy.leader: unknown agent id")
    except (TypeError, ValueError) as exc:
        errors.append(f"strategy: {exc}")

    try:
        horizon = float(raw["horizon"])
        if horizon <= 0:
            errors.append("horizon: must be > 0")
    except (KeyError, TypeError, ValueError):
        errors.append("horizon: required positive number")
        horizon = 0.0

    if errors:
        raise ScenarioError("; ".join(errors))

    return ScenarioConfig(
        map_path=map_path, grid=grid, agents=sorted(agents, key=lambda a: a.id),
        params=params, tasks=sorted(tasks, key=lambda t: t.id), relations=relations,
        strategy=strategy, horizon=horizon,
        seed=int(raw.get("seed", 0)), dt=float(raw.get("dt", 0.1)),
        planner_budget=raw.get("planner_budget"),
        node_limit=raw.get("node_limit", 200),
        gap=float(raw.get("gap", 0.5)),
        recheck_interval=float(raw.get("recheck_interval", 5.0)),
        generator=generator)


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path.name} line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(raw, path.parent)


def serialize_scenario(cfg: ScenarioConfig) -> dict:
    out = {
        "map": cfg.map_path,
        "agents": [{"id": a.id, "start": [a.start.x, a.start.y], "v_max": a.v_max,
                    "sensor_range": a.sensor_range, "capabilities": list(a.capabilities)}
                   for a in cfg.agents],
        "comm": {"tx_power": cfg.params.tx_power, "pl_ref": cfg.params.pl_ref,
                 "ref_dist": cfg.params.ref_dist, "path_exponent": cfg.params.path_exponent,
                 "attenuation": cfg.params.attenuation, "threshold": cfg.params.threshold},
        "tasks": [{"id": t.id, "center": [t.region_center.x, t.region_center.y],
                   "radius": t.region_radius, "duration": t.duration,
                   "requirements": [[n, a] for n, a in t.requirements],
                   "release_time": t.release_time} for t in cfg.tasks],
        "relations": [[r.first, r.second, r.kind.value] for r in cfg.relations],
        "strategy": {"kind": cfg.strategy.kind},
        "horizon": cfg.horizon,
        "seed": cfg.seed,
        "dt": cfg.dt,
        "planner_budget": cfg.planner_budget,
        "node_limit": cfg.node_limit,
        "gap": cfg.gap,
        "recheck_interval": cfg.recheck_interval,
    }
    s = cfg.strategy
    if s.threshold_n is not None:
        out["strategy"]["threshold_n"] = s.threshold_n
    if s.interval is not None:
        out["strategy"]["interval"] = s.interval
    if s.fixed_point is not None:
        out["strategy"]["fixed_point"] = [s.fixed_point.x, s.fixed_point.y]
    if s.leader is not None:
        out["strategy"]["leader"] = s.leader
    if s.ring_order is not None:
        out["strategy"]["ring_order"] = list(s.ring_order)
    if cfg.generator is not None:
        g = cfg.generator
        out["generator"] = {
            "phases": [{"start": p.start, "end": p.end, "spatial": p.spatial,
                        "temporal": p.temporal} for p in g.phases],
            "rate": g.rate, "low_frequency_factor": g.low_frequency_factor,
            "burst_rate": g.burst_rate, "burst_size": g.burst_size,
            "burst_window": g.burst_window, "cluster_count": g.cluster_count,
            "cluster_std": g.cluster_std, "sparse_min_dist": g.sparse_min_dist,
            "duration_range": list(g.duration_range), "radius": g.radius,
            "requirement_options": [[[n, a] for n, a in opt] for opt in g.requirement_options],
        }
    return out


def build_simulator(cfg: ScenarioConfig, seed: Optional[int] = None,
                    strategy: Optional[StrategyConfig] = None) -> tuple[Simulator, object]:
    """Fresh simulator plus controller for one trial."""
    seed = cfg.seed if seed is None else seed
    tasks: dict[int, Task] = {}
    for t in cfg.tasks:
        tasks[t.id] = Task(t.id, t.region_center, t.region_radius, t.duration,
                           t.requirements, t.release_time)
    if cfg.generator is not None:
        next_id = max(tasks, default=-1) + 1
        for t in generate_tasks(cfg.generator, seed, cfg.grid, start_id=next_id):
            tasks[t.id] = t
    agents = [AgentState(a.id, a.start, a.v_max, a.sensor_range, frozenset(a.capabilities))
              for a in cfg.agents]
    sim = Simulator(cfg.grid, agents, cfg.params, tasks, cfg.relations,
                    horizon=cfg.horizon, dt=cfg.dt, seed=seed,
                    recheck_interval=cfg.recheck_interval)
    controller = make_controller(strategy or cfg.strategy,
                                 PlannerOptions(budget=cfg.planner_budget,
                                                node_limit=cfg.node_limit, gap=cfg.gap))
    return sim, controller
