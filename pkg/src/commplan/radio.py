"""Wireless quality model and the induced communication graph.

Link quality follows a log-distance path-loss model with an additive
per-meter penalty for obstacles crossed by the line of sight. An edge
exists between two agents iff their quality strictly exceeds the
configured threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .workspace import GridMap, Position, los_obstacle_length


@dataclass(frozen=True)
class CommParams:
    tx_power: float = 20.0      # dB
    pl_ref: float = 40.0        # dB path loss at the reference distance
    ref_dist: float = 1.0       # m
    path_exponent: float = 2.0
    attenuation: float = 5.0    # dB per meter of obstacle
    threshold: float = -40.0    # dB, strict lower bound for a link

    def __post_init__(self):
        if not self.ref_dist > 0:
            raise ValueError("ref_dist must be > 0")
        if not self.path_exponent > 0:
            raise ValueError("path_exponent must be > 0")
        if self.attenuation < 0:
            raise ValueError("attenuation must be >= 0")


def quality(p_i: Position, p_j: Position, grid: GridMap, params: CommParams) -> float:
    """Received quality in dB between two positions.

    Distances below ref_dist/10 are clamped to ref_dist/10 so coincident
    agents get a finite (high) quality instead of a log singularity.
    """
    grid.require_inside(p_i)
    grid.require_inside(p_j)
    d = max(p_i.dist(p_j), params.ref_dist / 10.0)
    path_loss = params.pl_ref + 10.0 * params.path_exponent * math.log10(d / params.ref_dist)
    return params.tx_power - path_loss - params.attenuation * los_obstacle_length(p_i, p_j, grid)


@dataclass(frozen=True)
class CommGraph:
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]  # pairs stored as (min_id, max_id)

    def neighbors(self, node: int) -> list[int]:
        out = []
        for i, j in self.edges:
            if i == node:
                out.append(j)
            elif j == node:
                out.append(i)
        return sorted(out)


def comm_graph(positions: Mapping[int, Position] | Sequence[Position], grid: GridMap,
               params: CommParams) -> CommGraph:
    """Graph over agent ids with an edge wherever quality > threshold."""
    if isinstance(positions, Mapping):
        items = sorted(positions.items())
    else:
        items = list(enumerate(positions))
    ids = tuple(i for i, _ in items)
    edges = set()
    for a in range(len(items)):
        for b in range(a + 1, len(items)):
            i, p_i = items[a]
            j, p_j = items[b]
            if quality(p_i, p_j, grid, params) > params.threshold:
                edges.add((min(i, j), max(i, j)))
    return CommGraph(nodes=ids, edges=frozenset(edges))


def is_connected(g: CommGraph) -> bool:
    """BFS reachability over the whole node set."""
    if not g.nodes:
        raise ValueError("graph has no nodes")
    adj: dict[int, list[int]] = {n: [] for n in g.nodes}
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {g.nodes[0]}
    frontier = [g.nodes[0]]
    while frontier:
        nxt = []
        for n in frontier:
            for m in adj[n]:
                if m not in seen:
                    seen.add(m)
                    nxt.append(m)
        frontier = nxt
    return len(seen) == len(g.nodes)


def quality_field(grid: GridMap, params: CommParams, anchor: Position) -> np.ndarray:
    """Quality from the anchor to every free cell center (occupied cells: nan)."""
    field = np.full((grid.height_cells, grid.width_cells), np.nan)
    for cy in range(grid.height_cells):
        for cx in range(grid.width_cells):
            if grid.is_free_cell((cx, cy)):
                field[cy, cx] = quality(anchor, grid.center((cx, cy)), grid, params)
    return field


def save_quality_csv(path, grid: GridMap, params: CommParams, anchor: Position) -> None:
    """Dump the quality field as CSV rows of x,y,quality_db."""
    field = quality_field(grid, params, anchor)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,quality_db\n")
        for cy in range(grid.height_cells):
            for cx in range(grid.width_cells):
                v = field[cy, cx]
                if not math.isnan(v):
                    c = grid.center((cx, cy))
                    fh.write(f"{c.x:.3f},{c.y:.3f},{v:.6f}\n")
