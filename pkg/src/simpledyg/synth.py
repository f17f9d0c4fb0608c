"""Seeded synthetic dynamic graphs with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .graph import TemporalEdge, TemporalGraph, make_graph


class SynthKind(str, Enum):
    CYCLIC = "cyclic"
    BURSTY = "bursty"
    STEADY = "steady"
    MIXED = "mixed"


@dataclass(frozen=True)
class SynthSpec:
    kind: SynthKind = SynthKind.CYCLIC
    num_egos: int = 100
    neighbors: int = 6
    period: int = 3
    T: int = 10
    noise: float = 0.0
    seed: int = 0
    extra_steps: int = 0  # ground truth beyond T, not part of the graph
    step_width: float = 1.0
    burst_fraction: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", SynthKind(self.kind))
        if self.num_egos < 1 or self.neighbors < 1:
            raise ValueError("num_egos and neighbors must be >= 1")
        if not 1 <= self.period <= self.neighbors:
            raise ValueError("period must lie in 1..neighbors")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")
        if self.T < 2 or self.extra_steps < 0:
            raise ValueError("T must be >= 2 and extra_steps >= 0")
        if self.step_width <= 0 or not 0 < self.burst_fraction <= 1:
            raise ValueError("step_width must be positive and burst_fraction in (0, 1]")


def ego_name(i: int) -> str:
    return f"u{i}"


def neighbor_name(i: int, j: int) -> str:
    return f"u{i}n{j}"


@dataclass
class SynthGraph:
    graph: TemporalGraph
    truth: dict[tuple[str, int], set[str]]
    egos: list[str]
    deviations: int = 0
    interactions: int = 0

    def truth_of(self, ego: str, step: int) -> set[str]:
        return self.truth.get((ego, step), set())

    def truth_csv(self) -> str:
        rows = ["ego,step,node"]
        for (ego, step), nodes in sorted(self.truth.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            rows += [f"{ego},{step},{n}" for n in sorted(nodes)]
        return "\n".join(rows) + "\n"


def gen_cyclic(spec: SynthSpec) -> SynthGraph:
    """Ego ``i`` meets neighbor group ``(t - 1) mod period`` at every step ``t``.

    Neighbor ``j`` of an ego belongs to group ``j mod period``; a group's
    members interact in index order at the centres of equal sub-slots of the
    step interval. With probability ``noise`` a planted neighbor is replaced
    by a random neighbor node of another ego.
    """
    rng = np.random.default_rng(spec.seed)
    w = spec.step_width
    pool = [neighbor_name(i, j) for i in range(spec.num_egos) for j in range(spec.neighbors)]
    edges: list[TemporalEdge] = []
    truth: dict[tuple[str, int], set[str]] = {}
    deviations = interactions = 0
    for t in range(1, spec.T + spec.extra_steps + 1):
        g = (t - 1) % spec.period
        for i in range(spec.num_egos):
            ego = ego_name(i)
            group = [neighbor_name(i, j) for j in range(g, spec.neighbors, spec.period)]
            actual = []
            for planted in group:
                node = planted
                if spec.noise and rng.random() < spec.noise:
                    while node == planted or node.startswith(ego + "n"):
                        node = pool[int(rng.integers(len(pool)))]
                    deviations += t <= spec.T
                actual.append(node)
            truth[(ego, t)] = set(actual)
            if t > spec.T:
                continue
            interactions += len(actual)
            m = len(actual)
            for k, node in enumerate(actual):
                edges.append(TemporalEdge(ego, node, (t - 1) * w + w * (k + 0.5) / m))
    graph = make_graph(edges, time_range=(0.0, spec.T * w))
    egos = [ego_name(i) for i in range(spec.num_egos)]
    return SynthGraph(graph, truth, egos, deviations, interactions)


def is_bursty(spec: SynthSpec, i: int) -> bool:
    if spec.kind is SynthKind.BURSTY:
        return True
    if spec.kind is SynthKind.STEADY:
        return False
    return i % 2 == 0


def gen_burst_steady(spec: SynthSpec) -> SynthGraph:
    """Every ego meets all its neighbors once per step (in neighbor order).

    Bursty egos squeeze the step's ``K`` interactions into the first
    ``burst_fraction`` of the interval; steady egos place them at
    ``t0 + w * k / K``. Counts per step are identical, only timing differs.
    """
    w, K = spec.step_width, spec.neighbors
    edges = []
    truth: dict[tuple[str, int], set[str]] = {}
    for t in range(1, spec.T + spec.extra_steps + 1):
        t0 = (t - 1) * w
        for i in range(spec.num_egos):
            ego = ego_name(i)
            frac = spec.burst_fraction if is_bursty(spec, i) else 1.0
            nbrs = [neighbor_name(i, j) for j in range(K)]
            truth[(ego, t)] = set(nbrs)
            if t > spec.T:
                continue
            for k, node in enumerate(nbrs):
                edges.append(TemporalEdge(ego, node, t0 + frac * w * k / K))
    graph = make_graph(edges, time_range=(0.0, spec.T * w))
    egos = [ego_name(i) for i in range(spec.num_egos)]
    return SynthGraph(graph, truth, egos, 0, len(edges))


def generate(spec: SynthSpec) -> SynthGraph:
    if spec.kind is SynthKind.CYCLIC:
        return gen_cyclic(spec)
    return gen_burst_steady(spec)
