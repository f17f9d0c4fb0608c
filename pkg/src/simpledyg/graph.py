"""Timestamped interaction data: parsing, time normalization, segmentation,
train/val/test split and binned activity statistics."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np


BOUNDARY_TOL = 1e-9


class GraphError(ValueError):
    pass


class ParseError(GraphError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class ConfigError(GraphError):
    pass


class Op(str, Enum):
    ADD = "add"
    DELETE = "del"


@dataclass(frozen=True)
class TemporalEdge:
    src: str
    dst: str
    time: float
    op: Op = Op.ADD

    @property
    def is_self_loop(self) -> bool:
        return self.src == self.dst


@dataclass(frozen=True)
class TemporalGraph:
    """Interactions sorted by time (stable), plus the node universe.

    ``nodes`` is kept in first-appearance order so vocabulary ids are
    reproducible. ``time_min``/``time_max`` bound the time domain; they
    default to the edge extremes but may be wider.
    """

    edges: tuple[TemporalEdge, ...]
    nodes: tuple[str, ...]
    time_min: float
    time_max: float
    features: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if not self.edges:
            raise GraphError("no edges")
        times = [e.time for e in self.edges]
        if any(b < a for a, b in zip(times, times[1:])):
            raise GraphError("edges must be sorted by time")
        if times[0] < self.time_min or times[-1] > self.time_max:
            raise GraphError("edge times fall outside [time_min, time_max]")
        known = set(self.nodes)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise GraphError(f"edge endpoint missing from node set: {e}")
        if self.features is not None:
            dims = {np.asarray(v).shape for v in self.features.values()}
            if len(dims) > 1:
                raise GraphError(f"feature vectors have mixed shapes {sorted(dims)}")

    @property
    def self_loops(self) -> list[TemporalEdge]:
        return [e for e in self.edges if e.is_self_loop]

    @property
    def feature_dim(self) -> int | None:
        if not self.features:
            return None
        return int(np.asarray(next(iter(self.features.values()))).shape[0])


@dataclass(frozen=True)
class TimeGrid:
    num_steps: int
    boundaries: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.num_steps < 2:
            raise ConfigError(f"need at least 2 time steps, got {self.num_steps}")
        if not self.boundaries:
            b = tuple(float(x) for x in np.linspace(0.0, 1.0, self.num_steps + 1))
            object.__setattr__(self, "boundaries", b)
        if len(self.boundaries) != self.num_steps + 1:
            raise ConfigError("boundaries must have num_steps + 1 entries")

    @property
    def T(self) -> int:
        return self.num_steps

    def step_of(self, tau: float) -> int:
        """1-based step; intervals are [a, b) except the last, which is closed."""
        if not 0.0 <= tau <= 1.0:
            raise GraphError(f"normalized time {tau} outside [0, 1]")
        x = tau * self.num_steps
        r = round(x)
        if abs(x - r) < BOUNDARY_TOL:
            x = r  # undo rounding error from normalization on exact boundaries
        return min(int(math.floor(x)) + 1, self.num_steps)

    def widths(self) -> np.ndarray:
        return np.diff(np.asarray(self.boundaries))


def make_graph(
    edges: Iterable[TemporalEdge],
    features: Mapping[str, np.ndarray] | None = None,
    time_range: tuple[float, float] | None = None,
) -> TemporalGraph:
    edges = sorted(edges, key=lambda e: e.time)  # sorted() is stable
    if not edges:
        raise GraphError("no edges")
    nodes: dict[str, None] = {}
    for e in edges:
        nodes.setdefault(e.src)
        nodes.setdefault(e.dst)
    lo, hi = edges[0].time, edges[-1].time
    if time_range is not None:
        lo, hi = min(lo, time_range[0]), max(hi, time_range[1])
    if features is not None:
        features = {k: np.asarray(v, dtype=np.float64) for k, v in features.items()}
    return TemporalGraph(tuple(edges), tuple(nodes), float(lo), float(hi), features)


TIME_RANGE_DIRECTIVE = "# time_range"


def parse_edge_list(
    text: str,
    delimiter: str | None = None,
    has_deletion_column: bool | None = None,
    time_range: tuple[float, float] | None = None,
) -> TemporalGraph:
    """Parse ``src dst time [add|del]`` lines.

    Lines starting with ``#`` are comments, except that a
    ``# time_range <lo> <hi>`` comment widens the time domain (generators
    use it so mid-interval timestamps survive normalization). An explicit
    ``time_range`` argument takes precedence.
    """
    if delimiter is not None and len(delimiter) != 1:
        raise ConfigError("delimiter must be a single character")
    edges = []
    file_range = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith(TIME_RANGE_DIRECTIVE):
                parts = line[len(TIME_RANGE_DIRECTIVE):].split()
                try:
                    file_range = (float(parts[0]), float(parts[1]))
                except (IndexError, ValueError):
                    raise ParseError("bad time_range directive", lineno) from None
            continue
        fields = [f.strip() for f in line.split(delimiter)] if delimiter else line.split()
        n_expected = {True: (4,), False: (3,), None: (3, 4)}[has_deletion_column]
        if len(fields) not in n_expected:
            raise ParseError(f"expected {' or '.join(map(str, n_expected))} fields, got {len(fields)}", lineno)
        src, dst, ts = fields[:3]
        if not src or not dst:
            raise ParseError("empty node id", lineno)
        try:
            t = float(ts)
        except ValueError:
            raise ParseError(f"non-numeric time {ts!r}", lineno) from None
        if not math.isfinite(t):
            raise ParseError(f"non-finite time {ts!r}", lineno)
        op = Op.ADD
        if len(fields) == 4:
            try:
                op = Op(fields[3].lower())
            except ValueError:
                raise ParseError(f"op must be add or del, got {fields[3]!r}", lineno) from None
        edges.append(TemporalEdge(src, dst, t, op))
    if not edges:
        raise ParseError("no edges")
    return make_graph(edges, time_range=time_range or file_range)


def format_edge_list(g: TemporalGraph, with_ops: bool = False) -> str:
    lines = [f"{TIME_RANGE_DIRECTIVE} {g.time_min!r} {g.time_max!r}"]
    for e in g.edges:
        row = f"{e.src} {e.dst} {e.time!r}"
        if with_ops or e.op is Op.DELETE:
            row += f" {e.op.value}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def parse_features(text: str) -> dict[str, np.ndarray]:
    """``node_id v1 ... vF`` per line; all rows must share F."""
    feats: dict[str, np.ndarray] = {}
    dim = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            vec = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric feature value", lineno) from None
        if dim is None:
            dim = vec.shape[0]
        elif vec.shape[0] != dim:
            raise ParseError(f"feature dimension {vec.shape[0]} != {dim}", lineno)
        feats[parts[0]] = vec
    return feats


def with_features(g: TemporalGraph, features: Mapping[str, np.ndarray]) -> TemporalGraph:
    return replace(g, features={k: np.asarray(v, dtype=np.float64) for k, v in features.items()})


def normalize_times(g: TemporalGraph) -> TemporalGraph:
    """Affine map of the time domain onto [0, 1] (all zeros if degenerate)."""
    lo, span = g.time_min, g.time_max - g.time_min
    if span == 0:
        edges = tuple(replace(e, time=0.0) for e in g.edges)
        return replace(g, edges=edges, time_min=0.0, time_max=0.0)
    edges = tuple(replace(e, time=(e.time - lo) / span) for e in g.edges)
    return replace(g, edges=edges, time_min=0.0, time_max=1.0)


def segment_time(g: TemporalGraph, T: int) -> tuple[TimeGrid, np.ndarray]:
    """Equal-width grid over [0, 1] and the 1-based step of every edge."""
    if T < 2:
        raise ConfigError(f"need at least 2 time steps, got {T}")
    grid = TimeGrid(T)
    steps = np.array([grid.step_of(e.time) for e in g.edges], dtype=np.int64)
    return grid, steps


@dataclass(frozen=True)
class Interaction:
    neighbor: str
    step: int
    time: float
    op: Op


class EgoIndex:
    """Per-node chronological interaction lists over a segmented graph.

    Each edge contributes the other endpoint to both endpoints' histories
    (graphs are treated as undirected); a self-loop appears once.
    """

    def __init__(self, g: TemporalGraph, grid: TimeGrid, steps: np.ndarray | None = None):
        if steps is None:
            _, steps = segment_time(g, grid.T)
        self.graph = g
        self.grid = grid
        self.steps = steps
        hist: dict[str, list[Interaction]] = defaultdict(list)
        for e, s in zip(g.edges, steps):
            s = int(s)
            hist[e.src].append(Interaction(e.dst, s, e.time, e.op))
            if not e.is_self_loop:
                hist[e.dst].append(Interaction(e.src, s, e.time, e.op))
        self._hist = dict(hist)
        self._nodes = set(g.nodes)

    def history(self, ego: str, upto_step: int | None = None) -> list[Interaction]:
        if ego not in self._nodes:
            raise GraphError(f"unknown ego node {ego!r}")
        items = self._hist.get(ego, [])
        if upto_step is None:
            return list(items)
        return [it for it in items if it.step <= upto_step]

    def at_step(self, ego: str, step: int) -> list[Interaction]:
        return [it for it in self._hist.get(ego, []) if it.step == step]

    def truth(self, ego: str, step: int) -> set[str]:
        """Neighbors added at ``step`` (the link-prediction ground truth)."""
        return {it.neighbor for it in self.at_step(ego, step) if it.op is Op.ADD}

    def active_egos(self, step: int) -> list[str]:
        """Nodes with nonempty ground truth at ``step``, in node order."""
        return [v for v in self.graph.nodes if self.truth(v, step)]


def extract_ego_history(
    g: TemporalGraph, ego: str, upto_step: int, grid: TimeGrid
) -> list[Interaction]:
    """All interactions incident to ``ego`` with step <= ``upto_step``."""
    if ego not in set(g.nodes):
        raise GraphError(f"unknown ego node {ego!r}")
    return EgoIndex(g, grid).history(ego, upto_step)


@dataclass(frozen=True)
class Split:
    """Target steps of each partition. Histories always start at step 1."""

    T: int
    train_steps: tuple[int, ...]
    val_step: int
    test_step: int
    val_egos: tuple[str, ...]
    test_egos: tuple[str, ...]


def split_dataset(g: TemporalGraph, grid: TimeGrid, index: EgoIndex | None = None) -> Split:
    """Test predicts step T, validation step T-1; training targets lie in 1..T-2.

    Only egos with nonempty ground truth enter val/test.
    """
    T = grid.T
    if T < 3:
        raise ConfigError("insufficient steps for split")
    index = index or EgoIndex(g, grid)
    return Split(
        T=T,
        train_steps=tuple(range(1, T - 1)),
        val_step=T - 1,
        test_step=T,
        val_egos=tuple(index.active_egos(T - 1)),
        test_egos=tuple(index.active_egos(T)),
    )


@dataclass(frozen=True)
class StatsBin:
    start: float
    end: float
    mean_rate: float


def interaction_stats(g: TemporalGraph, bin_width: float, unit: float = 1.0) -> list[StatsBin]:
    """Mean interactions per ``unit`` of raw time in consecutive bins.

    Bins are ``[start, start + bin_width)`` from ``time_min``; an edge lying
    exactly on a bin boundary belongs to the later bin.
    """
    if not bin_width > 0:
        raise ConfigError("bin_width must be positive")
    if not unit > 0:
        raise ConfigError("unit must be positive")
    lo = g.time_min
    n_bins = int(math.floor((g.time_max - lo) / bin_width)) + 1
    counts = np.zeros(n_bins, dtype=np.int64)
    for e in g.edges:
        counts[min(int((e.time - lo) // bin_width), n_bins - 1)] += 1
    per = bin_width / unit
    return [
        StatsBin(lo + i * bin_width, lo + (i + 1) * bin_width, float(c) / per)
        for i, c in enumerate(counts)
    ]


def format_stats_csv(bins: Sequence[StatsBin]) -> str:
    rows = ["bin_start,bin_end,mean_rate"]
    rows += [f"{b.start!r},{b.end!r},{b.mean_rate!r}" for b in bins]
    return "\n".join(rows) + "\n"
