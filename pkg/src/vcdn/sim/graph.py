"""Hidden interaction graphs over bodies: sampling, editing, (de)serialization.

A graph assigns each unordered body pair at most one edge carrying a discrete
type (rigid rod or spring) and a continuous parameter (rod length or spring
rest length). Absent pairs are "null": the bodies do not interact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

PARAM_RANGE = (20.0, 120.0)


class EdgeType(enum.IntEnum):
    NULL = 0
    RIGID = 1
    SPRING = 2


class InvalidConfigError(ValueError):
    pass


class InvalidInterventionError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeSpec:
    """One undirected edge between bodies i < j."""

    i: int
    j: int
    type: EdgeType
    param: float | None = None

    def __post_init__(self):
        if not 0 <= self.i < self.j:
            raise ValueError(f"edge indices must satisfy 0 <= i < j, got ({self.i}, {self.j})")
        if self.type == EdgeType.NULL:
            if self.param is not None:
                raise ValueError("null edges carry no parameter")
        else:
            if self.param is None:
                raise ValueError(f"{self.type.name} edge requires a parameter")
            if not np.isfinite(self.param) or self.param <= 0:
                raise ValueError(f"edge parameter must be finite and positive, got {self.param}")


@dataclass(frozen=True)
class CausalSummaryGraph:
    """Time-invariant edge set over ``n_bodies`` bodies.

    ``edges`` holds only non-null edges, sorted by (i, j), at most one per
    unordered pair. Pairs not listed are null.
    """

    n_bodies: int
    edges: tuple[EdgeSpec, ...]

    def __post_init__(self):
        if self.n_bodies < 1:
            raise InvalidConfigError(f"n_bodies must be >= 1, got {self.n_bodies}")
        seen = set()
        for e in self.edges:
            if e.j >= self.n_bodies:
                raise ValueError(f"edge ({e.i}, {e.j}) out of range for {self.n_bodies} bodies")
            if e.type == EdgeType.NULL:
                raise ValueError("graphs store only non-null edges; omit null pairs")
            if (e.i, e.j) in seen:
                raise ValueError(f"duplicate edge for pair ({e.i}, {e.j})")
            seen.add((e.i, e.j))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: (e.i, e.j))))

    def edge_for(self, i: int, j: int) -> EdgeSpec | None:
        """Non-null edge on the unordered pair {i, j}, or None."""
        a, b = min(i, j), max(i, j)
        for e in self.edges:
            if (e.i, e.j) == (a, b):
                return e
        return None

    def pair_type(self, i: int, j: int) -> EdgeType:
        e = self.edge_for(i, j)
        return e.type if e is not None else EdgeType.NULL

    def to_json_dict(self) -> dict:
        return {
            "n_bodies": self.n_bodies,
            "edges": [
                {"i": e.i, "j": e.j, "type": e.type.name.lower(), "param": e.param}
                for e in self.edges
            ],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "CausalSummaryGraph":
        edges = tuple(
            EdgeSpec(int(e["i"]), int(e["j"]), EdgeType[e["type"].upper()], float(e["param"]))
            for e in d["edges"]
        )
        return cls(n_bodies=int(d["n_bodies"]), edges=edges)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json_dict(), f, indent=1)

    @classmethod
    def load(cls, path) -> "CausalSummaryGraph":
        with open(path) as f:
            return cls.from_json_dict(json.load(f))


def unordered_pairs(n_bodies: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_bodies) for j in range(i + 1, n_bodies)]


def sample_summary_graph(n_bodies: int, rng: np.random.Generator) -> CausalSummaryGraph:
    """Sample each pair independently: null / rigid / spring with probability 1/3.

    Non-null parameters (rod length, spring rest length) are uniform on
    ``PARAM_RANGE``.
    """
    if n_bodies < 1:
        raise InvalidConfigError(f"n_bodies must be >= 1, got {n_bodies}")
    lo, hi = PARAM_RANGE
    edges = []
    for i, j in unordered_pairs(n_bodies):
        t = EdgeType(int(rng.integers(0, 3)))
        if t != EdgeType.NULL:
            edges.append(EdgeSpec(i, j, t, float(rng.uniform(lo, hi))))
    return CausalSummaryGraph(n_bodies=n_bodies, edges=tuple(edges))


def apply_intervention(
    graph: CausalSummaryGraph,
    pair: tuple[int, int],
    new_type: EdgeType,
    new_param: float | None = None,
) -> CausalSummaryGraph:
    """Return a copy of ``graph`` with the unordered pair set to the given edge.

    Parameters outside the sampling range are allowed: interventions may push
    the system outside the distribution it was generated from.
    """
    i, j = min(pair), max(pair)
    if i == j:
        raise InvalidInterventionError("cannot intervene on a self-pair")
    if not (0 <= i and j < graph.n_bodies):
        raise InvalidInterventionError(f"pair ({i}, {j}) out of range for {graph.n_bodies} bodies")
    if new_type != EdgeType.NULL and new_param is None:
        raise InvalidInterventionError(f"{EdgeType(new_type).name} edge requires a parameter")
    kept = tuple(e for e in graph.edges if (e.i, e.j) != (i, j))
    if new_type != EdgeType.NULL:
        kept = kept + (EdgeSpec(i, j, EdgeType(new_type), float(new_param)),)
    return CausalSummaryGraph(n_bodies=graph.n_bodies, edges=kept)
