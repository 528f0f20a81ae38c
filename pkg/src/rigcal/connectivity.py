"""Interaction graph over the unknown poses, calibratability test and reference choice."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from itertools import combinations
from typing import NamedTuple

from .errors import EmptyInput


class Kind(IntEnum):
    CAMERA = 0
    PATTERN = 1
    TIME = 2


_PREFIX = {Kind.CAMERA: "C", Kind.PATTERN: "P", Kind.TIME: "T"}


class VariableId(NamedTuple):
    """An unknown pose. Tuple order gives camera < pattern < time, then index."""

    kind: Kind
    index: int

    def __str__(self):
        return f"{_PREFIX[self.kind]}{self.index}"

    @classmethod
    def parse(cls, s: str) -> "VariableId":
        kind = {v: k for k, v in _PREFIX.items()}[s[0]]
        return cls(kind, int(s[1:]))


def C(i):
    return VariableId(Kind.CAMERA, i)


def P(i):
    return VariableId(Kind.PATTERN, i)


def T(i):
    return VariableId(Kind.TIME, i)


def fr_variables(fr) -> tuple[VariableId, VariableId, VariableId]:
    """The (C, P, T) unknowns of anything with camera/pattern/time ids."""
    return C(fr.camera_id), P(fr.pattern_id), T(fr.time_id)


@dataclass
class InteractionGraph:
    nodes: set = field(default_factory=set)
    # sorted (u, v) -> number of FRs supporting the edge
    edges: Counter = field(default_factory=Counter)

    def neighbors(self, v):
        return sorted({b for a, b in self.edges if a == v} | {a for a, b in self.edges if b == v})


class UnionFind:
    def __init__(self, items=()):
        self.parent = {}
        for x in items:
            self.add(x)

    def add(self, x):
        self.parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        # keep the smaller id as root so labels are reproducible
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def build_interaction_graph(frs) -> InteractionGraph:
    frs = list(frs)
    if not frs:
        raise EmptyInput("no foundational relationships to build a graph from")
    g = InteractionGraph()
    for fr in frs:
        vs = fr_variables(fr)
        g.nodes.update(vs)
        for a, b in combinations(sorted(vs), 2):
            g.edges[(a, b)] += 1
    return g


def connected_components(g: InteractionGraph) -> tuple[dict[VariableId, int], int]:
    """Label nodes by component; labels are ordered by each component's smallest node."""
    uf = UnionFind(sorted(g.nodes))
    for a, b in g.edges:
        uf.union(a, b)
    roots = sorted({uf.find(v) for v in g.nodes})
    label_of_root = {r: i for i, r in enumerate(roots)}
    return {v: label_of_root[uf.find(v)] for v in sorted(g.nodes)}, len(roots)


def split_components(frs) -> list[list]:
    """Partition FRs by interaction-graph component, in component-label order."""
    frs = list(frs)
    labels, count = connected_components(build_interaction_graph(frs))
    groups = [[] for _ in range(count)]
    for fr in frs:
        groups[labels[C(fr.camera_id)]].append(fr)
    return groups


def select_reference(frs) -> tuple[int, int]:
    """Most observed pattern, then the time at which it is seen with the most FRs.

    Ties go to the smallest index. The time is restricted to times at which
    the chosen pattern is observed by any camera.
    """
    frs = list(frs)
    if not frs:
        raise EmptyInput("no foundational relationships to choose a reference from")
    per_pattern = Counter(fr.pattern_id for fr in frs)
    p_star = min(per_pattern, key=lambda p: (-per_pattern[p], p))
    per_time = Counter(fr.time_id for fr in frs)
    times = {fr.time_id for fr in frs if fr.pattern_id == p_star}
    t_star = min(times, key=lambda t: (-per_time[t], t))
    return p_star, t_star


def to_dot(g: InteractionGraph, reference: tuple[int, int] | None = None) -> str:
    labels, count = connected_components(g)
    lines = ["graph interaction {", f'  label="{count} component(s)";']
    shapes = {Kind.CAMERA: "box", Kind.PATTERN: "diamond", Kind.TIME: "ellipse"}
    ref = {P(reference[0]), T(reference[1])} if reference else set()
    for v in sorted(g.nodes):
        style = ', style=filled, fillcolor="gold"' if v in ref else ""
        lines.append(f'  {v} [shape={shapes[v.kind]}, group={labels[v]}{style}];')
    for (a, b), n in sorted(g.edges.items()):
        lines.append(f'  {a} -- {b} [label="{n}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def component_listing(frs) -> list[dict]:
    """Human-readable summary of each component (for reports)."""
    out = []
    for i, group in enumerate(split_components(frs)):
        members = defaultdict(set)
        for fr in group:
            for v in fr_variables(fr):
                members[v.kind].add(v.index)
        out.append({
            "component": i,
            "cameras": sorted(members[Kind.CAMERA]),
            "patterns": sorted(members[Kind.PATTERN]),
            "times": sorted(members[Kind.TIME]),
            "fr_count": len(group),
        })
    return out
