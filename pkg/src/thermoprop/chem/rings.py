"""Smallest-set-of-smallest-rings approximation for descriptor counting."""

from __future__ import annotations

from collections import deque

from .graph import MolGraph


def sssr(g: MolGraph) -> list[list[int]]:
    """Cycle basis of size |E|-|V|+1, preferring the smallest rings.

    For every ring bond, the shortest cycle through it is found by BFS on the
    graph minus that bond; rings are then selected smallest-first until they
    span the cyclomatic number, requiring each new ring to contribute an
    unseen bond.
    """
    target = g.ring_count()
    if target <= 0:
        return []

    candidates: list[tuple[int, frozenset[int], list[int]]] = []
    seen_rings: set[frozenset[int]] = set()
    for bidx, b in enumerate(g.bonds):
        if not b.in_ring:
            continue
        path = _shortest_path_avoiding(g, b.a, b.b, bidx)
        if path is None:
            continue
        ring = path  # path already a->...->b; closing bond is bidx
        key = frozenset(ring)
        if key in seen_rings:
            continue
        seen_rings.add(key)
        bond_set = set()
        for k in range(len(ring)):
            u, v = ring[k], ring[(k + 1) % len(ring)]
            bond = g.bond_between(u, v)
            assert bond is not None
            bond_set.add(id(bond))
        candidates.append((len(ring), frozenset(bond_set), ring))

    candidates.sort(key=lambda c: (c[0], sorted(c[2])))
    chosen: list[list[int]] = []
    covered: set = set()
    for size, bond_set, ring in candidates:
        if len(chosen) == target:
            break
        if not bond_set <= covered:
            chosen.append(ring)
            covered |= bond_set
    return chosen


def _shortest_path_avoiding(g: MolGraph, start: int, goal: int, skip_bond: int) -> list[int] | None:
    prev = {start: -1}
    q = deque([start])
    while q:
        v = q.popleft()
        if v == goal:
            path = []
            while v != -1:
                path.append(v)
                v = prev[v]
            return path
        for w, bidx in g.neighbors[v]:
            if bidx == skip_bond or w in prev:
                continue
            prev[w] = v
            q.append(w)
    return None
