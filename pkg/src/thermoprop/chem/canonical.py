"""Canonical and enumerated SMILES emission.

Canonical form: iterative neighborhood-invariant (Morgan-style) ranking with
lexicographic tie-breaking on (element, charge, degree, H count, aromaticity),
then DFS emission from the lowest-ranked atom.  Output is deterministic and
invariant under atom relabeling; byte equality with toolkit canonical SMILES
is not a goal.  Stereo markers are consumed by the parser but never emitted.
"""

from __future__ import annotations

import random
import sys

from .graph import MolGraph, implicit_h
from .parse import ORGANIC_SUBSET


def _initial_invariants(g: MolGraph) -> list[tuple]:
    return [
        (a.symbol, a.charge, g.degree(i), a.h_count, a.aromatic)
        for i, a in enumerate(g.atoms)
    ]


def _dense(keys: list) -> list[int]:
    lookup = {k: r for r, k in enumerate(sorted(set(keys)))}
    return [lookup[k] for k in keys]


def _refine(g: MolGraph, ranks: list[int]) -> list[int]:
    """Iterate (rank, sorted neighbor ranks) until the partition stabilizes."""
    n = g.n_atoms
    n_classes = len(set(ranks))
    while True:
        keys = [
            (ranks[i], tuple(sorted(ranks[w] for w, _ in g.neighbors[i])))
            for i in range(n)
        ]
        ranks = _dense(keys)
        new_classes = len(set(ranks))
        if new_classes == n_classes:
            return ranks
        n_classes = new_classes


def _refine_initial(g: MolGraph) -> list[int]:
    return _refine(g, _dense(_initial_invariants(g)))


def canonical_ranks(g: MolGraph) -> list[int]:
    """Total atom order (0..n-1), invariant under relabeling."""
    ranks = _refine_initial(g)
    if len(set(ranks)) == g.n_atoms:
        return ranks
    return _break_ties(g, ranks)[1]


def _break_ties(g: MolGraph, ranks: list[int], tokens) -> tuple[str, list[int]]:
    """Resolve remaining ties by branching over the lowest tied class.

    Every member of the class is tried and the lexicographically smallest
    emitted string wins, which keeps the result independent of input atom
    numbering even when tied atoms are not automorphic.
    """
    counts: dict[int, int] = {}
    for r in ranks:
        counts[r] = counts.get(r, 0) + 1
    tied = [r for r, c in counts.items() if c > 1]
    if not tied:
        return _emit(g, ranks, tokens), ranks
    target = min(tied)
    best: tuple[str, list[int]] | None = None
    for i in range(g.n_atoms):
        if ranks[i] != target:
            continue
        bumped = [2 * r + (1 if j == i else 0) for j, r in enumerate(ranks)]
        trial = _break_ties(g, _refine(g, bumped), tokens)
        if best is None or trial[0] < best[0]:
            best = trial
    assert best is not None
    return best


def _graph_tokens(g: MolGraph) -> tuple[list[str], list[str]]:
    atom_tok = [_atom_token(g, i) for i in range(g.n_atoms)]
    bond_tok = [_bond_token(g, b) for b in range(g.n_bonds)]
    return atom_tok, bond_tok


def canonical_smiles(g: MolGraph) -> str:
    return _break_ties(g, _refine_initial(g), _graph_tokens(g))[0]


def enumerate_smiles(g: MolGraph, n: int, seed: int) -> list[str]:
    """n random-order SMILES for g; each re-parses to the same canonical form."""
    rng = random.Random(seed)
    tokens = _graph_tokens(g)
    out = []
    for _ in range(n):
        ranks = list(range(g.n_atoms))
        rng.shuffle(ranks)
        out.append(_emit(g, ranks, tokens))
    return out


# ---------------------------------------------------------------------------
# emission

_BOND_CHAR = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}


def _atom_token(g: MolGraph, i: int) -> str:
    a = g.atoms[i]
    sym = a.symbol.lower() if a.aromatic else a.symbol
    if a.symbol in ORGANIC_SUBSET and a.charge == 0:
        # bare form only when re-parsing would restore the same H count
        if implicit_h(a.symbol, 0, g.explicit_valence(i), a.aromatic) == a.h_count:
            return sym
    h = "" if a.h_count == 0 else ("H" if a.h_count == 1 else f"H{a.h_count}")
    if a.charge == 0:
        q = ""
    elif a.charge == 1:
        q = "+"
    elif a.charge == -1:
        q = "-"
    else:
        q = f"{a.charge:+d}"
    return f"[{sym}{h}{q}]"


def _bond_token(g: MolGraph, bidx: int) -> str:
    b = g.bonds[bidx]
    if b.order == "single":
        # single bond between two aromatic atoms must be explicit
        if g.atoms[b.a].aromatic and g.atoms[b.b].aromatic:
            return "-"
        return ""
    if b.order == "aromatic":
        return ""
    return _BOND_CHAR[b.order]


# deep emission recursion on 100-atom chains
sys.setrecursionlimit(max(sys.getrecursionlimit(), 10000))


def _ring_digit(num: int) -> str:
    return str(num) if num < 10 else f"%{num:02d}"


def _emit(g: MolGraph, ranks: list[int], tokens: tuple[list[str], list[str]] | None = None) -> str:
    """DFS emission; root is the lowest-ranked atom, neighbors follow rank order."""
    if tokens is None:
        tokens = _graph_tokens(g)
    atom_tok, bond_tok = tokens
    n = g.n_atoms
    root = min(range(n), key=lambda i: ranks[i])

    visited = [False] * n
    seen_bond = [False] * g.n_bonds
    tree_children: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    back_edges: list[tuple[int, int, int]] = []  # (descendant, ancestor, bond idx)
    order_of = [0] * n

    visited[root] = True
    t = 0
    dfs_stack: list[tuple[int, list[tuple[int, int]], int]] = [
        (root, sorted(g.neighbors[root], key=lambda p: ranks[p[0]]), 0)
    ]
    while dfs_stack:
        v, nbrs, ptr = dfs_stack.pop()
        advanced = False
        while ptr < len(nbrs):
            w, bidx = nbrs[ptr]
            ptr += 1
            if seen_bond[bidx]:
                continue
            seen_bond[bidx] = True
            if visited[w]:
                back_edges.append((v, w, bidx))
            else:
                visited[w] = True
                t += 1
                order_of[w] = t
                tree_children[v].append((w, bidx))
                dfs_stack.append((v, nbrs, ptr))
                dfs_stack.append((w, sorted(g.neighbors[w], key=lambda p: ranks[p[0]]), 0))
                advanced = True
                break
        if advanced:
            continue

    # closure digits allocated in opener order, reused once a span closes
    closure_at: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    events = sorted(back_edges, key=lambda e: (order_of[e[1]], order_of[e[0]]))
    next_digit = 1
    active: list[tuple[int, int]] = []  # (close order, digit)
    for v, w, bidx in events:
        free = [d for c, d in active if c < order_of[w]]
        if free:
            digit = min(free)
            active = [(c, d) for c, d in active if d != digit]
        else:
            digit = next_digit
            next_digit += 1
        active.append((order_of[v], digit))
        closure_at[w].append((digit, bidx))
        closure_at[v].append((digit, bidx))

    out: list[str] = []

    def write(v: int, in_bond: int) -> None:
        if in_bond >= 0:
            out.append(bond_tok[in_bond])
        out.append(atom_tok[v])
        for digit, bidx in closure_at[v]:
            b = g.bonds[bidx]
            opener = b.a if order_of[b.a] < order_of[b.b] else b.b
            if v == opener:
                out.append(bond_tok[bidx])
            out.append(_ring_digit(digit))
        kids = tree_children[v]
        last = len(kids) - 1
        for k, (w, bidx) in enumerate(kids):
            if k < last:
                out.append("(")
                write(w, bidx)
                out.append(")")
            else:
                write(w, bidx)

    write(root, -1)
    return "".join(out)
