"""Murcko scaffolds: ring systems plus the linkers connecting them."""

from __future__ import annotations

from .graph import Atom, Bond, MolGraph
from .canonical import canonical_smiles


def murcko_scaffold(g: MolGraph) -> str:
    """Canonical SMILES of the Murcko scaffold; "" for acyclic molecules.

    Degree-1 atoms are deleted iteratively until fixpoint, which leaves
    exactly the rings and the paths linking them.
    """
    n = g.n_atoms
    keep = [True] * n
    degree = [g.degree(i) for i in range(n)]
    changed = True
    while changed:
        changed = False
        for i in range(n):
            if keep[i] and degree[i] <= 1 and not g.atoms[i].in_ring:
                keep[i] = False
                changed = True
                for w, _ in g.neighbors[i]:
                    if keep[w]:
                        degree[w] -= 1
    # ring atoms always survive; a terminal ring atom only occurs in 1-atom
    # graphs, which are acyclic anyway
    if not any(keep[i] and g.atoms[i].in_ring for i in range(n)):
        return ""

    remap = {}
    atoms: list[Atom] = []
    for i in range(n):
        if keep[i]:
            remap[i] = len(atoms)
            a = g.atoms[i]
            atoms.append(
                Atom(
                    symbol=a.symbol,
                    charge=a.charge,
                    h_count=0,
                    aromatic=a.aromatic,
                    in_ring=a.in_ring,
                    chirality="none",
                )
            )
    bonds: list[Bond] = []
    for b in g.bonds:
        if keep[b.a] and keep[b.b]:
            bonds.append(
                Bond(
                    a=remap[b.a],
                    b=remap[b.b],
                    order=b.order,
                    conjugated=b.conjugated,
                    in_ring=b.in_ring,
                )
            )
    sub = MolGraph(atoms=atoms, bonds=bonds)
    sub.neighbors = [[] for _ in atoms]
    for bidx, b in enumerate(bonds):
        sub.neighbors[b.a].append((b.b, bidx))
        sub.neighbors[b.b].append((b.a, bidx))
    # refill hydrogens for the pruned graph so emission round-trips
    from .graph import implicit_h

    for i, a in enumerate(sub.atoms):
        h = implicit_h(a.symbol, a.charge, sub.explicit_valence(i), a.aromatic)
        a.h_count = 0 if h is None else h
    return canonical_smiles(sub)
