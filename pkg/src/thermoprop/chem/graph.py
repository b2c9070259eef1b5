"""Molecular graph: the single source of truth for one parsed molecule."""

from __future__ import annotations

from dataclasses import dataclass, field


# Default valences used to fill implicit hydrogens on bare (organic-subset)
# atoms.  Multi-valent elements list every allowed valence; the smallest one
# that accommodates the explicit bond sum wins.
DEFAULT_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "S": (2, 4, 6),
    "P": (3, 5),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "Si": (4,),
}

BOND_ORDER_VALUE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}

CHIRALITY_TAGS = ("none", "R", "S", "other")
STEREO_TAGS = ("none", "Z", "E", "cis", "trans", "other")


@dataclass(slots=True)
class Atom:
    symbol: str
    charge: int = 0
    h_count: int = 0
    aromatic: bool = False
    in_ring: bool = False
    chirality: str = "none"


@dataclass(slots=True)
class Bond:
    a: int
    b: int
    order: str = "single"
    conjugated: bool = False
    in_ring: bool = False
    stereo: str = "none"

    def other(self, idx: int) -> int:
        return self.b if idx == self.a else self.a


@dataclass(slots=True)
class MolGraph:
    """Connected molecular graph over heavy atoms.

    ``neighbors[i]`` lists ``(neighbor atom index, bond index)`` pairs in
    parse order.  Instances are treated as immutable after construction.
    """

    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)
    neighbors: list[list[tuple[int, int]]] = field(default_factory=list)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def bond_between(self, i: int, j: int) -> Bond | None:
        for nbr, bidx in self.neighbors[i]:
            if nbr == j:
                return self.bonds[bidx]
        return None

    def explicit_valence(self, i: int) -> int:
        """Bond-order sum over incident bonds (aromatic counts 1)."""
        total = 0
        for _, bidx in self.neighbors[i]:
            total += BOND_ORDER_VALUE[self.bonds[bidx].order]
        return total

    def ring_count(self) -> int:
        # cyclomatic number of a connected graph
        return self.n_bonds - self.n_atoms + 1


def allowed_valences(symbol: str, charge: int) -> tuple[int, ...]:
    base = DEFAULT_VALENCES.get(symbol)
    if base is None:
        return ()
    if charge:
        # each unit of charge frees/uses one bond site
        return tuple(v + abs(charge) for v in base)
    return base


def implicit_h(symbol: str, charge: int, explicit_valence: int, aromatic: bool) -> int | None:
    """Hydrogens needed to reach the smallest allowed valence, or None.

    Aromatic atoms claim one extra valence unit for the delocalized pi bond
    when it fits (pyridine-type N); otherwise the lone pair carries the
    aromaticity and no increment applies (furan O, pyrrole [nH]).
    """
    allowed = allowed_valences(symbol, charge)
    if not allowed:
        return None
    ev = explicit_valence + 1 if aromatic else explicit_valence
    if aromatic and ev > max(allowed):
        ev = explicit_valence
    for v in allowed:
        if ev <= v:
            return v - ev
    return None
