"""Atom, bond, and whole-molecule feature vectors.

Atom vectors are 39-dimensional, bond vectors 12-dimensional, and the
molecular descriptor vector has 13 fixed slots whose order is frozen and
recorded in checkpoint headers.  Out-of-range categorical values clamp to
the nearest bucket so every one-hot block always sums to exactly one.
"""

from __future__ import annotations

import numpy as np

from .chem.graph import MolGraph, CHIRALITY_TAGS, STEREO_TAGS
from .chem.rings import sssr

ATOM_DIM = 39
BOND_DIM = 12
N_DESCRIPTORS = 13

ELEMENTS = ("C", "N", "O", "F", "P", "S", "Cl", "Br", "I", "Si")  # + other
BOND_ORDERS = ("single", "double", "triple", "aromatic")
HYBRIDIZATIONS = ("sp", "sp2", "sp3", "sp3d", "sp3d2")

DESCRIPTOR_NAMES = (
    "mol_weight",
    "heavy_atoms",
    "ring_count",
    "aromatic_rings",
    "hbond_donors",
    "hbond_acceptors",
    "rotatable_bonds",
    "halogens",
    "fraction_sp3_carbon",
    "net_charge",
    "polar_surface_proxy",
    "longest_carbon_chain",
    "molar_refraction_proxy",
)

# CODATA standard atomic weights, 4 decimals
ATOMIC_MASSES = {
    "H": 1.008,
    "B": 10.811,
    "C": 12.011,
    "N": 14.0067,
    "O": 15.9994,
    "F": 18.9984,
    "Si": 28.0855,
    "P": 30.9738,
    "S": 32.065,
    "Cl": 35.453,
    "Br": 79.904,
    "I": 126.9045,
    "Se": 78.96,
    "Te": 127.60,
    "As": 74.9216,
    "Na": 22.9898,
    "K": 39.0983,
    "Li": 6.941,
    "Mg": 24.305,
    "Ca": 40.078,
    "Fe": 55.845,
    "Zn": 65.38,
    "Sn": 118.710,
}
_DEFAULT_MASS = 50.0  # unknown elements

ATOMIC_NUMBERS = {
    "H": 1, "B": 5, "C": 6, "N": 7, "O": 8, "F": 9, "Na": 11, "Mg": 12,
    "Si": 14, "P": 15, "S": 16, "Cl": 17, "K": 19, "Ca": 20, "Fe": 26,
    "Zn": 30, "As": 33, "Se": 34, "Br": 35, "Sn": 50, "Te": 52, "I": 53,
    "Li": 3,
}
_DEFAULT_ATOMIC_NUMBER = 100  # 'other' bucket for the SchNet embedding

# additive polar-surface contributions (coarse polarity signal, not TPSA)
_POLAR_BASE = {"O": 20.23, "N": 12.03}
_POLAR_H_INCREMENT = {"O": 1.0, "N": 2.0}

# atom-count-weighted molar refraction contributions
_MR_CONTRIB = {"C": 2.418, "H": 1.100, "O": 1.525, "N": 2.322, "F": 0.997,
               "Cl": 5.967, "Br": 8.865, "I": 13.900, "S": 7.690, "P": 5.000,
               "Si": 6.000, "B": 3.000}
_MR_DEFAULT = 4.0

HALOGENS = {"F", "Cl", "Br", "I"}


def _one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size, dtype=np.float64)
    v[min(max(index, 0), size - 1)] = 1.0
    return v


def hybridization(g: MolGraph, i: int) -> str:
    """sp / sp2 / sp3 from bond orders; d buckets for hypervalent S and P."""
    atom = g.atoms[i]
    if atom.symbol in ("S", "P"):
        ev = g.explicit_valence(i) + atom.h_count
        if ev >= 6:
            return "sp3d2"
        if ev == 5:
            return "sp3d"
    doubles = triples = 0
    aromatic = atom.aromatic
    for _, bidx in g.neighbors[i]:
        order = g.bonds[bidx].order
        if order == "double":
            doubles += 1
        elif order == "triple":
            triples += 1
        elif order == "aromatic":
            aromatic = True
    if triples >= 1 or doubles >= 2:
        return "sp"
    if doubles >= 1 or aromatic:
        return "sp2"
    return "sp3"


def atom_features(g: MolGraph, i: int) -> np.ndarray:
    """39-dim vector: element(11) degree(7) charge(5) H(5) hybrid(5) flags(2) chirality(4)."""
    a = g.atoms[i]
    elem = ELEMENTS.index(a.symbol) if a.symbol in ELEMENTS else len(ELEMENTS)
    parts = [
        _one_hot(elem, 11),
        _one_hot(g.degree(i), 7),
        _one_hot(a.charge + 2, 5),
        _one_hot(a.h_count, 5),
        _one_hot(HYBRIDIZATIONS.index(hybridization(g, i)), 5),
        np.array([1.0 if a.aromatic else 0.0]),
        np.array([1.0 if a.in_ring else 0.0]),
        _one_hot(CHIRALITY_TAGS.index(a.chirality), 4),
    ]
    return np.concatenate(parts)


def bond_features(g: MolGraph, bidx: int) -> np.ndarray:
    """12-dim vector: order(4) conjugated(1) ring(1) stereo(6)."""
    b = g.bonds[bidx]
    parts = [
        _one_hot(BOND_ORDERS.index(b.order), 4),
        np.array([1.0 if b.conjugated else 0.0]),
        np.array([1.0 if b.in_ring else 0.0]),
        _one_hot(STEREO_TAGS.index(b.stereo), 6),
    ]
    return np.concatenate(parts)


def molecule_atom_features(g: MolGraph) -> np.ndarray:
    return np.stack([atom_features(g, i) for i in range(g.n_atoms)])


def _longest_carbon_chain(g: MolGraph, max_visits: int = 200_000) -> int:
    carbons = [i for i, a in enumerate(g.atoms) if a.symbol == "C"]
    if not carbons:
        return 0
    cset = set(carbons)
    nbrs = {i: [w for w, _ in g.neighbors[i] if w in cset] for i in carbons}
    best = 1
    visits = 0

    def dfs(v: int, seen: set[int], depth: int) -> None:
        nonlocal best, visits
        if visits >= max_visits:
            return
        visits += 1
        best = max(best, depth)
        for w in nbrs[v]:
            if w not in seen:
                seen.add(w)
                dfs(w, seen, depth + 1)
                seen.remove(w)

    for start in carbons:
        dfs(start, {start}, 1)
    return best


def descriptors(g: MolGraph) -> np.ndarray:
    """13 fixed descriptor slots; see DESCRIPTOR_NAMES for the frozen order."""
    mw = 0.0
    donors = acceptors = halogens = 0
    polar = 0.0
    mr = 0.0
    charge = 0
    n_carbon = n_sp3_carbon = 0
    for i, a in enumerate(g.atoms):
        mw += ATOMIC_MASSES.get(a.symbol, _DEFAULT_MASS) + a.h_count * ATOMIC_MASSES["H"]
        mr += _MR_CONTRIB.get(a.symbol, _MR_DEFAULT) + a.h_count * _MR_CONTRIB["H"]
        charge += a.charge
        if a.symbol in ("N", "O"):
            acceptors += 1
            polar += _POLAR_BASE[a.symbol] + a.h_count * _POLAR_H_INCREMENT[a.symbol]
            if a.h_count > 0:
                donors += 1
        if a.symbol in HALOGENS:
            halogens += 1
        if a.symbol == "C":
            n_carbon += 1
            if hybridization(g, i) == "sp3":
                n_sp3_carbon += 1

    rotatable = 0
    for b in g.bonds:
        if b.order == "single" and not b.in_ring:
            if g.degree(b.a) >= 2 and g.degree(b.b) >= 2:
                rotatable += 1

    rings = sssr(g)
    aromatic_rings = sum(
        1 for ring in rings if all(g.atoms[i].aromatic for i in ring)
    )

    return np.array(
        [
            mw,
            float(g.n_atoms),
            float(max(g.ring_count(), 0)),
            float(aromatic_rings),
            float(donors),
            float(acceptors),
            float(rotatable),
            float(halogens),
            n_sp3_carbon / n_carbon if n_carbon else 0.0,
            float(charge),
            polar,
            float(_longest_carbon_chain(g)),
            mr,
        ],
        dtype=np.float64,
    )
