"""Conformer loading, planar fallback layout, neighbor lists, and RBF expansion.

Conformer files are plain XYZ over heavy atoms: a count line, a comment line
(carrying the canonical SMILES by convention), then one "Element x y z" line
per atom in graph order.  Files are named by the lowercase-hex 64-bit FNV-1a
hash of the UTF-8 canonical SMILES.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chem.graph import MolGraph
from .featurize import ATOMIC_NUMBERS, _DEFAULT_ATOMIC_NUMBER
from .chem.rings import sssr

RBF_K = 50
CUTOFF = 10.0  # Angstrom
BOND_LENGTH = 1.5


class ConformerError(ValueError):
    pass


class AtomCountMismatch(ConformerError):
    pass


class ElementMismatch(ConformerError):
    pass


class MalformedFile(ConformerError):
    pass


@dataclass
class Conformer:
    atomic_numbers: np.ndarray  # (N,) int
    coords: np.ndarray          # (N, 3) float, Angstrom
    source: str                 # file | planar-fallback | absent


def atomic_number(symbol: str) -> int:
    return ATOMIC_NUMBERS.get(symbol, _DEFAULT_ATOMIC_NUMBER)


def conformer_filename(canonical: str) -> str:
    """Lowercase hex of 64-bit FNV-1a over the UTF-8 canonical SMILES."""
    h = 0xCBF29CE484222325
    for byte in canonical.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}.xyz"


def load_conformer(path: str | Path, g: MolGraph) -> Conformer:
    """Read an XYZ file and bind coordinates to g in file order."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise MalformedFile(f"{path}: expected count and comment lines")
    try:
        count = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise MalformedFile(f"{path}: bad count line {lines[0]!r}") from None
    if count != g.n_atoms:
        raise AtomCountMismatch(f"{path}: file has {count} atoms, graph has {g.n_atoms}")
    rows = [ln for ln in lines[2 : 2 + count]]
    if len(rows) < count:
        raise MalformedFile(f"{path}: expected {count} coordinate lines")
    numbers = np.zeros(count, dtype=np.int64)
    coords = np.zeros((count, 3), dtype=np.float64)
    for i, ln in enumerate(rows):
        parts = ln.split()
        if len(parts) < 4:
            raise MalformedFile(f"{path}: bad coordinate line {ln!r}")
        sym = parts[0]
        if sym != g.atoms[i].symbol:
            raise ElementMismatch(
                f"{path}: atom {i} is {sym!r} in file but {g.atoms[i].symbol!r} in graph"
            )
        try:
            coords[i] = [float(parts[1]), float(parts[2]), float(parts[3])]
        except ValueError:
            raise MalformedFile(f"{path}: bad coordinate line {ln!r}") from None
        numbers[i] = atomic_number(sym)
    return Conformer(atomic_numbers=numbers, coords=coords, source="file")


def save_conformer(path: str | Path, g: MolGraph, coords: np.ndarray, comment: str = "") -> None:
    lines = [str(g.n_atoms), comment]
    for i in range(g.n_atoms):
        x, y, z = coords[i]
        lines.append(f"{g.atoms[i].symbol} {x:.6f} {y:.6f} {z:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def absent_conformer(g: MolGraph) -> Conformer:
    return Conformer(
        atomic_numbers=np.array([atomic_number(a.symbol) for a in g.atoms], dtype=np.int64),
        coords=np.zeros((g.n_atoms, 3), dtype=np.float64),
        source="absent",
    )


def planar_fallback(g: MolGraph) -> Conformer:
    """Deterministic 2D layout with z = 0 everywhere.

    Ring atoms take regular-polygon templates; remaining atoms are placed
    breadth-first around their parent at BOND_LENGTH, fanning out over free
    directions.
    """
    n = g.n_atoms
    coords = np.full((n, 3), np.nan)
    placed = np.zeros(n, dtype=bool)

    rings = sssr(g)
    for ring in rings:
        if any(placed[i] for i in ring):
            # share the already-placed atoms; place the rest below
            continue
        k = len(ring)
        radius = BOND_LENGTH / (2.0 * np.sin(np.pi / k))
        offset = _next_free_origin(coords, placed)
        for j, atom in enumerate(ring):
            theta = 2.0 * np.pi * j / k
            coords[atom] = [offset[0] + radius * np.cos(theta), offset[1] + radius * np.sin(theta), 0.0]
            placed[atom] = True

    if not placed.any():
        coords[0] = [0.0, 0.0, 0.0]
        placed[0] = True

    # breadth-first placement of everything else off already-placed atoms
    from collections import deque

    queue = deque(i for i in range(n) if placed[i])
    golden = 2.399963229728653  # radians; spreads successive placements
    while queue:
        v = queue.popleft()
        slot = 0
        for w, _ in g.neighbors[v]:
            if placed[w]:
                continue
            theta = golden * (v + 1) + slot * (2.0 * np.pi / max(g.degree(v), 1))
            coords[w] = coords[v] + [BOND_LENGTH * np.cos(theta), BOND_LENGTH * np.sin(theta), 0.0]
            placed[w] = True
            slot += 1
            queue.append(w)

    assert placed.all()
    return Conformer(
        atomic_numbers=np.array([atomic_number(a.symbol) for a in g.atoms], dtype=np.int64),
        coords=coords,
        source="planar-fallback",
    )


def _next_free_origin(coords: np.ndarray, placed: np.ndarray) -> tuple[float, float]:
    if not placed.any():
        return (0.0, 0.0)
    x_max = float(np.nanmax(coords[placed, 0]))
    return (x_max + 3.0 * BOND_LENGTH, 0.0)


def neighbor_pairs(c: Conformer, r_c: float = CUTOFF) -> list[tuple[int, int, float]]:
    """All ordered pairs i != j with Euclidean d_ij < r_c."""
    if r_c <= 0:
        raise ValueError("cutoff must be positive")
    n = len(c.atomic_numbers)
    if n < 2:
        return []
    diff = c.coords[:, None, :] - c.coords[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    out = []
    for i in range(n):
        for j in range(n):
            if i != j and d[i, j] < r_c:
                out.append((i, j, float(d[i, j])))
    return out


def neighbor_arrays(c: Conformer, r_c: float = CUTOFF) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized neighbor list: (src indices, dst indices, distances)."""
    n = len(c.atomic_numbers)
    if n < 2:
        z = np.zeros(0, dtype=np.int64)
        return z, z, np.zeros(0, dtype=np.float64)
    diff = c.coords[:, None, :] - c.coords[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    mask = (d < r_c) & ~np.eye(n, dtype=bool)
    src, dst = np.nonzero(mask)
    return src, dst, d[src, dst]


class RbfExpansion:
    """K Gaussian bumps with centers evenly spaced on [0, r_c], sigma = spacing."""

    def __init__(self, k: int = RBF_K, r_c: float = CUTOFF):
        self.k = k
        self.r_c = r_c
        self.centers = np.linspace(0.0, r_c, k)
        self.sigma = r_c / (k - 1)

    def __call__(self, d: np.ndarray | float) -> np.ndarray:
        d = np.asarray(d, dtype=np.float64)
        return np.exp(-((d[..., None] - self.centers) ** 2) / (2.0 * self.sigma**2))


def rbf_expand(d: float, k: int = RBF_K, r_c: float = CUTOFF) -> np.ndarray:
    return RbfExpansion(k, r_c)(d)
