"""SMILES parser.

Covers the subset needed here: organic-subset and bracket atoms, charges,
explicit H counts, @/@@ chirality marks, bond symbols - = # : / \\, branches,
ring closures (digits and %nn).  Aromaticity is taken purely from lowercase
notation; no Hueckel perception.  Isotopes, explicit [H] atoms, and reaction
SMILES are rejected.
"""

from __future__ import annotations

from .graph import Atom, Bond, MolGraph, allowed_valences, implicit_h


class ParseError(ValueError):
    pass


class MultiComponentError(ParseError):
    """Raised when a '.' separator is present (salts/mixtures)."""


class ValenceError(ParseError):
    """Explicit bonds exceed the allowed valence of an atom."""


ORGANIC_SUBSET = {"B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I"}
AROMATIC_SUBSET = {"b", "c", "n", "o", "p", "s"}
# two-letter aromatic symbols allowed inside brackets
AROMATIC_BRACKET = {"se": "Se", "as": "As", "te": "Te", "si": "Si"}

BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}

_TWO_LETTER = ("Cl", "Br")


def _is_upper(ch: str) -> bool:
    return "A" <= ch <= "Z"


def _is_lower(ch: str) -> bool:
    return "a" <= ch <= "z"


def _is_digit(ch: str) -> bool:
    return "0" <= ch <= "9"


def _parse_bracket(s: str, i: int) -> tuple[Atom, int]:
    """Parse a bracket atom starting just past '['; returns (atom, next index)."""
    n = len(s)
    if i < n and _is_digit(s[i]):
        raise ParseError(f"isotope labels are unsupported at position {i}")
    if i >= n:
        raise ParseError("unterminated bracket atom")
    aromatic = False
    # element symbol
    ch = s[i]
    if _is_upper(ch):
        # greedy two-letter element (H counts are uppercase, so no clash)
        if i + 1 < n and _is_lower(s[i + 1]):
            symbol = s[i : i + 2]
            i += 2
        else:
            symbol = ch
            i += 1
    elif _is_lower(ch):
        two = s[i : i + 2]
        if two in AROMATIC_BRACKET:
            symbol = AROMATIC_BRACKET[two]
            aromatic = True
            i += 2
        elif ch in AROMATIC_SUBSET:
            symbol = ch.upper()
            aromatic = True
            i += 1
        else:
            raise ParseError(f"unknown aromatic symbol {ch!r} at position {i}")
    elif ch == "*":
        symbol = "*"
        i += 1
    else:
        raise ParseError(f"bad bracket atom at position {i}")
    if symbol == "H":
        raise ParseError("explicit [H] atoms are unsupported")

    chirality = "none"
    if i < n and s[i] == "@":
        if i + 1 < n and s[i + 1] == "@":
            chirality = "R"  # @@ = clockwise
            i += 2
        else:
            chirality = "S"  # @ = anticlockwise
            i += 1
        # ignore extended chirality classes like @TH1
        while i < n and (_is_upper(s[i]) and s[i] == "T" and s[i : i + 2] == "TH"):
            i += 2
            while i < n and _is_digit(s[i]):
                i += 1
            chirality = "other"

    h_count = 0
    if i < n and s[i] == "H":
        i += 1
        if i < n and _is_digit(s[i]):
            h_count = int(s[i])
            i += 1
        else:
            h_count = 1

    charge = 0
    if i < n and s[i] in "+-":
        sign = 1 if s[i] == "+" else -1
        i += 1
        if i < n and _is_digit(s[i]):
            charge = sign * int(s[i])
            i += 1
        else:
            charge = sign
            while i < n and s[i] == ("+" if sign > 0 else "-"):
                charge += sign
                i += 1

    if i >= n or s[i] != "]":
        raise ParseError(f"unterminated bracket atom near position {i}")
    return Atom(symbol=symbol, charge=charge, h_count=h_count, aromatic=aromatic, chirality=chirality), i + 1


def parse_smiles(s: str) -> MolGraph:
    """Parse a SMILES string into a connected heavy-atom MolGraph.

    Implicit hydrogens are filled from standard valences, ring membership is
    perceived, and bond conjugation and double-bond stereo (from /\\ marks)
    are annotated.

    Raises ParseError, MultiComponentError, or ValenceError.
    """
    if not s:
        raise ParseError("empty SMILES")

    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bracket_flags: list[bool] = []
    # directional single bonds for E/Z: bond index -> '/' or '\\'
    directional: dict[int, str] = {}

    prev = -1
    pending: str | None = None  # bond symbol awaiting the next atom
    pending_dir: str | None = None
    branch_stack: list[int] = []
    # ring number -> (atom index, bond symbol or None, direction or None)
    open_rings: dict[int, tuple[int, str | None, str | None]] = {}

    def add_bond(a: int, b: int, symbol: str | None, direction: str | None) -> None:
        if a == b:
            raise ParseError("self bond")
        if symbol is None:
            order = "aromatic" if atoms[a].aromatic and atoms[b].aromatic else "single"
        else:
            order = BOND_SYMBOLS[symbol]
        bidx = len(bonds)
        bonds.append(Bond(a=a, b=b, order=order))
        if direction is not None:
            directional[bidx] = direction

    n = len(s)
    i = 0
    while i < n:
        ch = s[i]
        new_atom: Atom | None = None
        from_bracket = False

        if ch == ".":
            raise MultiComponentError("multi-component SMILES ('.' separator)")
        elif ch == "(":
            if prev < 0:
                raise ParseError(f"branch with no preceding atom at position {i}")
            branch_stack.append(prev)
            i += 1
            continue
        elif ch == ")":
            if not branch_stack:
                raise ParseError(f"unbalanced ')' at position {i}")
            if pending is not None:
                raise ParseError(f"dangling bond before ')' at position {i}")
            prev = branch_stack.pop()
            i += 1
            continue
        elif ch in BOND_SYMBOLS:
            if pending is not None:
                raise ParseError(f"double bond symbol at position {i}")
            pending = ch
            i += 1
            continue
        elif ch in "/\\":
            if pending is not None:
                raise ParseError(f"double bond symbol at position {i}")
            pending = "-"
            pending_dir = ch
            i += 1
            continue
        elif ch == "%" or _is_digit(ch):
            if ch == "%":
                if i + 2 >= n or not (_is_digit(s[i + 1]) and _is_digit(s[i + 2])):
                    raise ParseError(f"bad %nn ring closure at position {i}")
                num = int(s[i + 1 : i + 3])
                i += 3
            else:
                num = int(ch)
                i += 1
            if prev < 0:
                raise ParseError("ring closure before any atom")
            if num in open_rings:
                a, sym_a, dir_a = open_rings.pop(num)
                sym = pending if pending is not None else sym_a
                if pending is not None and sym_a is not None and pending != sym_a:
                    raise ParseError(f"conflicting ring-closure bond symbols for ring {num}")
                add_bond(a, prev, sym, pending_dir or dir_a)
            else:
                open_rings[num] = (prev, pending, pending_dir)
            pending = None
            pending_dir = None
            continue
        elif ch == "[":
            new_atom, i = _parse_bracket(s, i + 1)
            from_bracket = True
        elif _is_upper(ch):
            sym = s[i : i + 2] if s[i : i + 2] in _TWO_LETTER else ch
            if sym not in ORGANIC_SUBSET:
                raise ParseError(f"unknown symbol {sym!r} at position {i}")
            new_atom = Atom(symbol=sym)
            i += len(sym)
        elif _is_lower(ch):
            if ch not in AROMATIC_SUBSET:
                raise ParseError(f"unknown symbol {ch!r} at position {i}")
            new_atom = Atom(symbol=ch.upper(), aromatic=True)
            i += 1
        else:
            raise ParseError(f"unexpected character {ch!r} at position {i}")

        idx = len(atoms)
        atoms.append(new_atom)
        bracket_flags.append(from_bracket)
        if prev >= 0:
            add_bond(prev, idx, pending, pending_dir)
        elif pending is not None:
            raise ParseError("bond symbol before first atom")
        pending = None
        pending_dir = None
        prev = idx

    if branch_stack:
        raise ParseError("unbalanced '('")
    if open_rings:
        raise ParseError(f"unclosed ring closures: {sorted(open_rings)}")
    if pending is not None:
        raise ParseError("dangling bond at end of input")
    if not atoms:
        raise ParseError("no atoms")

    g = MolGraph(atoms=atoms, bonds=bonds)
    g.neighbors = [[] for _ in atoms]
    for bidx, b in enumerate(bonds):
        g.neighbors[b.a].append((b.b, bidx))
        g.neighbors[b.b].append((b.a, bidx))

    _perceive_rings(g)
    _validate_aromaticity(g)
    _fill_hydrogens(g, bracket_flags)
    _perceive_conjugation(g)
    _perceive_bond_stereo(g, directional)
    return g


def _perceive_rings(g: MolGraph) -> None:
    """Mark ring atoms/bonds: every non-bridge edge lies on a cycle."""
    n = g.n_atoms
    disc = [-1] * n
    low = [0] * n
    is_bridge = [False] * g.n_bonds
    timer = 0
    # iterative Tarjan bridge finding
    for root in range(n):
        if disc[root] >= 0:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]  # (node, parent bond, child iter pos)
        while stack:
            v, pbond, ptr = stack.pop()
            if ptr == 0:
                disc[v] = low[v] = timer
                timer += 1
            if ptr < len(g.neighbors[v]):
                stack.append((v, pbond, ptr + 1))
                w, bidx = g.neighbors[v][ptr]
                if bidx == pbond:
                    continue
                if disc[w] >= 0:
                    low[v] = min(low[v], disc[w])
                else:
                    stack.append((w, bidx, 0))
            else:
                if pbond >= 0:
                    b = g.bonds[pbond]
                    u = b.other(v)
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        is_bridge[pbond] = True
    for bidx, b in enumerate(g.bonds):
        if not is_bridge[bidx]:
            b.in_ring = True
            g.atoms[b.a].in_ring = True
            g.atoms[b.b].in_ring = True


def _validate_aromaticity(g: MolGraph) -> None:
    for b in g.bonds:
        if b.order == "aromatic":
            if not (g.atoms[b.a].aromatic and g.atoms[b.b].aromatic):
                raise ParseError("aromatic bond between non-aromatic atoms")
    for i, a in enumerate(g.atoms):
        if a.aromatic and not a.in_ring:
            raise ParseError(f"aromatic atom {i} outside any ring")


def _fill_hydrogens(g: MolGraph, bracket_flags: list[bool]) -> None:
    for i, atom in enumerate(g.atoms):
        ev = g.explicit_valence(i)
        allowed = allowed_valences(atom.symbol, atom.charge)
        if bracket_flags[i]:
            # H count explicit; only sanity-check the total
            if allowed and ev + atom.h_count > max(allowed) + (1 if atom.aromatic else 0):
                raise ValenceError(
                    f"atom {i} ({atom.symbol}): valence {ev + atom.h_count} exceeds {max(allowed)}"
                )
            continue
        if not allowed:
            raise ParseError(f"element {atom.symbol} requires bracket notation")
        h = implicit_h(atom.symbol, atom.charge, ev, atom.aromatic)
        if h is None:
            raise ValenceError(
                f"atom {i} ({atom.symbol}): explicit valence {ev} exceeds {max(allowed)}"
            )
        atom.h_count = h


def _is_pi_atom(g: MolGraph, i: int, skip_bond: int | None = None) -> bool:
    if g.atoms[i].aromatic:
        return True
    for _, bidx in g.neighbors[i]:
        if bidx == skip_bond:
            continue
        if g.bonds[bidx].order in ("double", "triple", "aromatic"):
            return True
    return False


def _perceive_conjugation(g: MolGraph) -> None:
    for bidx, b in enumerate(g.bonds):
        if b.order == "aromatic":
            b.conjugated = True
        elif b.order == "single":
            b.conjugated = _is_pi_atom(g, b.a, bidx) and _is_pi_atom(g, b.b, bidx)
        else:
            # multiple bond: conjugated when a neighboring atom extends the pi system
            conj = False
            for end in (b.a, b.b):
                for w, wbidx in g.neighbors[end]:
                    if wbidx != bidx and _is_pi_atom(g, w, wbidx):
                        conj = True
                        break
                if conj:
                    break
            b.conjugated = conj


def _perceive_bond_stereo(g: MolGraph, directional: dict[int, str]) -> None:
    """Assign Z/E to double bonds flanked by directional single bonds.

    Convention: in a bond u->v written with '/', u sits below v; with '\\',
    u sits above v.  Same side of the double-bond axis => Z, opposite => E.
    """
    if not directional:
        return

    def side(bidx: int, anchor: int) -> int:
        # +1 when the non-anchor atom of the directional bond sits above the axis
        b = g.bonds[bidx]
        mark = directional[bidx]
        up_second = 1 if mark == "/" else -1  # '/' raises the later-written atom
        return up_second if b.other(anchor) == b.b else -up_second

    for b in g.bonds:
        if b.order != "double":
            continue
        s_a = next((side(bidx, b.a) for _, bidx in g.neighbors[b.a] if bidx in directional), None)
        s_b = next((side(bidx, b.b) for _, bidx in g.neighbors[b.b] if bidx in directional), None)
        if s_a is None or s_b is None:
            continue
        # substituent above on one end and the written-direction geometry:
        # F/C=C/F (opposite marks around axis) is E; F/C=C\\F is Z
        b.stereo = "E" if s_a != s_b else "Z"
