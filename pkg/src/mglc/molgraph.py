"""Molecular graphs parsed from a small SMILES dialect.

Supported: organic-subset atoms (B C N O P S F Cl Br I), lowercase aromatic
atoms (b c n o p s), bond symbols ``- = # :``, branches and ring closures
(``1``-``9`` and ``%nn``). Hydrogens stay implicit; degrees count heavy-atom
bonds only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_ELEMENTS = ("B", "C", "N", "O", "P", "S")


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


class SmilesError(ValueError):
    """Malformed or unsupported SMILES; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool
    index: int


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)

    def other(self, atom: int) -> int:
        return self.end if atom == self.begin else self.begin


@dataclass(frozen=True, eq=False)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    ring_atom: tuple[bool, ...] = field(init=False)
    degree: tuple[int, ...] = field(init=False)
    # per atom: list of (neighbor, bond index)
    adjacency: tuple[tuple[tuple[int, int], ...], ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        seen = set()
        for bi, b in enumerate(self.bonds):
            if b.begin == b.end:
                raise ValueError(f"bond {bi} is a self-loop")
            key = (min(b.endpoints), max(b.endpoints))
            if key in seen:
                raise ValueError(f"duplicate bond between atoms {key}")
            seen.add(key)
            adj[b.begin].append((b.end, bi))
            adj[b.end].append((b.begin, bi))
        for i, a in enumerate(self.atoms):
            if a.index != i:
                raise ValueError(f"atom {i} carries index {a.index}")
            if a.element not in ELEMENTS:
                raise ValueError(f"unsupported element {a.element!r}")
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))
        object.__setattr__(self, "degree", tuple(len(x) for x in adj))
        object.__setattr__(self, "ring_atom", tuple(ring_membership(self)))

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, i: int) -> list[int]:
        return [j for j, _ in self.adjacency[i]]

    def is_connected(self) -> bool:
        if not self.atoms:
            return False
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v, _ in self.adjacency[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == len(self.atoms)

    def __repr__(self) -> str:
        return f"MolecularGraph({to_smiles(self)!r})"


def bridges(g: MolecularGraph) -> set[int]:
    """Indices of bonds whose removal disconnects their endpoints (Tarjan lowlink)."""
    n = g.n_atoms
    disc = [-1] * n
    low = [0] * n
    out: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (atom, bond used to enter it, iterator position)
        stack = [(root, -1, 0)]
        while stack:
            u, via, pos = stack[-1]
            if pos < len(g.adjacency[u]):
                stack[-1] = (u, via, pos + 1)
                v, bi = g.adjacency[u][pos]
                if bi == via:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, bi, 0))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        out.add(via)
    return out


def ring_membership(g: MolecularGraph) -> list[bool]:
    """True for atoms incident to at least one non-bridge (cycle) bond."""
    cut = bridges(g)
    flags = [False] * g.n_atoms
    for bi, b in enumerate(g.bonds):
        if bi not in cut:
            flags[b.begin] = flags[b.end] = True
    return flags


def _read_atom(text: str, pos: int) -> tuple[str, bool, int] | None:
    two = text[pos:pos + 2]
    if two in ("Cl", "Br"):
        return two, False, pos + 2
    ch = text[pos]
    if ch in ("B", "C", "N", "O", "P", "S", "F", "I"):
        return ch, False, pos + 1
    if ch in ("b", "c", "n", "o", "p", "s"):
        return ch.upper(), True, pos + 1
    return None


def parse_smiles(text: str) -> MolecularGraph:
    atoms: list[Atom] = []
    bonds: list[Bond] = []
    bonded: set[tuple[int, int]] = set()
    branch_stack: list[int] = []
    # ring label -> (atom, explicit bond order or None, offset)
    open_rings: dict[int, tuple[int, BondOrder | None, int]] = {}
    prev: int | None = None
    pending: tuple[BondOrder, int] | None = None
    raw = text.encode("utf-8")
    if len(raw) != len(text):
        raise SmilesError("non-ASCII character", _byte_offset(text, next(i for i, c in enumerate(text) if ord(c) > 127)))

    def add_bond(a: int, b: int, order: BondOrder | None, offset: int) -> None:
        if a == b:
            raise SmilesError("ring closure onto the same atom", offset)
        key = (min(a, b), max(a, b))
        if key in bonded:
            raise SmilesError("duplicate bond", offset)
        if order is None:
            order = BondOrder.AROMATIC if atoms[a].aromatic and atoms[b].aromatic else BondOrder.SINGLE
        bonded.add(key)
        bonds.append(Bond(a, b, order))

    pos = 0
    n = len(text)
    if n == 0:
        raise SmilesError("empty SMILES", 0)
    while pos < n:
        ch = text[pos]
        got = _read_atom(text, pos)
        if got is not None:
            element, aromatic, nxt = got
            idx = len(atoms)
            atoms.append(Atom(element, aromatic, idx))
            if prev is not None:
                add_bond(prev, idx, pending[0] if pending else None, pos)
            elif pending is not None:
                raise SmilesError("bond symbol without a preceding atom", pending[1])
            pending = None
            prev = idx
            pos = nxt
        elif ch in _BOND_SYMBOLS:
            if pending is not None or prev is None:
                raise SmilesError(f"misplaced bond symbol {ch!r}", pos)
            pending = (_BOND_SYMBOLS[ch], pos)
            pos += 1
        elif ch == "(":
            if prev is None or pending is not None:
                raise SmilesError("branch opened without a preceding atom", pos)
            branch_stack.append(prev)
            pos += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError("unbalanced parenthesis", pos)
            if pending is not None:
                raise SmilesError("dangling bond symbol", pending[1])
            prev = branch_stack.pop()
            pos += 1
        elif ch.isdigit() or ch == "%":
            start = pos
            if ch == "%":
                digits = text[pos + 1:pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    raise SmilesError("malformed %nn ring label", pos)
                label = int(digits)
                pos += 3
            else:
                label = int(ch)
                if label == 0:
                    raise SmilesError("ring label 0 is not supported", pos)
                pos += 1
            if prev is None:
                raise SmilesError("ring closure without a preceding atom", start)
            order = pending[0] if pending else None
            pending = None
            if label in open_rings:
                other, other_order, _ = open_rings.pop(label)
                if order is not None and other_order is not None and order != other_order:
                    raise SmilesError("conflicting ring-closure bond orders", start)
                add_bond(other, prev, order if order is not None else other_order, start)
            else:
                open_rings[label] = (prev, order, start)
        else:
            raise SmilesError(f"unsupported token {ch!r}", pos)
    if pending is not None:
        raise SmilesError("dangling bond symbol", pending[1])
    if branch_stack:
        raise SmilesError("unbalanced parenthesis", text.rindex("("))
    if open_rings:
        offset = min(o for _, _, o in open_rings.values())
        raise SmilesError("unmatched ring closure", offset)
    g = MolecularGraph(tuple(atoms), tuple(bonds))
    if not g.is_connected():
        raise SmilesError("disconnected molecule", 0)
    return g


def _byte_offset(text: str, char_index: int) -> int:
    return len(text[:char_index].encode("utf-8"))


def _atom_token(a: Atom) -> str:
    return a.element.lower() if a.aromatic else a.element


def _bond_token(g: MolecularGraph, b: Bond) -> str:
    both_aromatic = g.atoms[b.begin].aromatic and g.atoms[b.end].aromatic
    if b.order == BondOrder.AROMATIC:
        return "" if both_aromatic else ":"
    if b.order == BondOrder.SINGLE:
        return "-" if both_aromatic else ""
    return "=" if b.order == BondOrder.DOUBLE else "#"


def to_smiles(g: MolecularGraph, start: int = 0) -> str:
    """Serialize a connected graph back into the supported dialect."""
    if g.n_atoms == 0:
        return ""
    visited = [False] * g.n_atoms
    tree_bonds = set()
    children: dict[int, list[tuple[int, int]]] = {i: [] for i in range(g.n_atoms)}
    stack = [(start, -1, -1)]
    while stack:
        u, parent, via = stack.pop()
        if visited[u]:
            continue
        visited[u] = True
        if via >= 0:
            tree_bonds.add(via)
            children[parent].append((u, via))
        for v, bi in reversed(g.adjacency[u]):
            if not visited[v]:
                stack.append((v, u, bi))
    if not all(visited):
        raise ValueError("cannot serialize a disconnected graph")
    ring_bonds = [bi for bi in range(len(g.bonds)) if bi not in tree_bonds]
    closures: dict[int, list[int]] = {i: [] for i in range(g.n_atoms)}
    for bi in ring_bonds:
        b = g.bonds[bi]
        closures[b.begin].append(bi)
        closures[b.end].append(bi)

    free_labels: list[int] = []
    next_label = 1
    open_label: dict[int, int] = {}
    out: list[str] = []

    def label_text(k: int) -> str:
        return str(k) if k < 10 else f"%{k:02d}"

    def emit(u: int) -> None:
        nonlocal next_label
        out.append(_atom_token(g.atoms[u]))
        for bi in closures[u]:
            if bi in open_label:
                k = open_label.pop(bi)
                out.append(_bond_token(g, g.bonds[bi]) + label_text(k))
                free_labels.append(k)
                free_labels.sort()
            else:
                if free_labels:
                    k = free_labels.pop(0)
                else:
                    k = next_label
                    next_label += 1
                open_label[bi] = k
                out.append(_bond_token(g, g.bonds[bi]) + label_text(k))
        kids = children[u]
        for idx, (v, bi) in enumerate(kids):
            last = idx == len(kids) - 1
            if not last:
                out.append("(")
            out.append(_bond_token(g, g.bonds[bi]))
            emit(v)
            if not last:
                out.append(")")

    emit(start)
    return "".join(out)


def subgraph(g: MolecularGraph, atom_indices: list[int]) -> MolecularGraph:
    """Induced subgraph on ``atom_indices``, re-indexed in the given order."""
    remap = {old: new for new, old in enumerate(atom_indices)}
    atoms = tuple(Atom(g.atoms[old].element, g.atoms[old].aromatic, new) for new, old in enumerate(atom_indices))
    bonds = tuple(
        Bond(remap[b.begin], remap[b.end], b.order)
        for b in g.bonds
        if b.begin in remap and b.end in remap
    )
    return MolecularGraph(atoms, bonds)
