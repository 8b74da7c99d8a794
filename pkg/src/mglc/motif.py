"""Motif extraction by bridge-bond detachment and a frequency-ranked dictionary."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .molgraph import ELEMENTS, MolecularGraph, bridges, subgraph, to_smiles

MAX_MOTIF_ATOMS = 64


@dataclass(frozen=True, eq=False)
class Motif:
    graph: MolecularGraph
    code: bytes
    atom_indices: tuple[int, ...]  # positions in the parent molecule

    @property
    def smiles(self) -> str:
        return to_smiles(self.graph)


def find_bridge_bonds(g: MolecularGraph) -> set[int]:
    """Bonds (u, v) with both degrees >= 2, a ring endpoint, and no cycle through the bond."""
    out = set()
    for bi in bridges(g):
        b = g.bonds[bi]
        u, v = b.begin, b.end
        if g.degree[u] >= 2 and g.degree[v] >= 2 and (g.ring_atom[u] or g.ring_atom[v]):
            out.add(bi)
    return out


def extract_motifs(g: MolecularGraph) -> list[Motif]:
    cut = find_bridge_bonds(g)
    comp = [-1] * g.n_atoms
    groups: list[list[int]] = []
    for root in range(g.n_atoms):
        if comp[root] != -1:
            continue
        cid = len(groups)
        comp[root] = cid
        members = [root]
        stack = [root]
        while stack:
            u = stack.pop()
            for v, bi in g.adjacency[u]:
                if bi not in cut and comp[v] == -1:
                    comp[v] = cid
                    members.append(v)
                    stack.append(v)
        groups.append(sorted(members))
    motifs = []
    for members in groups:
        sub = subgraph(g, members)
        motifs.append(Motif(sub, canonical_code(sub), tuple(members)))
    return motifs


# -- canonical codes ---------------------------------------------------------

def _atom_label(g: MolecularGraph, i: int) -> int:
    a = g.atoms[i]
    return ELEMENTS.index(a.element) * 2 + int(a.aromatic)


def _refine(g: MolecularGraph, colors: list[int]) -> list[int]:
    """Colour refinement; colour ids are ranks of sorted signatures, so they are label-free."""
    n_colors = len(set(colors))
    while True:
        sigs = [
            (colors[u], tuple(sorted((colors[v], int(g.bonds[bi].order)) for v, bi in g.adjacency[u])))
            for u in range(g.n_atoms)
        ]
        ranks = {s: r for r, s in enumerate(sorted(set(sigs)))}
        new = [ranks[s] for s in sigs]
        if len(ranks) == n_colors:
            return new
        colors, n_colors = new, len(ranks)


def _serialize(g: MolecularGraph, colors: list[int]) -> tuple:
    # colors form a permutation here: colors[u] is the new position of atom u
    labels = [0] * g.n_atoms
    for u in range(g.n_atoms):
        labels[colors[u]] = _atom_label(g, u)
    edges = sorted(
        (min(colors[b.begin], colors[b.end]), max(colors[b.begin], colors[b.end]), int(b.order))
        for b in g.bonds
    )
    return (tuple(labels), tuple(edges))


def _search(g: MolecularGraph, colors: list[int], best: list) -> None:
    colors = _refine(g, colors)
    counts = Counter(colors)
    if len(counts) == g.n_atoms:
        cand = _serialize(g, colors)
        if best[0] is None or cand < best[0]:
            best[0] = cand
        return
    # first non-singleton cell, smallest colour
    target = min(c for c, k in counts.items() if k > 1)
    for v in range(g.n_atoms):
        if colors[v] != target:
            continue
        # split the cell: v ranks ahead of its cell mates, everyone else keeps order
        split = [2 * c + (1 if (c == target and u != v) else 0) + (1 if c > target else 0) for u, c in enumerate(colors)]
        _search(g, split, best)


def canonical_code(m: MolecularGraph) -> bytes:
    """Isomorphism-invariant byte string for a connected motif of at most 64 atoms."""
    if m.n_atoms > MAX_MOTIF_ATOMS:
        raise ValueError(f"motif has {m.n_atoms} atoms; limit is {MAX_MOTIF_ATOMS}")
    if m.n_atoms == 0:
        raise ValueError("empty motif")
    best: list = [None]
    _search(m, [_atom_label(m, i) for i in range(m.n_atoms)], best)
    labels, edges = best[0]
    atoms = ",".join(str(x) for x in labels)
    bonds = ",".join(f"{i}-{j}:{o}" for i, j, o in edges)
    return f"{len(labels)}|{atoms}|{bonds}".encode("ascii")


# -- dictionary --------------------------------------------------------------

@dataclass(frozen=True)
class MotifDictionary:
    entries: tuple[tuple[bytes, int], ...]
    capacity: int
    examples: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.entries) > self.capacity:
            raise ValueError("more entries than capacity")
        if any(f <= 0 for _, f in self.entries):
            raise ValueError("frequencies must be positive")
        object.__setattr__(self, "_index", {c: i for i, (c, _) in enumerate(self.entries)})

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def codes(self) -> list[bytes]:
        return [c for c, _ in self.entries]

    def index(self, code: bytes) -> int | None:
        return self._index.get(code)

    def motif_ids(self, g: MolecularGraph) -> list[int]:
        """Distinct dictionary positions of the motifs of ``g``, ascending."""
        return sorted({i for m in extract_motifs(g) if (i := self.index(m.code)) is not None})

    def save(self, path: str | Path) -> None:
        lines = []
        for k, (code, freq) in enumerate(self.entries):
            example = self.examples[k] if k < len(self.examples) else ""
            lines.append(f"{freq}\t{code.hex()}\t{example}\n")
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, capacity: int | None = None) -> "MotifDictionary":
        entries, examples = [], []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            entries.append((bytes.fromhex(parts[1]), int(parts[0])))
            examples.append(parts[2])
        return cls(tuple(entries), capacity or max(len(entries), 1), tuple(examples))


def count_motifs(corpus: Iterable[MolecularGraph]) -> tuple[Counter, dict[bytes, str]]:
    counts: Counter = Counter()
    examples: dict[bytes, str] = {}
    for g in corpus:
        for m in extract_motifs(g):
            counts[m.code] += 1
            smi = m.smiles
            # shortest, then lexicographically smallest example keeps output order-free
            if m.code not in examples or (len(smi), smi) < (len(examples[m.code]), examples[m.code]):
                examples[m.code] = smi
    return counts, examples


def build_dictionary(corpus: list[MolecularGraph], k: int) -> MotifDictionary:
    if k <= 0:
        raise ValueError("K must be a positive integer")
    if not corpus:
        raise ValueError("corpus is empty")
    counts, examples = count_motifs(corpus)
    ranked = sorted(counts.items(), key=lambda cf: (-cf[1], cf[0]))[:k]
    return MotifDictionary(tuple(ranked), k, tuple(examples[c] for c, _ in ranked))
