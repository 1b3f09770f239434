"""Molecular graph data model, corpus I/O, validity, certificates, metrics.

Molecules are undirected labeled graphs: per-node atom symbols and per-bond
integer orders in {1, 2, 3}.  Unfilled valence is assumed hydrogen-saturated,
so explicit hydrogens are optional.  Canonical certificates give exact
isomorphism classes at desk scale and back the novelty/uniqueness metrics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BOND_ORDERS = (1, 2, 3)


class ValenceTable:
    """Maximum valence per atom symbol; key order fixes the one-hot layout."""

    def __init__(self, limits: dict[str, int] | None = None):
        self.limits = dict(limits) if limits is not None else {"C": 4, "H": 1, "N": 3, "O": 2}
        for sym, cap in self.limits.items():
            if not isinstance(sym, str) or not sym:
                raise ValueError("atom symbols must be non-empty strings")
            if int(cap) < 1:
                raise ValueError(f"valence of {sym!r} must be >= 1")

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self.limits)

    def max_valence(self, symbol: str) -> int:
        if symbol not in self.limits:
            raise KeyError(f"unknown atom symbol {symbol!r}")
        return self.limits[symbol]

    def index(self, symbol: str) -> int:
        return self.symbols.index(symbol)


DEFAULT_TABLE = ValenceTable()


@dataclass(frozen=True)
class MolecularGraph:
    """Atom-typed undirected graph with bond orders.

    Bonds are normalized to sorted (u, v, order) triples with u < v; self
    loops and duplicate pairs are rejected at construction.
    """

    atom_types: tuple[str, ...]
    bonds: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self):
        atoms = tuple(str(a) for a in self.atom_types)
        object.__setattr__(self, "atom_types", atoms)
        n = len(atoms)
        norm = []
        seen = set()
        for u, v, order in self.bonds:
            u, v, order = int(u), int(v), int(order)
            if u == v:
                raise ValueError(f"self loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValueError(f"bond ({u},{v}) out of range for n={n}")
            if order not in BOND_ORDERS:
                raise ValueError(f"bond order {order} not in {BOND_ORDERS}")
            if u > v:
                u, v = v, u
            if (u, v) in seen:
                raise ValueError(f"duplicate bond ({u},{v})")
            seen.add((u, v))
            norm.append((u, v, order))
        object.__setattr__(self, "bonds", tuple(sorted(norm)))

    @property
    def n(self) -> int:
        return len(self.atom_types)

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-node list of (neighbor, bond order)."""
        adj = [[] for _ in range(self.n)]
        for u, v, order in self.bonds:
            adj[u].append((v, order))
            adj[v].append((u, order))
        return adj

    def valence_sums(self) -> np.ndarray:
        sums = np.zeros(self.n, dtype=int)
        for u, v, order in self.bonds:
            sums[u] += order
            sums[v] += order
        return sums

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for u, v, _ in self.bonds:
            deg[u] += 1
            deg[v] += 1
        return deg

    def relabel(self, perm) -> "MolecularGraph":
        """Image of the graph under node map u -> perm[u]."""
        perm = list(perm)
        atoms = [None] * self.n
        for u, p in enumerate(perm):
            atoms[p] = self.atom_types[u]
        bonds = [(perm[u], perm[v], order) for u, v, order in self.bonds]
        return MolecularGraph(tuple(atoms), tuple(bonds))


@dataclass
class ValidityReport:
    valid: bool
    violations: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class QualityMetrics:
    validity: float
    novelty: float
    uniqueness: float
    n_samples: int
    n_valid: int

    def as_dict(self) -> dict:
        return {
            "validity": self.validity,
            "novelty": self.novelty,
            "uniqueness": self.uniqueness,
            "n_samples": self.n_samples,
            "n_valid": self.n_valid,
        }


# ---------------------------------------------------------------------------
# corpus I/O

def graph_to_obj(g: MolecularGraph) -> dict:
    return {"atoms": list(g.atom_types), "bonds": [list(b) for b in g.bonds]}


def graph_from_obj(obj: dict, table: ValenceTable | None = None) -> MolecularGraph:
    table = table or DEFAULT_TABLE
    if not isinstance(obj, dict) or "atoms" not in obj or "bonds" not in obj:
        raise ValueError("record must be an object with 'atoms' and 'bonds'")
    atoms = obj["atoms"]
    for sym in atoms:
        table.max_valence(sym)  # raises on unknown symbol
    bonds = tuple((b[0], b[1], b[2]) for b in obj["bonds"])
    return MolecularGraph(tuple(atoms), bonds)


def parse_corpus(path, table: ValenceTable | None = None) -> list[MolecularGraph]:
    """Read a JSONL corpus: one {"atoms": [...], "bonds": [[u,v,order],...]} per line.

    Raises ValueError naming the offending line on malformed JSON, unknown
    atom symbols, or structural violations.
    """
    graphs = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            graphs.append(graph_from_obj(obj, table))
        except (ValueError, KeyError, TypeError, IndexError) as err:
            raise ValueError(f"corpus line {lineno}: {err}") from err
    return graphs


def write_corpus(graphs, path) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_obj(g)) + "\n")


def to_dot(g: MolecularGraph, name: str = "molecule") -> str:
    """Graphviz DOT text: nodes labeled by atom symbol, edges by bond order."""
    lines = [f"graph {name} {{"]
    for u, sym in enumerate(g.atom_types):
        lines.append(f'  n{u} [label="{sym}"];')
    for u, v, order in g.bonds:
        lines.append(f'  n{u} -- n{v} [label="{order}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# validity

def connected_components(g: MolecularGraph) -> list[list[int]]:
    adj = g.adjacency()
    seen = [False] * g.n
    comps = []
    for start in range(g.n):
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        queue = [start]
        while queue:
            u = queue.pop()
            for v, _ in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.append(v)
                    queue.append(v)
        comps.append(sorted(comp))
    return comps


def valence_violations(g: MolecularGraph, table: ValenceTable | None = None) -> list[tuple[int, str]]:
    """Nodes whose bond-order sum exceeds their maximum valence."""
    table = table or DEFAULT_TABLE
    sums = g.valence_sums()
    out = []
    for u, sym in enumerate(g.atom_types):
        if sums[u] > table.max_valence(sym):
            out.append((u, "over-valence"))
    return out


def valence_ok(g: MolecularGraph, table: ValenceTable | None = None) -> bool:
    return not valence_violations(g, table)


def validate_molecule(g: MolecularGraph, table: ValenceTable | None = None) -> ValidityReport:
    """Validity proxy: valence rule, connectivity, and at least one atom.

    Violations are (node, reason) with reasons 'over-valence', 'isolated'
    (degree-zero node), 'disconnected' (secondary component), or 'empty'
    (node -1, zero atoms).
    """
    violations = []
    if g.n == 0:
        return ValidityReport(False, [(-1, "empty")])
    violations.extend(valence_violations(g, table))
    comps = connected_components(g)
    if len(comps) > 1:
        # every component after the largest (ties: lowest node id) is extra
        main = max(comps, key=len)
        for comp in comps:
            if comp is main:
                continue
            reason = "isolated" if len(comp) == 1 else "disconnected"
            violations.append((comp[0], reason))
    return ValidityReport(not violations, violations)


# ---------------------------------------------------------------------------
# canonical certificates

def _refine(n, adj, colors):
    """Weisfeiler-Lehman color refinement to a stable partition.

    Colors are dense ints; new colors are assigned by sorting signature
    tuples, which keeps the refinement independent of node labels.
    """
    while True:
        sigs = []
        for u in range(n):
            nbr = tuple(sorted((order, colors[v]) for v, order in adj[u]))
            sigs.append((colors[u], nbr))
        ranking = {sig: i for i, sig in enumerate(sorted(set(sigs)))}
        new = [ranking[s] for s in sigs]
        if new == colors:
            return new
        colors = new


def _component_certificate(atoms, adj, leaf_budget=200000):
    """Canonical form of one connected component.

    Individualization-refinement search: repeatedly pick the first
    non-singleton color class (an isomorphism-invariant choice), branch on
    each of its vertices, refine, and recurse; the certificate is the
    lexicographic minimum over all leaves.  Leaf values are per-position
    records (atom, back-edges), so a branch whose forced singleton prefix
    already exceeds the best leaf's prefix can be pruned soundly.
    """
    n = len(atoms)
    seed_sigs = [
        (atoms[u], len(adj[u]), tuple(sorted(order for _, order in adj[u])))
        for u in range(n)
    ]
    ranking = {sig: i for i, sig in enumerate(sorted(set(seed_sigs)))}
    colors = _refine(n, adj, [ranking[s] for s in seed_sigs])

    best = [None]
    leaves = [0]

    def position_records(order_nodes):
        # record i: (atom at position i, sorted (earlier position, order) bonds)
        pos = {node: i for i, node in enumerate(order_nodes)}
        records = []
        for i, node in enumerate(order_nodes):
            back = tuple(sorted(
                (pos[v], order) for v, order in adj[node]
                if v in pos and pos[v] < i
            ))
            records.append((atoms[node], back))
        return tuple(records)

    def cells_of(colors):
        groups = {}
        for u, c in enumerate(colors):
            groups.setdefault(c, []).append(u)
        return [sorted(groups[c]) for c in sorted(groups)]

    def recurse(colors):
        cells = cells_of(colors)
        if best[0] is not None:
            prefix = []
            for cell in cells:
                if len(cell) != 1:
                    break
                prefix.append(cell[0])
            forced = position_records(prefix)
            if forced > best[0][:len(forced)]:
                return
        target = next((cell for cell in cells if len(cell) > 1), None)
        if target is None:
            leaves[0] += 1
            if leaves[0] > leaf_budget:
                raise RuntimeError("certificate search budget exceeded")
            value = position_records([cell[0] for cell in cells])
            if best[0] is None or value < best[0]:
                best[0] = value
            return
        # split in place: the individualized vertex lands right before its
        # old cell, so forced prefixes only ever grow down the subtree
        target_color = colors[target[0]]
        for v in target:
            branched = list(colors)
            branched[v] = target_color - 0.5
            recurse(_refine(n, adj, branched))

    recurse(colors)
    return best[0]


def canonical_certificate(g: MolecularGraph, limit: int = 64) -> bytes:
    """Exact isomorphism certificate: equal bytes iff graphs are isomorphic.

    Components are canonicalized independently and combined as a sorted
    multiset.  Raises ValueError above the configured size limit.
    """
    if g.n > limit:
        raise ValueError(f"certificate limited to {limit} nodes, got {g.n}")
    if g.n == 0:
        return b"(0)"
    adj = g.adjacency()
    comp_values = []
    for comp in connected_components(g):
        local = {node: i for i, node in enumerate(comp)}
        sub_atoms = [g.atom_types[node] for node in comp]
        sub_adj = [[(local[v], order) for v, order in adj[node]] for node in comp]
        comp_values.append((len(comp), _component_certificate(sub_atoms, sub_adj)))
    return repr((g.n, sorted(comp_values))).encode()


# ---------------------------------------------------------------------------
# quality metrics

def compute_metrics(samples, corpus, table: ValenceTable | None = None) -> QualityMetrics:
    """Validity, novelty, and uniqueness of a sample set against a corpus.

    Validity is the fraction of samples passing validate_molecule.  Novelty
    counts valid samples (with multiplicity) whose certificate appears in
    the corpus; uniqueness is the number of distinct valid certificates over
    the total sample count.  With no valid samples, novelty and uniqueness
    are reported as 0.0.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("compute_metrics: empty sample set")
    table = table or DEFAULT_TABLE
    valid = [g for g in samples if validate_molecule(g, table).valid]
    validity = len(valid) / len(samples)
    if not valid:
        return QualityMetrics(validity, 0.0, 0.0, len(samples), 0)
    corpus_certs = {canonical_certificate(g) for g in corpus}
    valid_certs = [canonical_certificate(g) for g in valid]
    known = sum(1 for c in valid_certs if c in corpus_certs)
    novelty = 1.0 - known / len(valid)
    uniqueness = len(set(valid_certs)) / len(samples)
    return QualityMetrics(validity, novelty, uniqueness, len(samples), len(valid))


# ---------------------------------------------------------------------------
# corpus synthesis (desk-scale test and demo data)

def random_molecule(rng: np.random.Generator, n_nodes: int,
                    table: ValenceTable | None = None,
                    ring_prob: float = 0.3) -> MolecularGraph:
    """Sample a connected molecule that respects the valence table.

    Grows a random tree (attachment points weighted by remaining valence),
    then closes a few rings where valence allows.  Heavy atoms dominate;
    explicit hydrogens appear only as leaves.
    """
    table = table or DEFAULT_TABLE
    symbols = table.symbols
    weights = np.array([{"C": 0.6, "H": 0.1, "N": 0.15, "O": 0.15}.get(s, 0.25)
                        for s in symbols])
    weights = weights / weights.sum()

    heavy = [s for s in symbols if table.max_valence(s) >= 2] or list(symbols)
    atoms = [heavy[rng.integers(len(heavy))]]
    remaining = [table.max_valence(atoms[0])]
    bonds = []
    while len(atoms) < n_nodes:
        open_nodes = [u for u in range(len(atoms)) if remaining[u] >= 1]
        if not open_nodes:
            break
        u = open_nodes[rng.integers(len(open_nodes))]
        sym = rng.choice(symbols, p=weights)
        # keep growth alive: the last slots must not all be valence-1 leaves
        if len(atoms) < n_nodes - 1 and sum(remaining) <= 1 and table.max_valence(sym) < 2:
            sym = heavy[rng.integers(len(heavy))]
        cap = min(remaining[u], table.max_valence(sym), 3)
        order = 1 if cap == 1 else int(rng.choice([1, 2, 3][:cap], p=_order_weights(cap)))
        v = len(atoms)
        atoms.append(sym)
        remaining[u] -= order
        remaining.append(table.max_valence(sym) - order)
        bonds.append((u, v, order))

    n = len(atoms)
    if rng.random() < ring_prob and n >= 3:
        bonded = {(u, v) for u, v, _ in bonds}
        for _ in range(2):
            open_nodes = [u for u in range(n) if remaining[u] >= 1]
            if len(open_nodes) < 2:
                break
            u, v = rng.choice(open_nodes, size=2, replace=False)
            u, v = (int(u), int(v)) if u < v else (int(v), int(u))
            if (u, v) in bonded:
                continue
            bonds.append((u, v, 1))
            bonded.add((u, v))
            remaining[u] -= 1
            remaining[v] -= 1
    return MolecularGraph(tuple(atoms), tuple(bonds))


def _order_weights(cap: int) -> np.ndarray:
    w = np.array([0.7, 0.2, 0.1][:cap])
    return w / w.sum()
