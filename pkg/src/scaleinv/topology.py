"""Three-node regulation graphs.

A topology assigns one of {none, activate, deactivate} to each of the nine
ordered node pairs (source, target) over the nodes A, B, C. Node A receives
the external input, node C is the output.

Identifiers are a base-3 encoding of the nine edge labels in the fixed order
A->A, A->B, A->C, B->A, B->B, B->C, C->A, C->B, C->C, most significant
digit first.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

NODES = ("A", "B", "C")
N_NODES = 3
N_EDGES = N_NODES * N_NODES
N_TOPOLOGIES = 3**N_EDGES

# (source, target) pairs in encoding order
EDGE_ORDER = tuple(itertools.product(range(N_NODES), repeat=2))


class EdgeAction(enum.IntEnum):
    NONE = 0
    ACTIVATE = 1
    DEACTIVATE = 2


def encode(edges) -> int:
    """Canonical integer id of a 3x3 array of edge actions (rows = source)."""
    arr = np.asarray(edges, dtype=int)
    if arr.shape != (N_NODES, N_NODES):
        raise ValueError(f"expected a 3x3 edge array, got shape {arr.shape}")
    if arr.min() < 0 or arr.max() > 2:
        raise ValueError("edge actions must be 0 (none), 1 (activate) or 2 (deactivate)")
    tid = 0
    for s, t in EDGE_ORDER:
        tid = 3 * tid + int(arr[s, t])
    return tid


def decode(tid: int) -> np.ndarray:
    """Inverse of :func:`encode`."""
    if not 0 <= tid < N_TOPOLOGIES:
        raise ValueError(f"topology id {tid} outside [0, {N_TOPOLOGIES - 1}]")
    arr = np.zeros((N_NODES, N_NODES), dtype=int)
    for s, t in reversed(EDGE_ORDER):
        tid, arr[s, t] = divmod(tid, 3)
    return arr


@dataclass(frozen=True)
class Topology:
    """Signed wiring of a 3-node network, identified by its canonical id."""

    id: int

    def __post_init__(self):
        if not 0 <= self.id < N_TOPOLOGIES:
            raise ValueError(f"topology id {self.id} outside [0, {N_TOPOLOGIES - 1}]")

    @classmethod
    def from_edges(cls, edges) -> "Topology":
        return cls(encode(edges))

    @classmethod
    def from_code(cls, code: str) -> "Topology":
        """Parse the 9-character string form, e.g. ``"010200020"``."""
        if len(code) != N_EDGES or set(code) - set("012"):
            raise ValueError(f"bad topology code {code!r}")
        return cls(int(code, 3))

    @classmethod
    def from_spec(cls, spec: str) -> "Topology":
        """Build from a compact edge list such as ``"A->B, B-|A, A->C"``."""
        edges = np.zeros((N_NODES, N_NODES), dtype=int)
        for item in filter(None, (s.strip() for s in spec.split(","))):
            if "->" in item:
                src, dst = item.split("->")
                action = EdgeAction.ACTIVATE
            elif "-|" in item:
                src, dst = item.split("-|")
                action = EdgeAction.DEACTIVATE
            else:
                raise ValueError(f"cannot parse edge {item!r}")
            s, t = NODES.index(src.strip()), NODES.index(dst.strip())
            if edges[s, t]:
                raise ValueError(f"edge {src}->{dst} given twice")
            edges[s, t] = action
        return cls.from_edges(edges)

    @cached_property
    def edges(self) -> np.ndarray:
        arr = decode(self.id)
        arr.setflags(write=False)
        return arr

    @property
    def code(self) -> str:
        return "".join(str(int(self.edges[s, t])) for s, t in EDGE_ORDER)

    def action(self, source: str, target: str) -> EdgeAction:
        return EdgeAction(int(self.edges[NODES.index(source), NODES.index(target)]))

    def __str__(self):
        parts = []
        for s, t in EDGE_ORDER:
            a = self.edges[s, t]
            if a:
                parts.append(f"{NODES[s]}{'->' if a == 1 else '-|'}{NODES[t]}")
        return ", ".join(parts) or "(empty)"


def has_io_path(t: Topology) -> bool:
    """True when a directed chain of regulatory edges leads from A to C."""
    adj = t.edges != EdgeAction.NONE
    seen = {0}
    frontier = [0]
    while frontier:
        node = frontier.pop()
        for nxt in np.flatnonzero(adj[node]):
            if nxt == 2:
                return True
            if nxt not in seen:
                seen.add(int(nxt))
                frontier.append(int(nxt))
    return False


def constitutive_flags(t: Topology) -> tuple[tuple[bool, bool], ...]:
    """Per-node (E present, F present) flags.

    A constitutive activator E_X is added when nothing activates X, and a
    constitutive deactivator F_X when nothing deactivates X. Node A never
    gets E_A since the input already activates it.
    """
    flags = []
    for node in range(N_NODES):
        column = t.edges[:, node]
        has_act = bool(np.any(column == EdgeAction.ACTIVATE))
        has_deact = bool(np.any(column == EdgeAction.DEACTIVATE))
        e_present = (not has_act) and node != 0
        flags.append((e_present, not has_deact))
    return tuple(flags)


def all_topologies() -> list[Topology]:
    return [Topology(i) for i in range(N_TOPOLOGIES)]


def enumerate_nontrivial() -> list[Topology]:
    """All topologies with an input-to-output path, sorted by id."""
    return [t for t in all_topologies() if has_io_path(t)]


def count_summary() -> tuple[int, int, int]:
    """(total, nontrivial, excluded) topology counts."""
    total = N_TOPOLOGIES
    kept = len(enumerate_nontrivial())
    return total, kept, total - kept
