"""Target measurement sets and their orthogonality graphs.

Vectors are kept as exact integers. Orthogonality, contexts and ideal
overlaps are all computed in exact arithmetic so no floating threshold
ever decides whether two projectors are orthogonal.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np


class SetDefinitionError(ValueError):
    """Raised for unknown set names, malformed files and invariant violations."""


@dataclass(frozen=True)
class MeasurementSet:
    name: str
    dim: int
    vectors: tuple[tuple[int, ...], ...]
    vertex_weights: tuple[Fraction, ...]
    edge_weight: Fraction
    aux_vectors: tuple[tuple[int, ...], ...] = ()
    force_unit_context_gram: bool = False
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        validate_set(self)

    @property
    def n(self) -> int:
        return len(self.vectors)

    def label(self, k: int) -> str:
        """Human label of vertex ``k`` (auxiliary vectors continue after the set)."""
        if k < self.n:
            return self.labels[k] if self.labels else str(k + 1)
        return f"aux{k - self.n + 1}"

    def all_vectors(self) -> tuple[tuple[int, ...], ...]:
        return self.vectors + self.aux_vectors

    def unit_vectors(self, include_aux: bool = False) -> np.ndarray:
        vecs = np.array(self.all_vectors() if include_aux else self.vectors, dtype=float)
        return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "vectors": [list(v) for v in self.vectors],
            "vertex_weights": [_num(w) for w in self.vertex_weights],
            "edge_weight": _num(self.edge_weight),
            "aux_vectors": [list(v) for v in self.aux_vectors],
            "force_unit_context_gram": self.force_unit_context_gram,
            "labels": list(self.labels),
        }


@dataclass(frozen=True)
class OrthogonalityGraph:
    """Orthogonality edges, complete contexts and the bases used to measure them.

    Indices ``0..n-1`` are set vertices; indices ``n..n+m-1`` inside
    ``measurement_bases`` refer to the set's auxiliary vectors.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    contexts: tuple[tuple[int, ...], ...]
    measurement_bases: tuple[tuple[int, ...], ...]
    _edge_set: frozenset = field(default=frozenset(), repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_edge_set", frozenset(self.edges))

    def is_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._edge_set

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n) if j != i and self.is_edge(i, j)]

    @property
    def non_edges(self) -> list[tuple[int, int]]:
        return [
            (i, j)
            for i in range(self.n)
            for j in range(i + 1, self.n)
            if (i, j) not in self._edge_set
        ]

    def basis_for(self, j: int, prefer: int | None = None) -> tuple[int, ...]:
        """First measurement basis containing ``j``, preferring one that also holds ``prefer``."""
        candidates = [b for b in self.measurement_bases if j in b]
        if not candidates:
            raise KeyError(f"vertex {j} is in no measurement basis")
        if prefer is not None:
            for b in candidates:
                if prefer in b:
                    return b
        return candidates[0]


def _num(x: Fraction) -> int | float:
    return int(x) if x.denominator == 1 else float(x)


def _dot(u, v) -> int:
    return sum(a * b for a, b in zip(u, v))


def validate_set(s: MeasurementSet) -> None:
    if s.dim < 1:
        raise SetDefinitionError(f"dim must be positive, got {s.dim}")
    if len(s.vectors) != len(s.vertex_weights):
        raise SetDefinitionError(
            f"{len(s.vectors)} vectors but {len(s.vertex_weights)} vertex weights"
        )
    for kind, vecs in (("vector", s.vectors), ("aux vector", s.aux_vectors)):
        for k, v in enumerate(vecs):
            if len(v) != s.dim:
                raise SetDefinitionError(f"{kind} {k} has length {len(v)}, expected {s.dim}")
            if not all(isinstance(a, int) for a in v):
                raise SetDefinitionError(f"{kind} {k} has non-integer entries")
            if not any(v):
                raise SetDefinitionError(f"{kind} {k} is the zero vector")
    if s.vertex_weights and s.edge_weight < max(s.vertex_weights):
        raise SetDefinitionError(
            f"edge weight {s.edge_weight} below max vertex weight {max(s.vertex_weights)}"
        )
    if s.labels and len(s.labels) != len(s.vectors):
        raise SetDefinitionError("labels must match vectors")


# Columns of the Peres-24 table. v8 and v9 carry the standard Peres signs
# (1,-1,-1,1) and (1,1,1,-1); these give 24 bases with every vector in four.
_PERES24 = (
    (1, 0, 0, 0), (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1),
    (1, 1, 1, 1), (1, 1, -1, -1), (1, -1, 1, -1), (1, -1, -1, 1),
    (1, 1, 1, -1), (1, 1, -1, 1), (1, -1, 1, 1), (-1, 1, 1, 1),
    (1, 1, 0, 0), (1, -1, 0, 0), (0, 0, 1, 1), (0, 0, 1, -1),
    (1, 0, 1, 0), (1, 0, -1, 0), (0, 1, 0, 1), (0, 1, 0, -1),
    (1, 0, 0, 1), (1, 0, 0, -1), (0, 1, 1, 0), (0, 1, -1, 0),
)

_YO13 = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (0, 1, 1), (0, 1, -1), (1, 0, 1), (1, 0, -1), (1, 1, 0), (1, -1, 0),
    (1, 1, 1), (1, 1, -1), (-1, 1, 1), (1, -1, 1),
)
_YO13_AUX = ((2, -1, -1), (-1, 2, 1), (1, -1, 2), (1, 2, 1))
_YO13_LABELS = tuple("123456789ABCD")


def _builtin(name: str) -> MeasurementSet:
    if name == "peres24":
        return MeasurementSet(
            name="peres24",
            dim=4,
            vectors=_PERES24,
            vertex_weights=(Fraction(1),) * 24,
            edge_weight=Fraction(1),
        )
    if name == "yo13":
        return MeasurementSet(
            name="yo13",
            dim=3,
            vectors=_YO13,
            vertex_weights=(Fraction(3),) * 9 + (Fraction(2),) * 4,
            edge_weight=Fraction(3),
            aux_vectors=_YO13_AUX,
            force_unit_context_gram=True,
            labels=_YO13_LABELS,
        )
    raise SetDefinitionError(f"unknown set {name!r}")


BUILTIN_SETS = ("peres24", "yo13")


def set_from_dict(data: dict) -> MeasurementSet:
    try:
        return MeasurementSet(
            name=str(data["name"]),
            dim=int(data["dim"]),
            vectors=tuple(tuple(v) for v in data["vectors"]),
            vertex_weights=tuple(Fraction(str(w)) for w in data["vertex_weights"]),
            edge_weight=Fraction(str(data["edge_weight"])),
            aux_vectors=tuple(tuple(v) for v in data.get("aux_vectors", [])),
            force_unit_context_gram=bool(data.get("force_unit_context_gram", False)),
            labels=tuple(str(x) for x in data.get("labels", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SetDefinitionError):
            raise
        raise SetDefinitionError(f"malformed set definition: {exc}") from exc


def load_set(name_or_path: str | Path) -> MeasurementSet:
    """Load a built-in set by name, or a JSON set-definition file by path."""
    if isinstance(name_or_path, str) and name_or_path in BUILTIN_SETS:
        return _builtin(name_or_path)
    path = Path(name_or_path)
    if path.suffix == ".json" or path.exists():
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise SetDefinitionError(f"set file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise SetDefinitionError(f"malformed set file {path}: {exc}") from exc
        return set_from_dict(data)
    raise SetDefinitionError(f"unknown set {str(name_or_path)!r}")


def _cliques_of_size(adj: dict[int, set[int]], order: list[int], size: int) -> list[tuple[int, ...]]:
    out: list[tuple[int, ...]] = []

    def extend(clique: list[int], cands: list[int]):
        if len(clique) == size:
            out.append(tuple(clique))
            return
        for pos, v in enumerate(cands):
            if len(clique) + len(cands) - pos < size:
                return
            extend(clique + [v], [u for u in cands[pos + 1:] if u in adj[v]])

    extend([], order)
    return out


def build_graph(s: MeasurementSet) -> OrthogonalityGraph:
    n = s.n
    vecs = s.all_vectors()
    edges = tuple(
        (i, j) for i in range(n) for j in range(i + 1, n) if _dot(vecs[i], vecs[j]) == 0
    )
    adj = {i: set() for i in range(n)}
    for i, j in edges:
        adj[i].add(j)
        adj[j].add(i)
    contexts = tuple(_cliques_of_size(adj, list(range(n)), s.dim))

    # Orthogonal bases over set + auxiliary vectors, for vertices not covered
    # by any complete context. Auxiliary vectors never enter the graph itself.
    total = len(vecs)
    full_adj = {i: set() for i in range(total)}
    for i in range(total):
        for j in range(i + 1, total):
            if _dot(vecs[i], vecs[j]) == 0:
                full_adj[i].add(j)
                full_adj[j].add(i)

    bases: list[tuple[int, ...]] = []
    covered: set[int] = set()
    pool = list(contexts)
    while True:
        uncovered = set(range(n)) - covered
        if not uncovered:
            break
        best = max(pool, key=lambda b: len(uncovered & set(b)), default=None)
        if best is None or not uncovered & set(best):
            break
        bases.append(best)
        covered.update(best)
    for v in sorted(set(range(n)) - covered):
        if v in covered:
            continue
        others = sorted(full_adj[v])
        found = [
            tuple(sorted((v,) + rest))
            for rest in _cliques_of_size({k: full_adj[k] for k in others}, others, s.dim - 1)
        ]
        if not found:
            raise SetDefinitionError(
                f"vertex {s.label(v)} cannot be placed in any {s.dim}-element orthogonal basis"
            )
        # prefer bases that use set vectors, then fewest auxiliaries
        found.sort(key=lambda b: (sum(k >= n for k in b), b))
        bases.append(found[0])
        covered.update(k for k in found[0] if k < n)
    return OrthogonalityGraph(n=n, edges=edges, contexts=contexts, measurement_bases=tuple(bases))


def ideal_overlaps(s: MeasurementSet) -> list[list[Fraction]]:
    """Exact |<v_i|v_j>|^2 between normalized set vectors."""
    vecs = s.vectors
    norms = [_dot(v, v) for v in vecs]
    return [
        [Fraction(_dot(u, v) ** 2, norms[a] * norms[b]) for b, v in enumerate(vecs)]
        for a, u in enumerate(vecs)
    ]


def ideal_overlap_matrix(s: MeasurementSet) -> np.ndarray:
    return np.array([[float(x) for x in row] for row in ideal_overlaps(s)])


def ideal_witness_optimum(s: MeasurementSet) -> Fraction:
    return sum(s.vertex_weights, Fraction(0)) / s.dim


def context_projector_sum(s: MeasurementSet, context) -> list[list[Fraction]]:
    """Exact sum of normalized projectors over ``context``."""
    d = s.dim
    out = [[Fraction(0)] * d for _ in range(d)]
    for k in context:
        v = s.vectors[k]
        nrm = _dot(v, v)
        for a in range(d):
            for b in range(d):
                out[a][b] += Fraction(v[a] * v[b], nrm)
    return out


def disjoint_context_cover(graph: OrthogonalityGraph, vertices) -> list[tuple[int, ...]] | None:
    """Contexts partitioning ``vertices`` exactly, if any such choice exists."""
    target = set(vertices)
    pool = [c for c in graph.contexts if set(c) <= target]
    for r in range(1, len(pool) + 1):
        for combo in itertools.combinations(pool, r):
            flat = [k for c in combo for k in c]
            if len(flat) == len(set(flat)) and set(flat) == target:
                return list(combo)
    return None
