"""SI-C witness from measured statistics, its worst-case bound, and the witness operator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

from .geometry import MeasurementSet, OrthogonalityGraph

Edge = tuple[int, int]


@dataclass
class WitnessInputs:
    """Probabilities P_i and ordered-edge errors eps[(i, j)] (i measured first)."""

    p: np.ndarray
    eps: Mapping[Edge, float]
    sigma_p: np.ndarray | None = None
    sigma_eps: Mapping[Edge, float] = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.sigma_p is None:
            self.sigma_p = np.zeros_like(self.p)
        self.sigma_p = np.asarray(self.sigma_p, dtype=float)
        if np.any(self.p < 0) or np.any(self.p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if any(not 0 <= v <= 1 for v in self.eps.values()):
            raise ValueError("eps entries must lie in [0, 1]")
        if np.any(self.sigma_p < 0) or any(v < 0 for v in self.sigma_eps.values()):
            raise ValueError("standard deviations must be nonnegative")


@dataclass(frozen=True)
class WitnessValue:
    w: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def _orientations(eps: Mapping[Edge, float], i: int, j: int) -> list[Edge]:
    found = [e for e in ((i, j), (j, i)) if e in eps]
    if not found:
        raise KeyError(f"missing eps entry for edge ({i}, {j})")
    return found


def witness_value(s: MeasurementSet, graph: OrthogonalityGraph, inputs: WitnessInputs) -> WitnessValue:
    """W = sum_i w_i P_i - sum_E w_ij P_i eps_ij.

    Each unordered edge counts once; when both orientations were measured
    their P_i eps_ij terms are averaged.
    """
    p, sp = inputs.p, inputs.sigma_p
    weights = np.array([float(w) for w in s.vertex_weights])
    we = float(s.edge_weight)
    w = float(weights @ p)
    # gradient wrt each independent input, for first-order propagation
    grad_p = weights.copy()
    var_eps = 0.0
    for i, j in graph.edges:
        ors = _orientations(inputs.eps, i, j)
        share = we / len(ors)
        for a, b in ors:
            e = inputs.eps[(a, b)]
            w -= share * p[a] * e
            grad_p[a] -= share * e
            var_eps += (share * p[a] * inputs.sigma_eps.get((a, b), 0.0)) ** 2
    var = float(np.sum((grad_p * sp) ** 2)) + var_eps
    return WitnessValue(w, math.sqrt(var))


def worst_case_bound(w_mm: WitnessValue, w_opt: Fraction | float, d: int) -> WitnessValue:
    """Lower bound on the witness over all states from its maximally-mixed value.

    d*W - (d-1)*W_opt, i.e. all of the deficit W_opt - W is charged to one eigenvalue.
    """
    if d < 2:
        raise ValueError("dimension must be at least 2")
    return WitnessValue(d * w_mm.w - (d - 1) * float(w_opt), d * w_mm.sigma)


def witness_operator(vectors, s: MeasurementSet, graph: OrthogonalityGraph) -> np.ndarray:
    """Sum_i w_i P_i - sum_E w_ij (P_i P_j P_i + P_j P_i P_j)/2 for unit ``vectors``."""
    vecs = np.asarray(vectors)
    norms = np.linalg.norm(vecs, axis=1)
    if np.any(np.abs(norms - 1) > 1e-12):
        bad = int(np.argmax(np.abs(norms - 1)))
        raise ValueError(f"projector vector {bad} is not unit-normalized (norm {norms[bad]!r})")
    projs = np.einsum("ka,kb->kab", vecs, vecs.conj())
    op = np.einsum("k,kab->ab", np.array([float(w) for w in s.vertex_weights]), projs)
    we = float(s.edge_weight)
    for i, j in graph.edges:
        pi, pj = projs[i], projs[j]
        op = op - we * 0.5 * (pi @ pj @ pi + pj @ pi @ pj)
    return op


def spectrum_bounds(op: np.ndarray) -> tuple[float, float, float]:
    """(lambda_min, lambda_max, trace/d) of a Hermitian operator."""
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError("operator must be square")
    if np.max(np.abs(op - op.conj().T), initial=0.0) > 1e-12:
        raise ValueError("operator is not Hermitian")
    evals = np.linalg.eigvalsh(op)
    return float(evals[0]), float(evals[-1]), float(np.sum(evals) / op.shape[0])
