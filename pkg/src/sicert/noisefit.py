"""Noise elimination and single-waveplate error attribution.

``fit_noise`` inverts the optical noise model: it fits small deviations of
the realized states and the three Kraus channel probabilities to the raw
eps_ij, then reports the noiseless pure-state overlaps |<V_j|V_i>|^2.
``fit_delta_theta`` charges whatever imperfection is left to one offset
on the last half-wave plate.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import least_squares, minimize_scalar

from .geometry import MeasurementSet, OrthogonalityGraph
from .opticsim import (
    FLIP_A,
    FLIP_B,
    PHASE_A,
    NoiseChannelParams,
    embed,
    ideal_measurement_angles,
    measurement_state,
)

Edge = tuple[int, int]

_OPS = [
    a @ b @ c
    for a in (np.eye(4), FLIP_A)
    for b in (np.eye(4), FLIP_B)
    for c in (np.eye(4), PHASE_A)
]
# which channel fired in each of the eight products: (ba, bb, pa)
_FIRED = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)], dtype=float)


@dataclass
class NoiseFitResult:
    params: NoiseChannelParams
    deviations: np.ndarray
    eps_prime: dict[Edge, float]
    residual: float
    starts: int = 0
    converged: bool = True

    def to_dict(self, s: MeasurementSet) -> dict:
        return {
            "params": self.params.to_dict(),
            "deviations": self.deviations.tolist(),
            "eps_prime": {f"{s.label(i)}-{s.label(j)}": v for (i, j), v in self.eps_prime.items()},
            "residual": self.residual,
            "starts": self.starts,
            "converged": self.converged,
        }


@dataclass
class AngleFitResult:
    delta_theta: float
    residual: float

    def to_dict(self) -> dict:
        return {"delta_theta": self.delta_theta, "residual": self.residual}


def channel_weights(p: NoiseChannelParams | np.ndarray) -> np.ndarray:
    """Probability weight of each of the eight Kraus products."""
    if isinstance(p, NoiseChannelParams):
        p = np.array([p.p_ba, p.p_bb, p.p_pa])
    return np.prod(np.where(_FIRED == 1, p, 1 - p), axis=1)


def pair_probabilities(states: np.ndarray, edges, weights: np.ndarray) -> np.ndarray:
    """<V_j| rho_i |V_j> for each ordered edge, states embedded in d = 4."""
    i = np.array([e[0] for e in edges])
    j = np.array([e[1] for e in edges])
    out = np.zeros(len(edges))
    for w, op in zip(weights, _OPS):
        amp = np.einsum("ea,ab,eb->e", states[j], op, states[i])
        out += w * amp**2
    return out


class _Model:
    """Parameter vector <-> (states, channel probabilities).

    Each deviation lives in the orthogonal complement of its ideal vector;
    the component along v_i would only rescale it.
    """

    def __init__(self, s: MeasurementSet):
        self.s = s
        self.ideal = s.unit_vectors()
        self.complements = [null_space(v[None, :]) for v in self.ideal]
        self.k = s.dim - 1
        self.n_dev = s.n * self.k

    def deviations(self, x: np.ndarray) -> np.ndarray:
        a = x[: self.n_dev].reshape(self.s.n, self.k)
        return np.array([B @ ai for B, ai in zip(self.complements, a)])

    def states(self, x: np.ndarray) -> np.ndarray:
        raw = self.ideal + self.deviations(x)
        unit = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        return unit

    def embedded(self, x: np.ndarray) -> np.ndarray:
        return np.array([embed(v, self.s.dim) for v in self.states(x)])

    def probs(self, x: np.ndarray) -> np.ndarray:
        return x[self.n_dev:]

    def embedding(self) -> np.ndarray:
        return np.array([embed(e, self.s.dim) for e in np.eye(self.s.dim)]).T

    def jacobian(self, x: np.ndarray, edges: list[Edge]) -> np.ndarray:
        """d residual / d x for the pair-probability residuals."""
        n, k, nd = self.s.n, self.k, self.n_dev
        emb = self.embedding()
        raw = self.ideal + self.deviations(x)
        norms = np.linalg.norm(raw, axis=1)
        unit = raw / norms[:, None]
        states = unit @ emb.T
        # d(embedded V_m)/d(a_m): emb (I - V V^T) B_m / |u_m|, shape (4, k)
        dstate = [
            emb @ ((np.eye(self.s.dim) - np.outer(unit[m], unit[m])) @ self.complements[m]) / norms[m]
            for m in range(n)
        ]
        p = self.probs(x)
        w = channel_weights(p)
        # dw/dp for each Kraus product
        dw = np.zeros((8, 3))
        for c in range(3):
            others = np.prod(np.where(_FIRED == 1, p, 1 - p)[:, [t for t in range(3) if t != c]], axis=1)
            dw[:, c] = np.where(_FIRED[:, c] == 1, 1.0, -1.0) * others
        J = np.zeros((len(edges), nd + 3))
        for r, (i, j) in enumerate(edges):
            gi = np.zeros(4)
            gj = np.zeros(4)
            for kk, op in enumerate(_OPS):
                left = states[j] @ op
                amp = left @ states[i]
                gi += w[kk] * 2 * amp * left
                gj += w[kk] * 2 * amp * (op @ states[i])
                J[r, nd:] += dw[kk] * amp**2
            J[r, i * k:(i + 1) * k] += gi @ dstate[i]
            J[r, j * k:(j + 1) * k] += gj @ dstate[j]
        return J


def _edge_list(eps_measured: dict[Edge, float], graph: OrthogonalityGraph) -> list[Edge]:
    edges = list(eps_measured)
    for e in edges:
        if not graph.is_edge(*e):
            raise ValueError(f"{e} is not an orthogonality edge")
        v = eps_measured[e]
        if not (0 <= v <= 1) or math.isnan(v):
            raise ValueError(f"eps{e} = {v} outside [0, 1]")
    if not edges:
        raise ValueError("empty edge map")
    return edges


def fit_noise(
    eps_measured: dict[Edge, float],
    s: MeasurementSet,
    graph: OrthogonalityGraph,
    starts: int = 8,
    seed: int = 0,
    deviation_scale: float = 1e-2,
    workers: int = 1,
    max_nfev: int = 400,
) -> NoiseFitResult:
    """Least-squares fit of deviations and channel probabilities to measured eps.

    Multi-start: the first start is all zeros, the rest add small random
    deviations; the lowest residual wins.
    """
    edges = _edge_list(eps_measured, graph)
    target = np.array([eps_measured[e] for e in edges])
    model = _Model(s)
    nd = model.n_dev
    lower = np.concatenate([np.full(nd, -np.inf), [0.0, 0.0, 0.0]])
    upper = np.concatenate([np.full(nd, np.inf), [1.0, 1.0, 0.5]])

    def residuals(x):
        return pair_probabilities(model.embedded(x), edges, channel_weights(model.probs(x))) - target

    def run(k: int):
        x0 = np.zeros(nd + 3)
        if k > 0:
            rng = np.random.default_rng([seed, k])
            x0[:nd] = rng.normal(scale=deviation_scale, size=nd)
            x0[nd:] = rng.uniform(0, 0.02, size=3)
        sol = least_squares(
            residuals, x0, jac=lambda x: model.jacobian(x, edges), bounds=(lower, upper), method="trf",
            xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=max_nfev,
        )
        return float(np.sum(sol.fun**2)), sol

    zero_obj = float(np.sum(residuals(np.zeros(nd + 3)) ** 2))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, range(starts)))
    else:
        results = [run(k) for k in range(starts)]
    best_obj, best = min(results, key=lambda r: r[0])
    x = best.x
    if best_obj > zero_obj:
        x, best_obj = np.zeros(nd + 3), zero_obj
    pb = np.clip(model.probs(x), 0, [1.0, 1.0, 0.5])
    states = model.states(x)
    eps_prime = {(i, j): float(np.clip((states[i] @ states[j]) ** 2, 0, 1)) for i, j in edges}
    return NoiseFitResult(
        params=NoiseChannelParams(*map(float, pb)),
        deviations=model.deviations(x),
        eps_prime=eps_prime,
        residual=best_obj,
        starts=starts,
        converged=any(r[1].success for r in results),
    )


def angle_model_overlaps(s: MeasurementSet, edges, delta_theta: float) -> np.ndarray:
    """|<V_j(delta_theta)|v_i>|^2 with V_j the offset measurement state of j."""
    angles = ideal_measurement_angles(s)
    ideal = np.array([embed(v, s.dim) for v in s.unit_vectors()])
    out = np.empty(len(edges))
    for k, (i, j) in enumerate(edges):
        a = angles[j]
        vj = measurement_state(a.theta4, a.theta5, a.theta6, delta_theta)
        out[k] = (vj @ ideal[i]) ** 2
    return out


def fit_delta_theta(
    eps_prime: dict[Edge, float],
    s: MeasurementSet,
    graph: OrthogonalityGraph,
    span: float = 5.0,
    step: float = 0.05,
    xtol: float = 1e-4,
) -> AngleFitResult:
    """Scan delta_theta over [-span, span] degrees, then refine the best bracket."""
    if s.dim not in (3, 4):
        raise ValueError("the angle model covers d = 4 and embedded d = 3 only")
    edges = _edge_list(eps_prime, graph)
    target = np.array([eps_prime[e] for e in edges])

    def objective(dt: float) -> float:
        return float(np.sum((angle_model_overlaps(s, edges, dt) - target) ** 2))

    grid = np.linspace(-span, span, int(round(2 * span / step)) + 1)
    values = np.array([objective(g) for g in grid])
    k = int(np.argmin(values))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": xtol})
    best, val = (float(res.x), float(res.fun)) if res.fun <= values[k] else (float(grid[k]), float(values[k]))
    # overlaps with real ideal vectors are even in the offset, so +x and -x
    # tie; report the nonnegative root when the mirror is as good
    if best < 0:
        mirror = objective(-best)
        if mirror <= val * (1 + 1e-9) + 1e-30:
            best, val = -best, mirror
    return AngleFitResult(best, val)
