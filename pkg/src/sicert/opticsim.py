"""Forward model of the dual-rail photonic setup.

The ququart is |LH>, |LV>, |RH>, |RV> (spatial qubit a, polarization qubit b).
A qutrit set is embedded as |1>=|LH>, |2>=|LV>, |3>=|RV>. States are real
and only ever compared up to global sign.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import MeasurementSet, OrthogonalityGraph

Edge = tuple[int, int]

_I2 = np.eye(2)
_X = np.array([[0.0, 1.0], [1.0, 0.0]])
_Z = np.array([[1.0, 0.0], [0.0, -1.0]])
# Pauli actions on (spatial, polarization)
PHASE_A = np.kron(_Z, _I2)
FLIP_A = np.kron(_X, _I2)
FLIP_B = np.kron(_I2, _X)

QUTRIT_SLOTS = (0, 1, 3)


@dataclass(frozen=True)
class NoiseChannelParams:
    p_ba: float = 0.0
    p_bb: float = 0.0
    p_pa: float = 0.0

    def __post_init__(self):
        for name in ("p_ba", "p_bb"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not 0.0 <= self.p_pa <= 0.5:
            raise ValueError(f"p_pa must lie in [0, 1/2], got {self.p_pa}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def is_zero(self) -> bool:
        return self.p_ba == 0 and self.p_bb == 0 and self.p_pa == 0


@dataclass(frozen=True)
class AngleSettings:
    """Half-wave-plate angles in degrees; ``delta_theta`` offsets theta4."""

    theta1: float = 0.0
    theta2: float = 0.0
    theta3: float = 0.0
    theta4: float = 0.0
    theta5: float = 0.0
    theta6: float = 0.0
    delta_theta: float = 0.0


def jones_hwp(theta: float) -> np.ndarray:
    t = math.radians(2 * theta)
    return np.array([[math.cos(t), math.sin(t)], [math.sin(t), -math.cos(t)]])


def prepared_state(theta1: float, theta2: float, theta3: float) -> np.ndarray:
    c1, s1 = math.cos(math.radians(2 * theta1)), math.sin(math.radians(2 * theta1))
    t2, t3 = math.radians(2 * theta2), math.radians(2 * theta3)
    return np.array([c1 * math.cos(t2), c1 * math.sin(t2), s1 * math.sin(t3), -s1 * math.cos(t3)])


def measurement_state(theta4: float, theta5: float, theta6: float, delta_theta: float = 0.0) -> np.ndarray:
    t4 = math.radians(2 * (theta4 + delta_theta))
    t5, t6 = math.radians(2 * theta5), math.radians(2 * theta6)
    s4, c4 = math.sin(t4), math.cos(t4)
    return np.array([s4 * math.cos(t5), s4 * math.sin(t5), c4 * math.cos(t6), c4 * math.sin(t6)])


def _half_angle(y: float, x: float, tol: float = 1e-15) -> float:
    """Half of atan2(y, x) in degrees, with 0 for a vanishing pair."""
    if math.hypot(x, y) <= tol:
        return 0.0
    return 0.5 * math.degrees(math.atan2(y, x))


def _fold(angle: float, amp: float) -> tuple[float, float]:
    """Map a half-wave-plate angle into (-45, 45] by flipping the pair amplitude."""
    while angle > 45.0:
        angle -= 90.0
        amp = -amp
    while angle <= -45.0:
        angle += 90.0
        amp = -amp
    return angle, amp


def angles_for_vector(v, role: str = "measurement") -> AngleSettings:
    """Waveplate angles whose forward map reproduces unit 4-vector ``v`` up to sign."""
    v = np.asarray(v, dtype=float)
    if v.shape != (4,) or abs(np.linalg.norm(v) - 1) > 1e-10:
        raise ValueError("expected a real unit 4-vector")
    if role == "preparation":
        a, b = math.hypot(v[0], v[1]), math.hypot(v[2], v[3])
        th1 = 0.5 * math.degrees(math.atan2(b, a))
        th2 = _half_angle(v[1], v[0]) if a > 1e-15 else 0.0
        th3 = _half_angle(v[2], -v[3]) if b > 1e-15 else 0.0
        return AngleSettings(theta1=th1, theta2=th2, theta3=th3)
    if role != "measurement":
        raise ValueError(f"unknown role {role!r}")
    th5, amp_a = _fold(_half_angle(v[1], v[0]), math.hypot(v[0], v[1]))
    th6, amp_b = _fold(_half_angle(v[3], v[2]), math.hypot(v[2], v[3]))
    # global sign freedom folds theta4 as well
    th4, _ = _fold(0.5 * math.degrees(math.atan2(amp_a, amp_b)), 1.0)
    return AngleSettings(theta4=th4, theta5=th5, theta6=th6)


def embed(v, dim: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if dim == 4:
        return v.copy()
    if dim == 3:
        out = np.zeros(4, dtype=v.dtype)
        out[list(QUTRIT_SLOTS)] = v
        return out
    raise ValueError(f"the optical model covers d = 3 or 4, not {dim}")


def kraus_ops(params: NoiseChannelParams) -> list[np.ndarray]:
    """The eight products E^Ba_m E^Bb_n E^Pa_v."""
    ba = [math.sqrt(1 - params.p_ba) * np.eye(4), math.sqrt(params.p_ba) * FLIP_A]
    bb = [math.sqrt(1 - params.p_bb) * np.eye(4), math.sqrt(params.p_bb) * FLIP_B]
    pa = [math.sqrt(1 - params.p_pa) * np.eye(4), math.sqrt(params.p_pa) * PHASE_A]
    return [a @ b @ c for a in ba for b in bb for c in pa]


def apply_noise(state, params: NoiseChannelParams) -> np.ndarray:
    """Density matrix after the phase-flip and both bit-flip channels."""
    psi = np.asarray(state, dtype=float)
    rho = np.outer(psi, psi)
    if params.is_zero:
        return rho
    # the three channels commute, so apply them one after another
    for p, op in ((params.p_pa, PHASE_A), (params.p_bb, FLIP_B), (params.p_ba, FLIP_A)):
        rho = (1 - p) * rho + p * (op @ rho @ op)
    return rho


def ideal_measurement_angles(s: MeasurementSet) -> list[AngleSettings]:
    """Measurement angles for every set and auxiliary vector (embedded in d = 4)."""
    return [
        angles_for_vector(embed(v, s.dim) / np.linalg.norm(v), "measurement")
        for v in s.all_vectors()
    ]


def ideal_preparation_angles(s: MeasurementSet) -> list[AngleSettings]:
    return [
        angles_for_vector(embed(v, s.dim) / np.linalg.norm(v), "preparation")
        for v in s.vectors
    ]


def projected_states(s: MeasurementSet, delta_theta: float = 0.0) -> np.ndarray:
    """Measured vectors for all set + auxiliary indices with theta4 offset."""
    return np.array([
        measurement_state(a.theta4, a.theta5, a.theta6, delta_theta)
        for a in ideal_measurement_angles(s)
    ])


def prepared_states(s: MeasurementSet) -> np.ndarray:
    return np.array([prepared_state(a.theta1, a.theta2, a.theta3) for a in ideal_preparation_angles(s)])


def _check_model(s: MeasurementSet, delta_theta: float):
    if s.dim not in (3, 4):
        if delta_theta != 0:
            raise ValueError("the angle model is only defined for d = 4 (and embedded d = 3)")
        raise ValueError(f"the optical model covers d = 3 or 4, not {s.dim}")


def exact_pair_probability(
    i: int,
    j: int,
    noise: NoiseChannelParams,
    delta_theta: float,
    s: MeasurementSet,
    graph: OrthogonalityGraph | None = None,
) -> float:
    """<V_j| rho_i |V_j> with rho_i the noisy prepared state and V_j offset by delta_theta."""
    _check_model(s, delta_theta)
    prep = prepared_states(s)[i]
    proj = projected_states(s, delta_theta)[j]
    return max(float(proj @ apply_noise(prep, noise) @ proj), 0.0)


@dataclass
class ExperimentRecord:
    """Estimated P_i and ordered-edge eps with Poisson error bars.

    ``counts`` maps a setting key to the basis measured and the counts per
    outcome: "M1:<basis no.>" for the maximally-mixed stage and "<i>-<j>"
    (set labels, first-measured first) for the sequential stage. Exact-mode
    records (shots == 0) carry analytic probabilities instead of counts.
    """

    set_name: str
    shots: int
    seed: int | None
    p: np.ndarray
    sigma_p: np.ndarray
    eps: dict[Edge, float]
    sigma_eps: dict[Edge, float]
    counts: dict[str, dict] = field(default_factory=dict)
    p_basis: dict[int, str] = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.shots == 0

    def to_dict(self, s: MeasurementSet) -> dict:
        key = lambda e: f"{s.label(e[0])}-{s.label(e[1])}"
        return {
            "set": self.set_name,
            "shots": self.shots,
            "seed": self.seed,
            "p": [float(x) for x in self.p],
            "sigma_p": [float(x) for x in self.sigma_p],
            "eps": {key(e): float(v) for e, v in self.eps.items()},
            "sigma_eps": {key(e): float(v) for e, v in self.sigma_eps.items()},
            "counts": self.counts,
        }

    @classmethod
    def from_dict(cls, data: dict, s: MeasurementSet, graph: OrthogonalityGraph) -> "ExperimentRecord":
        """Parse a record; when counts are present the estimates are recomputed from them."""
        try:
            shots = int(data.get("shots", 0))
            counts = data.get("counts") or {}
            if counts:
                p, sigma_p, eps, sigma_eps, p_basis = estimates_from_counts(s, graph, counts)
            else:
                lookup = {s.label(k): k for k in range(s.n)}

                def edge(k: str) -> Edge:
                    i, j = (lookup[x] for x in k.split("-"))
                    if not graph.is_edge(i, j):
                        raise ValueError(f"{k} is not an orthogonality edge")
                    return i, j

                p = np.array(data["p"], dtype=float)
                sigma_p = np.array(data.get("sigma_p") or np.zeros(len(p)), dtype=float)
                eps = {edge(k): float(v) for k, v in data["eps"].items()}
                sigma_eps = {edge(k): float(v) for k, v in (data.get("sigma_eps") or {}).items()}
                p_basis = {}
                if len(p) != s.n:
                    raise ValueError(f"expected {s.n} probabilities, got {len(p)}")
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed experiment record: {exc!r}") from exc
        return cls(
            set_name=str(data.get("set", s.name)), shots=shots, seed=data.get("seed"),
            p=p, sigma_p=sigma_p, eps=eps, sigma_eps=sigma_eps, counts=counts, p_basis=p_basis,
        )


def ratio_sigma(target: float, total: float) -> float:
    """Delta-method sd of target/total for independent Poisson counts.

    Zero counts on either side are replaced by 1 (rate upper bound) so a
    perfect setting still gets a nonzero error bar.
    """
    n_t = target if target > 0 else 1.0
    n_r = total - target if total - target > 0 else 1.0
    return math.sqrt(n_t * n_r / (n_t + n_r) ** 3)


def _basis_probs(rho: np.ndarray, states: np.ndarray, basis) -> np.ndarray:
    return np.array([max(float(states[k] @ rho @ states[k]), 0.0) for k in basis])


def _estimates(s, graph, outcome: dict, bases: dict, exact: bool):
    def fraction(key: str, k: int) -> tuple[float, float]:
        v = np.asarray(outcome[key], dtype=float)
        tot = float(v.sum())
        if tot <= 0:
            return 0.0, (0.0 if exact else 1.0)
        t = float(v[bases[key].index(k)])
        return t / tot, (0.0 if exact else ratio_sigma(t, tot))

    first = sorted((k for k in outcome if k.startswith("M1:")), key=lambda k: int(k[3:]))
    n = s.n
    p = np.zeros(n)
    sigma_p = np.zeros(n)
    p_basis: dict[int, str] = {}
    for i in range(n):
        key = next((k for k in first if i in bases[k]), None)
        if key is None:
            raise ValueError(f"no maximally-mixed setting covers vertex {s.label(i)}")
        p[i], sigma_p[i] = fraction(key, i)
        p_basis[i] = key
    lookup = {s.label(k): k for k in range(n)}
    eps: dict[Edge, float] = {}
    sigma_eps: dict[Edge, float] = {}
    for key in outcome:
        if key.startswith("M1:"):
            continue
        i, j = (lookup[x] for x in key.split("-"))
        if not graph.is_edge(i, j):
            raise ValueError(f"setting {key} is not an orthogonality edge")
        eps[(i, j)], sigma_eps[(i, j)] = fraction(key, j)
    return p, sigma_p, eps, sigma_eps, p_basis


def estimates_from_counts(s: MeasurementSet, graph: OrthogonalityGraph, counts: dict):
    """(p, sigma_p, eps, sigma_eps, p_basis) from raw per-setting counts.

    P_i comes from the lowest-numbered maximally-mixed setting containing i.
    """
    lookup = {s.label(k): k for k in range(len(s.all_vectors()))}
    outcome, bases = {}, {}
    for key, entry in counts.items():
        c = entry["counts"]
        if len(c) != len(entry["basis"]) or any(x < 0 for x in c):
            raise ValueError(f"malformed counts for setting {key}")
        outcome[key] = c
        bases[key] = tuple(lookup[x] for x in entry["basis"])
    return _estimates(s, graph, outcome, bases, exact=False)


def measurement_plan(s: MeasurementSet, graph: OrthogonalityGraph, orientations: str = "forward"):
    """Ordered edges and the complete basis each second measurement uses."""
    if orientations not in ("forward", "both"):
        raise ValueError("orientations must be 'forward' or 'both'")
    pairs: list[Edge] = []
    for i, j in graph.edges:
        pairs.append((i, j))
        if orientations == "both":
            pairs.append((j, i))
    pool = list(graph.measurement_bases) + [c for c in graph.contexts if c not in graph.measurement_bases]
    plan = []
    for i, j in pairs:
        with_both = [b for b in pool if i in b and j in b]
        with_j = [b for b in pool if j in b]
        plan.append(((i, j), (with_both or with_j)[0]))
    return plan


def simulate_experiment(
    s: MeasurementSet,
    graph: OrthogonalityGraph,
    noise: NoiseChannelParams,
    delta_theta: float = 0.0,
    shots: int = 0,
    seed: int | None = 0,
    orientations: str = "forward",
) -> ExperimentRecord:
    """Two-stage sequential experiment on the maximally mixed state.

    ``shots == 0`` is exact mode: analytic basis-relative probabilities with
    zero error bars. Otherwise every setting gets independent Poisson counts
    with mean ``shots * probability`` from a stream seeded by (seed, setting).
    """
    if shots < 0:
        raise ValueError("shots must be nonnegative (0 selects exact mode)")
    _check_model(s, delta_theta)
    d = s.dim
    proj = projected_states(s, delta_theta)
    prep = prepared_states(s)
    rho_mm = np.zeros((4, 4))
    slots = range(4) if d == 4 else QUTRIT_SLOTS
    for k in slots:
        rho_mm[k, k] = 1.0 / d

    counts: dict[str, dict] = {}
    settings: list[tuple[str, tuple, np.ndarray]] = []
    for b_no, basis in enumerate(graph.measurement_bases):
        settings.append((f"M1:{b_no}", basis, _basis_probs(rho_mm, proj, basis)))
    plan = measurement_plan(s, graph, orientations)
    for (i, j), basis in plan:
        rho = apply_noise(prep[i], noise)
        settings.append((f"{s.label(i)}-{s.label(j)}", basis, _basis_probs(rho, proj, basis)))

    if shots == 0:
        outcome = {key: probs for key, _, probs in settings}
        bases = {key: tuple(basis) for key, basis, _ in settings}
        p, sigma_p, eps, sigma_eps, p_basis = _estimates(s, graph, outcome, bases, exact=True)
    else:
        for idx, (key, basis, probs) in enumerate(settings):
            rng = np.random.default_rng([0 if seed is None else seed, idx])
            c = rng.poisson(shots * probs)
            counts[key] = {"basis": [s.label(k) for k in basis], "counts": [int(x) for x in c]}
        p, sigma_p, eps, sigma_eps, p_basis = estimates_from_counts(s, graph, counts)

    return ExperimentRecord(
        set_name=s.name,
        shots=shots,
        seed=seed,
        p=p,
        sigma_p=sigma_p,
        eps=eps,
        sigma_eps=sigma_eps,
        counts=counts,
        p_basis=p_basis,
    )
