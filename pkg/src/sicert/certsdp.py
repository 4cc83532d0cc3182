"""Gram-matrix semidefinite verification of orthogonality and completeness.

Every program works on the Gram matrix of the vectors
``u_0 = |V_m>, u_k = <V_k|V_m>|V_k>`` anchored at one vertex ``m``. Then
X_00 = X_0m = X_mm = 1 forces u_0 = u_m, so index 0 is dropped and the
anchor row carries X_mk = X_kk = |<V_k|V_m>|^2. Vertices whose overlap
bound with the anchor is exactly zero have a vanishing row and are removed
before the program is handed to the solver; both reductions are exact and
remove degenerate directions that stall interior-point solvers.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .geometry import MeasurementSet, OrthogonalityGraph, ideal_witness_optimum

log = logging.getLogger(__name__)

Pair = tuple[int, int]

TAU_THRESHOLD = 1e-4
# bounds below this are floating-point residue of an exact zero
ZERO_FLOOR = 1e-15


class SdpSolverError(RuntimeError):
    """Solver failed to converge (as opposed to a proven infeasible program)."""


@dataclass
class SdpSettings:
    tau_threshold: float = TAU_THRESHOLD
    eps_precision: float = 1e-3
    max_sweeps: int = 5
    bisection_tol: float = 1e-3
    # "anchored": |X_kt|^2 <= e_mk e_kt e_tm (Gram construction)
    # "printed":  |X_kt|^2 <= e_ik e_kt e_tj with (i, j) the pair under study
    bound_form: str = "anchored"
    solver_tol: float = 1e-8
    compute_nu: bool = False

    def __post_init__(self):
        if self.bound_form not in ("anchored", "printed"):
            raise ValueError("bound_form must be 'anchored' or 'printed'")
        for name in ("tau_threshold", "eps_precision", "bisection_tol", "solver_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ContextGramBounds:
    g_min_lb: np.ndarray
    g_max_ub: np.ndarray

    def to_dict(self) -> dict:
        return {"g_min_lb": self.g_min_lb.tolist(), "g_max_ub": self.g_max_ub.tolist()}


@dataclass
class SdpVerdict:
    w_sdp: float
    tau: dict[Pair, float]
    nu: dict[int, float]
    completeness_ok: bool
    orthogonality_ok: bool
    iterations: int
    certifiable: bool
    eps_prime: np.ndarray
    gram_bounds: ContextGramBounds
    candidates: list[tuple[float, bool]] = field(default_factory=list)
    infeasible_at_w_sdp: bool = False


# ---------------------------------------------------------------- inputs


def eps_prime_matrix(eps_on_edges: dict[Pair, float], graph: OrthogonalityGraph) -> np.ndarray:
    """Symmetric bound matrix: measured values on edges, 1 elsewhere, unit diagonal.

    When both orientations of an edge are present the larger one is kept.
    Values below ``ZERO_FLOOR`` are set to exactly zero so the vertex
    elimination in the anchored programs sees them.
    """
    n = graph.n
    e = np.ones((n, n))
    for i, j in graph.edges:
        vals = [eps_on_edges[k] for k in ((i, j), (j, i)) if k in eps_on_edges]
        if not vals:
            raise KeyError(f"missing eps' for edge ({i}, {j})")
        v = float(np.clip(max(vals), 0.0, 1.0))
        e[i, j] = e[j, i] = 0.0 if v < ZERO_FLOOR else v
    return e


def context_gram_bounds(context, eps_prime: np.ndarray, force_unit: bool = False) -> tuple[float, float]:
    """Gershgorin enclosure of the context Gram spectrum for |G_kt| <= sqrt(eps'_kt)."""
    if force_unit:
        return 1.0, 1.0
    c = list(context)
    rad = max(sum(math.sqrt(eps_prime[k, t]) for t in c if t != k) for k in c)
    return 1.0 - rad, 1.0 + rad


def all_gram_bounds(s: MeasurementSet, graph: OrthogonalityGraph, eps_prime: np.ndarray) -> ContextGramBounds:
    lo, hi = zip(*(context_gram_bounds(c, eps_prime, s.force_unit_context_gram) for c in graph.contexts)) \
        if graph.contexts else ((), ())
    return ContextGramBounds(np.array(lo, dtype=float), np.array(hi, dtype=float))


def witness_coefficients(s: MeasurementSet, graph: OrthogonalityGraph, eps_prime: np.ndarray) -> np.ndarray:
    """c_k with sum_k c_k X_kk the witness; each edge penalty is split evenly over its ends."""
    c = np.array([float(w) for w in s.vertex_weights])
    we = float(s.edge_weight)
    for i, j in graph.edges:
        c[i] -= 0.5 * we * eps_prime[i, j]
        c[j] -= 0.5 * we * eps_prime[i, j]
    return c


# ---------------------------------------------------------------- programs


class _AnchoredProgram:
    """Parameterized anchored-Gram SDP; objective is obj @ diag(Y), minimized."""

    def __init__(self, anchor: int, keep: tuple[int, ...], zero_pairs, nz_pairs, contexts, edge_abs: bool):
        self.keep = keep
        self.pos = {k: a for a, k in enumerate(keep)}
        m = len(keep)
        a = self.pos[anchor]
        Y = cp.Variable((m, m), symmetric=True)
        d = cp.diag(Y)
        flat = cp.vec(Y, order="C")
        self.bound = cp.Parameter(len(nz_pairs), nonneg=True)
        self.coef = cp.Parameter(m)
        self.w = cp.Parameter()
        self.obj = cp.Parameter(m)
        cons = [Y >> 0, Y[a, a] == 1, Y[a, :] == d]
        if zero_pairs:
            cons.append(flat[[r * m + c for r, c in zero_pairs]] == 0)
        if nz_pairs:
            sel = flat[[r * m + c for r, c in nz_pairs]]
            cons += [sel <= self.bound, -sel <= self.bound]
        cons.append(self.coef @ d >= self.w)
        self.n_ctx = len(contexts)
        if contexts:
            A = np.zeros((len(contexts), m))
            for r, ctx in enumerate(contexts):
                A[r, ctx] = 1.0
            self.glo = cp.Parameter(len(contexts))
            self.ghi = cp.Parameter(len(contexts))
            cons += [A @ d >= self.glo, A @ d <= self.ghi]
        self.problem = cp.Problem(cp.Minimize(self.obj @ d), cons)
        self.diag = d


class SdpEngine:
    """Builds, caches and solves anchored programs for one set and graph."""

    def __init__(self, s: MeasurementSet, graph: OrthogonalityGraph, settings: SdpSettings | None = None):
        self.s = s
        self.graph = graph
        self.settings = settings or SdpSettings()
        self._cache: dict = {}
        self.n_solves = 0

    # bound matrix of |X_kt| for anchor m (and pair partner j for the printed form)
    def _bounds(self, m: int, j: int | None, e: np.ndarray) -> np.ndarray:
        if self.settings.bound_form == "printed" and j is not None:
            b = np.sqrt(np.clip(np.outer(e[m, :], e[:, j]) * e, 0.0, None))
        else:
            b = np.sqrt(np.clip(np.outer(e[m, :], e[:, m]) * e, 0.0, None))
        return b

    def _program(self, anchor: int, bmat: np.ndarray, contexts_mode: str):
        n = self.graph.n
        keep = tuple(k for k in range(n) if k == anchor or bmat[anchor, k] > 0)
        pos = {k: a for a, k in enumerate(keep)}
        zero, nz = [], []
        for a in range(len(keep)):
            for b in range(a + 1, len(keep)):
                (zero if bmat[keep[a], keep[b]] == 0 else nz).append((a, b))
        if contexts_mode == "gram":
            ctxs = [tuple(pos[k] for k in c if k in pos) for c in self.graph.contexts]
        else:
            ctxs = []
        key = (anchor, keep, tuple(zero), contexts_mode)
        prog = self._cache.get(key)
        if prog is None:
            prog = _AnchoredProgram(anchor, keep, zero, nz, [list(c) for c in ctxs], edge_abs=False)
            prog.nz = nz
            prog.ctxs = ctxs
            self._cache[key] = prog
        return prog

    def _solve(self, prog: _AnchoredProgram) -> tuple[str, float]:
        tol = self.settings.solver_tol
        self.n_solves += 1
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                prog.problem.solve(
                    solver=cp.CLARABEL,
                    tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
                )
            except cp.error.SolverError:
                try:
                    prog.problem.solve(solver=cp.SCS, eps=1e-7, max_iters=50000)
                except cp.error.SolverError as exc:
                    raise SdpSolverError(str(exc)) from exc
        status = prog.problem.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return "infeasible", math.inf
        if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return "unbounded", -math.inf
        if prog.problem.value is None:
            raise SdpSolverError(f"solver returned status {status}")
        return ("optimal" if status == cp.OPTIMAL else "inaccurate"), float(prog.problem.value)

    def extremal_overlap(
        self,
        i: int,
        j: int,
        eps_prime: np.ndarray,
        bounds: ContextGramBounds,
        w_candidate: float,
        sense: str,
        coef: np.ndarray | None = None,
    ) -> tuple[str, float]:
        """min (tau) or max (tightening) of X_ij = |<V_i|V_j>|^2 anchored at i."""
        bmat = self._bounds(i, j, eps_prime)
        prog = self._program(i, bmat, "gram")
        # infeasible without solving: a context with no surviving vertex but g_min > 0
        for r, ctx in enumerate(prog.ctxs):
            if not ctx and bounds.g_min_lb[r] > 0:
                return "infeasible", (math.inf if sense == "min" else -math.inf)
        if j not in prog.pos:
            return "optimal", 0.0
        keep = prog.keep
        prog.bound.value = np.array([bmat[keep[a], keep[b]] for a, b in prog.nz])
        if coef is None:
            coef = witness_coefficients(self.s, self.graph, eps_prime)
        prog.coef.value = coef[list(keep)]
        prog.w.value = float(w_candidate)
        if prog.n_ctx:
            prog.glo.value = bounds.g_min_lb
            prog.ghi.value = bounds.g_max_ub
        o = np.zeros(len(keep))
        o[prog.pos[j]] = 1.0 if sense == "min" else -1.0
        prog.obj.value = o
        status, val = self._solve(prog)
        if status in ("infeasible", "unbounded"):
            return status, (math.inf if sense == "min" else -math.inf)
        return status, (val if sense == "min" else -val)

    def nu_program(self, anchor: int, context, eps_prime: np.ndarray, w_candidate: float) -> tuple[str, float]:
        """Dimension-free completeness: min sum_{k in c} X_kk anchored at ``anchor``.

        Edge entries obey |X_kt| <= sqrt(eps'_kt); no context-sum constraints.
        """
        n = self.graph.n
        b = np.ones((n, n))
        for i, j in self.graph.edges:
            b[i, j] = b[j, i] = math.sqrt(eps_prime[i, j])
        prog = self._program(anchor, b, "none")
        keep = prog.keep
        prog.bound.value = np.array([b[keep[a], keep[c]] for a, c in prog.nz])
        prog.coef.value = witness_coefficients(self.s, self.graph, eps_prime)[list(keep)]
        prog.w.value = float(w_candidate)
        o = np.zeros(len(keep))
        for k in context:
            if k in prog.pos:
                o[prog.pos[k]] = 1.0
        prog.obj.value = o
        return self._solve(prog)


# ---------------------------------------------------------------- operations


def tau_min(i, j, eps_prime, gram_bounds, w_candidate, s, graph, engine: SdpEngine | None = None) -> float:
    """Minimal |<V_i|V_j>|^2 over Gram matrices consistent with the data and witness >= w_candidate.

    Returns ``inf`` when the program is infeasible.
    """
    if graph.is_edge(i, j):
        raise ValueError(f"({i}, {j}) is an orthogonality edge")
    engine = engine or SdpEngine(s, graph)
    return engine.extremal_overlap(i, j, eps_prime, gram_bounds, w_candidate, "min")[1]


@dataclass
class TighteningResult:
    eps_prime: np.ndarray
    sweeps: int
    changes: list[float]
    infeasible: bool = False


def tighten_eps_prime(
    eps_prime, gram_bounds, w_candidate, s, graph, engine: SdpEngine | None = None,
) -> TighteningResult:
    """Jacobi sweeps replacing every off-edge eps'_ij by max X_ij until the change is below precision."""
    engine = engine or SdpEngine(s, graph)
    st = engine.settings
    e = np.array(eps_prime, dtype=float)
    coef = witness_coefficients(s, graph, e)
    changes = []
    pairs = graph.non_edges
    for sweep in range(1, st.max_sweeps + 1):
        new = e.copy()
        for i, j in pairs:
            try:
                status, val = engine.extremal_overlap(i, j, e, gram_bounds, w_candidate, "max", coef)
            except SdpSolverError as exc:
                raise SdpSolverError(f"tightening failed at W={w_candidate:.6g}, pair ({i}, {j}): {exc}") from exc
            if status == "infeasible":
                return TighteningResult(e, sweep, changes, infeasible=True)
            # never loosen a bound; solver slack can exceed it marginally
            new[i, j] = new[j, i] = min(e[i, j], max(val, 0.0))
        delta = float(np.max(np.abs(new - e)))
        changes.append(delta)
        e = new
        log.debug("sweep %d at W=%.6g: max change %.3g", sweep, w_candidate, delta)
        if delta < st.eps_precision:
            break
    return TighteningResult(e, len(changes), changes)


def completeness_nu(eps_on_edges, w_candidate, s, graph, engine: SdpEngine | None = None) -> dict[int, float]:
    """nu per context: minimum over anchors outside the context of its total projection probability."""
    engine = engine or SdpEngine(s, graph)
    e = eps_on_edges if isinstance(eps_on_edges, np.ndarray) else eps_prime_matrix(eps_on_edges, graph)
    out = {}
    for c_no, ctx in enumerate(graph.contexts):
        best = math.inf
        for anchor in range(graph.n):
            if anchor in ctx:
                continue
            status, val = engine.nu_program(anchor, ctx, e, w_candidate)
            if status == "optimal" or status == "inaccurate":
                best = min(best, val)
        out[c_no] = best
    return out


@dataclass
class _Check:
    ok: bool
    eps_prime: np.ndarray
    sweeps: int
    tau: dict[Pair, float]
    infeasible: bool
    complete: bool = False  # every non-edge tau was evaluated


def _tau_pass(w, e, bounds, s, graph, engine, full_tau: bool) -> _Check:
    st = engine.settings
    coef = witness_coefficients(s, graph, e)
    tau: dict[Pair, float] = {}
    ok = True
    # tau_ij <= eps'_ij, so the smallest bounds are the likeliest failures
    for i, j in sorted(graph.non_edges, key=lambda p: e[p]):
        if not full_tau and e[i, j] <= st.tau_threshold:
            tau[(i, j)] = e[i, j]
            return _Check(False, e, 0, tau, False)
        status, val = engine.extremal_overlap(i, j, e, bounds, w, "min", coef)
        if status == "infeasible":
            return _Check(True, e, 0, tau, True)
        tau[(i, j)] = max(val, 0.0)
        if tau[(i, j)] <= st.tau_threshold:
            ok = False
            if not full_tau:
                return _Check(False, e, 0, tau, False)
    return _Check(ok, e, 0, tau, False, complete=True)


def _verify(w, e0, bounds, s, graph, engine, full_tau: bool = False) -> _Check:
    """Verify orthogonality at witness threshold ``w``.

    A pass with the untightened bounds is already a pass (tightening only
    shrinks the feasible set), so tightening runs only after a failure.
    """
    first = _tau_pass(w, e0, bounds, s, graph, engine, full_tau)
    if first.ok:
        return first
    tight = tighten_eps_prime(e0, bounds, w, s, graph, engine)
    if tight.infeasible:
        return _Check(True, tight.eps_prime, tight.sweeps, {}, True)
    check = _tau_pass(w, tight.eps_prime, bounds, s, graph, engine, full_tau)
    check.sweeps = tight.sweeps
    return check


def verify_candidate(
    w_candidate: float, eps_on_edges, s: MeasurementSet, graph: OrthogonalityGraph,
    engine: SdpEngine | None = None,
) -> bool:
    """Does orthogonality verify (all tau > threshold, completeness via Gram bounds) at this witness value?

    Starts from the untightened bounds; infeasible programs count as verified.
    """
    engine = engine or SdpEngine(s, graph)
    e = eps_on_edges if isinstance(eps_on_edges, np.ndarray) else eps_prime_matrix(eps_on_edges, graph)
    bounds = all_gram_bounds(s, graph, e)
    if not np.all(bounds.g_min_lb > 0):
        return False
    return _verify(w_candidate, e, bounds, s, graph, engine).ok


def threshold_search(
    eps_on_edges,
    s: MeasurementSet,
    graph: OrthogonalityGraph,
    settings: SdpSettings | None = None,
    engine: SdpEngine | None = None,
) -> SdpVerdict:
    """Smallest witness threshold at which orthogonality and completeness verify.

    Bisection over [0, W_opt]. Bounds tightened at a lower candidate stay
    valid at every higher one, so each step starts from the largest
    failing candidate's eps'.
    """
    engine = engine or SdpEngine(s, graph, settings)
    st = engine.settings
    e_start = eps_on_edges if isinstance(eps_on_edges, np.ndarray) else eps_prime_matrix(eps_on_edges, graph)
    bounds = all_gram_bounds(s, graph, e_start)
    completeness_ok = bool(np.all(bounds.g_min_lb > 0))
    w_opt = float(ideal_witness_optimum(s))
    history: list[tuple[float, bool]] = []

    def verdict(w, check: _Check, certifiable: bool) -> SdpVerdict:
        if check.infeasible or check.complete:
            tau = dict(check.tau)
        else:
            tau = _tau_pass(w, check.eps_prime, bounds, s, graph, engine, full_tau=True).tau
        nu = completeness_nu(check.eps_prime, w, s, graph, engine) if st.compute_nu else {}
        return SdpVerdict(
            w_sdp=w,
            tau=tau,
            nu=nu,
            completeness_ok=completeness_ok,
            orthogonality_ok=check.ok,
            iterations=check.sweeps,
            certifiable=certifiable,
            eps_prime=check.eps_prime,
            gram_bounds=bounds,
            candidates=history,
            infeasible_at_w_sdp=check.infeasible,
        )

    # a pass at 0 implies a pass everywhere above it; a failure leaves
    # tightened bounds that stay valid for every higher candidate
    bottom = _verify(0.0, e_start, bounds, s, graph, engine)
    history.append((0.0, bottom.ok))
    if bottom.ok and completeness_ok:
        return verdict(0.0, bottom, certifiable=True)

    top = _verify(w_opt, bottom.eps_prime, bounds, s, graph, engine)
    history.append((w_opt, top.ok))
    if not (top.ok and completeness_ok):
        return verdict(w_opt, top, certifiable=False)

    lo, hi = 0.0, w_opt
    lo_eps, hi_check = bottom.eps_prime, top
    while hi - lo > st.bisection_tol:
        mid = 0.5 * (lo + hi)
        check = _verify(mid, lo_eps, bounds, s, graph, engine, full_tau=False)
        history.append((mid, check.ok))
        log.info("W candidate %.6f -> %s", mid, "verified" if check.ok else "failed")
        if check.ok:
            hi, hi_check = mid, check
        else:
            lo, lo_eps = mid, check.eps_prime
    return verdict(hi, hi_check, certifiable=True)
