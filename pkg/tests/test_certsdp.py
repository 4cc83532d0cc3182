import math

import numpy as np
import pytest

from sicert.certsdp import (
    SdpEngine,
    SdpSettings,
    all_gram_bounds,
    completeness_nu,
    context_gram_bounds,
    eps_prime_matrix,
    tau_min,
    threshold_search,
    tighten_eps_prime,
    verify_candidate,
    witness_coefficients,
)
from sicert.geometry import ideal_overlap_matrix, ideal_witness_optimum
from sicert.opticsim import NoiseChannelParams, simulate_experiment


def _zero(g):
    return eps_prime_matrix({e: 0.0 for e in g.edges}, g)


@pytest.fixture(scope="module")
def peres_engine(peres):
    return SdpEngine(*peres)


@pytest.fixture(scope="module")
def yo13_threshold(yo13):
    s, g = yo13
    rec = simulate_experiment(s, g, NoiseChannelParams(), 0.3, 0)
    e = eps_prime_matrix(rec.eps, g)
    return e, threshold_search(e, s, g)


def test_eps_prime_matrix(peres):
    s, g = peres
    i, j = g.edges[0]
    e = eps_prime_matrix({(j, i): 0.02, **{x: 0.0 for x in g.edges}}, g)
    assert e[i, j] == e[j, i] == 0.02
    assert np.all(np.diag(e) == 1)
    a, b = g.non_edges[0]
    assert e[a, b] == 1
    with pytest.raises(KeyError):
        eps_prime_matrix({x: 0.0 for x in g.edges[1:]}, g)


def test_gram_bound_examples(peres, yo13):
    e = np.full((4, 4), 1e-4)
    assert context_gram_bounds(range(4), e) == pytest.approx((0.97, 1.03), abs=1e-15)
    assert context_gram_bounds(range(4), np.zeros((4, 4))) == (1.0, 1.0)
    s, g = yo13
    b = all_gram_bounds(s, g, np.full((s.n, s.n), 0.3))
    assert np.all(b.g_min_lb == 1) and np.all(b.g_max_ub == 1)


def test_witness_coefficients_split_edge_penalty(peres):
    s, g = peres
    e = _zero(g)
    i, j = g.edges[0]
    e[i, j] = e[j, i] = 0.01
    c = witness_coefficients(s, g, e)
    assert c[i] == pytest.approx(1 - 0.005) and c[j] == pytest.approx(1 - 0.005)
    assert sum(c) == pytest.approx(24 - 0.01)


def test_settings_validation():
    with pytest.raises(ValueError):
        SdpSettings(bound_form="other")
    with pytest.raises(ValueError):
        SdpSettings(tau_threshold=0)


def test_tau_zero_error_oracle(peres, peres_engine):
    s, g = peres
    e = _zero(g)
    b = all_gram_bounds(s, g, e)
    assert tau_min(0, 4, e, b, 6.0, s, g, peres_engine) == pytest.approx(0.25, abs=1e-3)
    with pytest.raises(ValueError):
        tau_min(*g.edges[0], e, b, 6.0, s, g, peres_engine)


def test_unreachable_witness_is_infeasible(peres, peres_engine):
    s, g = peres
    e = _zero(g)
    assert tau_min(0, 4, e, all_gram_bounds(s, g, e), 25.0, s, g, peres_engine) == math.inf


def test_large_offset_breaks_orthogonality(peres, peres_engine):
    s, g = peres
    rec = simulate_experiment(s, g, NoiseChannelParams(), 2.0, 0)
    e = eps_prime_matrix(rec.eps, g)
    b = all_gram_bounds(s, g, e)
    taus = [tau_min(i, j, e, b, 6 - 0.01, s, g, peres_engine) for i, j in g.non_edges[:30]]
    assert min(taus) <= 1e-4


def test_yo13_zero_error_recovery(yo13):
    s, g = yo13
    e = _zero(g)
    b = all_gram_bounds(s, g, e)
    w = float(ideal_witness_optimum(s))
    eng = SdpEngine(s, g)
    tr = tighten_eps_prime(e, b, w, s, g, eng)
    ideal = ideal_overlap_matrix(s)
    assert tr.sweeps <= 3
    for i, j in g.non_edges:
        assert tr.eps_prime[i, j] == pytest.approx(ideal[i, j], abs=1e-3)
        assert tau_min(i, j, tr.eps_prime, b, w, s, g, eng) == pytest.approx(ideal[i, j], abs=1e-3)
    # fixed point: one more pass changes nothing beyond precision
    again = tighten_eps_prime(tr.eps_prime, b, w, s, g, eng)
    assert again.sweeps == 1
    assert np.max(np.abs(again.eps_prime - tr.eps_prime)) < 1e-3


def test_printed_bound_form_rejects_ideal_realization(yo13):
    # taken literally, |X_kt|^2 <= e_ik e_kt e_tj forces X_it = 0 for every t
    # orthogonal to j, which the ideal Gram violates
    s, g = yo13
    e = _zero(g)
    b = all_gram_bounds(s, g, e)
    w = float(ideal_witness_optimum(s))
    printed = SdpEngine(s, g, SdpSettings(bound_form="printed"))
    ideal = ideal_overlap_matrix(s)
    results = [printed.extremal_overlap(i, j, e, b, w, "min") for i, j in g.non_edges]
    failures = [
        (i, j) for (i, j), (status, val) in zip(g.non_edges, results)
        if status == "infeasible" or abs(val - ideal[i, j]) > 1e-3
    ]
    assert failures


def test_tightening_never_loosens(yo13):
    s, g = yo13
    rec = simulate_experiment(s, g, NoiseChannelParams(), 0.5, 0)
    e = eps_prime_matrix(rec.eps, g)
    b = all_gram_bounds(s, g, e)
    eng = SdpEngine(s, g, SdpSettings(max_sweeps=3))
    prev = e
    for _ in range(2):
        tr = tighten_eps_prime(prev, b, 11.5, s, g, eng)
        assert np.all(tr.eps_prime <= prev + 1e-15)
        prev = tr.eps_prime


@pytest.mark.parametrize("name", ["yo13", "peres"])
def test_enlarging_on_edge_bound_never_raises_tau(name, request):
    # eps' also enters the witness coefficients; with those held fixed the
    # feasible set can only grow as a bound is loosened. These programs have
    # no strictly feasible point, and repeated interior-point solves of one
    # and the same instance scatter by a few 1e-5, so the comparison is made
    # at the resolution of the tau cut.
    s, g = request.getfixturevalue(name)
    rng = np.random.default_rng(7)
    rec = simulate_experiment(s, g, NoiseChannelParams(), 0.3, 0)
    e = eps_prime_matrix(rec.eps, g)
    eng = SdpEngine(s, g)
    coef = witness_coefficients(s, g, e)
    w = float(ideal_witness_optimum(s)) - 0.5
    for _ in range(20):
        i, j = g.non_edges[rng.integers(len(g.non_edges))]
        a, c = g.edges[rng.integers(len(g.edges))]
        bigger = e.copy()
        bigger[a, c] = bigger[c, a] = min(1.0, e[a, c] * 10 + 1e-4)
        t0 = eng.extremal_overlap(i, j, e, all_gram_bounds(s, g, e), w, "min", coef)[1]
        t1 = eng.extremal_overlap(i, j, bigger, all_gram_bounds(s, g, bigger), w, "min", coef)[1]
        assert t1 <= t0 + 1e-4


def test_threshold_bracketing(yo13, yo13_threshold):
    s, g = yo13
    e, v = yo13_threshold
    w_opt = float(ideal_witness_optimum(s))
    assert 0 < v.w_sdp < w_opt
    assert v.orthogonality_ok and v.completeness_ok
    # every tau at the returned threshold clears the cut
    assert len(v.tau) == len(g.non_edges)
    assert min(v.tau.values()) > 1e-4
    assert not verify_candidate(v.w_sdp - 1e-3, e, s, g)
    # the failing candidate just below w_sdp is within the bisection tolerance
    below = max(w for w, ok in v.candidates if not ok)
    assert v.w_sdp - below <= 1e-3 + 1e-12


def test_large_offset_is_uncertifiable(yo13):
    s, g = yo13
    rec = simulate_experiment(s, g, NoiseChannelParams(), 2.0, 0)
    v = threshold_search(rec.eps, s, g)
    assert v.w_sdp == pytest.approx(35 / 3)
    assert not v.certifiable and not v.orthogonality_ok


def test_completeness_nu_yo13(yo13):
    s, g = yo13
    nu = completeness_nu({e: 0.0 for e in g.edges}, 11.5, s, g)
    assert len(nu) == 4
    assert all(v > 1e-4 for v in nu.values())


@pytest.mark.parametrize("w", [6.0, 5.9])
def test_completeness_nu_peres(peres, peres_engine, w):
    # six disjoint contexts each hold at most 1 (Bessel), so meeting the
    # witness forces every context sum up to 1 - (W_opt - w)
    s, g = peres
    nu = completeness_nu({e: 0.0 for e in g.edges}, w, s, g, peres_engine)
    assert len(nu) == 24
    for v in nu.values():
        assert v == pytest.approx(1 - (6.0 - w), abs=1e-6)


def test_zero_error_peres_threshold(peres, peres_engine):
    s, g = peres
    v = threshold_search(_zero(g), s, g, engine=peres_engine)
    assert v.w_sdp < 6
    assert v.certifiable
