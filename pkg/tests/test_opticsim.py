import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sicert.geometry import ideal_overlap_matrix
from sicert.opticsim import (
    FLIP_A,
    FLIP_B,
    PHASE_A,
    ExperimentRecord,
    NoiseChannelParams,
    angles_for_vector,
    apply_noise,
    embed,
    estimates_from_counts,
    exact_pair_probability,
    jones_hwp,
    kraus_ops,
    measurement_state,
    prepared_state,
    projected_states,
    ratio_sigma,
    simulate_experiment,
)

R2 = math.sqrt(2) / 2


def test_jones_examples():
    assert np.allclose(jones_hwp(0), [[1, 0], [0, -1]], atol=1e-15)
    assert np.allclose(jones_hwp(45), [[0, 1], [1, 0]], atol=1e-15)
    assert np.allclose(jones_hwp(22.5), [[R2, R2], [R2, -R2]], atol=1e-15)


def test_prepared_state_examples():
    assert np.allclose(prepared_state(0, 0, 13.0), [1, 0, 0, 0], atol=1e-15)
    assert np.allclose(prepared_state(22.5, 22.5, -22.5), [0.5, 0.5, -0.5, -0.5], atol=1e-15)
    # theta1 = 45 leaves only the R rail; theta3 = 22.5 splits it evenly
    assert np.allclose(prepared_state(45, 10.0, 22.5), [0, 0, R2, -R2], atol=1e-15)


def test_measurement_state_examples():
    assert np.allclose(measurement_state(-22.5, 45, 0), [0, -R2, R2, 0], atol=1e-15)
    assert np.allclose(measurement_state(45, 0, 31.0), [1, 0, 0, 0], atol=1e-15)
    assert np.array_equal(measurement_state(10, 20, 30, 0.0), measurement_state(10, 20, 30))


def test_v24_angles(peres):
    s, _ = peres
    a = angles_for_vector(s.unit_vectors()[23], "measurement")
    assert (a.theta4, a.theta5, a.theta6) == pytest.approx((-22.5, 45.0, 0.0), abs=1e-12)
    b = angles_for_vector(np.array([1.0, 0, 0, 0]), "preparation")
    assert (b.theta1, b.theta2, b.theta3) == (0.0, 0.0, 0.0)


def _same_up_to_sign(a, b, tol=1e-10):
    return min(np.max(np.abs(a - b)), np.max(np.abs(a + b))) < tol


def test_angle_round_trip_peres(peres):
    s, _ = peres
    for v in s.unit_vectors():
        m = angles_for_vector(v, "measurement")
        p = angles_for_vector(v, "preparation")
        assert _same_up_to_sign(measurement_state(m.theta4, m.theta5, m.theta6), v)
        assert _same_up_to_sign(prepared_state(p.theta1, p.theta2, p.theta3), v)
        assert 0 <= p.theta1 <= 45


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda x: np.linalg.norm(x) > 1e-3))
def test_angle_round_trip_random(x):
    v = np.array(x) / np.linalg.norm(x)
    m = angles_for_vector(v, "measurement")
    p = angles_for_vector(v, "preparation")
    assert _same_up_to_sign(measurement_state(m.theta4, m.theta5, m.theta6), v)
    assert _same_up_to_sign(prepared_state(p.theta1, p.theta2, p.theta3), v)


def test_angles_reject_bad_input():
    with pytest.raises(ValueError):
        angles_for_vector(np.array([1.0, 1, 0, 0]))
    with pytest.raises(ValueError):
        angles_for_vector(np.array([1.0, 0, 0, 0]), "sideways")


def test_noise_param_bounds():
    with pytest.raises(ValueError):
        NoiseChannelParams(p_pa=0.6)
    with pytest.raises(ValueError):
        NoiseChannelParams(p_ba=-0.1)
    NoiseChannelParams(1.0, 1.0, 0.5)


def test_apply_noise_examples():
    e1 = np.array([1.0, 0, 0, 0])
    assert np.array_equal(apply_noise(e1, NoiseChannelParams()), np.outer(e1, e1))
    rho = apply_noise(e1, NoiseChannelParams(p_ba=0.5))
    assert np.allclose(rho, np.diag([0.5, 0, 0.5, 0]), atol=1e-15)
    assert exact_pair_probability(0, 2, NoiseChannelParams(p_ba=0.5), 0.0, _e_basis_set()) == pytest.approx(0.5)


def _e_basis_set():
    from sicert.geometry import set_from_dict

    return set_from_dict({
        "name": "basis", "dim": 4, "vectors": [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]],
        "vertex_weights": [1] * 4, "edge_weight": 1,
    })


def test_kraus_completeness():
    for p in (0.0, 0.3, 1.0):
        for op in (FLIP_A, FLIP_B, PHASE_A):
            total = (1 - p) * np.eye(4) + p * op.T @ op
            assert np.allclose(total, np.eye(4), atol=1e-12)
    ks = kraus_ops(NoiseChannelParams(0.2, 0.7, 0.4))
    assert np.allclose(sum(k.T @ k for k in ks), np.eye(4), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda x: np.linalg.norm(x) > 1e-3),
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 0.5),
)
def test_channel_matches_kraus_sum(x, a, b, c):
    v = np.array(x) / np.linalg.norm(x)
    params = NoiseChannelParams(a, b, c)
    rho = apply_noise(v, params)
    ref = sum(k @ np.outer(v, v) @ k.T for k in kraus_ops(params))
    assert np.allclose(rho, ref, atol=1e-12)
    assert np.trace(rho) == pytest.approx(1, abs=1e-12)
    assert np.linalg.eigvalsh(rho).min() >= -1e-12


def test_exact_pair_probability_oracles(peres, yo13):
    for s, g in (peres, yo13):
        ov = ideal_overlap_matrix(s)
        zero = NoiseChannelParams()
        for i, j in g.edges:
            assert exact_pair_probability(i, j, zero, 0.0, s, g) == pytest.approx(0, abs=1e-12)
        for i, j in g.non_edges[:40]:
            assert exact_pair_probability(i, j, zero, 0.0, s, g) == pytest.approx(ov[i, j], abs=1e-12)


def test_exact_mode_ideal(peres, yo13):
    for s, g in (peres, yo13):
        r = simulate_experiment(s, g, NoiseChannelParams(), 0.0, 0)
        assert r.exact and not r.counts
        assert np.allclose(r.p, 1 / s.dim, atol=1e-12)
        assert max(r.eps.values()) < 1e-12
        assert all(v == 0 for v in r.sigma_eps.values())


def test_mean_eps_grows_with_offset(peres):
    s, g = peres
    means = [
        np.mean(list(simulate_experiment(s, g, NoiseChannelParams(), dt, 0).eps.values()))
        for dt in np.arange(0.1, 1.01, 0.1)
    ]
    assert means[0] > 0
    assert all(b > a for a, b in zip(means, means[1:]))


def test_calibration_order_of_magnitude(peres):
    s, g = peres
    r = simulate_experiment(s, g, NoiseChannelParams(1e-3, 1e-3, 1e-2), 0.3, 30000, seed=11)
    m = np.mean(list(r.eps.values()))
    assert 1e-4 < m < 1e-2


def test_basis_fractions_sum_to_one(peres, yo13):
    for s, g in (peres, yo13):
        r = simulate_experiment(s, g, NoiseChannelParams(1e-3, 0, 1e-2), 0.2, 1000, seed=2)
        for entry in r.counts.values():
            c = np.array(entry["counts"], dtype=float)
            assert (c / c.sum()).sum() == pytest.approx(1.0, abs=1e-15)


def test_qutrit_mixed_state_sums(yo13):
    s, g = yo13
    r = simulate_experiment(s, g, NoiseChannelParams(), 0.0, 0)
    for basis in g.measurement_bases:
        members = [k for k in basis if k < s.n]
        if len(members) == 3:
            assert sum(r.p[k] for k in members) == pytest.approx(1, abs=1e-12)


def test_sampling_is_deterministic_and_seeded(yo13):
    s, g = yo13
    noise = NoiseChannelParams(1e-3, 2e-3, 1e-2)
    a = simulate_experiment(s, g, noise, 0.3, 5000, seed=4)
    b = simulate_experiment(s, g, noise, 0.3, 5000, seed=4)
    c = simulate_experiment(s, g, noise, 0.3, 5000, seed=5)
    assert a.counts == b.counts
    assert a.counts != c.counts


def test_sampling_agrees_with_exact_mode(peres):
    s, g = peres
    noise = NoiseChannelParams(2e-3, 1e-3, 1e-2)
    exact = simulate_experiment(s, g, noise, 0.5, 0)
    rng = np.random.default_rng(0)
    edges = [list(exact.eps)[k] for k in rng.choice(len(exact.eps), 20, replace=False)]
    draws = np.array([
        [simulate_experiment(s, g, noise, 0.5, 10**6, seed=100 + r).eps[e] for e in edges]
        for r in range(50)
    ])
    se = draws.std(axis=0, ddof=1) / math.sqrt(50)
    target = np.array([exact.eps[e] for e in edges])
    assert np.all(np.abs(draws.mean(axis=0) - target) <= 3 * se + 1e-12)


def test_ratio_sigma_zero_counts():
    assert ratio_sigma(0, 30000) > 0
    assert ratio_sigma(100, 10000) == pytest.approx(math.sqrt(100 * 9900 / 10000**3))


def test_record_round_trip_and_counts(peres):
    s, g = peres
    r = simulate_experiment(s, g, NoiseChannelParams(1e-3, 1e-3, 1e-2), 0.3, 30000, seed=3)
    again = ExperimentRecord.from_dict(r.to_dict(s), s, g)
    assert again.eps == r.eps and np.array_equal(again.p, r.p)
    p, _, eps, _, _ = estimates_from_counts(s, g, r.counts)
    assert eps == r.eps
    assert all("-" in k for k in r.to_dict(s)["eps"])


def test_record_rejects_non_edge(peres):
    s, g = peres
    data = simulate_experiment(s, g, NoiseChannelParams(), 0.0, 0).to_dict(s)
    data["eps"]["1-5"] = 0.1
    with pytest.raises(ValueError):
        ExperimentRecord.from_dict(data, s, g)


def test_negative_shots_rejected(peres):
    s, g = peres
    with pytest.raises(ValueError):
        simulate_experiment(s, g, NoiseChannelParams(), 0.0, -1)


def test_embedding():
    assert np.array_equal(embed([1, 2, 3], 3), [1, 2, 0, 3])
    with pytest.raises(ValueError):
        embed([1, 2], 2)


def test_offset_moves_only_theta4(peres):
    s, _ = peres
    a = projected_states(s, 0.0)
    b = projected_states(s, 0.7)
    assert not np.allclose(a, b)
    assert np.allclose(np.linalg.norm(b, axis=1), 1, atol=1e-12)
