"""Tests: oscillation (Jacobi-form, nodes, Wronskian, Weyl-løsninger, fixed-point konstruktioner)."""
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import lattice_ops as LO
import oscillation as OS
import spectral_box as SB

FREE = LO.OperatorSpec(LO.zero_potential())
BOUND_STATE = LO.OperatorSpec(LO.zero_potential(), LO.table({0: -1.0}))


def _dirichlet_trace(op, E, N1, N2):
    jac = OS.to_jacobi(op)
    return OS.solution_trace(jac, jac.lam(E), N1 - 1, N2 + 1, N1 - 1, (0.0, 1.0))


def test_jacobi_form_of_free_operator():
    jac = OS.to_jacobi(FREE)
    assert list(jac.b(np.arange(3))) == [0.0, 0.0, 0.0]
    assert jac.lam(2.0) == -2.0 and jac.energy(-2.0) == 2.0
    assert jac.shifted(0.5).lam(2.0) == -2.5


def test_jacobi_dense_mirrors_box_spectrum():
    op = LO.OperatorSpec(LO.almost_mathieu(2.0, "golden", 0.1), LO.exponential(1.0, 0.5))
    jac = OS.to_jacobi(op)
    lam = np.linalg.eigvalsh(jac.dense(-10, 10))
    E = np.linalg.eigvalsh(LO.build_box(op, -10, 10).dense())
    np.testing.assert_allclose(np.sort(lam), np.sort(-E), atol=1e-12)


def test_node_counting_conventions():
    assert OS.count_nodes(OS.trace_from_values([1.0, 1.0, 1.0]), 0, 2) == 0
    assert OS.count_nodes(OS.trace_from_values([1.0, -1.0, 1.0]), 0, 2) == 2
    assert OS.count_nodes(OS.trace_from_values([1.0, -1.0, 1.0]), 0, 2, sign_flip=True) == 0
    assert OS.count_nodes(OS.trace_from_values([0.0, 1.0, -1.0]), 0, 2) == 1
    with pytest.raises(OS.DegenerateTrace):
        OS.count_nodes(OS.trace_from_values([1.0, 0.0, 0.0, 1.0]), 0, 3)


def test_dirichlet_nodes_count_box_eigenvalues():
    rng = np.random.default_rng(17)
    op = LO.OperatorSpec(LO.almost_mathieu(1.5, "golden", 0.3), LO.exponential(1.0, 0.5))
    box = LO.build_box(op, 0, 29)
    for E in rng.uniform(-4.5, 4.5, 20):
        u = _dirichlet_trace(op, float(E), 0, 29)
        assert OS.count_nodes(u, -1, 30) == box.size - SB.sturm_count(box, float(E))


def test_eigenvector_nodes_follow_ordering():
    rng = np.random.default_rng(29)
    for _ in range(20):
        diag = rng.uniform(-1.0, 1.0, 40)
        E, vecs = np.linalg.eigh(LO.box_from_diagonal(diag).dense())
        for j, k in enumerate(np.argsort(-E)):
            u = OS.trace_from_values(np.concatenate([[0.0], vecs[:, k], [0.0]]), start=-1)
            assert OS.count_nodes(u, -1, 40) == j


def test_wronskian_nodes_bracket_node_difference():
    rng = np.random.default_rng(31)
    op = LO.OperatorSpec(LO.almost_mathieu(1.5, "golden", 0.3), LO.exponential(1.0, 0.5))
    for _ in range(20):
        E1, E2 = sorted(float(x) for x in rng.uniform(-4.0, 4.0, 2))
        u1 = _dirichlet_trace(op, E1, 0, 39)
        u2 = _dirichlet_trace(op, E2, 0, 39)
        w = OS.count_wronskian_nodes(u1, u2, -1, 39)
        assert abs(w - abs(OS.count_nodes(u1, -1, 40) - OS.count_nodes(u2, -1, 40))) <= 2


def test_gap_count_matches_dense_for_compact_perturbations():
    rng = np.random.default_rng(37)
    for _ in range(8):
        op = LO.OperatorSpec(LO.zero_potential(), LO.table({n: float(rng.uniform(-2, 2)) for n in range(-3, 4)}))
        ev = np.linalg.eigvalsh(LO.build_box(op, -200, 200).dense())
        for E1, E2 in ((2.2, 4.5), (-4.5, -2.2)):
            want = int(np.sum((ev > E1) & (ev < E2)))
            assert OS.gap_eigenvalue_count(op, E1, E2, horizon=400).count == want


def test_wronskian_basics():
    u1 = OS.trace_from_values([1.0, 0.0])
    u2 = OS.trace_from_values([0.0, 1.0])
    assert OS.wronskian(u1, u2, 0) == -1.0
    assert OS.wronskian(u1, u1, 0) == 0.0


def test_wronskian_constant_for_equal_energy():
    jac = OS.to_jacobi(BOUND_STATE)
    lam = jac.lam(0.7)
    u = OS.solution_trace(jac, lam, -40, 40, 0, (1.0, 0.3))
    v = OS.solution_trace(jac, lam, -40, 40, 0, (-0.2, 1.0))
    ws = [OS.wronskian(u, v, n) for n in range(-39, 39)]
    np.testing.assert_allclose(ws, ws[0], rtol=1e-9)
    assert OS.count_wronskian_nodes(u, v, -39, 38) == 0
    with pytest.raises(OS.DegenerateTrace):
        OS.count_wronskian_nodes(u, u, -39, 38)


def test_trace_helpers():
    u = OS.trace_from_values([2.0, -4.0, 8.0], start=-1)
    assert u.at(1) == 8.0 and u.normalized(0).at(1) == -2.0
    r = u.reflected()
    assert r.window == (-1, 1) and r.at(-1) == 8.0
    with pytest.raises(LO.InvalidInterval):
        u.at(2)
    with pytest.raises(OS.DegenerateTrace):
        OS.solution_trace(OS.to_jacobi(FREE), 0.0, 0, 5, 0, (0.0, 0.0))


def test_long_trace_does_not_overflow():
    jac = OS.to_jacobi(FREE)
    u = OS.solution_trace(jac, jac.lam(5.0), 0, 20000, 0, (1.0, 1.0))
    la = u.log_abs()
    assert np.all(np.isfinite(la))
    assert la[-1] > 700
    assert la[-1] - la[-1001] == pytest.approx(1000 * math.acosh(2.5), rel=1e-9)


def test_weyl_solution_decays():
    w = OS.weyl_solution(BOUND_STATE, 3.0, side=1, horizon=200)
    assert w.construction == "BackwardRecurrence" and not w.edge_limit
    la = w.trace.log_abs()
    assert la[w.trace.index(150)] < la[w.trace.index(50)] - 50 * math.acosh(1.5)
    left = OS.weyl_solution(BOUND_STATE, 3.0, side=-1, horizon=200)
    assert left.trace.log_abs()[left.trace.index(-150)] < left.trace.log_abs()[left.trace.index(-50)]


def test_fixed_point_weyl_agrees_with_backward():
    for side in (1, -1):
        back = OS.weyl_solution(BOUND_STATE, 3.0, side=side, horizon=300, construction="backward")
        fixed = OS.weyl_solution(BOUND_STATE, 3.0, side=side, horizon=300, construction="fixed_point")
        assert fixed.construction == "HyperbolicFixedPoint"
        ns = np.arange(-20, 21)
        a = np.array([back.trace.normalized(0).at(n) for n in ns])
        b = np.array([fixed.trace.normalized(0).at(n) for n in ns])
        np.testing.assert_allclose(b, a, rtol=1e-6)


def test_fixed_point_needs_free_far_field():
    amo = LO.OperatorSpec(LO.almost_mathieu(1.0), LO.table({0: -1.0}))
    with pytest.raises(ValueError):
        OS.weyl_solution(amo, 3.0, construction="fixed_point")
    with pytest.raises(OS.NotInGap):
        OS.weyl_solution(BOUND_STATE, 1.0, construction="fixed_point")


def test_single_bound_state_counted():
    res = OS.gap_eigenvalue_count(BOUND_STATE, -2.5, -2.1, horizon=400)
    assert res.count == 1 and res.stable and res.half_horizon_count == 1


def test_no_eigenvalues_without_perturbation():
    assert OS.gap_eigenvalue_count(FREE, 2.5, 3.5, horizon=400).count == 0
    assert OS.gap_eigenvalue_count(BOUND_STATE, 2.5, 3.5, horizon=400).count == 0


def test_band_window_is_not_a_gap():
    with pytest.raises(OS.NotInGap):
        OS.weyl_solution(FREE, 0.5, horizon=400, construction="backward")
    with pytest.raises(OS.NotInGap):
        OS.gap_eigenvalue_count(FREE, -1.0, 1.0, horizon=400)
    with pytest.raises(ValueError):
        OS.gap_eigenvalue_count(FREE, 3.0, 2.5)


def test_band_of_quasi_periodic_operator_is_not_a_gap():
    amo = LO.OperatorSpec(LO.almost_mathieu(3.0))
    small, big = OS.window_box_counts(amo, -0.2, 0.2, 400)
    assert big - small > OS.CONFIG["spectrum_growth_slack"]
    with pytest.raises(OS.NotInGap):
        OS.gap_eigenvalue_count(amo, -0.2, 0.2, horizon=400)
    assert OS.window_box_counts(BOUND_STATE, -2.5, -2.1, 400) == (1, 1)


def test_solutions_dependent():
    jac = OS.to_jacobi(FREE)
    lam = jac.lam(3.0)
    u = OS.solution_trace(jac, lam, -5, 5, 0, (1.0, 0.4))
    v = OS.solution_trace(jac, lam, -5, 5, 0, (3.0, 1.2))
    w = OS.solution_trace(jac, lam, -5, 5, 0, (1.0, -0.4))
    assert OS.solutions_dependent(u, v)[0]
    dep, rel = OS.solutions_dependent(u, w)
    assert not dep and rel > 0.1


def _zero_R(ns):
    return np.zeros((len(ns), 2, 2))


def test_parabolic_unperturbed_is_exact():
    A = np.array([[1.0, 1.0], [0.0, 1.0]])
    res = OS.parabolic_solutions(A, _zero_R, 50)
    assert res.n0 == 1
    np.testing.assert_array_equal(res.phi, np.stack([np.ones(50), np.zeros(50)], axis=1))
    np.testing.assert_array_equal(res.psi, np.stack([res.ns * 1.0, np.ones(50)], axis=1))


def test_parabolic_small_perturbation():
    M = np.array([[0.3, -0.2], [0.5, 0.1]])
    R = lambda ns: 0.05 * np.exp(-np.abs(ns))[:, None, None] * M[None]
    A = np.array([[-1.0, 2.0], [0.0, -1.0]])
    res = OS.parabolic_solutions(A, R, 200)
    assert res.residual < 1e-10
    assert res.phi_deviation <= res.phi_bound
    assert res.psi_deviation <= res.psi_bound
    assert res.min_phi_norm > 0.5


def test_parabolic_without_contraction():
    R = lambda ns: np.ones((len(ns), 2, 2))
    with pytest.raises(OS.NoContraction):
        OS.parabolic_solutions(np.array([[1.0, 1.0], [0.0, 1.0]]), R, 100)
    with pytest.raises(ValueError):
        OS.parabolic_solutions(np.eye(2) * 2.0, _zero_R, 100)


def test_hyperbolic_unperturbed_is_exact():
    A = np.array([[2.0, 1.0], [0.0, 0.5]])
    res = OS.hyperbolic_solutions(A, _zero_R, 30)
    np.testing.assert_array_equal(res.weighted, np.stack([np.ones(len(res.ns)), np.zeros(len(res.ns))], axis=1))
    np.testing.assert_allclose(res.values()[:, 0], 2.0 ** res.ns)


def test_hyperbolic_small_perturbation():
    M = np.array([[1.0, 0.5], [0.2, -1.0]])
    R = lambda ns: 0.1 * np.exp(-np.abs(ns))[:, None, None] * M[None]
    A = np.array([[2.0, 1.0], [0.0, 0.5]])
    for half_line in ("right", "left"):
        res = OS.hyperbolic_solutions(A, R, 200, half_line=half_line)
        assert res.residual < 1e-10
        assert res.deviation <= res.bound
    with pytest.raises(ValueError):
        OS.hyperbolic_solutions(np.array([[0.5, 0.0], [0.0, 2.0]]), R, 10)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ✓ {name}")
    print("\nALLE ASSERTS OK ✓")
