"""Tests: spectral_box (determinanter, Sturm, Green, IDS, gap labels, eigenpar)."""
import math
import os
import sys

import numpy as np
import pytest
from scipy import linalg

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import cocycle as CO
import lattice_ops as LO
import spectral_box as SB

FREE = LO.OperatorSpec(LO.zero_potential())
GOLDEN = (math.sqrt(5) - 1) / 2


def _amo(coupling, g=None, theta=0.0):
    return LO.OperatorSpec(LO.almost_mathieu(coupling, "golden", theta), g or LO.zero_perturbation())


def test_determinant_base_cases():
    seq = SB.determinant_sequence(_amo(2.0), 0.3, 5, 0)
    assert seq.K == 0 and seq.value(0) == 1.0 and seq.value(-1) == 0.0
    free = SB.determinant_sequence(FREE, 0.0, 0, 4)
    assert [free.value(k) for k in range(5)] == [1.0, 0.0, -1.0, 0.0, 1.0]
    with pytest.raises(ValueError):
        SB.determinant_sequence(FREE, 0.0, 0, -1)


def test_determinants_match_dense():
    rng = np.random.default_rng(8)
    for _ in range(20):
        op = _amo(float(rng.uniform(0.1, 4.0)), LO.exponential(1.0, 0.5), float(rng.random()))
        E, n, K = float(rng.uniform(-4, 4)), int(rng.integers(-10, 10)), int(rng.integers(1, 13))
        seq = SB.determinant_sequence(op, E, n, K)
        box = LO.build_box(op, n, n + K - 1)
        want = np.linalg.det(E * np.eye(K) - box.dense())
        assert seq.value(K) == pytest.approx(want, rel=1e-10, abs=1e-12)


def test_determinants_do_not_overflow():
    seq = SB.determinant_sequence(_amo(3.0), 0.0, 0, 20000)
    assert np.all(np.isfinite(seq.log_magnitudes[seq.signs != 0]))
    assert seq.log_magnitudes[-1] > 700


def test_sturm_count_against_eigenvalues():
    rng = np.random.default_rng(1)
    box = LO.box_from_diagonal(rng.uniform(-3, 3, 150))
    lo, hi = box.gershgorin()
    assert SB.sturm_count(box, lo - 1e-9) == 0
    assert SB.sturm_count(box, hi + 1e-9) == box.size
    ev = linalg.eigvalsh_tridiagonal(box.diagonal, np.ones(box.size - 1))
    for E in rng.uniform(lo, hi, 25):
        assert SB.sturm_count(box, E) == int(np.sum(ev < E))


def test_green_single_site():
    box = LO.box_from_diagonal([1.5], N1=7)
    g = SB.green_entry(box, 0.25, 7, 7)
    assert g.value == pytest.approx(1.0 / (1.5 - 0.25), rel=1e-14)


def test_green_matches_dense_inverse():
    rng = np.random.default_rng(4)
    box = LO.build_box(_amo(2.0, LO.exponential(1.0, 0.5), 0.3), -15, 24)
    ev = np.linalg.eigvalsh(box.dense())
    E = 0.5 * (ev[17] + ev[18])
    dense = np.linalg.inv(box.dense() - E * np.eye(box.size))
    for _ in range(30):
        n1, n2 = sorted(int(x) for x in rng.integers(-15, 25, 2))
        want = dense[box.index(n1), box.index(n2)]
        scale = np.max(np.abs(dense[:, box.index(n2)]))
        for method in ("cramer", "banded"):
            got = SB.green_entry(box, E, n1, n2, method=method)
            assert abs(got.value - want) <= 1e-8 * scale
        assert SB.green_entry(box, E, n2, n1).value == pytest.approx(SB.green_entry(box, E, n1, n2).value)


def test_green_matrix_log_signs():
    box = LO.build_box(_amo(1.0), 0, 29)
    E = 3.7
    logs, signs = SB.green_matrix_log(box, E)
    dense = np.linalg.inv(box.dense() - E * np.eye(box.size))
    np.testing.assert_allclose(signs * np.exp(logs), dense, rtol=1e-9, atol=1e-12 * np.max(np.abs(dense)))


def test_boundary_reconstruction():
    op = _amo(2.0, LO.exponential(1.0, 0.5), 0.3)
    box = LO.build_box(op, 0, 39)
    ev = np.linalg.eigvalsh(box.dense())
    E = 0.5 * (ev[20] + ev[21])
    V = op.site_values(-1, 42)
    u = np.empty(42)
    u[0], u[1] = 0.4, -1.0
    for j in range(1, 41):
        u[j + 1] = (E - V[j]) * u[j] - u[j - 1]
    rebuilt = SB.reconstruct_from_boundary(box, E, u[0], u[-1])
    assert np.max(np.abs(rebuilt - u[1:-1])) <= 1e-8 * np.max(np.abs(u))
    with pytest.raises(SB.SingularBox):
        SB.reconstruct_from_boundary(LO.build_box(FREE, 0, 2), 0.0, 1.0, 1.0)


def test_green_rejects_eigenvalue():
    box = LO.build_box(FREE, 0, 2)
    with pytest.raises(SB.SingularBox):
        SB.green_entry(box, 0.0, 0, 2)


def test_window_scan_outside_spectrum():
    ok = SB.window_scan(FREE, 3.0, 8, 64, decay_rate_target=0.5, slack=0.3)
    assert ok.passed
    assert len(ok.right) == 4 and len(ok.left) == 4
    assert ok.best_right.interval[0] > 64 and ok.best_left.interval[1] < -64
    assert ok.both_sides_passed
    too_fast = SB.window_scan(FREE, 3.0, 8, 64, decay_rate_target=2.0, slack=0.3)
    assert not too_fast.passed
    assert not too_fast.both_sides_passed
    with pytest.raises(ValueError):
        SB.window_scan(FREE, 3.0, 3, 64, 0.5, 0.3)
    with pytest.raises(ValueError):
        SB.window_scan(FREE, 3.0, 8, 63, 0.5, 0.3)


def test_window_scan_one_good_side_is_enough():
    good = SB.WindowResult((65, 72), -1.0, True, False)
    bad = SB.WindowResult((-72, -65), 2.0, False, False)
    rep = SB.WindowScanReport((good,), (bad,), good, bad)
    assert rep.passed and not rep.both_sides_passed
    neither = SB.WindowScanReport((bad,), (bad,), bad, bad)
    assert not neither.passed


def test_ids_of_free_laplacian():
    assert SB.ids(FREE, 0.0, 1000) == pytest.approx(0.5, abs=2e-3)
    curve = SB.ids_curve(FREE, [3.0, -3.0, 1.0], 1000)
    assert list(curve.energies) == [-3.0, 1.0, 3.0]
    assert curve.values[0] == 0.0 and curve.values[-1] == 1.0
    want = 1.0 - math.acos(0.5) / math.pi
    assert curve.values[1] == pytest.approx(want, abs=2e-3)


def test_ids_needs_unperturbed_operator():
    with pytest.raises(CO.PerturbationNotAllowed):
        SB.ids(_amo(3.0, LO.exponential(1.0, 1.0)), 0.0, 100)


def test_ids_constant_in_gap():
    op = _amo(3.0)
    gap = SB.spectral_gaps(op, 2000)[0]
    E = 0.5 * (gap.lower + gap.upper)
    values = [SB.ids(op, E, size) for size in (1000, 2000, 4000)]
    assert max(values) - min(values) <= 2e-3


def test_gap_labels():
    assert SB.gap_label(0.0, LO.parse_frequency("golden")) == 0
    assert SB.gap_label(GOLDEN, LO.parse_frequency("golden")) == 1
    assert SB.gap_label(1.0 - GOLDEN, GOLDEN) == -1
    with pytest.raises(SB.NoLabel):
        SB.gap_label(0.5, GOLDEN, k_max=5, tol=1e-3)
    with pytest.raises(ValueError):
        SB.gap_label(1.5, GOLDEN)


def test_widest_gap_is_labeled():
    gaps = SB.spectral_gaps(_amo(3.0), 2000)
    assert gaps and gaps[0].width >= gaps[-1].width
    assert gaps[0].width > 0.1
    k = SB.gap_label(gaps[0].ids, GOLDEN, k_max=5, tol=5e-3)
    assert 1 <= abs(k) <= 5


def test_eigenpairs_match_dense():
    rng = np.random.default_rng(21)
    box = LO.box_from_diagonal(rng.uniform(-2, 2, 200))
    ev = linalg.eigvalsh_tridiagonal(box.diagonal, np.ones(box.size - 1))
    pairs = SB.eigenpairs_in_window(box, -0.5, 0.5)
    want = ev[(ev > -0.5) & (ev < 0.5)]
    np.testing.assert_allclose([p.value for p in pairs], want, atol=1e-10)
    H = box.dense()
    for p in pairs:
        assert np.linalg.norm(H @ p.vector - p.value * p.vector) <= 1e-8 * box.norm_bound()
        assert np.linalg.norm(p.vector) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SB.eigenpairs_in_window(box, 1.0, 1.0)


def test_bulk_count_of_single_bound_state():
    op = LO.OperatorSpec(LO.zero_potential(), LO.table({0: -1.0}))
    box = LO.build_box(op, -200, 200)
    pairs = SB.eigenpairs_in_window(box, -2.5, -2.1)
    assert len(pairs) == 1 and pairs[0].value == pytest.approx(-math.sqrt(5.0), abs=1e-10)
    assert SB.bulk_eigenvalue_count(box, -2.5, -2.1, 50) == 1


def test_decay_rate_synthetic():
    n = np.arange(201)
    assert SB.decay_rate(np.exp(-0.7 * np.abs(n - 100)), 100) == pytest.approx(0.7, abs=1e-6)
    flat = np.random.default_rng(0).uniform(0.5, 1.5, 201)
    assert abs(SB.decay_rate(flat, 100)) < 0.05
    with pytest.raises(SB.TooShort):
        SB.decay_rate(np.ones(10), 5)


def test_spectral_sample_outside_spectrum():
    s = SB.spectral_sample(FREE, 3.0, k=1000, box_size=500)
    assert s.ids == 1.0 and s.gap_label == 0
    assert s.rotation == pytest.approx(0.0, abs=1e-3)
    assert s.lyapunov == pytest.approx(math.acosh(1.5), abs=0.01)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ✓ {name}")
    print("\nALLE ASSERTS OK ✓")
