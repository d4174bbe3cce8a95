"""Tests: lattice_ops (potentialer, perturbationer, kasser, frekvenser)."""
import math
import os
import sys
from fractions import Fraction

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import lattice_ops as LO

GOLDEN = (math.sqrt(5) - 1) / 2


def test_zero_operator_is_zero():
    op = LO.OperatorSpec(LO.zero_potential())
    for n in (-7, 0, 3, 10 ** 6):
        assert LO.eval_site(op, n) == 0.0


def test_constant_orbit():
    op = LO.OperatorSpec(LO.almost_mathieu(1.0, "0", 0.0))
    assert LO.eval_site(op, 5) == pytest.approx(2.0, abs=1e-15)


def test_appendix_tail_values():
    op = LO.appendix_operator()
    assert LO.eval_site(op, 2) == pytest.approx(-2.0 / 3.0, rel=1e-15)
    box = LO.build_box(op, 2, 4)
    np.testing.assert_allclose(box.diagonal, [-2 / 3, -1 / 4, -2 / 15], rtol=1e-15)


def test_appendix_interior_completion():
    op = LO.appendix_operator(u0=1.0)
    assert [LO.eval_site(op, n) for n in (-1, 0, 1)] == [2.5, 2.0, 0.5]
    assert LO.eval_site(LO.appendix_operator(half_line=True), 1) == 1.5
    with pytest.raises(LO.InvalidPotential):
        LO.appendix_operator(u0=0.0)


def test_box_of_zero_and_amo():
    assert list(LO.build_box(LO.OperatorSpec(LO.zero_potential()), 0, 2).diagonal) == [0.0, 0.0, 0.0]
    box = LO.build_box(LO.OperatorSpec(LO.almost_mathieu(1.0, "golden", 0.0)), 0, 1)
    np.testing.assert_allclose(box.diagonal, [2.0, 2.0 * math.cos(2 * math.pi * GOLDEN)], atol=1e-14)
    d = box.dense()
    assert d.shape == (2, 2) and d[0, 1] == d[1, 0] == 1.0


def test_empty_box_rejected():
    with pytest.raises(LO.InvalidInterval):
        LO.build_box(LO.OperatorSpec(LO.zero_potential()), 3, 2)
    box = LO.build_box(LO.OperatorSpec(LO.zero_potential()), -2, 2)
    assert box.index(-2) == 0 and box.index(2) == 4
    with pytest.raises(LO.InvalidInterval):
        box.index(3)


def test_frequency_tokens():
    g = LO.parse_frequency("golden")
    assert g.hi == 0.6180339887498949
    assert LO.parse_frequency("sqrt2m1").hi == pytest.approx(math.sqrt(2) - 1, abs=1e-16)
    third = LO.parse_frequency("1/3")
    assert third.rational and third.exact == Fraction(1, 3)
    assert LO.parse_frequency(1.25).hi == 0.25
    with pytest.raises(LO.InvalidPotential):
        LO.parse_frequency("pi-ish")


def test_rational_dependence():
    assert LO.is_rationally_dependent("1/3")
    assert not LO.is_rationally_dependent("golden")
    assert LO.is_rationally_dependent(["golden", 1.0 - GOLDEN])
    assert not LO.is_rationally_dependent(["golden", "sqrt2m1"])


def test_continued_fraction_of_golden():
    assert LO.continued_fraction(LO.parse_frequency("golden"), 20) == [1] * 20
    assert LO.convergent_denominators(LO.parse_frequency("golden"), 8) == [1, 2, 3, 5, 8, 13, 21, 34]
    assert LO.continued_fraction(LO.parse_frequency("3/7")) == [2, 3]


def test_orbit_phases_exact_for_large_n():
    a = LO.parse_frequency("golden")
    exact_alpha = Fraction(a.hi) + Fraction(a.lo)
    ns = np.array([1, 12345, 10 ** 6, 10 ** 7])
    got = LO.orbit_phases((a,), (0.125,), ns)[:, 0]
    for n, x in zip(ns, got):
        want = Fraction(1, 8) + int(n) * exact_alpha
        want -= math.floor(want)
        assert abs(x - float(want)) < 1e-12


def test_phase_covariance():
    pot = LO.almost_mathieu(2.0, "golden", 0.3)
    m = 17
    ns = np.arange(-20, 20)
    shifted = pot.with_theta(0.3 + m * GOLDEN)
    np.testing.assert_allclose(pot.values(ns + m), shifted.values(ns), atol=1e-12)


def test_fourier_block_must_be_real_symmetric():
    with pytest.raises(LO.InvalidPotential):
        LO.PotentialSpec(fourier_coeffs=(((1,), 1.0), ((-1,), 0.5)), alpha=("golden",))
    with pytest.raises(LO.InvalidPotential):
        LO.PotentialSpec(fourier_coeffs=(((1, 0), 1.0),), alpha=("golden",))


def test_imaginary_part_negligible():
    rng = np.random.default_rng(3)
    coeffs = []
    for k in range(1, 6):
        c = complex(rng.standard_normal(), rng.standard_normal())
        coeffs += [((k, 0), c), ((-k, 0), c.conjugate()), ((0, k), c), ((0, -k), c.conjugate())]
    pot = LO.PotentialSpec(fourier_coeffs=tuple(coeffs), alpha=("golden", "sqrt2m1"), theta=(0.1, 0.7))
    x = LO.orbit_phases(pot.alpha, pot.theta, np.arange(-500, 500))
    assert pot.imag_residual(x) < 1e-12
    assert np.max(np.abs(pot.values(np.arange(-500, 500)))) <= pot.sup_norm_bound() + 1e-12
    assert pot.truncated(2).sup_norm_bound() < pot.sup_norm_bound()


def test_exponential_first_moment_matches_direct_sum():
    for C, s in ((1.0, 1.0), (0.3, 0.25), (2.0, 3.0)):
        g = LO.exponential(C, s)
        M = math.ceil(50 / s)
        ns = np.arange(-M, M + 1)
        direct = float(np.sum(np.abs(ns) * g.values(ns)))
        assert g.first_moment() == pytest.approx(direct, rel=1e-10)
        assert g.l1_norm() == pytest.approx(float(np.sum(g.values(ns))), rel=1e-10)
        assert g.in_l11


def test_l11_flags():
    assert LO.power_law(1.0, 2.5).in_l11
    assert not LO.power_law(1.0, 2.0).in_l11
    assert not LO.power_law(1.0, 1.5).in_l11
    assert LO.table({0: -1.0, 3: 2.0}).in_l11
    assert LO.zero_perturbation().in_l11
    assert not LO.appendix_operator().perturbation.in_l11
    assert math.isinf(LO.power_law(1.0, 0.8).l1_norm())


def test_perturbation_values():
    assert LO.power_law(2.0, 1.0).values([0, 1, -3]).tolist() == [2.0, 1.0, 0.5]
    t = LO.table({-1: 4.0, 2: -1.0})
    assert t.values([-2, -1, 0, 2, 5]).tolist() == [0.0, 4.0, 0.0, -1.0, 0.0]
    assert t.support() == (-1, 2)
    with pytest.raises(LO.InvalidPotential):
        LO.exponential(-1.0, 1.0)
    with pytest.raises(LO.InvalidPotential):
        LO.PerturbationSpec("gaussian")


def test_site_values_are_bit_reproducible():
    op = LO.OperatorSpec(LO.almost_mathieu(3.0, "golden", 0.2), LO.exponential(1.0, 0.5))
    a = op.site_values(-100, 300)
    b = op.site_values(-100, 300)
    assert a.tobytes() == b.tobytes()
    assert op.unperturbed().perturbation.is_zero


def test_operator_dict_round_trip():
    op = LO.OperatorSpec(LO.almost_mathieu(3.0, "1/3", 0.2), LO.table({0: -1.0}))
    back = LO.operator_from_dict(LO.operator_to_dict(op))
    assert LO.operator_to_dict(back) == LO.operator_to_dict(op)
    assert back.potential.alpha[0].token == "1/3"
    np.testing.assert_array_equal(back.site_values(-5, 11), op.site_values(-5, 11))


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"  ✓ {name}")
    print("\nALLE ASSERTS OK ✓")
