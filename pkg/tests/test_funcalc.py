"""Dunford quadrature, matrix oracle, bound probe, pac-man calculus."""

import numpy as np
import pytest

from dncalc import (ContourError, EvaluationError, HFunction, Sector,
                    TorusGrid, bracket_power_symbol, diagonal_system,
                    dunford_eval, dunford_eval_family, dunford_on_contour,
                    estimate_sup_norm, hfun_product, hinfty_bound_probe,
                    make_sector_contour, matrix_holo_calc, multiplier_operator,
                    pacman_symbol_calc, random_conjugator,
                    rational_test_family, trig_bracket_symbol)
from dncalc import PlateParams, atil_matrix, plate_orders


def f_inv(lam):
    return 1.0 / (1.0 + np.asarray(lam, dtype=complex))


@pytest.fixture(scope="module")
def plate_mop():
    params = PlateParams(eta=2.0, alpha=0.9, beta=0.75)
    l, m, _ = plate_orders(params)
    grid = TorusGrid(n=1, N=32)
    return multiplier_operator(
        lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
        grid, shift=1.0, l=l, m=m)


@pytest.fixture(scope="module")
def family8():
    return rational_test_family(8)


class TestMatrixHoloCalc:
    def test_diagonal(self):
        f = HFunction(f_inv, 1.0)
        got = matrix_holo_calc(f, np.diag([1.0, 2.0]).astype(complex))
        assert np.allclose(got, np.diag([0.5, 1.0 / 3.0]))

    def test_scalar(self):
        f = HFunction(lambda z: np.asarray(z, complex) / (1 + np.asarray(z, complex)) ** 2, 1.0)
        got = matrix_holo_calc(f, np.array([[1.0]], dtype=complex))
        assert got[0, 0] == pytest.approx(0.25)

    def test_jordan_block(self):
        # f(J) = f(1) I + f'(1) N with f'(1) = -1/4
        f = HFunction(f_inv, 1.0)
        J = np.array([[1.0, 1.0], [0.0, 1.0]], dtype=complex)
        got = matrix_holo_calc(f, J)
        want = np.array([[0.5, -0.25], [0.0, 0.5]])
        assert np.allclose(got, want, atol=1e-9)

    def test_pole_on_spectrum(self):
        f = HFunction(f_inv, 1.0)
        with pytest.raises(EvaluationError):
            matrix_holo_calc(f, np.array([[-1.0]], dtype=complex))


class TestDunford:
    def test_zero_function(self, plate_mop):
        z = HFunction(lambda lam: np.zeros_like(np.asarray(lam, complex)), 1.0)
        fop, meta = dunford_eval(plate_mop, z)
        assert np.abs(fop).max() == 0.0

    def test_scalar_multiplier_oracle(self):
        grid = TorusGrid(n=1, N=32)
        mop = multiplier_operator(diagonal_system([bracket_power_symbol(2.0)]),
                                  grid, shift=0.0)
        f = HFunction(lambda z: np.asarray(z, complex) / (1 + np.asarray(z, complex)) ** 2, 1.0)
        fop, meta = dunford_eval(mop, f)
        brs2 = grid.brackets() ** 2
        want = brs2 / (1.0 + brs2) ** 2
        got = fop[:, 0, 0]
        assert np.abs(got - want).max() <= 1e-6 * np.abs(want).max()
        assert meta["rel_change"] <= 1e-6

    def test_family_vs_modewise_oracle(self, plate_mop, family8):
        ops, meta = dunford_eval_family(plate_mop, family8)
        worst = 0.0
        for f, fop in zip(family8, ops):
            oracle = np.stack([matrix_holo_calc(f, plate_mop.blocks[k])
                               for k in range(fop.shape[0])])
            rel = np.abs(fop - oracle).max() / np.abs(oracle).max()
            worst = max(worst, rel)
        assert worst <= 1e-6

    def test_multiplicativity(self, plate_mop, family8):
        f1, f2 = family8[0], family8[1]
        f12 = hfun_product(f1, f2)
        contour = make_sector_contour(np.pi / 2).refined().refined()
        a1, a2, a12 = dunford_on_contour(plate_mop, [f1, f2, f12], contour)
        prod = np.einsum("kij,kjl->kil", a1, a2)
        sup1 = estimate_sup_norm(f1, np.pi / 2)
        sup2 = estimate_sup_norm(f2, np.pi / 2)
        defect = plate_mop.weighted_blocknorm(a12 - prod)
        assert defect <= 1e-6 * sup1 * sup2

    def test_tail_bound_recorded(self, plate_mop, family8):
        _, meta = dunford_eval_family(plate_mop, family8[:2])
        assert set(meta["tail_bounds"]) == {"f1", "f2"}
        assert all(v >= 0 for v in meta["tail_bounds"].values())


class TestHinftyProbe:
    def test_identity_scalar_ratio_half(self):
        # A = 1: ||f(A)|| = |f(1)| = 1/4 while sup over the half-plane is 1/2
        grid = TorusGrid(n=1, N=4)
        mop = multiplier_operator(diagonal_system([bracket_power_symbol(0.0)]),
                                  grid)
        f = HFunction(f_inv, 1.0)
        res = hinfty_bound_probe(mop, family=[f], theta=np.pi / 2)
        assert res.per_function[0]["sup_norm"] == pytest.approx(1.0, rel=1e-3)
        assert res.M_estimate == pytest.approx(0.5, rel=1e-3)

    def test_plate_bound_finite_and_above_half(self, plate_mop):
        res = hinfty_bound_probe(plate_mop)
        assert np.isfinite(res.M_estimate)
        assert res.M_estimate >= 0.5
        assert res.metadata["rel_change"] <= 1e-6

    def test_bound_law_extension(self, plate_mop, family8):
        base = hinfty_bound_probe(plate_mop, family=family8)
        extended = hinfty_bound_probe(plate_mop,
                                      family=rational_test_family(12))
        assert extended.M_estimate <= 2.0 * base.M_estimate

    def test_conjugation_invariance(self, plate_mop, family8):
        dense = plate_mop.to_dense()
        T = dense.matrix
        rng = np.random.Generator(np.random.Philox(77))
        V = random_conjugator(rng, T.shape[0])
        Vinv = np.linalg.inv(V)
        contour = make_sector_contour(np.pi / 2).refined().refined()
        base = dunford_on_contour(T, family8[:3], contour)
        conj = dunford_on_contour(Vinv @ T @ V, family8[:3], contour)
        for fb, fc in zip(base, conj):
            defect = np.linalg.norm(fc - Vinv @ fb @ V, 2)
            assert defect <= 1e-8


class TestSupNorm:
    def test_half_plane_sup_of_f1(self):
        f = rational_test_family(1)[0]
        # sup of |lam / (1+lam)^2| over the closed right half-plane is 1/2
        assert estimate_sup_norm(f, np.pi / 2) == pytest.approx(0.5, rel=1e-3)

    def test_interior_max_found(self):
        f = HFunction(f_inv, 1.0)
        # sup of 1/|1+lam| over the right half-plane is 1 (as lam -> 0)
        assert estimate_sup_norm(f, np.pi / 2) == pytest.approx(1.0, rel=1e-3)


class TestPacman:
    def test_cauchy_oracle(self, family8):
        sym = bracket_power_symbol(2.0)
        xi = 2.0 ** np.arange(0, 7)[:, None]
        f = family8[0]
        res = pacman_symbol_calc(sym, f, xi)
        for xin, v, _ in res.samples:
            assert v == pytest.approx(complex(f(1.0 + xin ** 2)), abs=1e-8)

    def test_zero_function(self):
        sym = bracket_power_symbol(2.0)
        z = HFunction(lambda lam: np.zeros_like(np.asarray(lam, complex)), 1.0,
                      sup_norm=1.0)
        res = pacman_symbol_calc(sym, z, 2.0 ** np.arange(0, 4)[:, None])
        assert all(abs(v) == 0.0 for _, v, _ in res.samples)

    def test_uniform_bound_over_family(self, family8):
        # |a_f| <= C ||f||_inf uniformly over the family template
        sym = trig_bracket_symbol(2.0)
        xi = 2.0 ** np.arange(0, 7)[:, None]
        ratios = [pacman_symbol_calc(sym, f, xi).bound_ratio for f in family8]
        assert max(ratios) <= 3.0

    def test_radius_failure(self, family8):
        # mis-declared order with a seminorm grid that underestimates the
        # growth: the radius c <xi>^1 cannot enclose <xi>^4 even after the
        # single allowed growth step
        from dncalc import SampleGrid
        lying = bracket_power_symbol(4.0)
        object.__setattr__(lying, "order", 1.0)
        small = SampleGrid(np.zeros((1, 1)), np.array([[1.0]]))
        with pytest.raises(ContourError):
            pacman_symbol_calc(lying, family8[0], np.array([[8.0]]),
                               seminorm_grid=small)
