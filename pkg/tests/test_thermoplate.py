"""Plate system builder, closed forms, parameter region, spectral evolution."""

import numpy as np
import pytest
import scipy.linalg

from dncalc import (InputError, PlateParams, Sector, TorusGrid, atil_matrix,
                    build_plate_system, evolve_plate, eval_matrix,
                    first_order_matrix, max_spectral_angle, plate_minor_dets,
                    plate_orders, suggest_sector_angle, trajectory_energy)
from dncalc import minor_pencil_value

X0 = np.array([0.0])


def xi1(v):
    return np.array([float(v)])


PARAMS = PlateParams(eta=2.0, alpha=0.9, beta=0.75)


class TestOrders:
    def test_reference_parameters(self):
        l, m, r = plate_orders(PARAMS)
        assert m == pytest.approx((0.6, 0.0, -0.4))
        assert l == pytest.approx((3.0, 2.4, 2.0))
        assert r == pytest.approx((3.6, 2.4, 1.6))

    def test_classical_parameters_warn_and_tie(self):
        classical = PlateParams(eta=2.0, alpha=0.5, beta=0.5)
        l, m, r = plate_orders(classical)
        assert m == pytest.approx((0.0, 0.0, 0.0))
        assert l == pytest.approx((2.0, 2.0, 2.0))
        assert r == pytest.approx((2.0, 2.0, 2.0))
        with pytest.warns(UserWarning, match="parabolic"):
            ps = build_plate_system(classical)
        # classical block structure at |xi| = 1
        got = eval_matrix(build_plate_system(classical, excised=False).system,
                          X0, xi1(1.0))
        want = np.array([[1, 1, 0], [-1, 0, 1], [0, -1, 0]], dtype=complex)
        assert np.allclose(got, want)

    def test_parabolic_flag_iff_strict_orders(self):
        for a, b, flag in ((0.9, 0.75, True), (0.7, 0.75, False),
                           (0.9, 0.7, False), (1.0, 0.76, True)):
            p = PlateParams(eta=2.0, alpha=a, beta=b)
            assert p.parabolic == flag
            _, _, r = plate_orders(p)
            strict = r[0] > r[1] > r[2] > 0
            assert strict == flag

    def test_parameter_validation(self):
        with pytest.raises(InputError):
            PlateParams(eta=0.0)
        with pytest.raises(InputError):
            PlateParams(alpha=1.5)


class TestBuilder:
    def test_excised_zero_at_origin(self):
        ps = build_plate_system(PARAMS)
        assert np.abs(eval_matrix(ps.system, X0, xi1(0.0))).max() == 0.0
        assert np.abs(eval_matrix(ps.system, X0, xi1(0.9))).max() == 0.0

    def test_entry_sign_pattern(self):
        ps = build_plate_system(PARAMS, excised=False)
        A = eval_matrix(ps.system, X0, xi1(2.0)).real
        assert A[0, 1] > 0 and A[1, 0] < 0
        assert A[1, 2] > 0 and A[2, 1] < 0
        assert A[0, 2] == 0 and A[2, 0] == 0 and A[1, 1] == 0 and A[2, 2] == 0

    def test_state_vector_metadata(self):
        ps = build_plate_system(PARAMS)
        assert ps.state_vector == ("w", "v_t", "L^(1/2) v")

    def test_first_order_matrix_damping(self):
        assert np.allclose(first_order_matrix(PARAMS, 2.0),
                           atil_matrix(PARAMS, 2.0))
        damped = PlateParams(eta=2.0, alpha=0.9, beta=0.75, damping=2.0)
        M = first_order_matrix(damped, 2.0)
        assert np.allclose(M[0], atil_matrix(PARAMS, 2.0)[0] / 2.0)
        assert np.allclose(M[1:], atil_matrix(PARAMS, 2.0)[1:])


class TestMinorDets:
    def test_kappa3_at_zero_lambda(self):
        _, _, r = plate_orders(PARAMS)
        for s in (0.5, 1.0, 3.0):
            got = plate_minor_dets(PARAMS, xi1(s), 0.0, 3)
            assert got == pytest.approx(s ** sum(r), rel=1e-12)

    def test_kappa2_at_unit_radius(self):
        for lam in (0.0, 1j, -2.0 + 0.5j):
            assert plate_minor_dets(PARAMS, xi1(1.0), lam, 2) == \
                pytest.approx(1.0 - lam)

    def test_cross_validation_hundred_draws(self):
        un = build_plate_system(PARAMS, excised=False).system
        rng = np.random.Generator(np.random.Philox(123))
        worst = 0.0
        for _ in range(100):
            s = rng.uniform(0.5, 8.0)
            lam = complex(rng.normal(), rng.normal()) * rng.uniform(0.5, 4.0)
            kappa = int(rng.integers(1, 4))
            closed = plate_minor_dets(PARAMS, xi1(s), lam, kappa)
            generic = minor_pencil_value(un, X0, xi1(s), lam, kappa)
            worst = max(worst, abs(closed - generic) / max(abs(generic), 1e-300))
        assert worst <= 1e-12

    def test_kappa_validation(self):
        with pytest.raises(InputError):
            plate_minor_dets(PARAMS, xi1(1.0), 0.0, 4)


class TestSpectralRegion:
    def test_wedge_inequality_randomized(self):
        # |s - lam|^2 >= min(1, 1 - cos theta) (s^2 + |lam|^2) on the sector
        rng = np.random.Generator(np.random.Philox(999))
        for theta in (np.pi / 3, np.pi / 2, 3 * np.pi / 4):
            c = min(1.0, 1.0 - np.cos(theta))
            s = rng.uniform(1e-3, 1e3, size=10_000)
            radii = rng.uniform(0.0, 1e3, size=10_000)
            phis = rng.uniform(theta, 2 * np.pi - theta, size=10_000)
            lam = radii * np.exp(1j * phis)
            lhs = np.abs(s - lam) ** 2
            rhs = c * (s ** 2 + np.abs(lam) ** 2)
            assert int(np.sum(lhs < rhs * (1 - 1e-12))) == 0

    def test_shifted_spectrum_avoids_sector(self):
        shift = 1.0
        theta = suggest_sector_angle(PARAMS, shift=shift, margin=0.05)
        sec = Sector(theta)
        for e in np.arange(-4, 9, 0.5):
            mu = np.linalg.eigvals(atil_matrix(PARAMS, 2.0 ** e) + shift * np.eye(3))
            for m in mu:
                assert not sec.contains(m)

    def test_unshifted_angle_approaches_half_pi(self):
        ang = max_spectral_angle(PARAMS)
        assert np.pi / 2 - 0.01 < ang < np.pi / 2 + 1e-9


class TestEvolve:
    @pytest.fixture(scope="class")
    def grid(self):
        return TorusGrid(n=1, N=32)

    def test_initial_condition_exact(self, grid):
        rng = np.random.default_rng(4)
        u0 = rng.standard_normal((3, 32)) + 1j * rng.standard_normal((3, 32))
        traj = evolve_plate(PARAMS, grid, u0, T=0.5, steps=8)
        back = traj.physical(0)
        assert np.allclose(back, u0, atol=1e-12)

    def test_eigenmode_decay(self, grid):
        shift = 0.7
        M = atil_matrix(PARAMS, 2.0) + shift * np.eye(3)
        w, V = np.linalg.eig(M)
        k = int(np.flatnonzero(np.isclose(grid.frequencies()[:, 0], 2.0))[0])
        x = grid.x_points()[:, 0]
        u0 = np.einsum("c,p->cp", V[:, 0], np.exp(1j * 2.0 * x))
        T = 0.8
        traj = evolve_plate(PARAMS, grid, u0, T=T, steps=16, shift=shift)
        got = traj.coeffs[-1][:, k]
        want = V[:, 0] * grid.npoints * np.exp(-T * w[0])
        assert np.abs(got - want).max() <= 1e-8 * np.abs(want).max()

    def test_step_halving_with_forcing(self, grid):
        x = grid.x_points()[:, 0]
        u0 = np.stack([np.cos(x), np.sin(x), 0.5 * np.cos(2 * x)]).astype(complex)

        def forcing(t):
            return np.stack([np.sin(x) * np.cos(3.0 * t),
                             0.2 * np.cos(x) * np.sin(t),
                             0.1 * np.sin(2 * x)]).astype(complex)

        a = evolve_plate(PARAMS, grid, u0, forcing=forcing, T=1.0, steps=64)
        b = evolve_plate(PARAMS, grid, u0, forcing=forcing, T=1.0, steps=128)
        rel = np.linalg.norm(a.coeffs[-1] - b.coeffs[-1]) / np.linalg.norm(b.coeffs[-1])
        assert rel <= 1e-6

    def test_energy_monotone(self, grid):
        rng = np.random.default_rng(5)
        for shift in (0.5, 1.0):
            u0 = rng.standard_normal((3, 32)) + 1j * rng.standard_normal((3, 32))
            traj = evolve_plate(PARAMS, grid, u0, T=2.0, steps=64, shift=shift)
            en = trajectory_energy(traj)
            assert np.all(np.diff(en) <= 1e-10 * en[:-1] + 1e-300)

    def test_input_validation(self, grid):
        with pytest.raises(InputError):
            evolve_plate(PARAMS, grid, np.zeros((2, 32), dtype=complex))
        with pytest.raises(InputError):
            evolve_plate(PARAMS, grid, np.zeros((3, 32), dtype=complex), steps=0)
