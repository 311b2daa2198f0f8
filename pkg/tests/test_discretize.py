"""Torus quantization, dense assembly, weighted norms, resolvent sweeps."""

import numpy as np
import pytest

from dncalc import (InputError, ResourceError, Sector, TorusGrid, apply_pdo,
                    assemble_dense, bracket_power_symbol, constant_symbol,
                    diagonal_system, make_smoothing_perturbation,
                    matrix_system, multiplier_operator, parametrix_vs_resolvent,
                    ray_slope, resolvent_sweep, trig_bracket_symbol)
from dncalc import PlateParams, atil_matrix, plate_orders
from dncalc.discretize import perturbation_block_weighted_norm
from dncalc.report import dump_operator, load_operator
from dncalc.symbols import ScalarSymbol


@pytest.fixture(scope="module")
def grid32():
    return TorusGrid(n=1, N=32)


class TestTorusGrid:
    def test_power_of_two_enforced(self):
        with pytest.raises(InputError):
            TorusGrid(n=1, N=24)

    def test_frequencies_half_spectrum(self, grid32):
        fr = np.sort(grid32.frequencies()[:, 0])
        assert fr[0] == -16.0 and fr[-1] == 15.0
        assert len(set(fr.tolist())) == 32

    def test_n2_shapes(self):
        g = TorusGrid(n=2, N=8)
        assert g.x_points().shape == (64, 2)
        assert g.frequencies().shape == (64, 2)

    def test_synthesis_unitary(self, grid32):
        E = grid32.synthesis_matrix()
        P = grid32.npoints
        assert np.allclose(E @ np.conj(E) / P, np.eye(P), atol=1e-12)


class TestApplyPdo:
    def test_identity_multiplier(self, grid32):
        rng = np.random.default_rng(0)
        f = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        out = apply_pdo(constant_symbol(1.0), f, grid32)
        assert np.allclose(out, f, atol=1e-12)

    def test_bracket_on_plane_wave(self, grid32):
        x = grid32.x_points()[:, 0]
        f = np.exp(1j * x)
        out = apply_pdo(bracket_power_symbol(2.0), f, grid32)
        assert np.allclose(out, 2.0 * f, atol=1e-12)

    def test_pure_x_multiplier(self, grid32):
        x = grid32.x_points()[:, 0]
        f = np.exp(1j * 3 * x) + 0.5
        sym = ScalarSymbol(lambda xx, xi: np.sin(xx[..., 0]) + 0j, order=0.0)
        out = apply_pdo(sym, f, grid32)
        assert np.allclose(out, np.sin(x) * f, atol=1e-11)

    def test_n2_multiplier(self):
        g = TorusGrid(n=2, N=8)
        X = g.x_points()
        f = np.exp(1j * (X[:, 0] + 2 * X[:, 1]))
        out = apply_pdo(bracket_power_symbol(2.0, n=2), f, g)
        assert np.allclose(out, (1.0 + 1.0 + 4.0) * f, atol=1e-11)

    def test_system_apply(self, grid32):
        sysm = diagonal_system([bracket_power_symbol(2.0),
                                bracket_power_symbol(1.0)])
        rng = np.random.default_rng(1)
        f = rng.standard_normal((2, 32)) + 0j
        out = apply_pdo(sysm, f, grid32)
        assert np.allclose(out[0], apply_pdo(sysm.entries[0][0], f[0], grid32))

    def test_shape_validation(self, grid32):
        with pytest.raises(InputError):
            apply_pdo(constant_symbol(1.0), np.zeros(16, dtype=complex), grid32)


class TestAssembleDense:
    def test_identity_n2_grid(self):
        g = TorusGrid(n=1, N=2)
        op = assemble_dense(diagonal_system([constant_symbol(1.0)]), g)
        assert np.allclose(op.matrix, np.eye(2), atol=1e-14)

    def test_matches_apply_on_random_fields(self, grid32):
        sysm = diagonal_system([trig_bracket_symbol(2.0)])
        op = assemble_dense(sysm, grid32)
        rng = np.random.default_rng(2)
        for _ in range(10):
            v = rng.standard_normal(32) + 1j * rng.standard_normal(32)
            a = op.apply(v)
            b = apply_pdo(sysm.entries[0][0], v, grid32)
            assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(b)

    def test_multiplier_block_diagonal_in_fourier(self, grid32):
        params = PlateParams(eta=2.0, alpha=0.9, beta=0.75)
        l, m, _ = plate_orders(params)
        op = multiplier_operator(lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                                 grid32, shift=1.0, l=l, m=m).to_dense()
        H = op.to_fourier()
        P = grid32.npoints
        mask = np.zeros_like(H, dtype=bool)
        for i in range(3):
            for j in range(3):
                blk = H[i * P:(i + 1) * P, j * P:(j + 1) * P]
                mask[i * P:(i + 1) * P, j * P:(j + 1) * P] = \
                    ~np.eye(P, dtype=bool)
        off_mass = np.linalg.norm(H[mask])
        assert off_mass <= 1e-10 * np.linalg.norm(H)

    def test_cap(self, grid32):
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        with pytest.raises(ResourceError):
            assemble_dense(sysm, grid32, cap=16)

    def test_weighted_norm_duality(self, grid32):
        sysm = diagonal_system([trig_bracket_symbol(2.0)], l=[0.5], m=[1.5])
        op = assemble_dense(sysm, grid32, s=0.3)
        rng = np.random.default_rng(3)
        M = rng.standard_normal((32, 32)) + 1j * rng.standard_normal((32, 32))
        a = op.weighted_opnorm(M)
        b = op.weighted_opnorm_gen(M)
        assert a == pytest.approx(b, rel=1e-10)

    def test_dump_load_roundtrip(self, grid32, tmp_path):
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        op = assemble_dense(sysm, grid32)
        dump_operator(op, tmp_path / "op.bin", tmp_path / "op.json")
        mat, side = load_operator(tmp_path / "op.bin", tmp_path / "op.json")
        assert np.array_equal(mat, op.matrix)
        assert side["q"] == 1 and side["N"] == 32


class TestResolventSweep:
    def test_diagonal_oracle(self, grid32):
        # q=1 multiplier: resolvent norm is 1 / min_k |<xi_k>^2 - lam|
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        op = assemble_dense(sysm, grid32)
        sec = Sector(np.pi / 2)
        lams = np.array([-1.0, -4.0, 2j, -16.0 + 8j])
        sweep = resolvent_sweep(op, sec, lams)
        brs2 = grid32.brackets() ** 2
        for (lam, plain, wnorm, wb) in sweep.rows:
            want = 1.0 / np.min(np.abs(brs2 - lam))
            assert plain == pytest.approx(want, rel=1e-8)

    def test_singular_lambda_reports_finding(self, grid32):
        # spectrum on the negative axis hits a sampled lambda exactly
        sysm = diagonal_system([bracket_power_symbol(2.0, coef=-1.0)])
        op = assemble_dense(sysm, grid32)
        sec = Sector(np.pi / 2)
        sweep = resolvent_sweep(op, sec, np.array([-2.0, -3.0]))
        assert len(sweep.findings) >= 1
        assert sweep.findings[0]["kind"] == "ellipticity-violation"

    def test_lambda_outside_sector_rejected(self, grid32):
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        op = assemble_dense(sysm, grid32)
        with pytest.raises(InputError):
            resolvent_sweep(op, Sector(np.pi / 2), np.array([1.0]))

    def test_plate_refinement_stability(self):
        params = PlateParams(eta=2.0, alpha=0.9, beta=0.75)
        l, m, _ = plate_orders(params)
        sec = Sector(np.pi / 2)
        lams = np.concatenate([-(2.0 ** np.arange(0, 12)),
                               1j * 2.0 ** np.arange(0, 12)])
        maxima = []
        for N in (32, 64):
            g = TorusGrid(n=1, N=N)
            op = multiplier_operator(
                lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                g, shift=1.0, l=l, m=m).to_dense()
            maxima.append(resolvent_sweep(op, sec, lams).max_weighted_bracket)
        assert abs(maxima[1] - maxima[0]) <= 0.25 * maxima[0]

    def test_bisector_slope(self, grid32):
        params = PlateParams(eta=2.0, alpha=0.9, beta=0.75)
        l, m, _ = plate_orders(params)
        op = multiplier_operator(lambda xi: atil_matrix(params, float(np.linalg.norm(xi))),
                                 grid32, shift=1.0, l=l, m=m).to_dense()
        lams = -(2.0 ** np.arange(0, 13))
        sweep = resolvent_sweep(op, Sector(np.pi / 2), lams)
        assert ray_slope(sweep.rows) == pytest.approx(-1.0, abs=0.1)


class TestPerturbation:
    def test_block_norm_finite_with_shifted_weights(self, grid32):
        sysm = diagonal_system([bracket_power_symbol(2.0),
                                bracket_power_symbol(1.0)])
        rng = np.random.Generator(np.random.Philox(12))
        pert = make_smoothing_perturbation(sysm, grid32, epsilon=1.0, rng=rng)
        op = assemble_dense(sysm, grid32)
        for i in range(2):
            for j in range(2):
                v = perturbation_block_weighted_norm(pert, op, i, j)
                assert np.isfinite(v)

    def test_epsilon_positive(self, grid32):
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        rng = np.random.Generator(np.random.Philox(12))
        with pytest.raises(InputError):
            make_smoothing_perturbation(sysm, grid32, epsilon=0.0, rng=rng)


class TestParametrixVsResolvent:
    def test_constant_coefficient_difference_vanishes(self, grid32):
        # the base term quantizes to the exact inverse on the torus
        sysm = diagonal_system([bracket_power_symbol(2.0)])
        lams = np.array([-2.0, -8.0, 4j])
        res = parametrix_vs_resolvent(sysm, grid32, Sector(np.pi / 2), 1, lams)
        for _, v in res.rows:
            assert v <= 1e-10

    def test_variable_slope(self, grid32):
        sysm = diagonal_system([trig_bracket_symbol(2.0)])
        lams = -(2.0 ** np.arange(2, 13))
        res = parametrix_vs_resolvent(sysm, grid32, Sector(np.pi / 2), 2, lams)
        assert res.fitted_slope <= -1.25

    def test_with_smoothing_perturbation(self, grid32):
        sysm = diagonal_system([trig_bracket_symbol(2.0)])
        rng = np.random.Generator(np.random.Philox(8))
        pert = make_smoothing_perturbation(sysm, grid32, epsilon=1.0, rng=rng,
                                           amplitude=0.05)
        lams = -(2.0 ** np.arange(2, 13))
        res = parametrix_vs_resolvent(sysm, grid32, Sector(np.pi / 2), 2, lams,
                                      perturbation=pert)
        assert res.fitted_slope <= -1.05
