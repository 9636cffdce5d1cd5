import math

import numpy as np
import pytest

from heatloc.field import (
    KernelParams,
    SparseMeasure,
    add_noise,
    autocorrelation,
    evaluate_field,
    green_kernel,
    tv_norm,
)


class TestGreenKernel:
    def test_zero_displacement_2d(self):
        assert green_kernel((0.0, 0.0), 0.5, KernelParams(2)) == pytest.approx(1 / (2 * math.pi))

    def test_zero_displacement_1d(self):
        assert green_kernel(0.0, 1.0, KernelParams(1)) == pytest.approx((4 * math.pi) ** -0.5)

    def test_unit_exponent_1d(self):
        expected = (4 * math.pi) ** -0.5 * math.exp(-1.0)
        assert green_kernel(math.sqrt(2.0), 1.0, KernelParams(1)) == pytest.approx(expected, rel=1e-12)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            green_kernel(0.0, 0.0, KernelParams(1))
        with pytest.raises(ValueError):
            green_kernel(0.0, -1.0, KernelParams(1))

    def test_positive_and_symmetric(self):
        rng = np.random.default_rng(0)
        for dim in (1, 2):
            params = KernelParams(dim)
            for _ in range(50):
                x = rng.standard_normal(dim) * 3
                t = float(rng.uniform(0.05, 4.0))
                v = green_kernel(x, t, params)
                assert v > 0
                assert v == green_kernel(-x, t, params)

    def test_mass_matches_convention(self):
        # with the 2t exponent convention the total mass is 2**(-dim/2), not 1
        for dim, t in [(1, 0.7), (2, 0.3)]:
            params = KernelParams(dim)
            half = 10.0 * math.sqrt(t)
            n = 4001
            axis = np.linspace(-half, half, n)
            w = np.gradient(axis)
            if dim == 1:
                vals = green_kernel(axis.reshape(-1, 1), t, params)
                integral = float(vals @ w)
            else:
                xx, yy = np.meshgrid(axis, axis, indexing="ij")
                pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
                vals = green_kernel(pts, t, params).reshape(n, n)
                integral = float(w @ vals @ w)
            assert integral == pytest.approx(2.0 ** (-dim / 2), abs=1e-8)


class TestSparseMeasure:
    def test_rejects_duplicate_positions(self):
        with pytest.raises(ValueError):
            SparseMeasure.from_1d([1.0, 1.0], [1.0, 2.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SparseMeasure.from_1d([np.inf], [1.0])
        with pytest.raises(ValueError):
            SparseMeasure.from_1d([0.0], [np.nan])

    def test_empty_measure(self):
        mu = SparseMeasure.empty(2)
        assert mu.n_atoms == 0 and mu.dim == 2 and mu.tv_norm() == 0.0


class TestEvaluateField:
    def test_single_atom_at_center(self):
        mu = SparseMeasure.from_1d([0.3], [1.0])
        assert evaluate_field(mu, 0.3, 1.0) == pytest.approx((4 * math.pi) ** -0.5)

    def test_empty_measure_is_zero(self):
        mu = SparseMeasure.empty(1)
        assert evaluate_field(mu, 0.2, 0.5) == 0.0
        assert np.all(evaluate_field(mu, np.linspace(0, 1, 7).reshape(-1, 1), 0.5) == 0.0)

    def test_two_atoms_against_quadrature_oracle(self):
        # smooth the atoms with a narrow Gaussian and convolve with the kernel
        # by a fine Riemann sum; the smoothing bias is far below the tolerance
        positions = [0.0, 2 * math.pi / 3]
        mu = SparseMeasure.from_1d(positions, [1.0, 1.0])
        t = 0.5
        x_eval = math.pi / 3
        eta = 1e-4
        grid = np.arange(-8.0, 8.0 + math.pi, 2e-5)
        density = sum(
            np.exp(-((grid - p) ** 2) / (2 * eta**2)) / (eta * math.sqrt(2 * math.pi))
            for p in positions
        )
        kernel = (4 * math.pi * t) ** -0.5 * np.exp(-((x_eval - grid) ** 2) / (2 * t))
        oracle = float(np.trapezoid(kernel * density, grid))
        value = evaluate_field(mu, x_eval, t)
        assert value == pytest.approx(oracle, rel=1e-6)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        pos = rng.uniform(-2, 2, size=(4, 2))
        a1 = rng.standard_normal(4)
        a2 = rng.standard_normal(4)
        mu1 = SparseMeasure(pos, a1)
        mu2 = SparseMeasure(pos, a2)
        alpha, beta = 0.7, -1.3
        combo = SparseMeasure(pos, alpha * a1 + beta * a2)
        x = rng.uniform(-2, 2, size=(10, 2))
        lhs = evaluate_field(combo, x, 0.4)
        rhs = alpha * evaluate_field(mu1, x, 0.4) + beta * evaluate_field(mu2, x, 0.4)
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-15)


class TestTvNorm:
    def test_examples(self):
        assert tv_norm(SparseMeasure.from_1d([0, 1, 2], [1.0, -2.0, 3.0])) == 6.0
        assert tv_norm(SparseMeasure.from_1d([0.5], [0.25])) == 0.25
        assert tv_norm(SparseMeasure.from_1d([1.0, 2.0, 3.0], [1.0, 1.0, 1.0])) == 3.0

    def test_norm_properties(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            n = int(rng.integers(1, 6))
            pos = np.cumsum(rng.uniform(0.1, 1.0, n))
            a1, a2 = rng.standard_normal(n), rng.standard_normal(n)
            mu1, mu2 = SparseMeasure.from_1d(pos, a1), SparseMeasure.from_1d(pos, a2)
            summed = SparseMeasure.from_1d(pos, a1 + a2)
            assert tv_norm(summed) <= tv_norm(mu1) + tv_norm(mu2) + 1e-12
            c = float(rng.standard_normal())
            assert tv_norm(SparseMeasure.from_1d(pos, c * a1)) == pytest.approx(abs(c) * tv_norm(mu1))


class TestAutocorrelation:
    def test_examples(self):
        lam = 0.37
        assert autocorrelation(0.0, lam) == 1.0
        assert autocorrelation(math.sqrt(4 * lam * math.log(2)), lam) == pytest.approx(0.5)
        assert autocorrelation(2 * math.sqrt(lam), lam) == pytest.approx(math.exp(-1))

    def test_monotone_in_radius_and_width(self):
        radii = np.linspace(0.0, 3.0, 20)
        vals = [autocorrelation(r, 0.2) for r in radii]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        for r in (0.5, 1.0):
            assert autocorrelation(r, 0.1) < autocorrelation(r, 0.2)

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError):
            autocorrelation(1.0, 0.0)


class TestAddNoise:
    def test_infinite_snr_identity(self):
        b = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(add_noise(b, math.inf, 3), b)

    def test_deterministic(self):
        b = np.linspace(1, 2, 64)
        np.testing.assert_array_equal(add_noise(b, 20.0, 99), add_noise(b, 20.0, 99))
        assert not np.array_equal(add_noise(b, 20.0, 99), add_noise(b, 20.0, 100))

    def test_empirical_snr(self):
        rng = np.random.default_rng(7)
        b = rng.standard_normal(1024)
        sig = float(b @ b)
        noise_energy = 0.0
        for seed in range(100):
            e = add_noise(b, 40.0, seed) - b
            noise_energy += float(e @ e)
        snr_emp = 10 * math.log10(100 * sig / noise_energy)
        assert abs(snr_emp - 40.0) < 1.0

    def test_zero_signal_rejected(self):
        with pytest.raises(ValueError):
            add_noise(np.zeros(8), 10.0, 0)
