import math

import numpy as np
import pytest

from heatloc.certificates import (
    CertConfig,
    build_certificate_g,
    calibrated_certificate,
    jackson_coefficients,
    jackson_kernel,
    noisy_recovery_radius,
    project_l1_ball,
    recovery_radius,
    smallest_feasible_m,
    verify_soft_conditions,
    verify_soft_stable_inequality,
)
from heatloc.field import SparseMeasure, add_noise
from heatloc.operators import build_dictionary, measure


class TestJacksonKernel:
    @pytest.mark.parametrize("p", [4, 8, 16])
    def test_unit_integral(self, p):
        x = np.linspace(-math.pi, math.pi, 20001)
        assert np.trapezoid(jackson_kernel(p, x), x) == pytest.approx(1.0, abs=1e-9)

    def test_even(self):
        x = np.linspace(0.01, math.pi, 57)
        np.testing.assert_array_equal(jackson_kernel(5, x), jackson_kernel(5, -x))

    def test_continuous_extension_at_zero(self):
        ratio_limit = jackson_kernel(6, 0.0) / jackson_kernel(6, 1e-9)
        assert ratio_limit == pytest.approx(1.0, rel=1e-9)

    def test_first_moment_decays(self):
        x = np.linspace(-math.pi, math.pi, 32769)
        m8 = np.trapezoid(np.abs(x) * jackson_kernel(8, x), x)
        m16 = np.trapezoid(np.abs(x) * jackson_kernel(16, x), x)
        assert m16 <= 0.6 * m8


class TestJacksonCoefficients:
    def test_zero_shift_is_identity(self):
        c = jackson_coefficients([0.0, 0.0], 4)
        dense = c.dense()
        center = dense[8, 8]
        assert abs(center - 1.0) <= 1e-10
        rest = np.abs(dense)
        rest[8, 8] = 0.0
        assert rest.max() <= 1e-10

    def test_norm_never_exceeds_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            delta = rng.uniform(-0.5, 0.5, 2)
            assert jackson_coefficients(delta, 8).norm <= 1.0 + 1e-8

    def test_plane_wave_error_halves_with_order(self):
        delta = (0.3, -0.2)

        def sup_err(p):
            co = jackson_coefficients(delta, p)
            om = np.linspace(-math.pi / 2, math.pi / 2, 801)
            E = np.exp(1j * np.outer(om, co.offsets))
            approx = np.outer(E @ co.axes[0], E @ co.axes[1])
            target = np.outer(np.exp(1j * delta[0] * om), np.exp(1j * delta[1] * om))
            return float(np.max(np.abs(approx - target)))

        assert sup_err(16) <= 0.7 * sup_err(8)

    def test_rejects_out_of_range_shift(self):
        with pytest.raises(ValueError):
            jackson_coefficients([0.6, 0.0], 4)


class TestBuildCertificate:
    def test_on_node_center_value(self):
        cfg = CertConfig(lam=1 / 16, m=16, p_jackson=4, dim=2, mesh_points=512)
        p0 = np.array([4 / 16, -3 / 16])  # a grid node
        approx = build_certificate_g(cfg, p0, scale=1.0)
        g_p0 = approx.certificate(p0)
        assert abs(g_p0 - 1.0) <= 2 * approx.sup_error + 1e-12

    def test_sup_error_drops_when_grid_refines(self):
        lam = 1 / 16
        delta = np.array([0.3, -0.2])
        errs = {}
        for m in (8, 16, 32):
            cfg = CertConfig(lam=lam, m=m, p_jackson=m // 4, dim=2, mesh_points=1024)
            errs[m] = build_certificate_g(cfg, delta / m, scale=1.0).sup_error
        assert errs[16] <= 0.7 * errs[8]
        assert errs[32] <= 0.7 * errs[16]

    def test_inverse_density_rate_law(self):
        # the sup-error obeys err <= C/m across the sweep with the constant
        # fixed at the coarsest level (the measured decay is faster than 1/m,
        # which the one-over-density law allows)
        lam = 1 / 16
        delta = np.array([0.3])
        errs = {}
        for m in (8, 16, 32):
            cfg = CertConfig(lam=lam, m=m, p_jackson=m // 4, dim=1, mesh_points=4096)
            errs[m] = build_certificate_g(cfg, delta / m, scale=1.0).sup_error
        c_coarse = 8 * errs[8]
        for m in (8, 16, 32):
            assert m * errs[m] <= 2.0 * c_coarse

    def test_real_valued_certificate(self):
        cfg = CertConfig(lam=1 / 16, m=16, p_jackson=4, dim=2, mesh_points=512)
        approx = build_certificate_g(cfg, np.array([0.21, -0.13]), scale=1.0)
        assert approx.imag_residue <= 1e-10

    def test_rejects_p0_outside_center_box(self):
        cfg = CertConfig(lam=1 / 16, m=16, p_jackson=4, dim=2)
        with pytest.raises(ValueError):
            build_certificate_g(cfg, np.array([0.7, 0.0]))

    def test_rejects_missing_translates(self):
        cfg = CertConfig(lam=1 / 16, m=8, p_jackson=4, dim=1)  # needs m >= 16 at the edge
        with pytest.raises(ValueError):
            build_certificate_g(cfg, np.array([0.5]))

    def test_coefficient_norm_reported(self):
        cfg = CertConfig(lam=1 / 16, m=16, p_jackson=4, dim=1, mesh_points=512)
        approx = build_certificate_g(cfg, np.array([0.21]), scale=1.0)
        assert 0.5 < approx.coeff_norm <= 1.0 + 1e-8


class _ExactBump:
    """Synthetic certificate equal to the similarity bump itself."""

    def __init__(self, p0, lam):
        self.p0 = np.atleast_1d(np.asarray(p0, dtype=float))
        self.lam = lam

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        d2 = np.einsum("nd,nd->n", x - self.p0, x - self.p0)
        vals = np.exp(-d2 / (4 * self.lam))
        return vals[0] if vals.size == 1 else vals

    def gradient_bound(self):
        return math.exp(-0.5) / math.sqrt(2 * self.lam)


class TestVerifySoftConditions:
    def test_exact_bump_reaches_unit_levels(self):
        lam = 0.02
        mu = SparseMeasure(np.array([[0.1, -0.2]]), [1.0])
        report = verify_soft_conditions(_ExactBump(mu.positions[0], lam), mu, 0, lam, mesh_points=512)
        assert report.sigma == pytest.approx(1.0, abs=1e-12)
        assert report.tau_mesh == pytest.approx(1.0, abs=1e-10)  # zero mesh sup-error
        assert report.tau == pytest.approx(1.0 - report.mesh_margin - report.tail_bound, abs=1e-12)
        assert report.feasible

    def test_single_source_regime_reaches_half_level(self):
        lam = 1 / 16
        mu = SparseMeasure(np.array([[0.21, -0.13]]), [1.0])
        found = smallest_feasible_m(lam, mu, 0, [4, 8, 16, 32], mesh_points=1024)
        assert found is not None
        m, report = found
        assert report.feasible
        assert report.tau / report.sigma >= 0.5

    def test_three_separated_sources(self):
        lam = 0.002  # pairwise separation 0.45 >= 10*sqrt(lam)
        mu = SparseMeasure.from_1d([-0.45, 0.0, 0.45], [1 / 3, 1 / 3, 1 / 3])
        cfg = CertConfig(lam=lam, m=48, p_jackson=12, dim=1)
        approx = calibrated_certificate(cfg, mu, 0)
        report = verify_soft_conditions(
            approx.certificate, mu, 0, lam, coeff_norm=approx.coeff_norm
        )
        assert report.feasible
        assert report.tau / report.sigma >= 1 / 6 - report.mesh_margin

    def test_requires_normalized_measure(self):
        lam = 0.01
        mu = SparseMeasure(np.array([[0.0, 0.0]]), [2.0])
        with pytest.raises(ValueError):
            verify_soft_conditions(_ExactBump(mu.positions[0], lam), mu, 0, lam)

    def test_mesh_refinement_monotonicity(self):
        lam = 1 / 16
        mu = SparseMeasure(np.array([[0.21, -0.13]]), [1.0])
        cfg = CertConfig(lam=lam, m=16, p_jackson=4, dim=2)
        approx = calibrated_certificate(cfg, mu, 0)
        taus = {}
        reports = {}
        for n in (256, 512, 1024):
            reports[n] = verify_soft_conditions(approx.certificate, mu, 0, lam, mesh_points=n)
            taus[n] = reports[n].tau
        # a finer mesh can only reveal a larger sup, but the margin accounts for it
        assert taus[512] <= taus[256] + reports[256].mesh_margin
        assert taus[1024] <= taus[512] + reports[512].mesh_margin


class TestRecoveryRadii:
    def test_equal_levels_give_zero_radius(self):
        assert recovery_radius(0.8, 0.8, 0.05) == 0.0

    def test_half_level_value(self):
        assert recovery_radius(0.5, 1.0, 0.01) == pytest.approx(
            math.sqrt(0.04 * math.log(2)), rel=1e-12
        )
        assert recovery_radius(0.5, 1.0, 0.01) == pytest.approx(0.16651, abs=5e-6)

    def test_third_amplitude_noiseless_form(self):
        # anchor amplitude 1/3 at proof level tau/sigma = c/2 = 1/6
        lam = 0.03
        assert recovery_radius(1 / 6, 1.0, lam) == pytest.approx(
            math.sqrt(4 * lam * math.log(6)), rel=1e-12
        )

    def test_rejects_vacuous_arguments(self):
        with pytest.raises(ValueError):
            recovery_radius(1.1, 1.0, 0.05)
        with pytest.raises(ValueError):
            recovery_radius(0.0, 1.0, 0.05)

    def test_noisy_reduces_to_noiseless(self):
        assert noisy_recovery_radius(0.6, 1.2, 0.04, 1.0, eps=0.0, rho=1.0) == pytest.approx(
            recovery_radius(0.6, 1.2, 0.04), rel=1e-12
        )

    def test_noisy_radius_increases_with_noise(self):
        radii = [noisy_recovery_radius(0.9, 1.2, 0.04, 1.0, eps, 1.05) for eps in (0.0, 0.01, 0.1)]
        assert radii[0] < radii[1] < radii[2]

    def test_noisy_vacuous_level_rejected(self):
        with pytest.raises(ValueError):
            noisy_recovery_radius(0.5, 1.0, 0.04, 1.0, eps=10.0, rho=1.0)

    def test_unit_weight_norm_level_bound(self):
        # with |lambda|_2 <= 1, tau/sigma >= c/2, sigma >= 8/6, the effective
        # level dominates c/2 - 6*(2*eps + (rho-1))/(8*rho)
        c = 1 / 3
        sigma = 1.5
        tau = (c / 2 + 0.01) * sigma
        for eps, rho in [(0.0, 1.0), (0.01, 1.0), (0.0, 1.05), (0.02, 1.1)]:
            level = tau / sigma - (2 * 1.0 * eps + (rho - 1)) / (rho * sigma)
            floor = c / 2 - 6 * (2 * eps + (rho - 1)) / (8 * rho)
            assert level >= floor


class TestProjectL1Ball:
    def test_inside_ball_unchanged(self):
        v = np.array([0.2, -0.3, 0.1])
        np.testing.assert_array_equal(project_l1_ball(v, 1.0), v)

    def test_projection_properties(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.standard_normal(20) * 3
            r = float(rng.uniform(0.1, 3.0))
            p = project_l1_ball(v, r)
            assert np.sum(np.abs(p)) <= r + 1e-10
            # projection is no farther than any other feasible point
            w = project_l1_ball(rng.standard_normal(20), r)
            assert np.linalg.norm(v - p) <= np.linalg.norm(v - w) + 1e-10


class TestSoftStableInequality:
    def _instance(self, lam, noise_eps, seed=0):
        mu = SparseMeasure.from_1d([-0.22, 0.31], [0.5, 0.5])
        cfg = CertConfig(lam=lam, m=16, p_jackson=4, dim=1)
        approx = calibrated_certificate(cfg, mu, 0)
        report = verify_soft_conditions(approx.certificate, mu, 0, lam, coeff_norm=approx.coeff_norm)
        op = approx.certificate.op
        b = measure(op, mu)
        if noise_eps > 0:
            noisy = add_noise(b, 10 * math.log10(float(b @ b) / noise_eps**2), seed)
            eps = float(np.linalg.norm(noisy - b))
            b = noisy
        else:
            eps = 0.0
        grid = np.linspace(-1, 1, 257).reshape(-1, 1)
        A = build_dictionary(op, grid)
        return A, b, report, eps

    def test_noiseless_specialization_holds(self):
        lam = 1 / 16
        A, b, report, eps = self._instance(lam, 0.0)
        assert report.feasible
        assert verify_soft_stable_inequality(A, b, report, lam, rho=1.0, eps=0.0) is True

    def test_noisy_two_atom_instance_holds(self):
        lam = 1 / 16
        A, b, report, eps = self._instance(lam, 1e-3)
        assert verify_soft_stable_inequality(A, b, report, lam, rho=1.05, eps=eps) is True

    def test_vacuous_bound_trivially_holds(self):
        lam = 1 / 16
        A, b, report, eps = self._instance(lam, 0.0)
        assert verify_soft_stable_inequality(A, b, report, lam, rho=1.0, eps=100.0) is True
