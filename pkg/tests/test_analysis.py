"""Oscillation seminorms, exponent fits, and the profile regressions.

Most oracles here are fields with a closed-form answer (power cusps,
constant gradients, exact Gaussians), chosen so the expected slope or
seminorm is known to machine precision rather than approximately.
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curllab import analysis, green, mesh


CENTER = (0.5, 0.5, 0.5)


def _cusp_field(domain, exponent):
    """u = |x - center|^exponent e1, the canonical Holder-alpha witness."""
    def fn(x, y, z):
        r = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2 + (z - 0.5) ** 2)
        return (r ** exponent, 0 * x, 0 * x)

    return mesh.VectorField.from_callable(domain, fn)


class TestRegion:
    def test_validation(self):
        with pytest.raises(ValueError):
            analysis.Region(CENTER, 0.0)
        with pytest.raises(ValueError):
            analysis.Region(CENTER, 0.1, kind="cube")
        with pytest.raises(ValueError):
            analysis.Region(CENTER, 0.1, kind="parabolic_cylinder")

    def test_frozen(self):
        reg = analysis.Region(CENTER, 0.1)
        with pytest.raises(Exception):
            reg.radius = 0.2

    def test_empty_ball_rejected(self, box8):
        reg = analysis.Region((5.0, 5.0, 5.0), 0.1)
        with pytest.raises(ValueError):
            reg.node_ids(box8)

    def test_backward_time_window(self):
        reg = analysis.Region(CENTER, 0.3, kind="parabolic_cylinder", t0=0.5)
        grid = [0.3, 0.42, 0.5, 0.6]
        assert list(reg.times(grid)) == [1, 2]
        with pytest.raises(ValueError):
            reg.times([0.9])


class TestHolderSeminorm:
    def test_alpha_validated(self, box8):
        u = mesh.VectorField.zeros(box8)
        reg = analysis.Region(CENTER, 0.25)
        for alpha in (0.0, 1.5):
            with pytest.raises(ValueError):
                analysis.holder_seminorm(u, alpha, reg)

    def test_constant_field_vanishes(self, box8):
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (2.0 + 0 * x, -1.0 + 0 * x, 0 * x))
        assert analysis.holder_seminorm(
            u, 0.5, analysis.Region(CENTER, 0.3)) == 0.0

    def test_matched_exponent_is_exactly_one(self, box16):
        # pairs (x, center) realize |r^a - 0| / r^a = 1, and subadditivity
        # of t -> t^a keeps every other pair below it
        u = _cusp_field(box16, 0.5)
        val = analysis.holder_seminorm(u, 0.5, analysis.Region(CENTER, 0.3))
        assert val == pytest.approx(1.0, rel=1e-9)

    def test_overshooting_exponent_diverges_like_grid(self):
        # measuring a sqrt cusp in the 0.8-seminorm blows up as h^{-0.3},
        # realized at the node adjacent to the cusp
        vals = {}
        for n in (8, 16):
            dom = mesh.build_box_domain(n, 1.0 / n)
            u = _cusp_field(dom, 0.5)
            vals[n] = analysis.holder_seminorm(
                u, 0.8, analysis.Region(CENTER, 0.3))
            assert vals[n] == pytest.approx((1.0 / n) ** -0.3, rel=1e-6)
        assert vals[16] > vals[8]

    def test_parabolic_cylinder_matches_ball_for_static_field(self, box8):
        u = _cusp_field(box8, 0.5)
        times = [0.1, 0.15, 0.2]
        traj = (times, [u, u, u])
        cyl = analysis.Region(CENTER, 0.3, kind="parabolic_cylinder", t0=0.2)
        ball = analysis.Region(CENTER, 0.3)
        assert analysis.holder_seminorm(traj, 0.5, cyl) == pytest.approx(
            analysis.holder_seminorm(u, 0.5, ball), rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(alpha=st.floats(0.15, 1.0), shrink=st.floats(0.05, 0.45))
    def test_monotone_in_exponent_and_radius(self, alpha, shrink):
        dom = mesh.build_box_domain(6, 1.0 / 6)
        rng = np.random.default_rng(11)
        u = mesh.VectorField(
            dom, rng.standard_normal(dom.node_shape + (3,)))
        big = analysis.Region(CENTER, 0.45)
        small = analysis.Region(CENTER, 0.45 - shrink + 1e-3)
        s_big = analysis.holder_seminorm(u, alpha, big)
        assert analysis.holder_seminorm(u, alpha, small) <= s_big * (1 + 1e-12)
        # embedding: [u]_beta <= [u]_alpha (2r)^(alpha-beta) for beta < alpha
        beta = 0.9 * alpha
        s_beta = analysis.holder_seminorm(u, beta, big)
        assert s_beta <= s_big * (2 * 0.45) ** (alpha - beta) * (1 + 1e-12)


class TestHolderExponent:
    def test_input_validation(self, box8):
        u = mesh.VectorField.zeros(box8)
        with pytest.raises(ValueError):
            analysis.estimate_holder_exponent(u, CENTER, [0.1, 0.2, 0.3])
        with pytest.raises(ValueError):
            analysis.estimate_holder_exponent(
                u, CENTER, [0.1, 0.2, 0.3, 0.9])

    def test_linear_field_flags_lipschitz(self, box16):
        u = mesh.VectorField.from_callable(box16,
                                           lambda x, y, z: (x, 0 * x, 0 * x))
        h = box16.spacing
        fit = analysis.estimate_holder_exponent(
            u, CENTER, [2 * h, 3 * h, 4 * h, 6 * h])
        # on grid-aligned radii the oscillation is exactly 2 h floor(r/h)
        assert fit.slope == pytest.approx(1.0, abs=1e-9)
        assert "lipschitz_or_better" in fit.flags

    def test_sqrt_cusp_recovered(self, box16):
        u = _cusp_field(box16, 0.5)
        fit = analysis.estimate_holder_exponent(
            u, CENTER, [0.12, 0.18, 0.27, 0.4])
        assert fit.slope == pytest.approx(0.5, abs=0.05)
        assert not fit.flags

    def test_constant_shift_invariance(self, box16):
        u = _cusp_field(box16, 0.5)
        shifted = mesh.VectorField(box16, u.values + np.array([3.0, -1.0, 2.0]))
        radii = [0.12, 0.18, 0.27, 0.4]
        a = analysis.estimate_holder_exponent(u, CENTER, radii)
        b = analysis.estimate_holder_exponent(shifted, CENTER, radii)
        assert a.slope == pytest.approx(b.slope, rel=1e-12)

    def test_constant_field_degenerate(self, box8):
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (1.0 + 0 * x, 0 * x, 0 * x))
        fit = analysis.estimate_holder_exponent(
            u, CENTER, [0.1, 0.15, 0.22, 0.33])
        assert "degenerate_oscillations" in fit.flags
        assert fit.slope == 0.0


class TestCaccioppoli:
    def test_containment_required(self, box8):
        u = mesh.VectorField.zeros(box8)
        with pytest.raises(ValueError):
            analysis.caccioppoli_ratio(u, None, (0.2, 0.5, 0.5), 0.1)

    def test_degenerate_data_rejected(self, box8):
        u = mesh.VectorField.zeros(box8)
        with pytest.raises(ValueError):
            analysis.caccioppoli_ratio(u, None, CENTER, 0.1)

    def test_constant_field_has_zero_energy(self, box8):
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (1.0 + 0 * x, 0 * x, 0 * x))
        # gradient quadrature leaves squared roundoff in the numerator
        assert analysis.caccioppoli_ratio(u, None, CENTER, 0.1) <= 1e-30

    def test_arbitrary_field_grows_under_refinement(self):
        # a non-solution stores O(h^-2) gradient energy per unit mass: the
        # ratio at fixed radius must grow by about 4 per mesh halving
        ratios = {}
        for n in (16, 32):
            dom = mesh.build_box_domain(n, 1.0 / n)
            rng = np.random.default_rng(7)
            u = mesh.VectorField(dom,
                                 rng.standard_normal(dom.node_shape + (3,)))
            ratios[n] = analysis.caccioppoli_ratio(u, None, CENTER, 0.125)
        assert ratios[32] >= 2.5 * ratios[16]


class TestCampanato:
    def test_needs_three_radii(self, box8):
        u = mesh.VectorField.zeros(box8)
        with pytest.raises(ValueError):
            analysis.campanato_profile(u, CENTER, [0.1, 0.2])

    def test_constant_gradient_slope_exact(self, box8):
        # effective-radius abscissa makes int |grad u|^2 over balls fit
        # slope 3 exactly for an affine field, at any resolution
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (x + y, z, 0 * x))
        fit = analysis.campanato_profile(u, CENTER,
                                         [0.12, 0.2, 0.3, 0.45])
        assert fit.slope == pytest.approx(3.0, abs=1e-9)
        assert fit.metadata["alpha_est"] == pytest.approx(1.0, abs=1e-9)

    def test_saturated_radius_flagged(self, box8):
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (x, 0 * x, 0 * x))
        fit = analysis.campanato_profile(u, CENTER, [0.2, 0.4, 5.0])
        assert "saturated_radius" in fit.flags

    def test_boundary_center_uses_intersection(self, box8):
        u = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (y, 0 * x, 0 * x))
        fit = analysis.campanato_profile(u, (0.0, 0.0, 0.0),
                                         [0.2, 0.3, 0.45])
        assert np.isfinite(fit.slope)


class TestDecayFit:
    def _lattice_samples(self, law, n=16):
        h = 1.0 / n
        y = np.array([0.5, 0.5, 0.5])
        samples = []
        for i in range(-4, 5):
            for j in range(-4, 5):
                for k in range(-4, 5):
                    x = y + h * np.array([i, j, k])
                    r = np.linalg.norm(x - y)
                    if not 3 * h <= r <= 0.3:
                        continue
                    samples.append(green.GreensSample(
                        x=x, y=y, block=np.eye(3) * law(r),
                        dx=0.45, dy=0.45))
        return samples

    def test_free_space_law_recovered_exactly(self):
        samples = self._lattice_samples(lambda r: 1.0 / (4 * np.pi * r))
        fit = analysis.decay_fit(samples)
        assert fit.slope == pytest.approx(-1.0, abs=1e-10)
        assert fit.intercept == pytest.approx(-np.log(4 * np.pi), abs=1e-10)
        assert fit.r_squared > 1 - 1e-12

    def test_increment_exponent_for_smooth_kernel(self):
        samples = self._lattice_samples(lambda r: 1.0 / (4 * np.pi * r))
        fit = analysis.decay_fit(samples)
        inc = fit.metadata["increment"]
        assert inc["num_pairs"] >= 3
        # a differentiable kernel has Lipschitz increments
        assert inc["alpha"] == pytest.approx(1.0, abs=0.25)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            analysis.decay_fit([])

    def test_window_exhaustion_rejected(self):
        h = 1.0 / 16
        y = np.array([0.5, 0.5, 0.5])
        near = [green.GreensSample(x=y + (h, 0, 0), y=y, block=np.eye(3),
                                   dx=0.4, dy=0.4),
                green.GreensSample(x=y + (0, h, 0), y=y, block=np.eye(3),
                                   dx=0.4, dy=0.4)]
        with pytest.raises(ValueError):
            analysis.decay_fit(near)


class TestGaussianFit:
    def _exact_snapshots(self, n=16, noise=None, times=(0.01, 0.015625)):
        dom = mesh.build_box_domain(n, 1.0 / n)
        yc = np.array([0.5, 0.5, 0.5])
        coords = dom.node_coords()
        rng = np.random.default_rng(2)
        snaps = []
        for t in times:
            r2 = ((coords - yc) ** 2).sum(axis=-1)
            prof = (4 * np.pi * t) ** -1.5 * np.exp(-r2 / (4 * t))
            if noise:
                prof = prof * np.exp(noise * rng.standard_normal(prof.shape))
            vals = np.zeros(dom.node_shape + (3,))
            vals[..., 0] = prof
            dt = t / 4
            snaps.append(green.HeatKernelSnapshot(
                t=t, y=int(np.ravel_multi_index((n // 2,) * 3,
                                                dom.node_shape)),
                k=0, field=mesh.VectorField(dom, vals), dt=dt, steps=4))
        return snaps

    def test_exact_gaussian_recovers_quarter_rate(self):
        fit = analysis.gaussian_fit(self._exact_snapshots())
        assert fit.metadata["kappa"] == pytest.approx(0.25, abs=1e-10)
        assert fit.metadata["prefactor"] == pytest.approx(
            (4 * np.pi) ** -1.5, rel=1e-9)
        assert not fit.flags

    def test_binned_variant_agrees(self):
        fit = analysis.gaussian_fit(self._exact_snapshots(), bins=5)
        assert fit.metadata["binned"]
        assert fit.metadata["kappa"] == pytest.approx(0.25, abs=1e-9)

    def test_noise_flags_low_r_squared(self):
        fit = analysis.gaussian_fit(self._exact_snapshots(noise=2.0))
        assert "low_r_squared" in fit.flags

    def test_late_snapshots_screened_out(self):
        with pytest.raises(ValueError):
            analysis.gaussian_fit(self._exact_snapshots(times=(0.25,)))
        with pytest.raises(ValueError):
            analysis.gaussian_fit([])


class TestCoefficientScaling:
    def test_greens_blocks_scale_reciprocally(self, box8):
        # u -> u / lambda under a, b -> lambda a, lambda b: the sampled
        # blocks must halve exactly when the coefficients double
        one = mesh.constant_coefficients(box8, 0.5)
        two = mesh.constant_coefficients(box8, 1.0)
        src, tgt = (3, 4, 4), (5, 4, 3)
        s1 = green.collect_greens_samples(box8, one, [src], targets=[tgt])
        s2 = green.collect_greens_samples(box8, two, [src], targets=[tgt])
        scale = np.abs(s1[0].block).max()
        assert np.abs(2 * s2[0].block - s1[0].block).max() <= 1e-8 * scale


class TestReportPlumbing:
    def test_exponent_fit_json_round_trip(self):
        fit = analysis.ExponentFit("demo", -1.0, 0.5, 0.99, [0.1, 0.2],
                                   1e-3, flags=["low_r_squared"],
                                   metadata={"num_samples": 4})
        data = json.loads(fit.to_json(extra_key=7))
        assert data["slope"] == -1.0
        assert data["metadata"]["flags"] == ["low_r_squared"]
        assert data["extra_key"] == 7

    def test_regularity_report_bundle(self, box16):
        u = _cusp_field(box16, 0.5)
        report = analysis.regularity_report(
            u, None, CENTER, [0.12, 0.18, 0.27, 0.4],
            caccioppoli_radii=[0.1, 0.15])
        data = json.loads(report.to_json())
        assert set(data) == {"oscillations", "alpha", "caccioppoli",
                             "campanato"}
        assert len(data["caccioppoli"]) == 2
