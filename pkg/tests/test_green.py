"""Green's columns, the kernel sampling layer, and the parabolic stepper."""

import numpy as np
import pytest

from curllab import analysis, assembly, green, mesh, scenarios, solvers
from curllab.errors import IncompatibleData


def _center(domain):
    return tuple(v // 2 for v in domain.extent)


class TestColumns:
    def test_boundary_source_rejected(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        with pytest.raises(IncompatibleData):
            green.greens_column(box8, coeff, (0, 4, 4), 0)

    def test_direction_validated(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        with pytest.raises(ValueError):
            green.greens_column(box8, coeff, _center(box8), 3)

    def test_scalar_fast_path_matches_generic_solve(self, box8):
        # equal constant coefficients route through one scalar diffusion
        # factorization; check it against the assembled vector system
        coeff = mesh.constant_coefficients(box8, 2.0)
        col = green.greens_column(box8, coeff, _center(box8), 1)
        op = assembly.assemble_curlcurl_divdiv(box8, coeff)
        y_flat = green._node_flat(box8, _center(box8))
        pos = int(np.searchsorted(op.node_ids, y_flat))
        rhs = np.zeros(op.dim)
        rhs[3 * pos + 1] = 1.0
        ref, _ = solvers.cg_solve(op, rhs)
        diff = op.from_field(col) - ref
        assert np.linalg.norm(diff) <= 1e-8 * np.linalg.norm(ref)

    def test_free_space_law_after_screening_extrapolation(self):
        # unit coefficients: the componentwise kernel is 1/(4 pi r); the
        # doubled-box extrapolation strips the Dirichlet screening, after
        # which the diagonal entry matches pointwise
        samples = scenarios.greens_extrapolated_samples(
            16, None, sources=None, component=0,
            options=solvers.SolveOptions(tol=1e-10))
        assert len(samples) > 50
        for s in samples:
            ref = 1.0 / (4 * np.pi * s.r)
            assert abs(s.block[0, 0] - ref) <= 0.10 * ref
            assert abs(s.block[1, 0]) <= 0.10 * ref
            assert abs(s.block[2, 0]) <= 0.10 * ref


class TestSymmetry:
    def _pair(self, domain, coeff):
        y1 = (2, 3, 4)
        y2 = (5, 4, 3)
        return green.collect_greens_samples(domain, coeff, [y1, y2],
                                            targets=[y1, y2])

    def test_constant_coefficients(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        assert green.greens_symmetry_check(self._pair(box8, coeff)) <= 1e-6

    def test_checkerboard(self, box8):
        coeff = mesh.checkerboard_coefficients(box8, nu=0.5)
        assert green.greens_symmetry_check(self._pair(box8, coeff)) <= 1e-6

    def test_mismatched_operators_detected(self, box8):
        # blocks taken from two different coefficient fields share geometry
        # but are not reciprocal: the defect must be far above tolerance
        c1 = mesh.constant_coefficients(box8, 1.0)
        c2 = mesh.checkerboard_coefficients(box8, nu=0.5)
        half1 = green.collect_greens_samples(box8, c1, [(2, 3, 4)],
                                             targets=[(5, 4, 3)])
        half2 = green.collect_greens_samples(box8, c2, [(5, 4, 3)],
                                             targets=[(2, 3, 4)])
        assert green.greens_symmetry_check(half1 + half2) > 1e-3

    def test_unpaired_sample_rejected(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        lone = green.collect_greens_samples(box8, coeff, [(2, 3, 4)],
                                            targets=[(5, 4, 3)])
        with pytest.raises(ValueError):
            green.greens_symmetry_check(lone)


class TestGlobalBound:
    def test_requires_two_samples(self):
        with pytest.raises(ValueError):
            green.greens_global_bound_check([])

    def test_envelope_constant_dominates(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        samples = green.collect_greens_samples(box8, coeff, [_center(box8)],
                                               max_per_source=40)
        out = green.greens_global_bound_check(samples)
        assert out["worst_ratio"] <= 1.0 + 1e-12
        assert out["num_samples"] == len(samples)

    def test_interior_regime_flagged(self, box8):
        # hand-built samples with dx, dy >= r carry no boundary signal
        samples = [
            green.GreensSample(x=(0.5 + r, 0.5, 0.5), y=(0.5, 0.5, 0.5),
                               block=np.eye(3) / (4 * np.pi * r),
                               dx=0.45, dy=0.45)
            for r in (0.1, 0.15, 0.2)
        ]
        out = green.greens_global_bound_check(samples)
        assert out["interior_regime"]
        assert out["alpha"] == 0.5


class TestReproduction:
    def test_consistent_weighting_is_algebraically_exact(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        f = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (np.sin(np.pi * x) * np.sin(np.pi * y)
                                   * np.sin(np.pi * z), 0 * x, 0 * x))
        assert green.reproduction_defect(box8, coeff, f) <= 1e-8

    def test_lumped_weighting_pays_quadrature_penalty(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        f = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (np.sin(np.pi * x) * np.sin(np.pi * y)
                                   * np.sin(np.pi * z), 0 * x, 0 * x))
        defect = green.reproduction_defect(box8, coeff, f,
                                           weighting="lumped")
        # point masses replace the consistent load: an O(h^2) error that is
        # clearly visible but still small at this resolution
        assert 1e-4 <= defect <= 0.2

    def test_unknown_weighting_rejected(self, box4):
        coeff = mesh.constant_coefficients(box4, 1.0)
        f = mesh.VectorField.zeros(box4)
        with pytest.raises(ValueError):
            green.reproduction_defect(box4, coeff, f, weighting="midpoint")


class TestHeatKernel:
    def test_time_grid_validation(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        y = _center(box8)
        with pytest.raises(ValueError):
            green.heat_kernel_evolve(box8, coeff, y, 0, [0.1], dt=-1.0)
        with pytest.raises(ValueError):
            green.heat_kernel_evolve(box8, coeff, y, 0, [0.05], dt=0.02)
        with pytest.raises(ValueError):
            green.heat_kernel_evolve(box8, coeff, y, 7, [0.04], dt=0.02)
        with pytest.raises(IncompatibleData):
            green.heat_kernel_evolve(box8, coeff, (0, 0, 0), 0, [0.04],
                                     dt=0.02)

    def test_semigroup_restart(self, box8):
        # continuing the evolution from a snapshot must land on the later
        # snapshot: both runs apply the same implicit steps
        coeff = mesh.checkerboard_coefficients(box8, nu=0.5)
        dt = box8.spacing ** 2 / 2
        snaps = green.heat_kernel_evolve(box8, coeff, _center(box8), 0,
                                         [4 * dt, 8 * dt], dt=dt)
        _, fields, _ = green.parabolic_solve(box8, coeff, snaps[0].field,
                                             T=4 * dt, dt=dt)
        gap = np.linalg.norm(fields[-1].values - snaps[1].field.values)
        assert gap <= 1e-8 * np.linalg.norm(snaps[1].field.values)

    def test_periodic_mass_conserved(self):
        dom = mesh.build_periodic_box_domain(8, 1.0 / 8)
        coeff = mesh.constant_coefficients(dom, 1.0)
        dt = dom.spacing ** 2 / 2
        snaps = green.heat_kernel_evolve(dom, coeff, (4, 4, 4), 0,
                                         [2 * dt, 6 * dt], dt=dt)
        h3 = dom.spacing ** 3
        for s in snaps:
            # every node is a distinct torus node, so the lumped mass is a
            # plain h^3 sum
            mass = h3 * s.field.values.sum(axis=(0, 1, 2))
            assert abs(mass[0] - 1.0) <= 1e-6
            assert np.abs(mass[1:]).max() <= 1e-10

    def test_extrapolation_reduces_time_stepping_bias(self):
        # against a fine-step reference, 2 K_{dt/2} - K_{dt} must beat the
        # plain dt run by a clear margin at the same snapshot time
        dom = mesh.build_box_domain(8, 1.0 / 8)
        coeff = mesh.constant_coefficients(dom, 1.0)
        y, t = (4, 4, 4), 0.02
        ref = green.heat_kernel_evolve(dom, coeff, y, 0, [t], dt=t / 64)
        coarse = green.heat_kernel_evolve(dom, coeff, y, 0, [t], dt=t / 4)
        extra = green.heat_kernel_extrapolated(dom, coeff, y, 0, [t],
                                               dt=t / 4)
        rv = ref[0].field.values
        err_c = np.linalg.norm(coarse[0].field.values - rv)
        err_e = np.linalg.norm(extra[0].field.values - rv)
        assert err_e <= err_c / 5

    def test_gaussian_profile_smoke(self):
        # desk-size run: the log-profile regression should already see a
        # negative slope with a rate constant in the right neighbourhood;
        # times are chosen so 3h <= 2 sqrt(t) and 8 sqrt(t) <= side
        dom = mesh.build_box_domain(16, 1.0 / 16)
        coeff = mesh.constant_coefficients(dom, 1.0)
        dt = dom.spacing ** 2 / 2
        snaps = green.heat_kernel_extrapolated(dom, coeff, (8, 8, 8), 0,
                                               [5 * dt, 6 * dt], dt=dt)
        fit = analysis.gaussian_fit(snaps)
        assert fit.slope < 0
        assert 0.10 <= -fit.slope <= 0.45


class TestParabolic:
    def test_final_time_validation(self, box4):
        coeff = mesh.constant_coefficients(box4, 1.0)
        u0 = mesh.VectorField.zeros(box4)
        with pytest.raises(ValueError):
            green.parabolic_solve(box4, coeff, u0, T=None, dt=0.01)
        with pytest.raises(ValueError):
            green.parabolic_solve(box4, coeff, u0, T=0.05, dt=0.02)

    def test_unforced_energy_decays_monotonically(self, box8, rand_field):
        coeff = mesh.checkerboard_coefficients(box8, nu=0.5)
        u0 = rand_field(box8, seed=3)
        dt = box8.spacing ** 2 / 2
        _, fields, diag = green.parabolic_solve(box8, coeff, u0, T=8 * dt,
                                                dt=dt)
        norms = [mesh.l2_norm(f) for f in fields]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
        assert norms[-1] < 0.5 * norms[0]
        assert diag["worst_step_residual"] <= 1e-8

    def test_forced_run_relaxes_to_elliptic_solution(self, box8):
        coeff = mesh.constant_coefficients(box8, 1.0)
        f = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (np.sin(np.pi * x) * np.sin(np.pi * y)
                                   * np.sin(np.pi * z), 0 * x, 0 * x))
        dt = box8.spacing ** 2 / 2
        _, fields, _ = green.parabolic_solve(
            box8, coeff, mesh.VectorField.zeros(box8), f=f, T=64 * dt,
            dt=dt, store_every=64)
        steady, _ = solvers.solve_dirichlet_system(box8, coeff, f=f)
        gap = mesh.VectorField(box8, fields[-1].values - steady.values)
        assert mesh.l2_norm(gap) <= 1e-4 * mesh.l2_norm(steady)
