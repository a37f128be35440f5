"""Fixed-point drivers: coefficient maps, traces, and both applications."""

import numpy as np
import pytest

from curllab import apps, mesh, solvers
from curllab.errors import NonConvergence


def _state_squared_map(nu=0.25):
    def fn(centers, cells):
        mag2 = (np.atleast_2d(cells.T).T ** 2).sum(axis=-1)
        return 1.0 / (1.0 + mag2)

    return apps.CoefficientMap(fn, nu, name="1/(1+|u|^2)")


def _sine_load(domain, amplitude=5.0):
    def fn(x, y, z):
        s = np.sin(np.pi * x) * np.sin(np.pi * y) * np.sin(np.pi * z)
        return (amplitude * s, 0 * x, amplitude * s * 0.5)

    return mesh.VectorField.from_callable(domain, fn)


class TestCoefficientMap:
    def test_nu_window_validated(self):
        with pytest.raises(ValueError):
            apps.CoefficientMap(lambda c, u: np.ones(len(c)), 0.0)
        with pytest.raises(ValueError):
            apps.CoefficientMap(lambda c, u: np.ones(len(c)), 1.5)

    def test_outputs_clamped_to_ellipticity_window(self, box4):
        wild = apps.CoefficientMap(
            lambda c, u: np.where(c[:, 0] < 0.5, 100.0, 1e-6), 0.5)
        vals = wild.evaluate(box4, mesh.VectorField.zeros(box4))
        assert vals.max() == 2.0
        assert vals.min() == 0.5

    def test_wrong_shape_rejected(self, box4):
        bad = apps.CoefficientMap(lambda c, u: np.ones(3), 0.5)
        with pytest.raises(ValueError):
            bad.evaluate(box4, mesh.VectorField.zeros(box4))

    def test_constant_factory(self, box4):
        cmap = apps.CoefficientMap.constant(2.0)
        assert cmap.nu == 0.5
        vals = cmap.evaluate(box4, mesh.VectorField.zeros(box4))
        assert np.all(vals == 2.0)

    def test_scalar_state_accepted(self, box4):
        cmap = apps.CoefficientMap(lambda c, u: 1.0 + 0 * u, 0.5)
        temp = mesh.ScalarField(box4, np.zeros(box4.node_shape))
        assert cmap.evaluate(box4, temp).shape == (box4.num_cells,)


class TestIterationTrace:
    def test_records_and_exposes_last(self):
        trace = apps.IterationTrace()
        assert trace.last == np.inf
        trace.record(0.5)
        trace.record(0.25)
        assert trace.iterations == 2
        assert trace.last == 0.25
        assert trace.residuals == [0.5, 0.25]


class TestQuasilinearPicard:
    def test_constant_maps_reduce_to_linear_solve(self, box8):
        f = _sine_load(box8)
        cmap = apps.CoefficientMap.constant(1.0)
        u, trace = apps.quasilinear_picard(box8, cmap, cmap, f)
        assert trace.converged
        assert trace.iterations <= 2
        coeff = mesh.constant_coefficients(box8, 1.0)
        ref, _ = solvers.solve_dirichlet_system(box8, coeff, f=f)
        gap = mesh.VectorField(box8, u.values - ref.values)
        assert mesh.l2_norm(gap) <= 1e-10 * mesh.l2_norm(ref)

    def test_nonlinear_coefficients_converge(self, box8):
        amap = _state_squared_map()
        u, trace = apps.quasilinear_picard(box8, amap, amap,
                                           _sine_load(box8), tol=1e-8)
        assert trace.converged
        assert trace.last <= 1e-8
        # the solve must have actually left the linear regime
        vals = amap.evaluate(box8, u)
        assert vals.min() < 1.0 - 1e-3

    def test_budget_exhaustion_carries_trace_and_best(self, box8):
        amap = _state_squared_map()
        with pytest.raises(NonConvergence) as err:
            apps.quasilinear_picard(box8, amap, amap, _sine_load(box8),
                                    tol=1e-14, max_iter=2)
        assert err.value.trace.iterations == 2
        assert isinstance(err.value.best, mesh.VectorField)


class TestThermoMaxwell:
    @staticmethod
    def _boundary_data(domain, phi_fn=None):
        Psi = mesh.VectorField.from_callable(domain,
                                             lambda x, y, z: (y, z, x))
        phi_fn = phi_fn or (lambda x, y, z: 0 * x)
        phi = mesh.ScalarField.from_callable(domain, phi_fn)
        return Psi, phi

    def test_constant_resistivity_converges_immediately(self, box8):
        Psi, phi = self._boundary_data(box8)
        rho = apps.CoefficientMap.constant(1.0)
        H, u, trace = apps.thermo_maxwell_solve(box8, rho, Psi, phi)
        assert trace.converged
        assert trace.iterations <= 2
        _, div_H = mesh.gauss_curl_div(H)
        w = mesh.quad_weight(box8)
        assert np.sqrt(w * (div_H ** 2).sum()) <= 1e-8

    def test_field_invariant_under_resistivity_scaling(self, box8):
        # curl(rho curl H) = 0 with constant rho: H cannot depend on the
        # value of rho, only the temperature load does
        Psi, phi = self._boundary_data(box8)
        H1, _, _ = apps.thermo_maxwell_solve(
            box8, apps.CoefficientMap.constant(1.0), Psi, phi)
        H2, _, _ = apps.thermo_maxwell_solve(
            box8, apps.CoefficientMap.constant(0.5), Psi, phi)
        gap = np.abs(H1.values - H2.values).max()
        assert gap <= 1e-8 * np.abs(H1.values).max()

    def test_temperature_keeps_dirichlet_trace(self, box8):
        Psi, phi = self._boundary_data(box8, phi_fn=lambda x, y, z: x)
        rho = apps.CoefficientMap.constant(1.0)
        _, u, _ = apps.thermo_maxwell_solve(box8, rho, Psi, phi)
        bdry = box8.node_class == mesh.BOUNDARY
        assert np.abs(u.values[bdry] - phi.values[bdry]).max() <= 1e-12

    def test_budget_exhaustion_carries_best_pair(self, box8):
        Psi, phi = self._boundary_data(box8, phi_fn=lambda x, y, z: x)
        rho = apps.CoefficientMap(
            lambda c, u: 1.0 / (1.0 + np.asarray(u) ** 2), 0.5)
        with pytest.raises(NonConvergence) as err:
            apps.thermo_maxwell_solve(box8, rho, Psi, phi, max_iter=1)
        H, u = err.value.best
        assert isinstance(H, mesh.VectorField)
        assert isinstance(u, mesh.ScalarField)
