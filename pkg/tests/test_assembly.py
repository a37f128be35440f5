"""Operator and load assembly: symmetry, coercivity, and hand oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from curllab import assembly, mesh


def _rand_dirichlet(domain, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal(domain.node_shape + (3,))
    return mesh.VectorField(domain, vals).zero_boundary()


def test_constant_coefficients_reproduce_vector_laplacian(box4):
    """a = b = 1 collapses the curl-div form to the componentwise Laplacian."""
    coeff = mesh.constant_coefficients(box4, 1.0)
    B = assembly.assemble_curlcurl_divdiv(box4, coeff)
    L = assembly.assemble_vector_laplacian(box4)
    diff = (B.matrix - L.matrix).tocoo()
    scale = np.abs(L.matrix.data).max()
    worst = np.abs(diff.data).max() if diff.nnz else 0.0
    assert worst <= 1e-12 * scale


def test_operators_exactly_symmetric(box4):
    coeff = mesh.checkerboard_coefficients(box4, nu=0.5)
    for op in (assembly.assemble_curlcurl_divdiv(box4, coeff),
               assembly.assemble_curlcurl_divdiv(box4, coeff,
                                                 include_div=False),
               assembly.assemble_scalar_diffusion(box4),
               assembly.assemble_scalar_diffusion(box4, bc="neumann"),
               assembly.assemble_mass(box4, lumped=False)):
        d = (op.matrix - op.matrix.T).tocoo()
        assert d.nnz == 0 or np.abs(d.data).max() == 0.0
        assert op.matrix.diagonal().min() >= 0.0


def test_coercivity_sandwich(box8):
    """nu u' L u <= u' B u <= u' L u / nu for rough cells, 20 random fields."""
    nu = 0.5
    coeff = mesh.checkerboard_coefficients(box8, nu=nu)
    B = assembly.assemble_curlcurl_divdiv(box8, coeff)
    L = assembly.assemble_vector_laplacian(box8)
    for seed in range(20):
        u = B.from_field(_rand_dirichlet(box8, seed))
        eB = float(u @ (B.matrix @ u))
        eL = float(u @ (L.matrix @ u))
        assert nu * eL * (1 - 1e-12) <= eB <= eL / nu * (1 + 1e-12)


def test_smallest_eigenvalue_sandwich(box4):
    """Dense eigendecomposition oracle at 4^3, checkerboard nu = 0.5."""
    coeff = mesh.checkerboard_coefficients(box4, nu=0.5)
    B = assembly.assemble_curlcurl_divdiv(box4, coeff)
    L = assembly.assemble_vector_laplacian(box4)
    lam_B = np.linalg.eigvalsh(B.matrix.toarray())[0]
    lam_L = np.linalg.eigvalsh(L.matrix.toarray())[0]
    assert 0.5 * lam_L <= lam_B <= 2.0 * lam_L


class TestCurlOnlyKernel:
    """The include_div=False form annihilates gradients."""

    def test_affine_gradient_exact(self, box4):
        # grad psi of a quadratic psi is affine, hence reproduced exactly by
        # the trilinear space, and its curl energy must vanish to roundoff
        coeff = mesh.constant_coefficients(box4, 1.0)
        A = assembly.assemble_curlcurl_divdiv(box4, coeff, include_div=False,
                                              where="active")
        u = mesh.VectorField.from_callable(
            box4, lambda x, y, z: (0.5 - x, 0.3 - y, 0.9 - z))
        v = A.from_field(u)
        energy = float(v @ (A.matrix @ v))
        ref = float(v @ v)
        assert energy <= 1e-10 * ref

    def test_interpolated_bump_gradient_decays(self):
        # for a genuine interior bump the curl energy of the interpolated
        # gradient is pure discretization error: second order in h
        def grad_bump(x, y, z):
            sx, sy, sz = (np.sin(np.pi * t) for t in (x, y, z))
            cx, cy, cz = (np.cos(np.pi * t) for t in (x, y, z))
            w = sx ** 2 * sy ** 2 * sz ** 2
            return (2 * np.pi * sx * cx * sy ** 2 * sz ** 2,
                    2 * np.pi * sy * cy * sx ** 2 * sz ** 2,
                    2 * np.pi * sz * cz * sx ** 2 * sy ** 2)

        energies = []
        for n in (8, 16):
            dom = mesh.build_box_domain(n, 1.0 / n)
            coeff = mesh.constant_coefficients(dom, 1.0)
            A = assembly.assemble_curlcurl_divdiv(dom, coeff,
                                                  include_div=False,
                                                  where="active")
            u = mesh.VectorField.from_callable(dom, grad_bump)
            v = A.from_field(u)
            energies.append(float(v @ (A.matrix @ v)))
        assert energies[1] < energies[0]
        assert energies[0] / energies[1] > 2.5


class TestScalarDiffusion:
    def test_single_interior_node_stencil(self):
        # 2^3 box: one interior node; eight Q1 elements each contribute
        # h/3 to the diagonal (hand quadrature of one element patch)
        h = 0.5
        dom = mesh.build_box_domain(2, h)
        op = assembly.assemble_scalar_diffusion(dom)
        assert op.dim == 1
        assert op.matrix[0, 0] == pytest.approx(8 * h / 3, rel=1e-13)

    def test_neumann_kernel_constants(self, box4):
        coeff = mesh.checkerboard_coefficients(box4, nu=0.5)
        op = assembly.assemble_scalar_diffusion(box4, cell_values=coeff.a,
                                                bc="neumann")
        rowsums = np.asarray(op.matrix.sum(axis=1)).ravel()
        assert np.abs(rowsums).max() <= 1e-12


def test_mass_lumping_preserves_row_sums(box4):
    # over the full (active) node set lumping is exactly row-sum lumping;
    # the interior reduction would drop boundary couplings from the sums
    lumped = assembly.assemble_mass(box4, lumped=True, where="active")
    consistent = assembly.assemble_mass(box4, lumped=False, where="active")
    assert_allclose(lumped.matrix.diagonal(),
                    np.asarray(consistent.matrix.sum(axis=1)).ravel(),
                    rtol=1e-12)


def test_div_constraint_rows_measure_cell_divergence(box4):
    B, weights = assembly.assemble_div_constraint(box4)
    u = _rand_dirichlet(box4, 3)
    op = assembly.assemble_vector_laplacian(box4)
    cell_int = B @ op.from_field(u)
    expected = mesh.cell_mean_divergence(u) * box4.spacing ** 3
    assert_allclose(cell_int, expected, atol=1e-13)
    assert_allclose(weights, 1.0 / box4.spacing ** 3)


class TestLoads:
    def test_zero_data_zero_vector(self, box4):
        load = assembly.assemble_load(box4)
        assert load.vector.shape == (3 * box4.interior_node_ids().size,)
        assert np.all(load.vector == 0.0)

    def test_constant_curl_potential_drops_out(self, box8):
        F = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (1.0 + 0 * x, -2.0 + 0 * x, 0.5 + 0 * x))
        load = assembly.assemble_load(box8, F=F)
        assert np.linalg.norm(load.vector) <= 1e-10

    def test_single_cell_indicator_weights(self, box4):
        # f = e1 on exactly one interior cell: each of its 8 nodes receives
        # the cell quadrature mass h^3 / 8 in the first component
        h = box4.spacing
        fg = np.zeros((box4.num_cells, 8, 3))
        cid = box4.active_cell_index()[2, 2, 2]
        fg[cid, :, 0] = 1.0
        load = assembly.assemble_load(box4, f=fg)
        vec = load.vector.reshape(-1, 3)
        nz = np.flatnonzero(np.abs(vec).sum(axis=1))
        assert nz.size == 8
        assert_allclose(vec[nz, 0], h ** 3 / 8, rtol=1e-13)
        assert np.abs(vec[nz, 1:]).max() == 0.0


class TestWeakResidual:
    def test_zero_solution_zero_load(self, box4):
        coeff = mesh.constant_coefficients(box4, 1.0)
        op = assembly.assemble_curlcurl_divdiv(box4, coeff)
        load = assembly.assemble_load(box4)
        u = mesh.VectorField.zeros(box4)
        assert assembly.weak_residual(op, u, load) == 0.0

    def test_noise_is_not_a_solution(self, box8):
        from curllab import solvers

        coeff = mesh.checkerboard_coefficients(box8, nu=0.5)
        f = mesh.VectorField.from_callable(
            box8, lambda x, y, z: (np.sin(np.pi * x) * np.sin(np.pi * y)
                                   * np.sin(np.pi * z), 0 * x, 0 * x))
        u, diag = solvers.solve_dirichlet_system(box8, coeff, f=f)
        op = assembly.assemble_curlcurl_divdiv(box8, coeff)
        load = assembly.assemble_load(box8, f=f)
        assert assembly.weak_residual(op, u, load) <= 1e-8
        noisy = mesh.VectorField(
            box8, u.values + _rand_dirichlet(box8, 11).values)
        assert assembly.weak_residual(op, noisy, load) > 1e-3


@given(seed=st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_quadratic_form_matches_quadrature(seed):
    """u' B u computed from the matrix equals the quadrature energy."""
    dom = mesh.build_box_domain(5, 0.2)
    coeff = mesh.checkerboard_coefficients(dom, nu=0.25)
    B = assembly.assemble_curlcurl_divdiv(dom, coeff)
    u = _rand_dirichlet(dom, seed)
    v = B.from_field(u)
    ce, de = mesh.energy_split(u, coeff)
    quad = ce + de
    mat = float(v @ (B.matrix @ v))
    assert abs(mat - quad) <= 1e-10 * max(quad, 1.0)
