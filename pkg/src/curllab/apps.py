"""Fixed-point drivers for the two application problems.

Both applications wrap the linear machinery in a Picard loop: freeze the
solution-dependent coefficients, solve the linear problem, re-evaluate the
coefficients, repeat.  Nothing guarantees convergence of the iteration
itself (only existence of the fixed point is proved), so the loops are
instrumented: every run returns an `IterationTrace`, oscillating residuals
trigger under-relaxation, and a run that exhausts its budget raises
`NonConvergence` carrying the trace and the best iterate seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import assembly, mesh, solvers
from .errors import NonConvergence

__all__ = [
    "CoefficientMap",
    "IterationTrace",
    "quasilinear_picard",
    "thermo_maxwell_solve",
]


# ---------------------------------------------------------------------------
# solution-dependent coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CoefficientMap:
    """A deterministic map from (position, local solution) to a coefficient.

    ``fn(centers, values) -> (cells,)`` receives cell-center coordinates and
    the solution averaged onto cells (a 3-vector per cell for vector states,
    a scalar per cell for temperature-like states).  Outputs are clamped to
    [nu, 1/nu]; the clamp is part of the model, not a convenience — the
    ellipticity window is what the regularity theory runs on.
    """

    fn: callable
    nu: float
    name: str = "custom"

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")

    def evaluate(self, domain, state):
        centers = domain.cell_centers()
        cells = _cell_average(domain, state)
        vals = np.asarray(self.fn(centers, cells), dtype=float)
        if vals.shape != (domain.num_cells,):
            raise ValueError("coefficient map must return one value per cell")
        return np.clip(vals, self.nu, 1.0 / self.nu)

    @classmethod
    def constant(cls, value, nu=None):
        nu = nu if nu is not None else min(value, 1.0 / value)
        return cls(lambda c, u: np.full(len(c), float(value)), nu,
                   name=f"constant({value:g})")


def _cell_average(domain, state):
    """Average nodal state onto cells: (cells, 3) or (cells,)."""
    vals = state.values if hasattr(state, "values") else np.asarray(state)
    conn = domain.connectivity()
    if vals.ndim == 4 or (vals.ndim == 2 and vals.shape[-1] == 3):
        flat = vals.reshape(-1, 3)
        return flat[conn].mean(axis=1)
    flat = vals.reshape(-1)
    return flat[conn].mean(axis=1)


def _full_cell_array(domain, active_vals):
    """Scatter active-cell values onto the full cell grid (inactive -> 1)."""
    out = np.ones(domain.extent)
    out[domain.active] = active_vals
    return out


@dataclass
class IterationTrace:
    """Per-iteration relative updates of a fixed-point loop."""

    residuals: list = dc_field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    relaxation: float = 1.0

    def record(self, residual):
        self.residuals.append(float(residual))
        self.iterations = len(self.residuals)

    @property
    def last(self):
        return self.residuals[-1] if self.residuals else np.inf


def _relative_update(new, old):
    num = np.linalg.norm(np.ravel(new) - np.ravel(old))
    den = max(np.linalg.norm(np.ravel(new)), 1e-30)
    return num / den


# ---------------------------------------------------------------------------
# quasilinear curl system
# ---------------------------------------------------------------------------

def quasilinear_picard(domain, a_map, b_map, f, tol=1e-8, max_iter=40,
                       options=None):
    """Picard iteration for the system with solution-dependent coefficients.

    Freezes a_k = a_map(u_k), b_k = b_map(u_k), solves the linear Dirichlet
    problem for u_{k+1}, and stops when the relative update drops below
    ``tol``.  Residual oscillation halves an under-relaxation weight (never
    below 1/8).  Raises `NonConvergence` (with trace and best iterate)
    when ``max_iter`` is exhausted.
    """
    options = options or solvers.SolveOptions()
    trace = IterationTrace()
    u = mesh.VectorField.zeros(domain)
    best = u
    best_res = np.inf
    omega = 1.0
    nu = min(a_map.nu, b_map.nu)
    for _ in range(max_iter):
        a_cells = a_map.evaluate(domain, u)
        b_cells = b_map.evaluate(domain, u)
        coeff = mesh.CoefficientField(domain, _full_cell_array(domain, a_cells),
                                      _full_cell_array(domain, b_cells), nu)
        u_new, _ = solvers.solve_dirichlet_system(domain, coeff, f=f,
                                                  options=options)
        if omega < 1.0:
            u_new = mesh.VectorField(
                domain, (1 - omega) * u.values + omega * u_new.values,
                dirichlet_zero=True)
        res = _relative_update(u_new.values, u.values)
        if len(trace.residuals) >= 1 and res > trace.last:
            omega = max(omega / 2, 0.125)
            trace.relaxation = omega
        trace.record(res)
        u = u_new
        if res < best_res:
            best, best_res = u, res
        if res <= tol:
            trace.converged = True
            return u, trace
    raise NonConvergence(
        f"Picard loop did not reach tol={tol:g} in {max_iter} iterations",
        trace=trace, best=best)


# ---------------------------------------------------------------------------
# coupled quasi-static Maxwell / temperature problem
# ---------------------------------------------------------------------------

def thermo_maxwell_solve(domain, rho_map, Psi, phi, tol=1e-8, max_iter=30,
                         options=None):
    """Alternating solves of the magnetic-field/temperature fixed point.

    The magnetic field satisfies curl(rho(u) curl H) = 0, div H = 0 with
    trace ``Psi``; writing H = v + w with ``w`` the harmonic lift of Psi,
    the zero-trace part v solves the constrained problem with curl-source
    -rho(u) curl(w) and divergence data -div(w).  The temperature solves
    the Poisson problem -Lap(u) = div(H x (rho(u) curl H)) with trace
    ``phi`` — the resistive heating rho |curl H|^2 written in divergence
    form, which needs no derivatives of rho.

    ``Psi`` is a VectorField (only boundary values are read), ``phi`` a
    ScalarField likewise.  Returns (H, u, trace); raises `NonConvergence`
    with trace and best pair when the budget runs out.
    """
    options = options or solvers.SolveOptions()
    trace = IterationTrace()

    w, _ = solvers.lift_boundary_data(domain, Psi, options)
    curl_w, div_w = mesh.gauss_curl_div(w)

    scalar_full = assembly.assemble_scalar_diffusion(domain, bc="neumann")
    cls = domain.node_class.ravel()
    act = scalar_full.node_ids
    inner = np.flatnonzero(cls[act] == mesh.INTERIOR)
    bdry = np.flatnonzero(cls[act] == mesh.BOUNDARY)
    K = scalar_full.matrix
    Kii = K[inner][:, inner].tocsr()
    Kib = K[inner][:, bdry].tocsr()
    inner_op = assembly.SparseOperator("scalar_diffusion_dirichlet", Kii,
                                       domain, act[inner], 1)

    phi_vals = (phi.values if hasattr(phi, "values")
                else np.asarray(phi, dtype=float)).reshape(-1)
    u_nodes = np.zeros(domain.num_nodes)
    u_nodes[act[bdry]] = phi_vals[act[bdry]]

    H = w
    u = mesh.ScalarField(domain, u_nodes.reshape(domain.node_shape))
    best = (H, u)
    best_res = np.inf
    omega = 1.0
    system = None

    for _ in range(max_iter):
        rho_cells = rho_map.evaluate(domain, u)
        coeff = mesh.CoefficientField(
            domain, _full_cell_array(domain, rho_cells),
            _full_cell_array(domain, rho_cells), rho_map.nu)

        g_gauss = -rho_cells[:, None, None] * curl_w
        sol = solvers.solve_constrained(domain, coeff, g=g_gauss,
                                        h=-div_w, method="lagrange",
                                        options=options, system=None)
        H_new = mesh.VectorField(domain, sol.u.values + w.values)

        curl_H, _ = mesh.gauss_curl_div(H_new)
        H_gauss = mesh.gauss_values(H_new)
        S = np.cross(H_gauss, rho_cells[:, None, None] * curl_H)
        load = assembly.assemble_scalar_load(domain, flux=S)
        rhs = load.vector
        wb = u_nodes[act[bdry]]
        if np.abs(wb).max() > 0:
            rhs = rhs - Kib @ wb
        ui, _ = solvers.cg_solve(inner_op, rhs, options)
        u_new_nodes = u_nodes.copy()
        u_new_nodes[act[inner]] = ui
        u_new = mesh.ScalarField(domain, u_new_nodes.reshape(domain.node_shape))

        if omega < 1.0:
            H_new = mesh.VectorField(
                domain, (1 - omega) * H.values + omega * H_new.values)
            u_new = mesh.ScalarField(
                domain, (1 - omega) * u.values + omega * u_new.values)

        res = max(_relative_update(H_new.values, H.values),
                  np.linalg.norm(u_new.values - u.values)
                  / max(np.linalg.norm(u_new.values), 1.0))
        if len(trace.residuals) >= 1 and res > trace.last:
            omega = max(omega / 2, 0.125)
            trace.relaxation = omega
        trace.record(res)
        H, u = H_new, u_new
        if res < best_res:
            best, best_res = (H, u), res
        if res <= tol:
            trace.converged = True
            return H, u, trace
    raise NonConvergence(
        f"thermo-Maxwell loop did not reach tol={tol:g} in {max_iter} "
        "iterations", trace=trace, best=best)
