"""Sparse operator and load assembly for the Q1 discretization.

Bilinear forms
--------------
The principal operator is

    B[u, v] = sum_cells  a_c int (curl u).(curl v)  +  b_c int (div u)(div v)

with cell-wise constant coefficients, plus companions: the curl-curl part
alone, the component-wise vector Laplacian int grad u : grad v, scalar
diffusion int A grad p . grad q, mass matrices, and the element-mean
divergence constraint row per cell.  All reduce to the requested degree of
freedom set (interior nodes for Dirichlet problems, all active nodes for
conormal problems) by elimination.

Local element matrices are coefficient-independent 24x24 (or 8x8) constants
scaled by h, so global assembly is a vectorized scatter of
``a_c * CC + b_c * DD`` over cells, chunked to bound memory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mesh
from .mesh import SHAPE_VALUES, SHAPE_GRADS, _CENTER_GRADS

__all__ = [
    "SparseOperator",
    "LoadFunctional",
    "assemble_curlcurl_divdiv",
    "assemble_vector_laplacian",
    "assemble_scalar_diffusion",
    "assemble_mass",
    "assemble_div_constraint",
    "assemble_load",
    "assemble_scalar_load",
    "weak_residual",
]

_CHUNK_ENTRIES = 12_000_000  # COO entries per assembly chunk


# ---------------------------------------------------------------------------
# reference element matrices (unit cell, to be scaled by powers of h)
# ---------------------------------------------------------------------------

def _unit_tables():
    w = 1.0 / 8.0
    # curl rows R[g] (3 x 24) and div rows D[g] (24), unit-cell gradients
    R = np.zeros((8, 3, 24))
    D = np.zeros((8, 24))
    for g in range(8):
        for l in range(8):
            dx, dy, dz = SHAPE_GRADS[g, l]
            # (curl u)_0 = d u_z/dy - d u_y/dz,  etc.
            R[g, 0, 3 * l + 2] += dy
            R[g, 0, 3 * l + 1] -= dz
            R[g, 1, 3 * l + 0] += dz
            R[g, 1, 3 * l + 2] -= dx
            R[g, 2, 3 * l + 1] += dx
            R[g, 2, 3 * l + 0] -= dy
            D[g, 3 * l + 0] += dx
            D[g, 3 * l + 1] += dy
            D[g, 3 * l + 2] += dz
    def sym(M):
        # einsum may round (k,l) and (l,k) differently by one ulp; force the
        # unit tables bitwise symmetric so assembled operators are too
        return (M + M.T) / 2.0

    CC = sym(w * np.einsum("gik,gil->kl", R, R))
    DD = sym(w * np.einsum("gk,gl->kl", D, D))
    S = sym(w * np.einsum("gkd,gld->kl", SHAPE_GRADS, SHAPE_GRADS))
    MS = sym(w * np.einsum("gk,gl->kl", SHAPE_VALUES, SHAPE_VALUES))
    GG = np.kron(S, np.eye(3))
    MV = np.kron(MS, np.eye(3))
    # element-mean divergence row (center value = mean for multilinears)
    Dbar = np.zeros(24)
    for l in range(8):
        Dbar[3 * l + 0] = _CENTER_GRADS[l, 0]
        Dbar[3 * l + 1] = _CENTER_GRADS[l, 1]
        Dbar[3 * l + 2] = _CENTER_GRADS[l, 2]
    DDbar = np.outer(Dbar, Dbar)
    return R, D, CC, DD, S, MS, GG, MV, Dbar, DDbar


(CURL_ROWS, DIV_ROWS, CC_UNIT, DD_UNIT, S_UNIT, MS_UNIT, GG_UNIT, MV_UNIT,
 DBAR_UNIT, DDBAR_UNIT) = _unit_tables()


# ---------------------------------------------------------------------------
# operator container
# ---------------------------------------------------------------------------

@dataclass
class SparseOperator:
    """A reduced sparse operator plus the bookkeeping to map fields to it.

    ``node_ids`` are the flat node ids of its degree-of-freedom nodes, and
    ``ncomp`` is 1 (scalar) or 3 (vector, interleaved per node).
    """

    kind: str
    matrix: sp.csr_matrix
    domain: object
    node_ids: np.ndarray
    ncomp: int
    symmetric: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def from_field(self, f):
        flat = f.values.reshape(self.domain.num_nodes, -1)[self.node_ids]
        return flat.reshape(-1)

    def to_field(self, vec):
        dom = self.domain
        if self.ncomp == 1:
            vals = np.zeros(dom.num_nodes)
            vals[self.node_ids] = vec
            return mesh.ScalarField(dom, vals.reshape(dom.node_shape))
        vals = np.zeros((dom.num_nodes, 3))
        vals[self.node_ids] = vec.reshape(-1, 3)
        return mesh.VectorField(dom, vals.reshape(dom.node_shape + (3,)))

    def export_triplets(self, path):
        from .io import write_triplets

        write_triplets(path, self.matrix, symmetric=self.symmetric)


@dataclass
class LoadFunctional:
    """Assembled right-hand side over the same dof set as its operator."""

    vector: np.ndarray
    node_ids: np.ndarray
    ncomp: int
    meta: dict = field(default_factory=dict)

    @property
    def norm(self):
        return float(np.linalg.norm(self.vector))


# ---------------------------------------------------------------------------
# dof sets
# ---------------------------------------------------------------------------

def _dof_nodes(domain, where):
    if where == "interior":
        return domain.interior_node_ids()
    if where == "active":
        cls = domain.node_class.ravel()
        return np.flatnonzero(cls != mesh.EXTERIOR)
    raise ValueError(f"unknown dof set {where!r}")


def _dof_map(domain, node_ids, ncomp):
    """Map full (node, comp) dofs to reduced indices, -1 when eliminated."""
    nmap = np.full(domain.num_nodes, -1, dtype=np.int64)
    nmap[node_ids] = np.arange(node_ids.size)
    if ncomp == 1:
        return nmap
    dmap = np.full(domain.num_nodes * 3, -1, dtype=np.int64)
    for c in range(3):
        sel = node_ids * 3 + c
        dmap[sel] = nmap[node_ids] * 3 + c
    return dmap


def _cell_dofs(domain, ncomp):
    conn = domain.connectivity()
    if ncomp == 1:
        return conn
    return (3 * conn[:, :, None] + np.arange(3)).reshape(conn.shape[0], 24)


def _assemble_cellwise(domain, cell_data_fn, ncomp, where):
    """Sum per-cell dense local matrices into a reduced CSR matrix.

    ``cell_data_fn(sl)`` returns the (len(sl), k, k) local blocks for a slice
    of active cells.  Entries touching eliminated dofs are dropped.
    """
    node_ids = _dof_nodes(domain, where)
    dmap = _dof_map(domain, node_ids, ncomp)
    dofs = _cell_dofs(domain, ncomp)
    k = dofs.shape[1]
    ncells = dofs.shape[0]
    dim = node_ids.size * ncomp
    chunk = max(1, _CHUNK_ENTRIES // (k * k))
    acc = sp.csr_matrix((dim, dim))
    for start in range(0, ncells, chunk):
        sl = slice(start, min(start + chunk, ncells))
        local = cell_data_fn(sl)
        d = dmap[dofs[sl]]
        rows = np.broadcast_to(d[:, :, None], local.shape).ravel()
        cols = np.broadcast_to(d[:, None, :], local.shape).ravel()
        vals = local.ravel()
        keep = (rows >= 0) & (cols >= 0)
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        # sum duplicates ourselves with a stable order (cell order for every
        # entry): scipy's reduction is order-unstable, which breaks bitwise
        # symmetry of the assembled matrix by an ulp
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        new = np.flatnonzero(
            np.r_[True, (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])])
        part = sp.coo_matrix(
            (np.add.reduceat(vals, new), (rows[new], cols[new])),
            shape=(dim, dim)).tocsr()
        acc = acc + part
    return acc, node_ids


# ---------------------------------------------------------------------------
# public assemblers
# ---------------------------------------------------------------------------

def assemble_curlcurl_divdiv(domain, coeff, include_div=True,
                             divdiv_quadrature="full", where="interior"):
    """Assemble B[u,v] = sum_c a_c (curl,curl) + b_c (div,div), reduced.

    ``include_div=False`` drops the divergence term entirely (the singular
    curl-curl part used inside constrained solves).  With
    ``divdiv_quadrature="mean"`` the divergence term is integrated with the
    one-point (cell-center) rule, i.e. it penalizes the element-mean
    divergence only; this is the non-locking choice for penalty formulations.
    """
    if divdiv_quadrature not in ("full", "mean"):
        raise ValueError(f"unknown divdiv quadrature {divdiv_quadrature!r}")
    av, bv = coeff.active_values()
    h = domain.spacing
    dd = DD_UNIT if divdiv_quadrature == "full" else DDBAR_UNIT

    def blocks(sl):
        out = av[sl, None, None] * CC_UNIT[None]
        if include_div:
            out = out + bv[sl, None, None] * dd[None]
        return h * out

    mat, node_ids = _assemble_cellwise(domain, blocks, 3, where)
    kind = "curlcurl_divdiv" if include_div else "curlcurl_only"
    return SparseOperator(kind, mat, domain, node_ids, 3,
                          meta={"nu": coeff.nu,
                                "divdiv_quadrature": divdiv_quadrature})


def assemble_vector_laplacian(domain, where="interior"):
    """Component-wise int grad u : grad v, reduced to the dof set."""
    h = domain.spacing

    def blocks(sl):
        n = sl.stop - sl.start
        return np.broadcast_to(h * GG_UNIT, (n, 24, 24))

    mat, node_ids = _assemble_cellwise(domain, blocks, 3, where)
    return SparseOperator("vector_laplacian", mat, domain, node_ids, 3)


def assemble_scalar_diffusion(domain, cell_values=None, bc="dirichlet"):
    """int A grad p . grad q with cell-wise A (default 1).

    ``bc="dirichlet"`` reduces to interior nodes; ``bc="neumann"`` keeps all
    active nodes, yielding the singular conormal operator whose kernel is the
    constants.
    """
    if bc not in ("dirichlet", "neumann"):
        raise ValueError(f"unknown bc {bc!r}")
    h = domain.spacing
    if cell_values is None:
        Av = np.ones(domain.num_cells)
    else:
        Av = np.asarray(cell_values, dtype=float)
        if Av.shape == domain.extent:
            Av = Av[domain.active]
        if Av.shape != (domain.num_cells,):
            raise ValueError("cell_values must give one value per active cell")

    def blocks(sl):
        return h * Av[sl, None, None] * S_UNIT[None]

    where = "interior" if bc == "dirichlet" else "active"
    mat, node_ids = _assemble_cellwise(domain, blocks, 1, where)
    return SparseOperator(f"scalar_diffusion_{bc}", mat, domain, node_ids, 1,
                          meta={"bc": bc})


def assemble_mass(domain, lumped=True, where="interior"):
    """Vector mass matrix; lumped (diagonal h^3 row sums) by default."""
    node_ids = _dof_nodes(domain, where)
    if lumped:
        conn = domain.connectivity()
        incident = np.bincount(conn.ravel(), minlength=domain.num_nodes)
        diag_node = incident * domain.spacing ** 3 / 8.0
        diag = np.repeat(diag_node[node_ids], 3)
        mat = sp.diags(diag).tocsr()
        return SparseOperator("mass", mat, domain, node_ids, 3,
                              meta={"lumped": True})
    h3 = domain.spacing ** 3

    def blocks(sl):
        n = sl.stop - sl.start
        return np.broadcast_to(h3 * MV_UNIT, (n, 24, 24))

    mat, node_ids = _assemble_cellwise(domain, blocks, 3, where)
    return SparseOperator("mass", mat, domain, node_ids, 3,
                          meta={"lumped": False})


def assemble_div_constraint(domain, where="interior"):
    """Constraint rows: (B u)_c = int_cell div u, one row per active cell.

    Returns (B, weights) where ``weights`` is the diagonal of the inverse
    pressure mass (1/cell volume), used by augmented and penalty forms.
    """
    node_ids = _dof_nodes(domain, where)
    dmap = _dof_map(domain, node_ids, 3)
    dofs = _cell_dofs(domain, 3)
    ncells = dofs.shape[0]
    h2 = domain.spacing ** 2
    rows = np.repeat(np.arange(ncells), 24)
    cols = dmap[dofs].ravel()
    vals = np.broadcast_to(h2 * DBAR_UNIT, (ncells, 24)).ravel()
    keep = cols >= 0
    B = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])),
                      shape=(ncells, node_ids.size * 3)).tocsr()
    weights = np.full(ncells, 1.0 / domain.spacing ** 3)
    return B, weights


# ---------------------------------------------------------------------------
# loads
# ---------------------------------------------------------------------------

def _as_gauss_vector(domain, data):
    """Accept a VectorField or a (num_cells, 8, 3) Gauss array."""
    if data is None:
        return None
    if isinstance(data, mesh.VectorField):
        return mesh.gauss_values(data)
    arr = np.asarray(data, dtype=float)
    if arr.shape != (domain.num_cells, 8, 3):
        raise ValueError(f"expected (cells,8,3) Gauss data, got {arr.shape}")
    return arr


def _as_gauss_scalar(domain, data):
    if data is None:
        return None
    if isinstance(data, mesh.ScalarField):
        return mesh.gauss_values(data)
    arr = np.asarray(data, dtype=float)
    if arr.shape != (domain.num_cells, 8):
        raise ValueError(f"expected (cells,8) Gauss data, got {arr.shape}")
    return arr


def assemble_load(domain, f=None, F=None, g=None, where="interior"):
    """Right-hand side  l(v) = int f.v + F.(curl v) + g (div v).

    ``f`` and ``F`` are VectorFields or (cells,8,3) Gauss arrays; ``g`` is a
    ScalarField or (cells,8) Gauss array.  Any may be omitted.
    """
    node_ids = _dof_nodes(domain, where)
    dmap = _dof_map(domain, node_ids, 3)
    dofs = _cell_dofs(domain, 3)
    h = domain.spacing
    w_val = h ** 3 / 8.0
    w_der = h ** 2 / 8.0  # value weight times 1/h from the derivative

    fg = _as_gauss_vector(domain, f)
    Fg = _as_gauss_vector(domain, F)
    gg = _as_gauss_scalar(domain, g)

    local = np.zeros((dofs.shape[0], 24))
    if fg is not None:
        # f . (N_l e_a): shape value at the gauss point times f component
        contrib = w_val * np.einsum("gl,cga->cla", SHAPE_VALUES, fg)
        local += contrib.reshape(-1, 24)
    if Fg is not None:
        local += w_der * np.einsum("gik,cgi->ck", CURL_ROWS, Fg)
    if gg is not None:
        local += w_der * np.einsum("gk,cg->ck", DIV_ROWS, gg)

    flat = np.bincount(dofs.ravel(), weights=local.ravel(),
                       minlength=domain.num_nodes * 3)
    vec = flat[(3 * node_ids[:, None] + np.arange(3)).ravel()]
    return LoadFunctional(vec, node_ids, 3)


def assemble_scalar_load(domain, rhs=None, flux=None, where="interior"):
    """Scalar right-hand side  l(q) = int rhs q - int flux . grad q.

    ``flux`` enters with a minus sign: the load of the weak equation
    -div(A grad p) = rhs - div(flux) tested against q.
    """
    node_ids = _dof_nodes(domain, where)
    conn = domain.connectivity()
    h = domain.spacing
    w_val = h ** 3 / 8.0
    w_der = h ** 2 / 8.0
    local = np.zeros((conn.shape[0], 8))
    rg = _as_gauss_scalar(domain, rhs)
    qg = _as_gauss_vector(domain, flux)
    if rg is not None:
        local += w_val * np.einsum("gl,cg->cl", SHAPE_VALUES, rg)
    if qg is not None:
        local -= w_der * np.einsum("gld,cgd->cl", SHAPE_GRADS, qg)
    flat = np.bincount(conn.ravel(), weights=local.ravel(),
                       minlength=domain.num_nodes)
    return LoadFunctional(flat[node_ids], node_ids, 1)


def weak_residual(operator, solution, load):
    """max_i |B[u, phi_i] - l(phi_i)| normalized by the load 2-norm.

    ``solution`` may be a field on the operator's domain or a raw dof vector.
    """
    if hasattr(solution, "values"):
        u = operator.from_field(solution)
    else:
        u = np.asarray(solution)
    r = operator.matrix @ u - load.vector
    denom = load.norm
    if denom == 0.0:
        return float(np.abs(r).max())
    return float(np.abs(r).max() / denom)
