"""Structured hexahedral grids, coefficient fields and discrete vector calculus.

The discretization is nodal trilinear (Q1) finite elements on axis-aligned
hexahedral cells of uniform spacing ``h``.  Every derivative quantity
(gradient, curl, divergence) is the derivative of the trilinear interpolant,
sampled at the 2x2x2 Gauss points of each cell, and every integral is the
corresponding Gauss quadrature sum.  Because all energy integrands of Q1
fields have per-axis polynomial degree at most two, the 2-point Gauss rule
integrates them exactly; discrete identities such as

    sum_cells int |curl u|^2 + |div u|^2  ==  sum_cells int |grad u|^2

then hold to rounding for fields that vanish on the boundary, exactly
mirroring the continuous integration-by-parts identity.

Domains are boxes or L-shapes described by an active-cell mask on a bounding
box.  Nodes are classified interior / boundary / exterior from the mask;
Dirichlet conditions are imposed by eliminating boundary and exterior nodes.

Arrays are indexed ``[ix, iy, iz]`` with C-order flattening for degree-of-
freedom numbering.  The on-disk voxel format is x-fastest; conversion happens
in :mod:`curllab.io`.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "GridDomain",
    "CoefficientField",
    "ScalarField",
    "VectorField",
    "build_box_domain",
    "build_l_shaped_domain",
    "build_periodic_box_domain",
    "constant_coefficients",
    "checkerboard_coefficients",
    "discrete_curl_div_grad",
    "INTERIOR",
    "BOUNDARY",
    "EXTERIOR",
]

INTERIOR, BOUNDARY, EXTERIOR = 0, 1, 2

# ---------------------------------------------------------------------------
# reference element tables (unit cell [0,1]^3, 2x2x2 Gauss)
# ---------------------------------------------------------------------------

_G1 = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])

# local corner order: l = 4*di + 2*dj + dk, offsets d* in {0,1}
_CORNERS = np.array([(di, dj, dk) for di in (0, 1) for dj in (0, 1) for dk in (0, 1)])


def _shape_tables():
    """Values and unit-cell derivatives of the 8 trilinear shape functions.

    Returns (shp, dshp) with shapes (8 gauss, 8 nodes) and (8, 8, 3); the
    derivative table is on the unit cell, so physical gradients carry a 1/h.
    """
    pts = np.array([(gx, gy, gz) for gx in _G1 for gy in _G1 for gz in _G1])
    shp = np.empty((8, 8))
    dshp = np.empty((8, 8, 3))
    for g, (x, y, z) in enumerate(pts):
        for l, (di, dj, dk) in enumerate(_CORNERS):
            fx = x if di else 1.0 - x
            fy = y if dj else 1.0 - y
            fz = z if dk else 1.0 - z
            dfx = 1.0 if di else -1.0
            dfy = 1.0 if dj else -1.0
            dfz = 1.0 if dk else -1.0
            shp[g, l] = fx * fy * fz
            dshp[g, l] = (dfx * fy * fz, fx * dfy * fz, fx * fy * dfz)
    return pts, shp, dshp


GAUSS_POINTS, SHAPE_VALUES, SHAPE_GRADS = _shape_tables()

# shape gradients at the cell center (multilinear value at center == cell mean)
_CENTER_GRADS = np.empty((8, 3))
for _l, (_di, _dj, _dk) in enumerate(_CORNERS):
    _f = [0.5, 0.5, 0.5]
    _CENTER_GRADS[_l] = (
        (1.0 if _di else -1.0) * 0.25,
        (1.0 if _dj else -1.0) * 0.25,
        (1.0 if _dk else -1.0) * 0.25,
    )


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------

class GridDomain:
    """A uniform hexahedral grid with an active-cell mask.

    Parameters
    ----------
    extent : tuple of int
        Cell counts (nx, ny, nz) of the bounding box; each must be >= 2.
    spacing : float
        Uniform cell edge length h > 0.
    active : ndarray of bool, shape (nx, ny, nz)
        Mask of cells belonging to the domain.  Must be a single
        face-connected component.
    origin : array_like of float, optional
        Physical coordinates of node (0, 0, 0).
    periodic : bool
        If True the grid is a torus: all cells must be active, every node is
        interior, and connectivity wraps.  Used for spectral/mass-identity
        checks; not exposed through the scenario configs.

    Notes
    -----
    Node classification: a node is *exterior* when none of its incident cells
    is active, *interior* when all 8 incident cells exist and are active, and
    *boundary* otherwise.  Dirichlet problems keep interior nodes only.
    """

    def __init__(self, extent, spacing, active, origin=(0.0, 0.0, 0.0), periodic=False):
        extent = tuple(int(n) for n in extent)
        if len(extent) != 3 or any(n < 2 for n in extent):
            raise ValueError(f"extent must be three cell counts >= 2, got {extent}")
        if not spacing > 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        active = np.asarray(active, dtype=bool)
        if active.shape != extent:
            raise ValueError("active mask shape does not match extent")
        if periodic and not active.all():
            raise ValueError("periodic grids must have all cells active")
        self.extent = extent
        self.spacing = float(spacing)
        self.active = active
        self.origin = np.asarray(origin, dtype=float)
        self.periodic = bool(periodic)
        self._check_connected()
        self._classify_nodes()
        self._cache = {}

    # -- construction helpers ------------------------------------------------

    def _check_connected(self):
        from scipy import ndimage

        if not self.active.any():
            raise ValueError("active mask is empty")
        structure = np.zeros((3, 3, 3), dtype=bool)
        structure[1, 1, :] = structure[1, :, 1] = structure[:, 1, 1] = True
        _, ncomp = ndimage.label(self.active, structure=structure)
        if ncomp != 1 and not self.periodic:
            raise ValueError(f"active cells form {ncomp} components, expected 1")

    def _classify_nodes(self):
        nx, ny, nz = self.extent
        if self.periodic:
            self.node_class = np.full((nx, ny, nz), INTERIOR, dtype=np.int8)
            return
        padded = np.zeros((nx + 2, ny + 2, nz + 2), dtype=bool)
        padded[1:-1, 1:-1, 1:-1] = self.active
        # incident active cells of node (i,j,k): padded window [i:i+2, j:j+2, k:k+2]
        win = np.lib.stride_tricks.sliding_window_view(padded, (2, 2, 2))
        count = win.sum(axis=(3, 4, 5))
        cls = np.full(self.node_shape, BOUNDARY, dtype=np.int8)
        cls[count == 0] = EXTERIOR
        cls[count == 8] = INTERIOR
        self.node_class = cls

    # -- basic geometry ------------------------------------------------------

    @property
    def node_shape(self):
        nx, ny, nz = self.extent
        if self.periodic:
            return (nx, ny, nz)
        return (nx + 1, ny + 1, nz + 1)

    @property
    def num_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def num_cells(self):
        return int(self.active.sum())

    @property
    def side_lengths(self):
        return tuple(n * self.spacing for n in self.extent)

    def node_coords(self):
        """Physical coordinates of every node, shape (*node_shape, 3)."""
        key = "node_coords"
        if key not in self._cache:
            axes = [self.origin[d] + self.spacing * np.arange(self.node_shape[d])
                    for d in range(3)]
            self._cache[key] = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self._cache[key]

    def cell_centers(self):
        """Centers of the *active* cells, shape (num_cells, 3)."""
        key = "cell_centers"
        if key not in self._cache:
            idx = np.argwhere(self.active)
            self._cache[key] = self.origin + self.spacing * (idx + 0.5)
        return self._cache[key]

    def active_cell_index(self):
        """(nx,ny,nz) int array mapping cells to active ordinal, -1 if inactive."""
        key = "cell_index"
        if key not in self._cache:
            m = np.full(self.extent, -1, dtype=np.int64)
            m[self.active] = np.arange(self.num_cells)
            self._cache[key] = m
        return self._cache[key]

    def connectivity(self):
        """Node ids of the 8 corners of each active cell, shape (num_cells, 8)."""
        key = "conn"
        if key not in self._cache:
            idx = np.argwhere(self.active)
            corners = idx[:, None, :] + _CORNERS[None, :, :]
            if self.periodic:
                corners = corners % np.array(self.extent)
            ns = self.node_shape
            self._cache[key] = (
                (corners[..., 0] * ns[1] + corners[..., 1]) * ns[2] + corners[..., 2]
            )
        return self._cache[key]

    # -- node sets -----------------------------------------------------------

    def node_mask(self, cls):
        return self.node_class == cls

    def interior_node_ids(self):
        key = "interior_ids"
        if key not in self._cache:
            self._cache[key] = np.flatnonzero(self.node_class.ravel() == INTERIOR)
        return self._cache[key]

    def boundary_node_ids(self):
        key = "boundary_ids"
        if key not in self._cache:
            self._cache[key] = np.flatnonzero(self.node_class.ravel() == BOUNDARY)
        return self._cache[key]

    def boundary_distance(self):
        """Distance from every node to the nearest boundary node.

        Exact minimum over boundary nodes (helped by a KD-tree); exterior
        nodes get distance 0.
        """
        key = "bdist"
        if key not in self._cache:
            from scipy.spatial import cKDTree

            coords = self.node_coords().reshape(-1, 3)
            bd = coords[self.boundary_node_ids()]
            tree = cKDTree(bd)
            d, _ = tree.query(coords, k=1)
            d[self.node_class.ravel() == EXTERIOR] = 0.0
            self._cache[key] = d.reshape(self.node_shape)
        return self._cache[key]

    def contains_ball(self, center, radius):
        """True when the closed ball lies inside the active domain.

        Checked against cell membership: every cell whose center is within
        ``radius`` of ``center`` must be active and inside the bounding box.
        """
        center = np.asarray(center, dtype=float)
        lo = self.origin
        hi = self.origin + np.array(self.side_lengths)
        if np.any(center - radius < lo) or np.any(center + radius > hi):
            return False
        mask = self.cells_in_ball(center, radius, clip=False)
        return mask is not None

    def cells_in_ball(self, center, radius, clip=True):
        """Boolean mask over active cells with centers inside the ball.

        With ``clip=False`` returns None when the ball touches inactive or
        out-of-box cells (used by the containment check).
        """
        center = np.asarray(center, dtype=float)
        all_centers = (
            self.origin
            + self.spacing * (np.indices(self.extent).reshape(3, -1).T + 0.5)
        )
        inside = (
            np.linalg.norm(all_centers - center, axis=1) <= radius
        ).reshape(self.extent)
        if not clip and np.any(inside & ~self.active):
            return None
        return inside[self.active]

    def nodes_in_ball(self, center, radius):
        """Node-id array of non-exterior nodes within the ball."""
        coords = self.node_coords().reshape(-1, 3)
        d = np.linalg.norm(coords - np.asarray(center, dtype=float), axis=1)
        ok = (d <= radius) & (self.node_class.ravel() != EXTERIOR)
        return np.flatnonzero(ok)

    def __repr__(self):
        kind = "periodic box" if self.periodic else (
            "box" if self.active.all() else "masked")
        return (f"GridDomain({kind} {self.extent}, h={self.spacing:g}, "
                f"{self.num_cells} cells)")


def build_box_domain(n, spacing, origin=(0.0, 0.0, 0.0)):
    """Full box of n=(nx,ny,nz) cells (an int means a cube)."""
    if np.isscalar(n):
        n = (int(n),) * 3
    active = np.ones(tuple(int(v) for v in n), dtype=bool)
    return GridDomain(n, spacing, active, origin=origin)


def build_l_shaped_domain(n, spacing, origin=(0.0, 0.0, 0.0)):
    """L-shaped domain: an n^3 box minus its upper (n/2)^3 octant.

    ``n`` must be even and >= 4 so the removed octant is cell-aligned.  The
    re-entrant edge meets the box center; the result is face-connected and
    simply connected.
    """
    n = int(n)
    if n < 4 or n % 2:
        raise ValueError(f"L-shape needs an even cell count >= 4, got {n}")
    active = np.ones((n, n, n), dtype=bool)
    half = n // 2
    active[half:, half:, half:] = False
    return GridDomain((n, n, n), spacing, active, origin=origin)


def build_periodic_box_domain(n, spacing, origin=(0.0, 0.0, 0.0)):
    """Torus of n=(nx,ny,nz) cells; every node interior, connectivity wraps."""
    if np.isscalar(n):
        n = (int(n),) * 3
    active = np.ones(tuple(int(v) for v in n), dtype=bool)
    return GridDomain(n, spacing, active, origin=origin, periodic=True)


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

class CoefficientField:
    """Cell-wise constant coefficients (a, b) with ellipticity ratio nu.

    ``a`` weights the curl-curl form, ``b`` the grad-div form.  Both are
    arrays over all cells of the bounding box; values on inactive cells are
    ignored.  The invariant nu <= a, b <= 1/nu is enforced on active cells.
    """

    def __init__(self, domain, a, b, nu):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.shape != domain.extent or b.shape != domain.extent:
            raise ValueError("coefficient arrays must have one value per cell")
        if not (0 < nu <= 1):
            raise ValueError(f"nu must lie in (0, 1], got {nu}")
        act = domain.active
        for name, arr in (("a", a), ("b", b)):
            vals = arr[act]
            if vals.min() < nu - 1e-12 or vals.max() > 1.0 / nu + 1e-12:
                raise ValueError(
                    f"coefficient {name} leaves [nu, 1/nu] = "
                    f"[{nu:g}, {1/nu:g}]: range [{vals.min():g}, {vals.max():g}]")
        self.domain = domain
        self.a = a
        self.b = b
        self.nu = float(nu)

    def active_values(self):
        act = self.domain.active
        return self.a[act], self.b[act]

    def is_constant(self):
        av, bv = self.active_values()
        return (av == av.flat[0]).all() and (bv == bv.flat[0]).all()

    def __repr__(self):
        av, bv = self.active_values()
        return (f"CoefficientField(nu={self.nu:g}, a in [{av.min():g},{av.max():g}], "
                f"b in [{bv.min():g},{bv.max():g}])")


def constant_coefficients(domain, value=1.0):
    """a = b = value everywhere; nu is the ellipticity ratio of that value."""
    if not value > 0:
        raise ValueError("coefficient value must be positive")
    a = np.full(domain.extent, float(value))
    nu = min(value, 1.0 / value)
    return CoefficientField(domain, a, a.copy(), nu)


def checkerboard_coefficients(domain, nu, period=1):
    """Blocks of ``period``^3 cells alternating between nu and 1/nu.

    Block parity is (i//p + j//p + k//p) mod 2; even blocks get nu.  With
    nu = 1 the field is constant.  ``period`` must divide no extent
    requirement, but must be a positive integer.
    """
    if not (0 < nu <= 1):
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    period = int(period)
    if period < 1:
        raise ValueError("period must be a positive integer")
    i, j, k = np.indices(domain.extent)
    parity = ((i // period) + (j // period) + (k // period)) % 2
    a = np.where(parity == 0, nu, 1.0 / nu)
    return CoefficientField(domain, a, a.copy(), nu)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------

class _Field:
    def __init__(self, domain, values):
        values = np.asarray(values, dtype=float)
        if values.shape[:3] != domain.node_shape:
            raise ValueError(
                f"field shape {values.shape} does not match nodes {domain.node_shape}")
        # exterior nodes carry no information; keep them zero
        ext = domain.node_class == EXTERIOR
        if ext.any():
            values = values.copy()
            values[ext] = 0.0
        self.domain = domain
        self.values = values

    def flat(self):
        return self.values.reshape(self.domain.num_nodes, -1)

    def copy(self):
        return type(self)(self.domain, self.values.copy())


class ScalarField(_Field):
    """Nodal scalar data (one value per grid node)."""

    def __init__(self, domain, values):
        super().__init__(domain, values)
        if self.values.ndim != 3:
            raise ValueError("scalar field needs a (nx+1,ny+1,nz+1) array")

    @classmethod
    def zeros(cls, domain):
        return cls(domain, np.zeros(domain.node_shape))

    @classmethod
    def from_callable(cls, domain, fn):
        xyz = domain.node_coords()
        return cls(domain, fn(xyz[..., 0], xyz[..., 1], xyz[..., 2]))


class VectorField(_Field):
    """Nodal 3-vector data.

    ``dirichlet_zero`` marks fields meant to vanish on the boundary; the flag
    is validated, not assumed.
    """

    def __init__(self, domain, values, dirichlet_zero=False):
        super().__init__(domain, values)
        if self.values.ndim != 4 or self.values.shape[3] != 3:
            raise ValueError("vector field needs a (nx+1,ny+1,nz+1,3) array")
        if dirichlet_zero:
            bmask = domain.node_class == BOUNDARY
            scale = np.abs(self.values).max() + 1.0
            if bmask.any() and np.abs(self.values[bmask]).max() > 1e-12 * scale:
                raise ValueError("field flagged dirichlet_zero has nonzero "
                                 "boundary values")
            self.values[bmask] = 0.0
        self.dirichlet_zero = bool(dirichlet_zero)

    @classmethod
    def zeros(cls, domain, dirichlet_zero=True):
        return cls(domain, np.zeros(domain.node_shape + (3,)),
                   dirichlet_zero=dirichlet_zero)

    @classmethod
    def from_callable(cls, domain, fn, dirichlet_zero=False):
        xyz = domain.node_coords()
        vals = np.stack(fn(xyz[..., 0], xyz[..., 1], xyz[..., 2]), axis=-1)
        return cls(domain, vals, dirichlet_zero=dirichlet_zero)

    def zero_boundary(self):
        """Copy with boundary (and exterior) values forced to zero."""
        v = self.values.copy()
        v[self.domain.node_class != INTERIOR] = 0.0
        return VectorField(self.domain, v, dirichlet_zero=True)


# ---------------------------------------------------------------------------
# sampled derivatives and quadrature
# ---------------------------------------------------------------------------

def _gather(domain, values):
    """Cell-local nodal values, shape (num_cells, 8[, 3])."""
    flat = values.reshape((domain.num_nodes,) + values.shape[3:])
    return flat[domain.connectivity()]


def gauss_values(field):
    """Field values at the 8 Gauss points of each active cell."""
    loc = _gather(field.domain, field.values)
    return np.einsum("gl,cl...->cg...", SHAPE_VALUES, loc)


def gauss_gradients(field):
    """Gradients at Gauss points.

    Scalar field -> (num_cells, 8, 3); vector field -> (num_cells, 8, 3, 3)
    with entry [c,g,i,j] = d u_i / d x_j.
    """
    dom = field.domain
    loc = _gather(dom, field.values)
    if loc.ndim == 2:  # scalar
        return np.einsum("gld,cl->cgd", SHAPE_GRADS, loc) / dom.spacing
    return np.einsum("gld,cli->cgid", SHAPE_GRADS, loc) / dom.spacing


def gauss_curl_div(field):
    """Curl (num_cells,8,3) and divergence (num_cells,8) at Gauss points."""
    grad = gauss_gradients(field)
    curl = np.stack([
        grad[..., 2, 1] - grad[..., 1, 2],
        grad[..., 0, 2] - grad[..., 2, 0],
        grad[..., 1, 0] - grad[..., 0, 1],
    ], axis=-1)
    div = grad[..., 0, 0] + grad[..., 1, 1] + grad[..., 2, 2]
    return curl, div


def cell_mean_divergence(field):
    """Element means of div u (exact for Q1: the center value)."""
    dom = field.domain
    loc = _gather(dom, field.values)
    return np.einsum("ld,cld->c", _CENTER_GRADS, loc) / dom.spacing


def discrete_curl_div_grad(field, cell):
    """Sampled derivatives of the trilinear interpolant on one active cell.

    Parameters
    ----------
    field : VectorField
    cell : tuple (i, j, k)
        Cell index in the bounding box; must be active.

    Returns
    -------
    curl, div, grad : ndarrays of shapes (8,3), (8,), (8,3,3)
        Values at the 2x2x2 Gauss points.
    """
    dom = field.domain
    cell = tuple(int(c) for c in cell)
    if any(not 0 <= cell[d] < dom.extent[d] for d in range(3)):
        raise ValueError(f"cell {cell} outside the bounding box")
    if not dom.active[cell]:
        raise ValueError(f"cell {cell} is not an active cell")
    cid = dom.active_cell_index()[cell]
    loc = _gather(dom, field.values)[cid]
    grad = np.einsum("gld,li->gid", SHAPE_GRADS, loc) / dom.spacing
    curl = np.stack([
        grad[:, 2, 1] - grad[:, 1, 2],
        grad[:, 0, 2] - grad[:, 2, 0],
        grad[:, 1, 0] - grad[:, 0, 1],
    ], axis=-1)
    div = grad[:, 0, 0] + grad[:, 1, 1] + grad[:, 2, 2]
    return curl, div, grad


def quad_weight(domain):
    """Gauss weight per (cell, point): h^3 / 8."""
    return domain.spacing ** 3 / 8.0


def integrate(domain, samples):
    """Quadrature sum of per-(cell, gauss) samples (num_cells, 8, ...)."""
    return quad_weight(domain) * samples.sum(axis=(0, 1))


def l2_norm(field):
    """Quadrature L2 norm of a nodal field."""
    v = gauss_values(field)
    return float(np.sqrt(quad_weight(field.domain) * (v ** 2).sum()))


def grad_l2_norm(field):
    g = gauss_gradients(field)
    return float(np.sqrt(quad_weight(field.domain) * (g ** 2).sum()))


def lp_norm(field, p):
    """Quadrature L^p norm (used with p = 6/5 for source terms)."""
    v = gauss_values(field)
    mag = np.abs(v) if v.ndim == 2 else np.linalg.norm(v, axis=-1)
    return float((quad_weight(field.domain) * (mag ** p).sum()) ** (1.0 / p))


def energy_split(field, coeff=None):
    """(curl energy, div energy) = (int a|curl u|^2, int b|div u|^2)."""
    curl, div = gauss_curl_div(field)
    w = quad_weight(field.domain)
    if coeff is None:
        ce = w * (curl ** 2).sum()
        de = w * (div ** 2).sum()
    else:
        ac, bc = coeff.active_values()
        ce = w * (ac * (curl ** 2).sum(axis=(1, 2))).sum()
        de = w * (bc * (div ** 2).sum(axis=1)).sum()
    return float(ce), float(de)
