"""Regularity and bound verifiers for computed fields.

The estimates this package cares about are qualitative: Holder continuity
with *some* positive exponent, local energy controlled by L2 mass, kernels
decaying like a power of distance.  None of them comes with a published
constant, so everything here is a fit: we measure oscillations, energies, or
kernel magnitudes over dyadic windows, regress in log-log coordinates, and
report slope, intercept, r^2 and the worst residual.  A fit with r^2 below
0.8 is flagged rather than trusted.

Conventions: regions are Euclidean balls (or parabolic cylinders) described
by `Region`; all fits return `ExponentFit`, which serializes to the JSON
schema {kind, window, slope, intercept, r2, residual_max, metadata}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import mesh

__all__ = [
    "Region",
    "ExponentFit",
    "RegularityReport",
    "holder_seminorm",
    "estimate_holder_exponent",
    "caccioppoli_ratio",
    "campanato_profile",
    "decay_fit",
    "gaussian_fit",
    "regularity_report",
]

#: pairwise seminorms are exhaustive up to this many nodes in a region
_EXHAUSTIVE_LIMIT = 16 ** 3

#: fits with r^2 below this are flagged
_R2_FLOOR = 0.8


# ---------------------------------------------------------------------------
# regions and fit records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """A ball (or parabolic cylinder) centred at a physical point.

    For ``kind="parabolic_cylinder"`` the region is B_r(center) x
    (t0 - r^2, t0], the backward cylinder used by parabolic Holder norms;
    ``t0`` is then required.
    """

    center: tuple
    radius: float
    kind: str = "ball"
    t0: float | None = None

    def __post_init__(self):
        if self.kind not in ("ball", "parabolic_cylinder"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("region radius must be positive")
        if self.kind == "parabolic_cylinder" and self.t0 is None:
            raise ValueError("parabolic cylinders need a time anchor t0")
        object.__setattr__(self, "center",
                           tuple(float(c) for c in self.center))

    def node_ids(self, domain):
        ids = domain.nodes_in_ball(self.center, self.radius)
        if ids.size == 0:
            raise ValueError("region contains no active nodes")
        return ids

    def times(self, t_grid):
        """Indices of trajectory times inside the backward window."""
        t = np.asarray(t_grid, dtype=float)
        keep = (t > self.t0 - self.radius ** 2 - 1e-14) & (t <= self.t0 + 1e-14)
        if not keep.any():
            raise ValueError("region contains no trajectory times")
        return np.flatnonzero(keep)


@dataclass
class ExponentFit:
    """A log-log regression with its quality numbers.

    ``window`` holds the abscissae actually used (strictly increasing for
    radius fits).  ``flags`` collects soft failures — "low_r_squared",
    "degenerate_oscillations", "saturated_radius", "lipschitz_or_better" —
    that a caller must inspect before quoting ``slope``.
    """

    kind: str
    slope: float
    intercept: float
    r_squared: float
    window: list
    residual_max: float
    flags: list = dc_field(default_factory=list)
    metadata: dict = dc_field(default_factory=dict)

    def to_json(self, **extra):
        payload = {
            "kind": self.kind,
            "window": [float(w) for w in self.window],
            "slope": float(self.slope),
            "intercept": float(self.intercept),
            "r2": float(self.r_squared),
            "residual_max": float(self.residual_max),
            "metadata": {**self.metadata, "flags": list(self.flags)},
        }
        payload.update(extra)
        return json.dumps(payload, sort_keys=True, default=float)


@dataclass
class RegularityReport:
    """Per-field bundle: oscillation table plus the three local estimates."""

    oscillations: list           # (radius, oscillation) pairs
    alpha: ExponentFit
    caccioppoli: dict            # radius -> ratio
    campanato: ExponentFit

    def to_json(self):
        return json.dumps({
            "oscillations": [[float(r), float(o)] for r, o in self.oscillations],
            "alpha": json.loads(self.alpha.to_json()),
            "caccioppoli": {f"{r:g}": float(v)
                            for r, v in self.caccioppoli.items()},
            "campanato": json.loads(self.campanato.to_json()),
        }, sort_keys=True)


def _loglog_fit(kind, x, y, window=None, metadata=None):
    """Least-squares line through (log x, log y) with r^2 bookkeeping."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    fit = ExponentFit(
        kind=kind,
        slope=float(slope),
        intercept=float(intercept),
        r_squared=float(r2),
        window=list(window if window is not None else x),
        residual_max=float(np.abs(resid).max()),
        metadata=dict(metadata or {}),
    )
    if fit.r_squared < _R2_FLOOR:
        fit.flags.append("low_r_squared")
    return fit


# ---------------------------------------------------------------------------
# Holder seminorms and exponents
# ---------------------------------------------------------------------------

def _field_rows(u, ids):
    """Field values at flat node ids as an (n, ncomp) array."""
    vals = u.values if hasattr(u, "values") else np.asarray(u, dtype=float)
    if vals.ndim == 4:                      # vector field on the node grid
        return vals.reshape(-1, 3)[ids]
    return vals.reshape(-1, 1)[ids]


def _stride_ids(ids, limit=_EXHAUSTIVE_LIMIT):
    # deterministic stride-2 decimation until the pair count is tractable
    while ids.size > limit:
        ids = ids[::2]
    return ids


def _chunked_pair_max(rows_a, rows_b, dist_fn, block=512):
    """max over pairs of |a_i - b_j| / dist(i, j), skipping dist == 0."""
    best = 0.0
    for lo in range(0, rows_a.shape[0], block):
        hi = lo + block
        diff = np.linalg.norm(rows_a[lo:hi, None, :] - rows_b[None, :, :],
                              axis=-1)
        dist = dist_fn(lo, hi)
        mask = dist > 0
        if mask.any():
            best = max(best, float((diff[mask] / dist[mask]).max()))
    return best


def _chunked_diff_max(rows, block=1024):
    best = 0.0
    for lo in range(0, rows.shape[0], block):
        diff = np.linalg.norm(rows[lo:lo + block, None, :] - rows[None, :, :],
                              axis=-1)
        best = max(best, float(diff.max(initial=0.0)))
    return best


def holder_seminorm(u, alpha, region):
    """sup |u(x) - u(y)| / d(x, y)^alpha over node pairs of a region.

    ``d`` is the Euclidean distance for balls and the parabolic distance
    max(|x-y|, sqrt|t-s|) for cylinders; in the latter case ``u`` must be a
    pair (times, fields) as returned by the parabolic solver.  Pairs are
    exhaustive up to 16^3 nodes per region and stride-2 subsampled beyond.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if region.kind == "ball":
        domain = u.domain
        ids = _stride_ids(region.node_ids(domain))
        pts = domain.node_coords().reshape(-1, 3)[ids]
        rows = _field_rows(u, ids)

        def dist(lo, hi):
            d = np.linalg.norm(pts[lo:hi, None, :] - pts[None, :, :], axis=-1)
            return d ** alpha

        return _chunked_pair_max(rows, rows, dist)

    times, fields = u
    tidx = region.times(times)
    domain = fields[0].domain
    ids = _stride_ids(region.node_ids(domain))
    pts = domain.node_coords().reshape(-1, 3)[ids]
    space = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    stack = [_field_rows(fields[i], ids) for i in tidx]
    tsel = np.asarray(times, dtype=float)[tidx]
    best = 0.0
    for i in range(len(tidx)):
        for j in range(i, len(tidx)):
            dist = np.maximum(space, np.sqrt(abs(tsel[i] - tsel[j])))
            diff = np.linalg.norm(stack[i][:, None] - stack[j][None, :],
                                  axis=-1)
            mask = dist > 0
            if mask.any():
                best = max(best,
                           float((diff[mask] / dist[mask] ** alpha).max()))
    return best


def _oscillation(u, domain, center, r):
    ids = _stride_ids(domain.nodes_in_ball(center, r))
    if ids.size == 0:
        return 0.0
    return _chunked_diff_max(_field_rows(u, ids))


def estimate_holder_exponent(u, center, radii):
    """Fit osc_{B_r}(u) ~ r^alpha over dyadic balls around ``center``.

    Oscillation-based (max pairwise difference per ball) rather than a
    direct seminorm fit; the grid quantizes pair distances too coarsely for
    the latter.  Requires at least four radii with the largest ball inside
    the domain.  Slopes at or above 1 are reported with the flag
    "lipschitz_or_better" (the fit cannot distinguish beyond Lipschitz).
    """
    radii = sorted(float(r) for r in radii)
    if len(radii) < 4:
        raise ValueError("need at least four radii for an exponent fit")
    domain = u.domain
    if not domain.contains_ball(center, radii[-1]):
        raise ValueError("largest ball leaves the domain")
    osc = np.array([_oscillation(u, domain, center, r) for r in radii])
    if np.count_nonzero(osc) < 3:
        return ExponentFit("holder_exponent", 0.0, -np.inf, 0.0, radii,
                           0.0, flags=["degenerate_oscillations"],
                           metadata={"oscillations": [float(o) for o in osc]})
    keep = osc > 0
    fit = _loglog_fit("holder_exponent", np.array(radii)[keep], osc[keep],
                      window=radii,
                      metadata={"oscillations": [float(o) for o in osc],
                                "estimator": "dyadic-oscillation"})
    if fit.slope >= 1.0 - 1e-9:
        fit.flags.append("lipschitz_or_better")
    return fit


# ---------------------------------------------------------------------------
# local energy estimates
# ---------------------------------------------------------------------------

def caccioppoli_ratio(u, f, center, r):
    """Interior energy over L2 mass, the empirical Caccioppoli constant.

    Returns  [int_{B_2r} |curl u|^2 + |div u|^2] /
             [r^-2 int_{B_3r} |u|^2  +  ||f||^2_{L^{6/5}(B_3r)}].

    Requires B_{3r}(center) inside the domain.  For a weak solution with
    data f the value is bounded uniformly in r; for an arbitrary field it
    grows like r^-2 under refinement, which is the negative control.
    """
    domain = u.domain
    if not domain.contains_ball(center, 3 * r):
        raise ValueError("B_{3r} must be contained in the domain")
    w = mesh.quad_weight(domain)

    curl_g, div_g = mesh.gauss_curl_div(u)
    in2 = domain.cells_in_ball(center, 2 * r)
    num = float(w * ((curl_g[in2] ** 2).sum() + (div_g[in2] ** 2).sum()))

    in3 = domain.cells_in_ball(center, 3 * r)
    u_g = mesh.gauss_values(u)
    den = float((u_g[in3] ** 2).sum() * w) / r ** 2
    if f is not None:
        f_g = mesh.gauss_values(f)
        mag = np.linalg.norm(f_g[in3], axis=-1)
        den += float((mag ** 1.2).sum() * w) ** (2 / 1.2)
    if den <= 1e-300:
        raise ValueError("degenerate Caccioppoli denominator (u and f vanish)")
    return num / den


def campanato_profile(u, x0, radii):
    """Growth fit of the local Dirichlet energy int_{Omega_r} |grad u|^2.

    The slope s of log energy against log r encodes the Campanato exponent:
    alpha_est = (s - 1) / 2, stored in metadata.  ``x0`` may sit near the
    boundary; the intersected region Omega_r is used.  Radii reaching past
    the domain diameter are flagged "saturated_radius".

    Membership is decided per quadrature point, and the abscissa of the fit
    is the effective radius (3 V_h(r) / 4 pi)^{1/3} of the quadrature-
    measured volume V_h(r).  This removes the staircase bias of counting
    whole cells: a field with constant gradient fits slope 3 exactly at any
    resolution.
    """
    radii = sorted(float(r) for r in radii)
    if len(radii) < 3:
        raise ValueError("need at least three radii for a Campanato fit")
    domain = u.domain
    w = mesh.quad_weight(domain)
    grad_g = mesh.gauss_gradients(u)
    dens = (grad_g ** 2).sum(axis=(-2, -1))          # (cells, 8)
    gpts = _gauss_coords(domain)
    dist = np.linalg.norm(gpts - np.asarray(x0, dtype=float), axis=-1)
    energies, r_eff = [], []
    for r in radii:
        inside = dist <= r
        vol = float(inside.sum() * w)
        if vol == 0:
            continue
        energies.append(float(dens[inside].sum() * w))
        r_eff.append((3.0 * vol / (4.0 * np.pi)) ** (1.0 / 3.0))
    if len(energies) < 3:
        raise ValueError("fewer than three radii captured quadrature points")
    energies = np.asarray(energies)
    diam = float(np.linalg.norm(domain.side_lengths))
    fit = _loglog_fit("campanato_profile", r_eff,
                      np.maximum(energies, 1e-300),
                      metadata={"energies": [float(e) for e in energies],
                                "nominal_radii": radii})
    fit.metadata["alpha_est"] = (fit.slope - 1.0) / 2.0
    if radii[-1] > diam:
        fit.flags.append("saturated_radius")
    return fit


def _gauss_coords(domain):
    """Physical coordinates of all quadrature points, shape (cells, 8, 3)."""
    conn = domain.connectivity()
    corner = domain.node_coords().reshape(-1, 3)[conn[:, 0]]
    offs = mesh.GAUSS_POINTS * domain.spacing
    return corner[:, None, :] + offs[None, :, :]


# ---------------------------------------------------------------------------
# kernel decay fits
# ---------------------------------------------------------------------------

def decay_fit(samples):
    """Power-law fit of interior Green's samples: log |G| against log r.

    Keeps samples with 3h <= r <= L/4 and both endpoints farther from the
    boundary than they are from each other (the interior regime, where the
    expected slope is -1).  When close-by sample pairs share a source, an
    increment fit |G(x,y) - G(x',y)| ~ |x - x'|^alpha |x-y|^{-1-alpha} is
    reported under metadata["increment"].
    """
    if not samples:
        raise ValueError("no samples supplied")
    spacing = _infer_spacing(samples)
    side = _infer_side(samples)
    rmin, rmax = 3 * spacing, side / 4
    kept = [s for s in samples
            if rmin - 1e-12 <= s.r <= rmax + 1e-12 and min(s.dx, s.dy) > s.r]
    if not kept:
        raise ValueError("no samples in the interior fit window")
    r = np.array([s.r for s in kept])
    mag = np.array([np.abs(s.block).max() for s in kept])
    fit = _loglog_fit("greens_decay", r, np.maximum(mag, 1e-300),
                      metadata={"num_samples": len(kept),
                                "spacing": spacing, "side": side})
    fit.metadata["increment"] = _increment_fit(kept)
    return fit


def _infer_spacing(samples):
    """Grid spacing from the coordinate lattice of the sample cloud."""
    xs = np.array([s.x for s in samples] + [s.y for s in samples])
    for axis in range(3):
        vals = np.unique(np.round(xs[:, axis], 12))
        gaps = np.diff(vals)
        gaps = gaps[gaps > 1e-12]
        if gaps.size:
            return float(gaps.min())
    return min(s.r for s in samples) / 3


def _infer_side(samples):
    xs = np.array([s.x for s in samples] + [s.y for s in samples])
    ext = xs.max(axis=0) - xs.min(axis=0)
    # samples avoid the boundary; extend to the nearest enclosing box
    return float(ext.max() + 2 * min(min(s.dx, s.dy) for s in samples))


def _increment_fit(samples):
    """Holder-in-x increments against paired close samples."""
    by_source = {}
    for s in samples:
        by_source.setdefault(tuple(np.round(s.y, 12)), []).append(s)
    resp, covar = [], []
    for group in by_source.values():
        for i in range(len(group)):
            for j in range(i + 1, len(group)):
                a, b = group[i], group[j]
                dxx = float(np.linalg.norm(np.asarray(a.x) - np.asarray(b.x)))
                rr = min(a.r, b.r)
                if dxx == 0 or dxx >= rr / 2:
                    continue
                dg = np.abs(np.asarray(a.block) - np.asarray(b.block)).max()
                if dg <= 0:
                    continue
                resp.append(np.log(dg) + np.log(rr))
                covar.append(np.log(dxx / rr))
    if len(resp) < 3:
        return {"alpha": None, "num_pairs": len(resp)}
    alpha, logc = np.polyfit(covar, resp, 1)
    return {"alpha": float(alpha), "C": float(np.exp(logc)),
            "num_pairs": len(resp)}


def gaussian_fit(snapshots, bins=None, boundary_weights=False):
    """Gaussian-profile regression of heat-kernel snapshots.

    Regresses log(t^{3/2} |K_t(x, y)|) on |x - y|^2 / t; the negated slope
    is the Gaussian rate kappa and exp(intercept) estimates the prefactor
    (exactly (4 pi)^{-3/2} for the constant-coefficient kernel).  The window
    drops |x - y| < 3h (mollification), |x - y| > 2 sqrt(t) (tail noise)
    and, unless boundary factors are being fitted, snapshots whose 8 sqrt(t)
    exceeds the box side (boundary screening).

    With ``bins`` the abscissa is quantile-binned and bin medians are
    fitted — rough-coefficient kernels need the averaging to recover a
    clean line.  With ``boundary_weights`` an extra pass regresses the
    residuals on log(1 ^ d_x/(sqrt(t) v r)) + log(1 ^ d_y/(sqrt(t) v r));
    the fitted exponent lands in metadata["boundary_alpha"].
    """
    if not snapshots:
        raise ValueError("no snapshots supplied")
    domain = snapshots[0].field.domain
    h = domain.spacing
    side = float(min(domain.side_lengths))
    coords = domain.node_coords().reshape(-1, 3)
    bdist = domain.boundary_distance().reshape(-1)

    xs, ys, wres = [], [], []
    for snap in snapshots:
        t = snap.t
        if 8 * np.sqrt(t) > side and not boundary_weights:
            continue
        yflat = _flat_node(domain, snap.y)
        yc = coords[yflat]
        vals = snap.field.values.reshape(-1, 3)
        mag = np.linalg.norm(vals, axis=1)
        r = np.linalg.norm(coords - yc, axis=1)
        keep = (r >= 3 * h) & (r <= 2 * np.sqrt(t)) & (mag > 0)
        if not keep.any():
            continue
        xs.append(r[keep] ** 2 / t)
        ys.append(np.log(t ** 1.5 * mag[keep]))
        if boundary_weights:
            scale = np.maximum(np.sqrt(t), r[keep])
            wfac = np.minimum(1.0, bdist[keep] / scale) \
                * np.minimum(1.0, bdist[yflat] / scale)
            wres.append(np.log(np.maximum(wfac, 1e-12)))
    if not xs:
        raise ValueError("empty Gaussian fit window")
    x = np.concatenate(xs)
    y = np.concatenate(ys)

    meta = {"num_samples": int(x.size), "binned": bool(bins)}
    if bins:
        edges = np.quantile(x, np.linspace(0, 1, bins + 1))
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, bins - 1)
        got = [b for b in range(bins) if np.any(idx == b)]
        xf = np.array([np.median(x[idx == b]) for b in got])
        yf = np.array([np.median(y[idx == b]) for b in got])
    else:
        xf, yf = x, y

    slope, intercept = np.polyfit(xf, yf, 1)
    resid = yf - (slope * xf + intercept)
    ss_tot = float(((yf - yf.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    fit = ExponentFit("heat_gaussian", float(slope), float(intercept),
                      float(r2), [float(xf.min()), float(xf.max())],
                      float(np.abs(resid).max()), metadata=meta)
    fit.metadata["kappa"] = -fit.slope
    fit.metadata["prefactor"] = float(np.exp(fit.intercept))
    if fit.r_squared < _R2_FLOOR:
        fit.flags.append("low_r_squared")

    if boundary_weights:
        w = np.concatenate(wres)
        base = y - (slope * x + intercept)
        damped = w < -1e-6    # only samples actually damped by the boundary
        if damped.sum() >= 3:
            fit.metadata["boundary_alpha"] = float(
                np.polyfit(w[damped], base[damped], 1)[0])
        else:
            fit.metadata["boundary_alpha"] = None
    return fit


def _flat_node(domain, y):
    if np.isscalar(y):
        return int(y)
    return int(np.ravel_multi_index(tuple(int(v) for v in y),
                                    domain.node_shape))


# ---------------------------------------------------------------------------
# combined report
# ---------------------------------------------------------------------------

def regularity_report(u, f, center, radii, caccioppoli_radii=None):
    """Bundle oscillation, exponent, Caccioppoli and Campanato diagnostics."""
    domain = u.domain
    radii = sorted(float(r) for r in radii)
    osc = [(r, _oscillation(u, domain, center, r)) for r in radii]
    alpha = estimate_holder_exponent(u, center, radii)
    cacc = {}
    for r in (caccioppoli_radii if caccioppoli_radii is not None else radii):
        if domain.contains_ball(center, 3 * r):
            cacc[r] = caccioppoli_ratio(u, f, center, r)
    camp = campanato_profile(u, center, radii)
    return RegularityReport(osc, alpha, cacc, camp)
