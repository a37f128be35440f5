"""Built-in scenario presets, one per verification family.

Each preset is a complete scenario config (see :mod:`curllab.scenarios`)
that the command line can run by name: ``curllab run verify-greens``.
`get` returns a deep copy, so callers may freely edit the blocks.
"""

from __future__ import annotations

import copy

__all__ = ["PRESETS", "names", "get", "describe"]


def _p(description, *, task, domain=None, coefficients=None, solver=None,
       output=None):
    cfg = {"seed": 42, "task": task}
    if domain:
        cfg["domain"] = domain
    if coefficients:
        cfg["coefficients"] = coefficients
    if solver:
        cfg["solver"] = solver
    if output:
        cfg["output"] = output
    return {"description": description, "config": cfg}


PRESETS = {
    "energy-identity": _p(
        "Curl-div vs full-gradient energy identity on random "
        "boundary-vanishing fields (8^3 box, 20 draws, 1e-10).",
        domain={"kind": "box", "n": 8},
        task={"kind": "dirichlet", "check": "energy-identity", "fields": 20},
    ),
    "manufactured-convergence": _p(
        "Dirichlet solve against the product-sine manufactured solution; "
        "L2 error ratio between 16^3 and 32^3 must sit in the "
        "second-order window [3.2, 4.8].",
        coefficients={"kind": "constant", "value": 1.0},
        task={"kind": "dirichlet", "grids": [16, 32]},
        solver={"tol": 1e-10},
    ),
    "constrained-agreement": _p(
        "Lagrange, penalty and pipeline routes on a compatible curl "
        "source over checkerboard coefficients: pairwise agreement 5%, "
        "penalty divergence bound, pipeline identity residual decaying "
        "under refinement.",
        coefficients={"kind": "checkerboard", "nu": 0.5},
        task={"kind": "constrained", "grids": [8, 16]},
    ),
    "verify-greens": _p(
        "Interior Green's-function decay at constant a = b = 1 on the "
        "16^3 box: paired-box screening correction, fitted slope "
        "-1 +/- 0.05 plus reciprocity to 1e-6.",
        coefficients={"kind": "constant", "value": 1.0},
        task={"kind": "greens", "n": 16,
              "slope_window": [-1.05, -0.95]},
        solver={"tol": 1e-10, "preconditioner": "amg"},
    ),
    "greens-rough": _p(
        "Green's decay with checkerboard coefficients (nu = 0.5): the "
        "-1 power law survives rough cells within +/- 0.15.",
        coefficients={"kind": "checkerboard", "nu": 0.5},
        task={"kind": "greens", "n": 16,
              "slope_window": [-1.15, -0.85]},
        solver={"tol": 1e-10, "preconditioner": "amg"},
    ),
    "greens-lshape-bound": _p(
        "Global two-sided envelope |G| <= C d(x)^a d(y)^a r^(-1-2a) "
        "over constrained columns on the L-shaped domain; alpha > 0, "
        "every sample under the envelope, >= 200 samples.",
        coefficients={"kind": "checkerboard", "nu": 0.5},
        task={"kind": "greens", "mode": "global-bound", "n": 16,
              "min_samples": 200},
    ),
    "heat-gaussian": _p(
        "Heat-kernel Gaussian profile at constant coefficients on the "
        "24^3 box: fitted decay rate 0.25 +/- 0.03, prefactor within "
        "20% of (4 pi)^{-3/2}, semigroup and periodic-mass checks.",
        coefficients={"kind": "constant", "value": 1.0},
        task={"kind": "heat-kernel", "n": 24,
              "kappa_window": [0.22, 0.28], "prefactor_rtol": 0.2},
    ),
    "heat-rough": _p(
        "Heat-kernel tails with checkerboard coefficients: Gaussian-type "
        "decay (positive fitted rate, r^2 >= 0.9) plus the structural "
        "semigroup and mass identities.",
        coefficients={"kind": "checkerboard", "nu": 0.5},
        task={"kind": "heat-kernel", "n": 24,
              "require_positive_rate": True},
        solver={"tol": 1e-10, "preconditioner": "amg"},
    ),
    "holder-stability": _p(
        "Interior Holder exponent at the eight-block coefficient corner "
        "(contrast 25 checkerboard, pattern fixed in physical space): "
        "alpha in (0, 1), drift <= 20% between 16^3 and 32^3.",
        coefficients={"kind": "checkerboard", "nu": 0.2, "blocks": 2},
        task={"kind": "regularity", "problem": "checkerboard-box",
              "grids": [16, 32]},
        solver={"tol": 1e-10, "preconditioner": "amg"},
    ),
    "lshape-regularity": _p(
        "Campanato growth exponent at the re-entrant edge of the "
        "L-shaped constrained problem: alpha in (0, 1), stable under "
        "refinement.",
        coefficients={"kind": "checkerboard", "nu": 0.5},
        task={"kind": "regularity", "problem": "lshape-constrained",
              "grids": [12, 18]},
    ),
    "caccioppoli-interior": _p(
        "Interior energy ratios ||grad u||_{B_2r} / Caccioppoli bound at "
        "r = 4h, 8h, 16h on a fine grid (spread <= 4) plus discrete "
        "harmonicity of the divergence potential b div u.",
        coefficients={"kind": "constant", "value": 1.0},
        task={"kind": "regularity", "problem": "caccioppoli",
              "n": 100, "psi_n": 24},
        solver={"tol": 1e-8, "preconditioner": "amg"},
    ),
    "quasilinear": _p(
        "Picard iteration for coefficients depending on |u| (sine map): "
        "relative update below 1e-8.",
        domain={"kind": "box", "n": 12},
        task={"kind": "app", "app": "quasilinear"},
        output={"vtk": True},
    ),
    "thermo": _p(
        "Thermo-Maxwell alternating solver on linear boundary data; "
        "emits VTK fields and the iteration trace.",
        domain={"kind": "box", "n": 10},
        task={"kind": "app", "app": "thermo", "data": "linear-trace"},
        output={"vtk": True},
    ),
    "bogovskii": _p(
        "Minimum-energy divergence construction: element-mean constraint "
        "met to 1e-8 and gradient energy no larger than the feasible "
        "field it was manufactured from.",
        domain={"kind": "box", "n": 10},
        task={"kind": "constrained", "mode": "bogovskii"},
    ),
    "parabolic-decay": _p(
        "Implicit-Euler evolution of an exact discrete eigenmode: decay "
        "factor (1 + dt lambda)^(-steps) reproduced to 1e-10 with "
        "monotone energy.",
        domain={"kind": "box", "n": 12},
        task={"kind": "parabolic"},
    ),
}


def names():
    return sorted(PRESETS)


def get(name):
    """Deep copy of the named preset config; KeyError on unknown names."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; available: {names()}")
    return copy.deepcopy(PRESETS[name]["config"])


def describe():
    """JSON-ready listing: name, task kind, one-line description."""
    out = []
    for name in names():
        cfg = PRESETS[name]["config"]
        out.append({
            "name": name,
            "task": cfg["task"]["kind"],
            "description": PRESETS[name]["description"],
        })
    return out
