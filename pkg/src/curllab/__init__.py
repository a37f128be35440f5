"""curllab: a desk-scale laboratory for curl-curl / grad-div systems.

Solves  curl(a curl u) - grad(b div u) = f  and its constrained and
parabolic companions on structured voxel domains with rough (cell-wise)
coefficients, then measures what the solutions actually do: Green's-function
decay, heat-kernel Gaussian bounds, Holder/Campanato regularity, and energy
(Caccioppoli) inequalities.
"""

__version__ = "0.1.0"

from .mesh import (  # noqa: F401
    GridDomain,
    CoefficientField,
    ScalarField,
    VectorField,
    build_box_domain,
    build_l_shaped_domain,
    build_periodic_box_domain,
    constant_coefficients,
    checkerboard_coefficients,
    discrete_curl_div_grad,
)
from .errors import (  # noqa: F401
    CurlLabError,
    IncompatibleData,
    NonSolenoidalSource,
    IndefiniteOperator,
    MaxIterExceeded,
    NonConvergence,
)
