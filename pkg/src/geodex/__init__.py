"""geodex: symplectic path indices and Morse-index bookkeeping for closed
geodesics in stationary Lorentzian and semi-Riemannian manifolds.

The layers build on each other: symmetric-form inertia (`bilinear`),
Maslov/Conley-Zehnder/relative indices of symplectic paths
(`symplectic`), metric geometry from small text spec files (`manifold`),
closed-orbit refinement and periodic trivializations (`geodesic`),
variational indices with the index-theorem bookkeeping (`morse`), and
iterate-level growth, partitions, and Morse relations (`iteration`).
"""

from .bilinear import (
    index_coindex_nullity,
    intersection,
    restrict,
    span_of,
    splitting_check,
    symform,
)
from .geodesic import (
    geodesic_maslov,
    integrate_geodesic,
    jacobi_transfer,
    periodic_trivialization,
    refine_closed,
)
from .iteration import (
    iterate_analysis,
    morse_relations_check,
    nullity_of_iterate,
    nullity_partition,
)
from .manifold import (
    auxiliary_riemannian,
    bundled_spec_path,
    load_manifold,
    parse_manifold,
)
from .morse import (
    boundary_form,
    galerkin_index,
    index_report,
)
from .symplectic import (
    conley_zehnder,
    cz_maslov_bridge_check,
    hormander_index,
    iterate_path,
    iteration_bound_check,
    lagrangian_image,
    maslov_index,
    maslov_index_report,
    path_from_function,
    path_from_samples,
    sympspace,
    vertical,
)

__version__ = "0.1.0"

__all__ = [
    "index_coindex_nullity", "intersection", "restrict", "span_of",
    "splitting_check", "symform",
    "geodesic_maslov", "integrate_geodesic", "jacobi_transfer",
    "periodic_trivialization", "refine_closed",
    "iterate_analysis", "morse_relations_check", "nullity_of_iterate",
    "nullity_partition",
    "auxiliary_riemannian", "bundled_spec_path", "load_manifold",
    "parse_manifold",
    "boundary_form", "galerkin_index", "index_report",
    "conley_zehnder", "cz_maslov_bridge_check", "hormander_index",
    "iterate_path", "iteration_bound_check", "lagrangian_image",
    "maslov_index", "maslov_index_report", "path_from_function",
    "path_from_samples", "sympspace", "vertical",
    "__version__",
]
