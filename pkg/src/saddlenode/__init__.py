"""Formal and sectorial normal forms of doubly-resonant saddle-nodes in C^3."""

from .borel_laplace import borel, borel_pade_laplace, laplace_sum, pade_continue, solve_irregular_ode, weighted_norm
from .formal_normalization import (
    NormalFormData,
    PipelineResult,
    normalize,
    run_pipeline,
    solve_homological,
    verify_conjugacy,
)
from .painleve import boutroux_transform, check_transversally_hamiltonian, check_transversally_symplectic, p1_field
from .saddle_node import SaddleNodeField, classify, random_saddle_node, residue
from .sectorial import (
    SectorGeometry,
    SectorialField,
    build_sectorial_maps,
    homological_path_integral,
    integrate_flow,
    transition_flatness,
)
from .series_core import ConjugacyMap, MultiSeries, PolyVectorField, UniSeries

__version__ = "0.1.0"
