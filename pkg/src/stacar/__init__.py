"""Age-structured hierarchical Bayesian spatio-temporal Poisson models for
small-area count data, together with the indirect-standardization pipeline
they replace."""

from .adjacency import SpatialGraph, parse_adjacency, read_adjacency_file, \
    lattice_graph, connected_components, icar_structure
from .constraints import ConstraintSet, condition_on_constraints, \
    interaction_constraints, spatial_sum_constraints, total_sum_constraint
from .data import Dataset, read_dataset_csv, parse_dataset_csv, write_dataset_csv, \
    reorder_areas
from .model import Hyperparameters, LatentState, ModelStructure, linear_predictor, \
    log_hyperprior, pc_rate, poisson_loglik, predictor_array
from .modelspec import ModelSpec, enumerate_models, enumeration_families, \
    eq5_family, parse_spec
from .sampling import PrecisionFactor, sample_gmrf
from .standardize import StandardizationResult, ProportionalityReport, \
    expected_counts, expected_for_model, proportionality_check, stratum_rates
from .structures import StructureMatrix, identity_structure, interaction_structure, \
    interaction_rank_deficiency, leroux_precision, rw1_structure

__version__ = "0.1.0"
