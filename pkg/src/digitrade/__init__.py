"""Estimation engine for bilateral trade in digital products.

The package walks from raw revenue and consumption inputs to bilateral
flow estimates and derived analytics: gravity features feed a boosted
ensemble that fills unobserved consumption, harmonization pins aggregates
to reported totals, a transportation solver allocates consumption to
origins, and the analytics and complexity layers summarize the result.
``digitrade.pipeline`` chains those stages behind one config; the
``digitrade`` console script exposes each stage as a subcommand.
"""

from .analytics import (
    HIGH_INCOME_GDP_PC,
    DecouplingRecord,
    GroupTrendRow,
    RegressionResult,
    aggregate_flows,
    balance_offset,
    cagr,
    combined_balance,
    decoupling,
    decoupling_records,
    eigenvector_centrality,
    group_trends,
    lorenz,
    ols_robust,
    random_basket_entropy,
    reference_upper_bound,
    sector_shares,
    shannon_entropy,
    top_share,
    trade_balance,
)
from .boosting import (
    ZERO_USD_THRESHOLD,
    ConsumptionPredictor,
    FoldResult,
    HyperGrid,
    LinearPredictor,
    Metrics,
    build_training,
    clean_training_set,
    fit_predictor,
    load_model,
    loco_cv,
    lopo_cv,
    metrics,
    predict_all,
    save_model,
    tune,
)
from .complexity import (
    ComplexityScores,
    OutputMatrix,
    SpecializationMatrix,
    binarize,
    digital_output_matrix,
    eci_pci,
    merge_digital,
    minmax,
    physical_output_matrix,
    rca,
)
from .dataset import (
    Dataset,
    DataPaths,
    RevenueLedger,
    ValidationReport,
    dataset_digest,
    load_dataset,
    save_dataset,
    validate,
)
from .errors import (
    ComputationError,
    DigitradeError,
    IntegrityError,
    MissingStageError,
    SchemaError,
)
from .features import (
    FEATURE_NAMES,
    FeatureMatrix,
    assemble,
    assemble_matrix,
    fit_zero_stage,
    permutation_importance,
    select_top,
)
from .config import ALLOCATION_MODES, PipelineConfig, load_config
from .harmonize import HarmonizationTargets, harmonize
from .synth import synth_world
from .transport import (
    AllocationTensor,
    BoundsReport,
    FlowRow,
    TransportProblem,
    allocate_all,
    balance,
    build_problem,
    confidence_bounds,
    cost_weights,
    extract_flows,
    greedy_allocate,
    reassign_to_parent,
    solve_transport,
)
from .tree import BoostedEnsemble, HyperParams, RegressionTree, fit_ensemble, fit_tree

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "DigitradeError",
    "SchemaError",
    "IntegrityError",
    "ComputationError",
    "MissingStageError",
    # data model
    "Dataset",
    "DataPaths",
    "RevenueLedger",
    "ValidationReport",
    "load_dataset",
    "save_dataset",
    "validate",
    "dataset_digest",
    "synth_world",
    # features and predictor
    "FEATURE_NAMES",
    "FeatureMatrix",
    "assemble",
    "assemble_matrix",
    "fit_zero_stage",
    "permutation_importance",
    "select_top",
    "RegressionTree",
    "BoostedEnsemble",
    "HyperParams",
    "HyperGrid",
    "fit_tree",
    "fit_ensemble",
    "Metrics",
    "FoldResult",
    "metrics",
    "ZERO_USD_THRESHOLD",
    "build_training",
    "clean_training_set",
    "ConsumptionPredictor",
    "LinearPredictor",
    "fit_predictor",
    "loco_cv",
    "lopo_cv",
    "tune",
    "predict_all",
    "save_model",
    "load_model",
    # harmonization
    "HarmonizationTargets",
    "harmonize",
    # transport allocation
    "TransportProblem",
    "AllocationTensor",
    "FlowRow",
    "BoundsReport",
    "cost_weights",
    "build_problem",
    "balance",
    "solve_transport",
    "greedy_allocate",
    "allocate_all",
    "reassign_to_parent",
    "extract_flows",
    "confidence_bounds",
    # analytics
    "cagr",
    "trade_balance",
    "combined_balance",
    "balance_offset",
    "HIGH_INCOME_GDP_PC",
    "aggregate_flows",
    "sector_shares",
    "lorenz",
    "top_share",
    "shannon_entropy",
    "random_basket_entropy",
    "eigenvector_centrality",
    "DecouplingRecord",
    "decoupling",
    "decoupling_records",
    "GroupTrendRow",
    "group_trends",
    "RegressionResult",
    "ols_robust",
    "reference_upper_bound",
    # complexity
    "OutputMatrix",
    "SpecializationMatrix",
    "ComplexityScores",
    "rca",
    "binarize",
    "eci_pci",
    "digital_output_matrix",
    "physical_output_matrix",
    "merge_digital",
    "minmax",
    # configuration
    "ALLOCATION_MODES",
    "PipelineConfig",
    "load_config",
]
