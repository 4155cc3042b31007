"""Retrieval of relevant experiments from a bank of fitted Bayesian models.

Each experiment in the bank is represented by posterior samples of its
model parameters. A query experiment is scored against a candidate by
the average likelihood of the query's data under the candidate's
samples; sparse learned sample weights compress the bank while
preserving the retrieval ranking.
"""

from .core import (
    DataError,
    Experiment,
    ExprankError,
    ModelBank,
    NumericalError,
    PosteriorSampleSet,
    RankingResult,
    SamplerConfig,
    WeightVector,
    sort_scored,
    split_bank,
    validate_experiment,
)
from .dataio import export_report, load_bank, load_bundle, save_bank, save_bundle
from .evalmetrics import (
    EvalReport,
    average_precision,
    combined_metric,
    mean_average_precision,
    per_query_average_precision,
    spearman_rho,
    storage_fraction,
)
from .likelihood import (
    build_loglik_table,
    effective_weights,
    evaluation_counter,
    l2_baseline_rank,
    loglik_experiment,
    loglik_point,
    logmean_exp,
    ml_uniform,
    ml_weighted,
    rank_by_ml,
)
from .pipeline import (
    derive_seed,
    fit_bank,
    map_report,
    rank_queries,
    spearman_report,
    split_ids,
    train_weights,
    with_every_k_weights,
)
from .ranklearn import (
    SparseDesign,
    SolverResult,
    Triplet,
    assemble_design,
    build_triplets,
    database_loglik_tables,
    export_design,
    extract_weights,
    flip_row,
    ground_truth_scores,
    kkt_violations,
    solve_l1_logistic,
)
from .samplers import (
    analytic_gaussian_posterior,
    cholesky_with_jitter,
    fit_linear_gibbs,
    fit_probit_gibbs,
    thin_every_k,
)
from .synth import (
    SynthConfig,
    gen_clustered,
    gen_unclustered,
    mimic_computer,
    mimic_landmine,
    mimic_restaurant,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "EvalReport",
    "Experiment",
    "ExprankError",
    "ModelBank",
    "NumericalError",
    "PosteriorSampleSet",
    "RankingResult",
    "SamplerConfig",
    "SolverResult",
    "SparseDesign",
    "SynthConfig",
    "Triplet",
    "WeightVector",
    "analytic_gaussian_posterior",
    "assemble_design",
    "average_precision",
    "build_loglik_table",
    "build_triplets",
    "cholesky_with_jitter",
    "combined_metric",
    "database_loglik_tables",
    "derive_seed",
    "effective_weights",
    "evaluation_counter",
    "export_design",
    "export_report",
    "extract_weights",
    "fit_bank",
    "flip_row",
    "fit_linear_gibbs",
    "fit_probit_gibbs",
    "gen_clustered",
    "gen_unclustered",
    "ground_truth_scores",
    "kkt_violations",
    "l2_baseline_rank",
    "load_bank",
    "load_bundle",
    "loglik_experiment",
    "loglik_point",
    "logmean_exp",
    "map_report",
    "mean_average_precision",
    "per_query_average_precision",
    "mimic_computer",
    "mimic_landmine",
    "mimic_restaurant",
    "ml_uniform",
    "ml_weighted",
    "rank_by_ml",
    "rank_queries",
    "save_bank",
    "save_bundle",
    "solve_l1_logistic",
    "sort_scored",
    "spearman_report",
    "spearman_rho",
    "split_bank",
    "split_ids",
    "storage_fraction",
    "thin_every_k",
    "train_weights",
    "validate_experiment",
    "with_every_k_weights",
]
