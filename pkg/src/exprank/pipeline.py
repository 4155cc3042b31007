"""End-to-end orchestration: fit, split, train, rank, evaluate.

Everything here derives per-stage seeds from one global seed through
labeled SeedSequence spawn keys, so a single integer reproduces a whole
run while stages stay decoupled.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import evalmetrics, ranklearn
from .core import DataError, ModelBank, SamplerConfig, split_bank
from .likelihood import l2_baseline_rank, rank_by_ml
from .samplers import fit_linear_gibbs, fit_probit_gibbs, thin_every_k

# Stage labels for seed derivation; values are spawn-key offsets.
SEED_STAGES = {"synth": 0, "fit": 1, "split": 2, "design": 3, "eval": 4}

# Methods the evaluation layer understands. "every_k" is the thinning
# baseline: weighted scoring with 0/1 stride weights built on the fly.
EVAL_METHODS = ("ml_uniform", "ml_weighted", "every_k", "l2_baseline")


def derive_seed(global_seed: int, stage: str, index: int = 0) -> int:
    """Stable per-stage, per-item seed from the single run seed."""
    if stage not in SEED_STAGES:
        raise ValueError(f"unknown seed stage {stage!r}")
    seq = np.random.SeedSequence(global_seed, spawn_key=(SEED_STAGES[stage], index))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def fit_bank(bank: ModelBank, config: SamplerConfig, seed: int, ids=None) -> ModelBank:
    """Fit every experiment's model by Gibbs sampling; returns a new bank.

    Linear regression for continuous outcomes, probit for binary ones.
    Per-experiment seeds derive from ``seed`` and the experiment's
    position in sorted id order, so fitting a subset or the whole bank
    gives identical draws for shared experiments.
    """
    target = sorted(ids) if ids is not None else sorted(bank.ids())
    order = {eid: i for i, eid in enumerate(sorted(bank.ids()))}
    posteriors = dict(bank.posteriors)
    for eid in target:
        exp = bank.experiment(eid)
        sub_seed = derive_seed(seed, "fit", order[eid])
        if exp.outcome_kind == "continuous":
            posteriors[eid] = fit_linear_gibbs(exp, config, sub_seed)
        else:
            posteriors[eid] = fit_probit_gibbs(exp, config, sub_seed)
    return bank.with_posteriors(posteriors)


def train_weights(
    bank: ModelBank,
    database_ids,
    k_top: int = 25,
    lam: float = 1.0,
    seed: int = 0,
):
    """Learn sparse per-sample weights for the database experiments.

    Runs the whole chain: full-sample ground-truth scores, top-K triplet
    construction (K clamped to D-2 for small databases, with a warning),
    design assembly, and the L1 logistic solve. Returns the bank with
    learned weights attached plus the raw solver result.
    """
    database_ids = sorted(database_ids)
    d_count = len(database_ids)
    if d_count < 3:
        raise DataError("need at least 3 database experiments to build triplets")
    k_eff = min(k_top, d_count - 2)
    if k_eff < k_top:
        warnings.warn(f"K={k_top} exceeds D-2={d_count - 2}; clamped to {k_eff}")

    tables = ranklearn.database_loglik_tables(bank, database_ids)
    scores = ranklearn.ground_truth_scores(bank, database_ids, tables)
    triplets = ranklearn.build_triplets(scores, k_eff)
    design = ranklearn.assemble_design(bank, triplets, tables, derive_seed(seed, "design"))
    result = ranklearn.solve_l1_logistic(design, lam)
    weights = ranklearn.extract_weights(result, bank)
    return bank.with_weights({**bank.weights, **weights}), result


def with_every_k_weights(bank: ModelBank, ids, k: int) -> ModelBank:
    """Attach every-k-th-sample 0/1 weights to the given experiments."""
    weights = dict(bank.weights)
    for eid in ids:
        post = bank.posteriors.get(eid)
        if post is None:
            raise DataError(f"no posterior sample set for experiment {eid!r}")
        weights[eid] = thin_every_k(post, k)
    return bank.with_weights(weights)


def rank_queries(bank: ModelBank, database_ids, query_ids, method: str, every_k: int = 10):
    """Rank the database for each query; returns query id -> RankingResult."""
    if method not in EVAL_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {EVAL_METHODS}")
    scoring_bank = bank
    scoring_method = method
    if method == "every_k":
        scoring_bank = with_every_k_weights(bank, database_ids, every_k)
        scoring_method = "ml_weighted"
    rankings = {}
    for qid in query_ids:
        exp_q = bank.experiment(qid)
        if method == "l2_baseline":
            post_q = bank.posteriors.get(qid)
            if post_q is None:
                raise DataError(f"l2 baseline needs a fitted posterior for query {qid!r}")
            rankings[qid] = l2_baseline_rank(scoring_bank, post_q, database_ids)
        else:
            rankings[qid] = rank_by_ml(scoring_bank, exp_q, scoring_method, database_ids)
    return rankings


def _method_storage_fraction(bank: ModelBank, database_ids, method: str, every_k: int) -> float:
    if method in ("ml_uniform", "l2_baseline"):
        return 1.0
    if method == "every_k":
        scored = with_every_k_weights(bank, database_ids, every_k)
        return evalmetrics.storage_fraction({d: scored.weights[d] for d in database_ids})
    from .likelihood import effective_weights

    return evalmetrics.storage_fraction(effective_weights(bank, database_ids))


def map_report(
    bank: ModelBank,
    database_ids,
    query_ids,
    method: str,
    every_k: int = 10,
    params: dict | None = None,
):
    """MAP evaluation of one method over a labeled split.

    Relevance is same-label membership. Queries with no same-label
    database experiment have undefined AP and are skipped with a
    warning. Returns (EvalReport, rankings by query id).
    """
    labels = {eid: bank.experiment(eid).label for eid in bank.ids()}
    for eid in list(query_ids) + list(database_ids):
        if labels.get(eid) is None:
            raise DataError(f"experiment {eid!r} lacks a label; MAP needs labels")
    usable = [
        q for q in query_ids if any(labels[d] == labels[q] for d in database_ids)
    ]
    dropped = sorted(set(query_ids) - set(usable))
    if dropped:
        warnings.warn(
            f"skipping {len(dropped)} query(ies) with no same-label database "
            f"experiment: {dropped}"
        )
    if not usable:
        raise DataError("no query has any relevant database experiment")

    rankings = rank_queries(bank, database_ids, usable, method, every_k)
    ranking_list = [rankings[q] for q in usable]
    per_query = evalmetrics.per_query_average_precision(ranking_list, labels)
    map_score = float(np.mean(list(per_query.values())))
    fraction = _method_storage_fraction(bank, database_ids, method, every_k)
    report = evalmetrics.EvalReport(
        method=method,
        per_query_ap=per_query,
        map_score=map_score,
        storage_fraction=fraction,
        combined=evalmetrics.combined_metric(map_score, fraction),
        spearman=None,
        params=dict(params or {}),
    )
    return report, rankings


def spearman_report(
    bank: ModelBank,
    database_ids,
    query_ids,
    method: str,
    every_k: int = 10,
    params: dict | None = None,
):
    """Rank-agreement evaluation against the full-sample reference.

    For each query, the method's ranking of the database is compared to
    the uniform full-sample ranking by Spearman correlation; the report
    carries the mean. Returns (EvalReport, rankings by query id).
    """
    reference = rank_queries(bank, database_ids, query_ids, "ml_uniform")
    rankings = rank_queries(bank, database_ids, query_ids, method, every_k)
    rhos = [
        evalmetrics.spearman_rho(rankings[q], reference[q]) for q in query_ids
    ]
    mean_rho = float(np.mean(rhos))
    fraction = _method_storage_fraction(bank, database_ids, method, every_k)
    report = evalmetrics.EvalReport(
        method=method,
        per_query_ap={},
        map_score=None,
        storage_fraction=fraction,
        combined=evalmetrics.combined_metric(mean_rho, fraction),
        spearman=mean_rho,
        params=dict(params or {}),
    )
    return report, rankings


def split_ids(bank: ModelBank, train_fraction: float, seed: int):
    """Database/query split with the seed derived from the run seed."""
    return split_bank(bank, train_fraction, derive_seed(seed, "split"))
