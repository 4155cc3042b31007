"""Retrieval scores: uniform and weighted marginal likelihood, l2 baseline.

The uniform score of a candidate is the log of the average query
likelihood over the candidate's posterior samples, computed with a
max-shift so it stays finite. The weighted score is the linear-domain
weighted average of query likelihoods, shifted by a single query-global
constant so scores of different candidates stay comparable; samples with
zero weight are never evaluated.
"""

from __future__ import annotations

import threading
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import (
    DataError,
    Experiment,
    ModelBank,
    PosteriorSampleSet,
    RankingResult,
    WeightVector,
    sort_scored,
)
from .samplers import thin_every_k

LOG_2PI = float(np.log(2.0 * np.pi))

# Probit probabilities are clamped before the log so rounding never
# produces -inf while the ordering of scores is preserved.
PROB_FLOOR = 1e-300
PROB_CEIL = 1.0 - 1e-16

# Stride of the fallback weights used when an experiment's learned
# weights all collapsed to zero.
FALLBACK_STRIDE = 10


class EvaluationCounter:
    """Tally of per-sample likelihood evaluations (for tests and reports)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, k: int):
        with self._lock:
            self._count += k

    def reset(self):
        with self._lock:
            self._count = 0

    @property
    def count(self) -> int:
        return self._count


evaluation_counter = EvaluationCounter()


def _require_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise ValueError(f"non-finite {name}")


def loglik_point(sample: np.ndarray, model_kind: str, x: np.ndarray, y: float) -> float:
    """Log-likelihood of one observation (x, y) under one parameter draw."""
    sample = np.asarray(sample, dtype=float)
    x = np.asarray(x, dtype=float)
    _require_finite("sample", sample)
    _require_finite("covariates", x)
    _require_finite("outcome", y)
    d = x.shape[0]
    if model_kind == "linear":
        if sample.shape[0] != d + 1:
            raise ValueError(
                f"linear sample must hold {d + 1} entries (weights + log variance)"
            )
        w, log_var = sample[:d], sample[d]
        var = np.exp(log_var)
        resid = y - float(w @ x)
        return float(-0.5 * (LOG_2PI + log_var + resid * resid / var))
    if model_kind == "probit":
        if sample.shape[0] != d:
            raise ValueError(f"probit sample must hold {d} entries")
        p = float(np.clip(ndtr(float(sample @ x)), PROB_FLOOR, PROB_CEIL))
        return float(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    raise ValueError(f"unknown model_kind {model_kind!r}")


def loglik_experiment(sample: np.ndarray, model_kind: str, exp_q: Experiment) -> float:
    """Log-likelihood of a whole query experiment under one draw."""
    evaluation_counter.add(1)
    total = 0.0
    for i in range(exp_q.n):
        total += loglik_point(sample, model_kind, exp_q.covariates[i], exp_q.outcomes[i])
    return total


def _loglik_rows(samples: np.ndarray, model_kind: str, exp_q: Experiment) -> np.ndarray:
    """Vectorized loglik_experiment over the rows of ``samples``."""
    x = exp_q.covariates
    y = exp_q.outcomes
    n, d = x.shape
    evaluation_counter.add(samples.shape[0])
    if model_kind == "linear":
        w = samples[:, :d]
        log_var = samples[:, d]
        resid = y[:, None] - x @ w.T
        rss = np.sum(resid * resid, axis=0)
        return -0.5 * (n * (LOG_2PI + log_var) + rss / np.exp(log_var))
    if model_kind == "probit":
        p = np.clip(ndtr(x @ samples.T), PROB_FLOOR, PROB_CEIL)
        return np.sum(y[:, None] * np.log(p) + (1.0 - y[:, None]) * np.log(1.0 - p), axis=0)
    raise ValueError(f"unknown model_kind {model_kind!r}")


@dataclass(frozen=True)
class LogLikTable:
    """Per-sample query log-likelihoods for one query against candidates.

    ``loglik`` maps candidate id to an m_d vector; entries that were
    skipped (zero weight) are NaN. ``global_shift`` is the maximum over
    every evaluated entry and is shared by all candidates of the query.
    """

    query_id: str
    loglik: dict
    global_shift: float


def build_loglik_table(
    bank: ModelBank,
    exp_q: Experiment,
    candidate_ids,
    weights: dict | None = None,
) -> LogLikTable:
    """Evaluate query log-likelihoods against each candidate's samples.

    When ``weights`` is given, only samples with nonzero weight are
    evaluated; the rest stay NaN.
    """
    table = {}
    shift = -np.inf
    for cid in candidate_ids:
        if cid == exp_q.id:
            continue
        post = bank.posteriors.get(cid)
        if post is None:
            raise DataError(f"no posterior sample set for experiment {cid!r}")
        if weights is None:
            ll = _loglik_rows(post.samples, post.model_kind, exp_q)
        else:
            ll = np.full(post.m, np.nan)
            nz = np.flatnonzero(weights[cid].weights)
            if nz.size:
                ll[nz] = _loglik_rows(post.samples[nz], post.model_kind, exp_q)
        table[cid] = ll
        finite = ll[np.isfinite(ll)]
        if finite.size:
            shift = max(shift, float(np.max(finite)))
    return LogLikTable(query_id=exp_q.id, loglik=table, global_shift=shift)


def logmean_exp(ll: np.ndarray) -> float:
    """log of the arithmetic mean of exp(ll), computed with a max shift."""
    ll = np.asarray(ll, dtype=float)
    m = float(np.max(ll))
    if not np.isfinite(m):
        return float("-inf")
    return m + float(np.log(np.mean(np.exp(ll - m))))


def ml_uniform(exp_q: Experiment, samples_d: PosteriorSampleSet) -> float:
    """Log of the plain average query likelihood over all samples."""
    return logmean_exp(_loglik_rows(samples_d.samples, samples_d.model_kind, exp_q))


def ml_weighted(
    exp_q: Experiment,
    samples_d: PosteriorSampleSet,
    weights: WeightVector,
    shift: float,
) -> float:
    """Weighted average of query likelihoods, in the shifted linear domain.

    Returns (1/m_d) * sum_k w_k * exp(ll_k - shift). Samples with zero
    weight are never evaluated. Scores of different candidates are
    comparable only under one shared ``shift``.
    """
    if weights.m != samples_d.m:
        raise DataError(
            f"weight length {weights.m} != sample count {samples_d.m} "
            f"for {samples_d.experiment_id!r}"
        )
    nz = np.flatnonzero(weights.weights)
    if nz.size == 0:
        return 0.0
    ll = _loglik_rows(samples_d.samples[nz], samples_d.model_kind, exp_q)
    return float(np.sum(weights.weights[nz] * np.exp(ll - shift)) / samples_d.m)


def effective_weights(bank: ModelBank, candidate_ids) -> dict:
    """Weights used for weighted ranking, with the all-zero fallback applied.

    Experiments whose stored weights are entirely zero fall back to
    every-k thinning (stride 10, clamped to the sample count) so they
    still receive a usable score; a warning reports each fallback.
    """
    missing = [cid for cid in candidate_ids if cid not in bank.weights]
    if missing:
        raise DataError(f"no trained weights for experiments: {missing}")
    out = {}
    for cid in candidate_ids:
        wv = bank.weights[cid]
        if wv.nonzero_count == 0:
            stride = min(FALLBACK_STRIDE, wv.m)
            warnings.warn(
                f"all weights of {cid!r} are zero; falling back to "
                f"every-{stride} thinning for ranking"
            )
            wv = thin_every_k(bank.posteriors[cid], stride)
        out[cid] = wv
    return out


def _check_query_dim(bank: ModelBank, exp_q: Experiment):
    if bank.size and exp_q.d != bank.d:
        raise DataError(
            f"query dimension {exp_q.d} != bank dimension {bank.d}"
        )


def rank_by_ml(
    bank: ModelBank,
    exp_q: Experiment,
    method: str,
    candidate_ids=None,
) -> RankingResult:
    """Rank candidates for a query by marginal likelihood.

    ``method`` is "ml_uniform" (log-domain average over all samples) or
    "ml_weighted" (shifted linear-domain weighted average using the
    bank's stored weights). The query itself is never scored.
    """
    if method not in ("ml_uniform", "ml_weighted"):
        raise ValueError(f"unknown ML ranking method {method!r}")
    _check_query_dim(bank, exp_q)
    if candidate_ids is None:
        candidate_ids = bank.ids()
    candidates = [cid for cid in candidate_ids if cid != exp_q.id]
    if not candidates:
        raise DataError("no candidates to rank")
    missing = [cid for cid in candidates if cid not in bank.posteriors]
    if missing:
        raise DataError(f"no posterior sample sets for experiments: {missing}")

    if method == "ml_uniform":
        table = build_loglik_table(bank, exp_q, candidates)
        scored = [(cid, logmean_exp(table.loglik[cid])) for cid in candidates]
    else:
        weights = effective_weights(bank, candidates)
        table = build_loglik_table(bank, exp_q, candidates, weights=weights)
        shift = table.global_shift
        scored = []
        for cid in candidates:
            ll = table.loglik[cid]
            w = weights[cid].weights
            nz = np.flatnonzero(w)
            score = float(np.sum(w[nz] * np.exp(ll[nz] - shift)) / w.shape[0])
            scored.append((cid, score))

    return RankingResult(query_id=exp_q.id, method=method, ranked=sort_scored(scored))


def l2_baseline_rank(
    bank: ModelBank,
    exp_q_posterior: PosteriorSampleSet,
    candidate_ids=None,
) -> RankingResult:
    """Rank candidates by negative distance between posterior weight means."""
    query_id = exp_q_posterior.experiment_id
    if candidate_ids is None:
        candidate_ids = bank.ids()
    candidates = [cid for cid in candidate_ids if cid != query_id]
    if not candidates:
        raise DataError("no candidates to rank")
    missing = [cid for cid in candidates if cid not in bank.posteriors]
    if missing:
        raise DataError(f"no posterior sample sets for experiments: {missing}")

    mean_q = exp_q_posterior.weight_samples().mean(axis=0)
    scored = []
    for cid in candidates:
        post = bank.posteriors[cid]
        mean_d = post.weight_samples().mean(axis=0)
        if mean_d.shape != mean_q.shape:
            raise DataError(
                f"weight dimension mismatch: query {mean_q.shape[0]}, "
                f"{cid!r} {mean_d.shape[0]}"
            )
        scored.append((cid, -float(np.linalg.norm(mean_q - mean_d))))
    return RankingResult(query_id=query_id, method="l2_baseline", ranked=sort_scored(scored))
