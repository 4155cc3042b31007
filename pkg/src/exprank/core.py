"""Domain types shared by every module, plus validation and bank splitting.

All types here are immutable after construction: arrays are marked
read-only and the dataclasses are frozen. Mutation happens by building
new values, which keeps concurrent read access safe.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

OUTCOME_KINDS = ("continuous", "binary")
MODEL_KINDS = ("linear", "probit")
WEIGHT_SOURCES = ("uniform", "every_k", "learned")
RANK_METHODS = ("ml_uniform", "ml_weighted", "l2_baseline")


class ExprankError(Exception):
    """Base class for all errors raised by this package."""


class DataError(ExprankError):
    """Malformed input data, files, or inconsistent bank contents."""


class NumericalError(ExprankError):
    """A numerical routine failed beyond recoverable jitter/retries."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Experiment:
    """One experiment: n observed (covariate vector, outcome) pairs.

    ``covariates`` is n x d (rows are observations), ``outcomes`` has
    length n. Rows with missing outcomes are dropped by the loaders
    before an Experiment is built, so n counts retained rows only.
    """

    id: str
    covariates: np.ndarray
    outcomes: np.ndarray
    outcome_kind: str
    label: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "covariates", _freeze(np.atleast_2d(self.covariates)))
        object.__setattr__(self, "outcomes", _freeze(np.atleast_1d(self.outcomes)))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class SamplerConfig:
    """Gibbs sampler settings shared by the linear and probit fitters.

    ``gamma_shape``/``gamma_rate`` parameterize the gamma priors over the
    per-weight precisions and the noise precision (shape/rate form).
    ``probit_prior_precision`` is the Gaussian prior precision on probit
    weights.
    """

    n_samples: int = 100
    burn_in: int = 500
    thin: int = 1
    gamma_shape: float = 1e-3
    gamma_rate: float = 1e-3
    probit_prior_precision: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.gamma_shape <= 0 or self.gamma_rate <= 0:
            raise ValueError("gamma prior parameters must be > 0")
        if self.probit_prior_precision <= 0:
            raise ValueError("probit_prior_precision must be > 0")


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Posterior parameter draws of one fitted model.

    ``samples`` is m x p: one row per retained draw. Linear rows hold
    [w_1..w_d, log noise variance] (p = d + 1); probit rows hold just the
    weights (p = d).
    """

    experiment_id: str
    model_kind: str
    samples: np.ndarray
    seed: int
    sampler_config: SamplerConfig

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model_kind {self.model_kind!r}")
        object.__setattr__(self, "samples", _freeze(np.atleast_2d(self.samples)))
        if self.samples.shape[0] < 1:
            raise ValueError("sample set must hold at least one draw")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("sample set contains non-finite entries")

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def weight_dim(self) -> int:
        p = self.samples.shape[1]
        return p - 1 if self.model_kind == "linear" else p

    def weight_samples(self) -> np.ndarray:
        """The weight coordinates only (noise column excluded for linear)."""
        if self.model_kind == "linear":
            return self.samples[:, :-1]
        return self.samples


@dataclass(frozen=True)
class WeightVector:
    """Per-sample weights of one experiment's sample set.

    ``source`` records how the weights arose: "uniform" (all ones),
    "every_k" (0/1 indicator keeping indices 0, k, 2k, ...; ``stride``
    holds k) or "learned".
    """

    experiment_id: str
    weights: np.ndarray
    source: str
    stride: Optional[int] = None

    def __post_init__(self):
        if self.source not in WEIGHT_SOURCES:
            raise ValueError(f"unknown weight source {self.source!r}")
        if self.source == "every_k" and (self.stride is None or self.stride < 1):
            raise ValueError("every_k weights need a stride >= 1")
        object.__setattr__(self, "weights", _freeze(np.atleast_1d(self.weights)))

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.weights))


@dataclass(frozen=True)
class ModelBank:
    """The database: experiments plus their sample sets and weights.

    ``posteriors`` and ``weights`` are keyed by experiment id and may
    cover only a subset of experiments (weights stay empty until
    trained). All experiments must share one covariate dimensionality.
    """

    experiments: tuple
    posteriors: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "experiments", tuple(self.experiments))
        ids = {e.id for e in self.experiments}
        if len(ids) != len(self.experiments):
            raise DataError("duplicate experiment ids in bank")
        extra = set(self.posteriors) - ids
        if extra:
            raise DataError(f"posterior sample sets for unknown ids: {sorted(extra)}")
        extra = set(self.weights) - ids
        if extra:
            raise DataError(f"weight vectors for unknown ids: {sorted(extra)}")
        dims = {e.d for e in self.experiments}
        if len(dims) > 1:
            raise DataError(f"mixed covariate dimensionality in bank: {sorted(dims)}")
        for eid, wv in self.weights.items():
            post = self.posteriors.get(eid)
            if post is not None and wv.m != post.m:
                raise DataError(
                    f"weight length {wv.m} != sample count {post.m} for {eid!r}"
                )

    @property
    def size(self) -> int:
        return len(self.experiments)

    @property
    def d(self) -> int:
        if not self.experiments:
            raise DataError("empty bank has no dimensionality")
        return self.experiments[0].d

    def ids(self) -> list:
        return [e.id for e in self.experiments]

    def experiment(self, exp_id: str) -> Experiment:
        for e in self.experiments:
            if e.id == exp_id:
                return e
        raise KeyError(exp_id)

    def with_posteriors(self, posteriors: dict) -> "ModelBank":
        merged = dict(self.posteriors)
        merged.update(posteriors)
        return replace(self, posteriors=merged)

    def with_weights(self, weights: dict) -> "ModelBank":
        merged = dict(self.weights)
        merged.update(weights)
        return replace(self, weights=merged)


@dataclass(frozen=True)
class RankingResult:
    """Ordered retrieval output for one query.

    ``ranked`` is a tuple of (experiment_id, score) sorted by score
    descending with lexicographic id tie-break; the query id itself never
    appears.
    """

    query_id: str
    method: str
    ranked: tuple

    def __post_init__(self):
        if self.method not in RANK_METHODS:
            raise ValueError(f"unknown ranking method {self.method!r}")
        object.__setattr__(self, "ranked", tuple(self.ranked))
        for eid, _ in self.ranked:
            if eid == self.query_id:
                raise ValueError("query id must not appear in its own ranking")

    def ids(self) -> list:
        return [eid for eid, _ in self.ranked]

    def scores(self) -> dict:
        return {eid: score for eid, score in self.ranked}


def sort_scored(scored) -> tuple:
    """Sort (id, score) pairs by score descending, ties lexicographic by id."""
    return tuple(sorted(scored, key=lambda pair: (-pair[1], pair[0])))


def validate_experiment(exp: Experiment) -> list:
    """Return every invariant violation of ``exp`` as a list of strings.

    An empty list means the experiment is valid. Violations are data,
    not failures: nothing is raised and nothing is mutated.
    """
    report = []
    if exp.covariates.ndim != 2:
        report.append("covariates must be a 2-d matrix")
        return report
    n, d = exp.covariates.shape
    if n < 1:
        report.append("experiment must retain at least one observation")
    if d < 1:
        report.append("covariate dimension must be at least 1")
    if exp.outcomes.shape != (n,):
        report.append(
            f"outcome count {exp.outcomes.shape[0]} != observation count {n}"
        )
    if not np.all(np.isfinite(exp.covariates)):
        report.append("non-finite covariate")
    if not np.all(np.isfinite(exp.outcomes)):
        report.append("non-finite outcome")
    if exp.outcome_kind not in OUTCOME_KINDS:
        report.append(f"unknown outcome kind {exp.outcome_kind!r}")
    elif exp.outcome_kind == "binary":
        finite = exp.outcomes[np.isfinite(exp.outcomes)]
        if not np.all(np.isin(finite, (0.0, 1.0))):
            report.append("non-binary outcome")
    return report


def split_bank(bank: ModelBank, train_fraction: float, seed: int):
    """Partition bank ids into (database_ids, query_ids), deterministically.

    The database side gets round(train_fraction * D) experiments. Both
    sides are returned sorted; the assignment depends only on the seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    if bank.size < 4:
        raise DataError(f"bank of {bank.size} experiments is too small to split")
    n_db = int(round(train_fraction * bank.size))
    if n_db < 1 or n_db >= bank.size:
        raise DataError(
            f"train_fraction {train_fraction} leaves an empty side for "
            f"{bank.size} experiments"
        )
    ids = sorted(bank.ids())
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    database_ids = sorted(ids[i] for i in perm[:n_db])
    query_ids = sorted(ids[i] for i in perm[n_db:])
    return database_ids, query_ids
