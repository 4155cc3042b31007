"""Shared builders for the test suite.

These construct small banks with hand-made posterior sample sets so
that ranking and persistence behavior can be tested without running
the Gibbs samplers.
"""

import numpy as np

from exprank import (
    Experiment,
    ModelBank,
    PosteriorSampleSet,
    SamplerConfig,
    SparseDesign,
    WeightVector,
)


def dense_to_design(x_dense, labels, ids=None):
    """Wrap a dense matrix as a SparseDesign with one column per id."""
    x_dense = np.asarray(x_dense, dtype=float)
    n, m = x_dense.shape
    if ids is None:
        ids = tuple(f"col{j}" for j in range(m))
    indptr = np.arange(n + 1, dtype=np.int64) * m
    col_indices = np.tile(np.arange(m, dtype=np.int32), n)
    offsets = {eid: (j, 1) for j, eid in enumerate(ids)}
    return SparseDesign(
        n_rows=n,
        n_cols=m,
        indptr=indptr,
        col_indices=col_indices,
        values=x_dense.ravel().copy(),
        labels=np.asarray(labels, dtype=np.uint8),
        column_offsets=offsets,
        flipped=np.zeros(n, dtype=bool),
    )


def random_logistic_instance(rng, n=50, lam=1.0):
    """Two-feature logistic problem with noisy labels, as a SparseDesign."""
    x = rng.standard_normal((n, 2))
    w_true = rng.standard_normal(2)
    labels = (x @ w_true + rng.standard_normal(n) > 0).astype(int)
    return dense_to_design(x, labels), x, labels, lam


def linear_experiment(eid, rng, n=12, d=3, w=None, noise_sd=0.5, label=None):
    """A continuous-outcome experiment drawn from y = x.w + noise."""
    if w is None:
        w = rng.standard_normal(d)
    x = rng.standard_normal((n, d))
    y = x @ w + noise_sd * rng.standard_normal(n)
    exp = Experiment(
        id=eid, covariates=x, outcomes=y, outcome_kind="continuous", label=label
    )
    return exp, np.asarray(w, dtype=float)


def binary_experiment(eid, rng, n=15, d=3, w=None, label=None):
    """A binary-outcome experiment from a thresholded linear score."""
    if w is None:
        w = rng.standard_normal(d) * 1.5
    x = rng.standard_normal((n, d))
    y = (x @ w + 0.3 * rng.standard_normal(n) > 0).astype(float)
    exp = Experiment(
        id=eid, covariates=x, outcomes=y, outcome_kind="binary", label=label
    )
    return exp, np.asarray(w, dtype=float)


def fake_linear_posterior(eid, rng, m=6, d=3, center=None, spread=0.25, noise_var=0.25):
    """A hand-made linear sample set: rows [w_1..w_d, log noise_var]."""
    if center is None:
        center = np.zeros(d)
    wpart = center + spread * rng.standard_normal((m, d))
    logvar = np.full((m, 1), np.log(noise_var))
    return PosteriorSampleSet(
        experiment_id=eid,
        model_kind="linear",
        samples=np.hstack([wpart, logvar]),
        seed=0,
        sampler_config=SamplerConfig(n_samples=m),
    )


def fake_probit_posterior(eid, rng, m=6, d=3, center=None, spread=0.25):
    """A hand-made probit sample set: rows [w_1..w_d]."""
    if center is None:
        center = np.zeros(d)
    samples = center + spread * rng.standard_normal((m, d))
    return PosteriorSampleSet(
        experiment_id=eid,
        model_kind="probit",
        samples=samples,
        seed=0,
        sampler_config=SamplerConfig(n_samples=m),
    )


def fake_bank(rng, n_exp=6, d=3, m=5, n=10):
    """A bank of unrelated linear experiments with fake posteriors."""
    experiments = []
    posteriors = {}
    for i in range(n_exp):
        eid = f"x{i:03d}"
        exp, w = linear_experiment(eid, rng, n=n, d=d)
        experiments.append(exp)
        posteriors[eid] = fake_linear_posterior(eid, rng, m=m, d=d, center=w)
    return ModelBank(experiments=tuple(experiments), posteriors=posteriors)


def clustered_fake_bank(
    rng, n_clusters=3, per_cluster=5, d=3, m=6, n=12, spread=0.08, noise_sd=0.3
):
    """Clustered bank: experiments in one cluster share a weight vector.

    Posteriors are tight fake sample clouds around the true weights, so
    marginal-likelihood ranking should retrieve same-cluster experiments
    first. Labels are the cluster indices.
    """
    centers = 3.0 * rng.standard_normal((n_clusters, d))
    experiments = []
    posteriors = {}
    for c in range(n_clusters):
        for j in range(per_cluster):
            eid = f"c{c}e{j}"
            exp, _ = linear_experiment(
                eid, rng, n=n, d=d, w=centers[c], noise_sd=noise_sd, label=c
            )
            experiments.append(exp)
            posteriors[eid] = fake_linear_posterior(
                eid, rng, m=m, d=d, center=centers[c], spread=spread,
                noise_var=noise_sd**2,
            )
    return ModelBank(experiments=tuple(experiments), posteriors=posteriors)


def uniform_weights_for(bank, ids=None):
    """Explicit all-ones weight vectors for the given experiments."""
    ids = bank.ids() if ids is None else list(ids)
    out = {}
    for eid in ids:
        m = bank.posteriors[eid].m
        out[eid] = WeightVector(
            experiment_id=eid, weights=np.ones(m), source="uniform"
        )
    return out
