"""Synthetic benchmark banks.

Clustered and unclustered linear-regression banks with controlled
dimension, observation counts, and signal-to-noise ratio, plus small
generators that mimic the shapes of three published multi-task datasets
(minefield detection, computer ratings, restaurant ratings) so the
real-data pipelines can run without external downloads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DataError, Experiment, ModelBank


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic generators.

    ``clusters`` = 0 selects the unclustered generator, which draws
    ``total`` independent regressors; otherwise ``clusters`` centers are
    drawn and per-cluster experiment counts follow Poisson(cluster_rate).
    ``snr_ratio`` is the noise-to-signal variance ratio r = sigma_n^2 /
    sigma_s^2, imposed per experiment against the empirical variance of
    the noise-free responses.
    """

    clusters: int = 20
    cluster_rate: float = 10.0
    total: int = 200
    d: int = 10
    n_rate: float = 18.0
    snr_ratio: float = 0.5
    center_scale: float = 2.0
    within_scale: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.snr_ratio <= 0:
            raise ValueError("snr_ratio must be > 0")
        if self.cluster_rate <= 0 or self.n_rate <= 0:
            raise ValueError("rates must be > 0")
        if self.clusters < 0:
            raise ValueError("clusters must be >= 0")


def _draw_experiment(rng, eid, w, n, snr_ratio, label):
    """One linear experiment: x ~ N(0, I), y = x.w + noise at the given SNR.

    The noise is drawn as a unit-variance vector and scaled afterwards,
    so changing ``snr_ratio`` alone never changes the regressors,
    covariates, or noise directions drawn from ``rng``.
    """
    d = w.shape[0]
    x = rng.standard_normal((n, d))
    unit_noise = rng.standard_normal(n)
    signal = x @ w
    signal_var = float(np.var(signal))
    noise_var = snr_ratio * signal_var
    y = signal + np.sqrt(noise_var) * unit_noise
    exp = Experiment(id=eid, covariates=x, outcomes=y, outcome_kind="continuous", label=label)
    truth = {"w": w.copy(), "signal_var": signal_var, "noise_var": noise_var}
    return exp, truth


def gen_clustered(cfg: SynthConfig, seed: int | None = None, return_truth: bool = False):
    """Clustered linear bank: regressors scatter around shared centers.

    Cluster centers are Gaussian(0, center_scale^2 I); per-cluster
    experiment counts are Poisson(cluster_rate) clamped to at least 1;
    each experiment's regressor adds Gaussian(0, within_scale^2 I) to
    its center; observation counts are Poisson(n_rate) clamped to at
    least 2. Labels record the cluster index.
    """
    if cfg.clusters < 2:
        raise DataError("clustered generation needs at least 2 clusters")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    centers = rng.standard_normal((cfg.clusters, cfg.d)) * cfg.center_scale
    raw_counts = rng.poisson(cfg.cluster_rate, size=cfg.clusters)
    if np.all(raw_counts == 0):
        raise DataError(
            f"cluster_rate={cfg.cluster_rate} drew zero experiments in every cluster"
        )
    counts = np.maximum(raw_counts, 1)

    total = int(counts.sum())
    raw_n = rng.poisson(cfg.n_rate, size=total)
    if np.all(raw_n <= 1):
        raise DataError(f"n_rate={cfg.n_rate} drew degenerate observation counts everywhere")
    n_per_exp = np.maximum(raw_n, 2)

    experiments = []
    truth = {}
    idx = 0
    for c in range(cfg.clusters):
        for _ in range(int(counts[c])):
            w = centers[c] + rng.standard_normal(cfg.d) * cfg.within_scale
            eid = f"e{idx:04d}"
            exp, t = _draw_experiment(rng, eid, w, int(n_per_exp[idx]), cfg.snr_ratio, label=c)
            t["cluster"] = c
            experiments.append(exp)
            truth[eid] = t
            idx += 1

    bank = ModelBank(experiments=tuple(experiments))
    return (bank, truth) if return_truth else bank


def gen_unclustered(cfg: SynthConfig, seed: int | None = None, return_truth: bool = False):
    """Unclustered linear bank: one independent regressor per experiment."""
    if cfg.total < 4:
        raise DataError("unclustered generation needs at least 4 experiments")
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    raw_n = rng.poisson(cfg.n_rate, size=cfg.total)
    if np.all(raw_n <= 1):
        raise DataError(f"n_rate={cfg.n_rate} drew degenerate observation counts everywhere")
    n_per_exp = np.maximum(raw_n, 2)

    experiments = []
    truth = {}
    for i in range(cfg.total):
        w = rng.standard_normal(cfg.d) * cfg.center_scale
        eid = f"e{i:04d}"
        exp, t = _draw_experiment(rng, eid, w, int(n_per_exp[i]), cfg.snr_ratio, label=None)
        experiments.append(exp)
        truth[eid] = t

    bank = ModelBank(experiments=tuple(experiments))
    return (bank, truth) if return_truth else bank


def mimic_landmine(seed: int = 0) -> ModelBank:
    """Probit bank shaped like the minefield-detection data.

    29 binary-outcome experiments over 9 features, in two well-separated
    classes of 16 and 13 experiments. Outcomes follow the probit draw
    y = 1[x.w + e > 0] with standard-normal e.
    """
    rng = np.random.default_rng(seed)
    d = 9
    class_sizes = (16, 13)
    centers = rng.standard_normal((2, d)) * 2.0
    experiments = []
    idx = 0
    for cls, size in enumerate(class_sizes):
        for _ in range(size):
            w = centers[cls] + rng.standard_normal(d) * 0.2
            n = max(int(rng.poisson(30.0)), 2)
            x = rng.standard_normal((n, d))
            y = (x @ w + rng.standard_normal(n) > 0.0).astype(np.float64)
            experiments.append(
                Experiment(
                    id=f"field{idx:02d}",
                    covariates=x,
                    outcomes=y,
                    outcome_kind="binary",
                    label=cls,
                )
            )
            idx += 1
    return ModelBank(experiments=tuple(experiments))


def _binary_regression_bank(rng, prefix, n_experiments, d, n_draw, snr_ratio=0.5):
    """Linear experiments over 0/1 covariates, one regressor each."""
    experiments = []
    for i in range(n_experiments):
        w = rng.standard_normal(d) * 2.0
        n = n_draw(rng)
        x = (rng.random((n, d)) < 0.5).astype(np.float64)
        unit_noise = rng.standard_normal(n)
        signal = x @ w
        noise_var = snr_ratio * float(np.var(signal))
        y = signal + np.sqrt(noise_var) * unit_noise
        experiments.append(
            Experiment(
                id=f"{prefix}{i:03d}",
                covariates=x,
                outcomes=y,
                outcome_kind="continuous",
                label=None,
            )
        )
    return ModelBank(experiments=tuple(experiments))


def mimic_computer(seed: int = 0) -> ModelBank:
    """Linear bank shaped like the computer-ratings data.

    200 experiments (one per rater), 13 binary features, around 20
    observations each, continuous outcomes, no class labels.
    """
    rng = np.random.default_rng(seed)
    return _binary_regression_bank(
        rng, "rater", 200, 13, lambda r: max(int(r.poisson(20.0)), 2)
    )


def mimic_restaurant(seed: int = 0) -> ModelBank:
    """Linear bank shaped like the restaurant-ratings data.

    119 experiments, 22 binarized features, between 3 and 18
    observations each, continuous outcomes, no class labels.
    """
    rng = np.random.default_rng(seed)
    return _binary_regression_bank(
        rng, "user", 119, 22, lambda r: int(r.integers(3, 19))
    )
