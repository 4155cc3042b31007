"""Gibbs samplers that turn experiments into posterior sample sets.

Two model families are supported:

* linear: y = w.x + eps, eps ~ N(0, sigma_n^2), with independent
  Gamma(a, b) priors on each weight precision alpha_j and on the noise
  precision tau_n = 1/sigma_n^2. All three conditionals are conjugate:

      w | alpha, tau_n ~ N(mu, A^-1),  A = tau_n X'X + diag(alpha)
      alpha_j | w_j    ~ Gamma(a + 1/2, b + w_j^2 / 2)
      tau_n | w        ~ Gamma(a + n/2, b + RSS / 2)

  Setting a = b to a huge matched pair pins alpha_j and tau_n at a/b,
  which reduces the chain to draws from the fixed-precision Gaussian
  posterior (see ``analytic_gaussian_posterior``).

* probit: P(y=1 | x) = Phi(w.x) with prior w ~ N(0, I / tau), sampled by
  latent-variable augmentation: truncated-Gaussian latents given w, then
  a Gaussian draw of w given the latents.

Each fit owns a private RNG seeded explicitly, so fits for different
experiments can run concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import log_ndtr, ndtri_exp

from .core import (
    Experiment,
    NumericalError,
    PosteriorSampleSet,
    SamplerConfig,
    WeightVector,
)

# Jitter schedule for near-singular Cholesky factorizations: relative to
# trace/d, starting at 1e-10 and growing tenfold up to 1e-4.
_JITTER_START = 1e-10
_JITTER_MAX = 1e-4


def cholesky_with_jitter(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of ``a``, adding scaled jitter if needed."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    d = a.shape[0]
    scale = float(np.trace(a)) / max(d, 1)
    if scale <= 0 or not np.isfinite(scale):
        scale = 1.0
    rel = _JITTER_START
    eye = np.eye(d)
    while rel <= _JITTER_MAX:
        try:
            return np.linalg.cholesky(a + rel * scale * eye)
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise NumericalError(
        f"matrix not positive definite after jitter up to {_JITTER_MAX} * trace/d"
    )


def _draw_gaussian_given_precision_chol(l_factor, rhs, rng):
    """Draw from N(A^-1 rhs, A^-1) given the lower Cholesky factor of A."""
    mean = solve_triangular(
        l_factor.T, solve_triangular(l_factor, rhs, lower=True), lower=False
    )
    z = rng.standard_normal(rhs.shape[0])
    return mean + solve_triangular(l_factor.T, z, lower=False)


def _truncated_normal_above_zero(mu, rng):
    """Draw z ~ N(mu, 1) conditioned on z > 0, elementwise, via inverse CDF.

    Works in log space so means far below zero stay finite.
    """
    v = 1.0 - rng.random(mu.shape)  # in (0, 1]
    log_tail = np.log(v) + log_ndtr(mu)
    return mu - ndtri_exp(log_tail)


def fit_linear_gibbs(
    exp: Experiment, cfg: SamplerConfig, seed: int
) -> PosteriorSampleSet:
    """Fit the Gaussian-likelihood model with gamma precision priors.

    Returns exactly ``cfg.n_samples`` draws taken after ``cfg.burn_in``
    iterations, keeping every ``cfg.thin``-th one. Each stored row is
    [w_1..w_d, log sigma_n^2].
    """
    if exp.outcome_kind != "continuous":
        raise ValueError("fit_linear_gibbs requires continuous outcomes")
    x = exp.covariates
    y = exp.outcomes
    n, d = x.shape
    rng = np.random.default_rng(seed)

    xtx = x.T @ x
    xty = x.T @ y
    a, b = cfg.gamma_shape, cfg.gamma_rate
    alpha = np.full(d, a / b)
    tau_n = a / b
    w = np.zeros(d)

    rows = np.empty((cfg.n_samples, d + 1))
    kept = 0
    total = cfg.burn_in + cfg.n_samples * cfg.thin
    for it in range(total):
        prec = tau_n * xtx
        prec[np.diag_indices_from(prec)] += alpha
        l_factor = cholesky_with_jitter(prec)
        w = _draw_gaussian_given_precision_chol(l_factor, tau_n * xty, rng)

        alpha = rng.gamma(a + 0.5, 1.0 / (b + 0.5 * w**2))
        rss = float(np.sum((y - x @ w) ** 2))
        tau_n = rng.gamma(a + 0.5 * n, 1.0 / (b + 0.5 * rss))

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            rows[kept, :d] = w
            rows[kept, d] = -np.log(tau_n)
            kept += 1

    return PosteriorSampleSet(
        experiment_id=exp.id,
        model_kind="linear",
        samples=rows,
        seed=seed,
        sampler_config=cfg,
    )


def fit_probit_gibbs(
    exp: Experiment, cfg: SamplerConfig, seed: int
) -> PosteriorSampleSet:
    """Fit the probit model by truncated-Gaussian data augmentation."""
    if exp.outcome_kind != "binary":
        raise ValueError("fit_probit_gibbs requires binary outcomes")
    x = exp.covariates
    y = exp.outcomes
    n, d = x.shape
    rng = np.random.default_rng(seed)

    prec = cfg.probit_prior_precision * np.eye(d) + x.T @ x
    l_factor = cholesky_with_jitter(prec)
    signs = 2.0 * y - 1.0
    w = np.zeros(d)

    rows = np.empty((cfg.n_samples, d))
    kept = 0
    total = cfg.burn_in + cfg.n_samples * cfg.thin
    for it in range(total):
        mu = x @ w
        # y=1 wants z>0 at mean mu; y=0 wants z<0, i.e. -z>0 at mean -mu.
        z = signs * _truncated_normal_above_zero(signs * mu, rng)
        w = _draw_gaussian_given_precision_chol(l_factor, x.T @ z, rng)

        if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            rows[kept] = w
            kept += 1

    return PosteriorSampleSet(
        experiment_id=exp.id,
        model_kind="probit",
        samples=rows,
        seed=seed,
        sampler_config=cfg,
    )


def analytic_gaussian_posterior(
    exp: Experiment, noise_var: float, prior_precision: float
):
    """Exact posterior N(mean, cov) of w under fixed noise variance.

    Model: y ~ N(Xw, noise_var * I), w ~ N(0, I / prior_precision).
    This is the conjugate oracle the Gibbs sampler collapses to when its
    gamma priors are clamped. An empty experiment returns the prior.
    """
    if exp.outcome_kind != "continuous":
        raise ValueError("analytic posterior is defined for continuous outcomes")
    if noise_var <= 0 or prior_precision <= 0:
        raise ValueError("noise_var and prior_precision must be > 0")
    x = exp.covariates
    d = x.shape[1]
    prec = prior_precision * np.eye(d) + (x.T @ x) / noise_var
    l_factor = cholesky_with_jitter(prec)
    l_inv = solve_triangular(l_factor, np.eye(d), lower=True)
    cov = l_inv.T @ l_inv
    mean = cov @ (x.T @ exp.outcomes / noise_var)
    return mean, cov


def thin_every_k(samples: PosteriorSampleSet, k: int) -> WeightVector:
    """0/1 weights keeping every k-th sample (indices 0, k, 2k, ...)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > samples.m:
        raise ValueError(f"k={k} exceeds sample count {samples.m}")
    weights = np.zeros(samples.m)
    weights[::k] = 1.0
    return WeightVector(
        experiment_id=samples.experiment_id,
        weights=weights,
        source="every_k",
        stride=k,
    )
