"""Learn sparse per-sample weights that preserve retrieval rankings.

The pipeline: score every database experiment against every other with
the full-sample estimator (ground truth), build rank-preservation
triplets from the top-K neighbours of each query, assemble the highly
sparse classification design matrix, and solve the L1-regularized
logistic program with cyclic coordinate descent. Slicing the combined
solution by experiment yields one weight vector per sample set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve

from .core import DataError, ModelBank, NumericalError, WeightVector
from .likelihood import LogLikTable, build_loglik_table, logmean_exp
from .samplers import cholesky_with_jitter

# Stationarity tolerances for the returned solution: relative slack for
# active coordinates, absolute slack on the gradient bound at zeros.
KKT_REL_TOL = 1e-6
KKT_ABS_TOL = 1e-6


@dataclass(frozen=True)
class Triplet:
    """One rank constraint: i1 should outrank i2 for query q."""

    q: str
    i1: str
    i2: str
    label: int
    sign_flipped: bool = False

    def __post_init__(self):
        if len({self.q, self.i1, self.i2}) != 3:
            raise ValueError("triplet members must be pairwise distinct")
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


@dataclass(frozen=True)
class ScoreTable:
    """Full-sample log scores between database experiments.

    ``scores[qi, di]`` is the log uniform-average score of candidate
    ``ids[di]`` for query ``ids[qi]``; the diagonal is NaN (an experiment
    is never a candidate for itself).
    """

    ids: tuple
    scores: np.ndarray

    def index(self, exp_id: str) -> int:
        return self.ids.index(exp_id)


@dataclass(frozen=True)
class SparseDesign:
    """Row-sparse triplet classification problem.

    Rows are stored CSR-style: row l holds ``values[indptr[l]:indptr[l+1]]``
    at columns ``col_indices[...]``. A row for triplet (q, i1, i2) carries
    the (row-normalized) query likelihoods of i1's samples with positive
    sign and i2's with negative sign, so it has exactly m_i1 + m_i2
    stored entries. ``column_offsets`` maps experiment id to
    (first column, sample count); ``flipped`` records which rows had
    their signs and label flipped for class balance.
    """

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    labels: np.ndarray
    column_offsets: dict
    flipped: np.ndarray

    def row(self, l: int):
        lo, hi = self.indptr[l], self.indptr[l + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.indptr)

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_indices, self.indptr),
            shape=(self.n_rows, self.n_cols),
        )


@dataclass(frozen=True)
class SolverResult:
    """Combined weight vector over all columns plus solve diagnostics."""

    w: np.ndarray
    objective_trace: np.ndarray
    iterations: int
    nonzero_per_experiment: dict
    negative_weight_count: int
    column_offsets: dict


def database_loglik_tables(bank: ModelBank, database_ids) -> dict:
    """Log-likelihood tables of every database experiment used as a query."""
    tables = {}
    for qid in database_ids:
        exp_q = bank.experiment(qid)
        tables[qid] = build_loglik_table(bank, exp_q, database_ids)
    return tables


def ground_truth_scores(bank: ModelBank, database_ids, tables: dict | None = None) -> ScoreTable:
    """Full-sample log scores for every (query, candidate) database pair."""
    ids = tuple(database_ids)
    if tables is None:
        tables = database_loglik_tables(bank, ids)
    d = len(ids)
    scores = np.full((d, d), np.nan)
    for qi, qid in enumerate(ids):
        table = tables[qid]
        for di, did in enumerate(ids):
            if did == qid:
                continue
            scores[qi, di] = logmean_exp(table.loglik[did])
    return ScoreTable(ids=ids, scores=scores)


def build_triplets(scores: ScoreTable, k: int) -> list:
    """Top-K rank-preservation triplets for every query.

    For each query q the K best-scoring candidates i1 are compared
    against every other experiment i2 (i2 != q, i2 != i1), giving
    K * D * (D - 2) triplets in total. Pairs where both members are in
    the top K appear twice with swapped roles; these repeats are kept.
    The label is 1 iff score(q, i1) > score(q, i2).
    """
    ids = scores.ids
    d = len(ids)
    if not 1 <= k <= d - 2:
        raise ValueError(f"K={k} out of range [1, {d - 2}] for D={d}")
    triplets = []
    for qi, qid in enumerate(ids):
        row = scores.scores[qi]
        candidates = [i for i in range(d) if i != qi]
        # descending score, lexicographic id tie-break
        top = sorted(candidates, key=lambda i: (-row[i], ids[i]))[:k]
        for i1 in top:
            for i2 in range(d):
                if i2 == qi or i2 == i1:
                    continue
                label = 1 if row[i1] > row[i2] else 0
                triplets.append(Triplet(q=qid, i1=ids[i1], i2=ids[i2], label=label))
    return triplets


def flip_row(values: np.ndarray, label: int):
    """Negate a design row and flip its label; an involution."""
    return -values, 1 - label


def assemble_design(
    bank: ModelBank, triplets, query_loglik_tables: dict, seed: int
) -> SparseDesign:
    """Build the sparse design matrix from triplets and loglik tables.

    Row l for triplet (q, i1, i2) holds +exp(ll - row_max) over i1's
    samples and -exp(ll - row_max) over i2's, where row_max is the
    largest log-likelihood among the row's entries, so the largest entry
    magnitude is exactly 1. Each row's signs and label are flipped
    together with probability 1/2 (seeded) to balance the classes.
    """
    exp_ids = sorted({t.i1 for t in triplets} | {t.i2 for t in triplets} | {t.q for t in triplets})
    offsets = {}
    start = 0
    for eid in exp_ids:
        post = bank.posteriors.get(eid)
        if post is None:
            raise DataError(f"no posterior sample set for experiment {eid!r}")
        offsets[eid] = (start, post.m)
        start += post.m
    n_cols = start

    # Per (q, d) pair: likelihoods normalized by their own max, plus that
    # max; a row then only rescales by exp(max - row_max).
    norm = {}
    peak = {}
    for t in triplets:
        table = query_loglik_tables.get(t.q)
        if table is None:
            raise DataError(f"no log-likelihood table for query {t.q!r}")
        for cid in (t.i1, t.i2):
            key = (t.q, cid)
            if key in norm:
                continue
            ll = table.loglik.get(cid)
            if ll is None:
                raise DataError(f"no log-likelihoods for pair ({t.q!r}, {cid!r})")
            m = float(np.max(ll))
            peak[key] = m
            norm[key] = np.exp(ll - m) if np.isfinite(m) else np.zeros_like(ll)

    n_rows = len(triplets)
    row_nnz = np.array([offsets[t.i1][1] + offsets[t.i2][1] for t in triplets], dtype=np.int64)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(row_nnz, out=indptr[1:])
    values = np.empty(indptr[-1], dtype=np.float64)
    col_indices = np.empty(indptr[-1], dtype=np.int32)
    labels = np.empty(n_rows, dtype=np.uint8)

    rng = np.random.default_rng(seed)
    flipped = rng.random(n_rows) < 0.5

    for l, t in enumerate(triplets):
        k1 = (t.q, t.i1)
        k2 = (t.q, t.i2)
        row_max = max(peak[k1], peak[k2])
        s1 = np.exp(peak[k1] - row_max)
        s2 = np.exp(peak[k2] - row_max)
        sign = -1.0 if flipped[l] else 1.0
        lo = indptr[l]
        start1, m1 = offsets[t.i1]
        start2, m2 = offsets[t.i2]
        values[lo : lo + m1] = (sign * s1) * norm[k1]
        values[lo + m1 : lo + m1 + m2] = (-sign * s2) * norm[k2]
        col_indices[lo : lo + m1] = np.arange(start1, start1 + m1, dtype=np.int32)
        col_indices[lo + m1 : lo + m1 + m2] = np.arange(start2, start2 + m2, dtype=np.int32)
        labels[l] = (1 - t.label) if flipped[l] else t.label

    return SparseDesign(
        n_rows=n_rows,
        n_cols=n_cols,
        indptr=indptr,
        col_indices=col_indices,
        values=values,
        labels=labels,
        column_offsets=offsets,
        flipped=flipped,
    )


def export_design(design: SparseDesign, path):
    """Write the design as text triplets (`row col value`), labels beside it."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{design.n_rows} {design.n_cols}\n")
        for l in range(design.n_rows):
            cols, vals = design.row(l)
            for c, v in zip(cols, vals):
                fh.write(f"{l} {c} {v:.17g}\n")
    with open(f"{path}.labels", "w", encoding="utf-8") as fh:
        for y in design.labels:
            fh.write(f"{int(y)}\n")


def logistic_objective(z_margin: np.ndarray, w: np.ndarray, lam: float) -> float:
    """L1-regularized logistic loss given per-row margins y_l * (x_l . w)."""
    return float(np.logaddexp(0.0, -z_margin).sum() + lam * np.abs(w).sum())


def _sigmoid_neg(z: np.ndarray) -> np.ndarray:
    """sigma(-z) per row; the clip only avoids overflow where s ~ 0."""
    return 1.0 / (1.0 + np.exp(np.minimum(z, 700.0)))


def _column_gradients(csc: sp.csc_matrix, z: np.ndarray) -> np.ndarray:
    """Gradient of the logistic loss for every column at margins ``z``."""
    return -(csc.T @ _sigmoid_neg(z))


def kkt_violations(g: np.ndarray, w: np.ndarray, lam: float):
    """Stationarity residuals: (relative, at nonzeros) and (excess, at zeros)."""
    nz = w != 0.0
    rel = np.zeros_like(w)
    if np.any(nz):
        rel[nz] = np.abs(g[nz] + lam * np.sign(w[nz])) / (1.0 + np.abs(g[nz]))
    excess = np.zeros_like(w)
    z = ~nz
    excess[z] = np.maximum(np.abs(g[z]) - lam, 0.0)
    return float(rel.max(initial=0.0)), float(excess.max(initial=0.0))


def solve_l1_logistic(
    design: SparseDesign,
    lam: float,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
) -> SolverResult:
    """Minimize sum_l log(1 + exp(-y_l x_l.w)) + lam * ||w||_1, no intercept.

    Cyclic coordinate descent on the quadratic upper bound of the
    logistic loss (curvature bound 1/4 per row), with soft-thresholding
    updates and glmnet-style active-set passes between full sweeps.
    Duplicate triplet rows make many columns near-collinear, where
    per-coordinate updates zigzag far above the stationarity tolerance;
    once sweep progress is small, the active coordinates are therefore
    refined jointly by damped Newton steps with their signs held fixed.
    Converges when the returned point passes the stationarity check.
    """
    if design.n_rows < 1:
        raise ValueError("design must have at least one row")
    if lam <= 0:
        raise ValueError("lambda must be > 0")

    y_signed = design.labels.astype(np.float64) * 2.0 - 1.0
    folded = design.values * np.repeat(y_signed, np.diff(design.indptr))
    csc = sp.csr_matrix(
        (folded, design.col_indices, design.indptr),
        shape=(design.n_rows, design.n_cols),
    ).tocsc()
    del folded
    csc.sort_indices()
    cindptr = csc.indptr
    rows_of = csc.indices
    cvals = csc.data
    counts = np.diff(cindptr)

    curv = np.zeros(design.n_cols)
    occupied = counts > 0
    if cvals.size:
        # reduceat over the starts of occupied columns only; empty columns
        # contribute no elements between consecutive starts.
        curv[occupied] = np.add.reduceat(cvals * cvals, cindptr[:-1][occupied])
    curv *= 0.25

    m = design.n_cols
    w = np.zeros(m)
    z = np.zeros(design.n_rows)  # margins y_l * (x_l . w)
    trace = [logistic_objective(z, w, lam)]

    def sweep(cols):
        max_delta = 0.0
        for j in cols:
            h = curv[j]
            if h <= 0.0:
                continue
            lo, hi = cindptr[j], cindptr[j + 1]
            r = rows_of[lo:hi]
            v = cvals[lo:hi]
            zr = z[r]
            g = -float(v @ _sigmoid_neg(zr))
            u = h * w[j] - g
            w_new = np.sign(u) * max(abs(u) - lam, 0.0) / h
            delta = w_new - w[j]
            if delta != 0.0:
                w[j] = w_new
                z[r] = zr + v * delta
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        return max_delta

    def refine_active():
        # Joint damped-Newton steps over the nonzero coordinates with
        # signs held fixed; coordinates that would cross zero are
        # clipped to zero and drop out. The line search only accepts
        # a lower objective, so the trace stays non-increasing.
        nonlocal z
        for _ in range(25):
            active = np.flatnonzero(w)
            if active.size == 0:
                return
            sub = csc[:, active]
            signs = np.sign(w[active])
            s = _sigmoid_neg(z)
            grad = sub.T @ (-s) + lam * signs
            rel = np.abs(grad) / (1.0 + np.abs(grad - lam * signs))
            if rel.max() <= 0.5 * KKT_REL_TOL:
                return
            hess = (sub.multiply((s * (1.0 - s))[:, np.newaxis]).T @ sub).toarray()
            try:
                chol = cholesky_with_jitter(hess)
            except NumericalError:
                return
            step = -cho_solve((chol, True), grad)
            if float(grad @ step) >= 0.0:
                return
            base = w[active].copy()
            obj_before = logistic_objective(z, w, lam)
            scale = 1.0
            while scale >= 1e-10:
                trial = base + scale * step
                trial[np.sign(trial) != signs] = 0.0
                dz = sub @ (trial - base)
                w[active] = trial
                obj = logistic_objective(z + dz, w, lam)
                if obj < obj_before:
                    z = z + dz
                    trace.append(obj)
                    break
                scale *= 0.5
            else:
                w[active] = base
                return

    all_cols = range(m)
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        max_delta = sweep(all_cols)
        sweeps += 1
        trace.append(logistic_objective(z, w, lam))
        # bounded active-set passes, so full sweeps (the only place a
        # zero coordinate can activate) keep recurring
        inner = 0
        while sweeps < max_sweeps and inner < 50:
            active = np.flatnonzero(w)
            if active.size == 0:
                break
            max_delta = sweep(active)
            sweeps += 1
            inner += 1
            trace.append(logistic_objective(z, w, lam))
            if max_delta < tol:
                break
        if max_delta < max(tol, 1e-3):
            refine_active()
        z = csc @ w  # resync incrementally drifted margins
        rel, excess = kkt_violations(_column_gradients(csc, z), w, lam)
        if rel <= KKT_REL_TOL and excess <= KKT_ABS_TOL:
            converged = True
            break

    if not converged:
        z = csc @ w
        rel, excess = kkt_violations(_column_gradients(csc, z), w, lam)
        raise NumericalError(
            f"no convergence after {max_sweeps} sweeps; stationarity gap "
            f"rel={rel:.3e} zero-excess={excess:.3e}"
        )

    nonzero_per_exp = {
        eid: int(np.count_nonzero(w[start : start + cnt]))
        for eid, (start, cnt) in design.column_offsets.items()
    }
    return SolverResult(
        w=w,
        objective_trace=np.asarray(trace),
        iterations=sweeps,
        nonzero_per_experiment=nonzero_per_exp,
        negative_weight_count=int(np.sum(w < 0.0)),
        column_offsets=dict(design.column_offsets),
    )


def extract_weights(result: SolverResult, bank: ModelBank) -> dict:
    """Slice the combined solution into one WeightVector per experiment."""
    out = {}
    all_zero = []
    for eid, (start, cnt) in result.column_offsets.items():
        post = bank.posteriors.get(eid)
        if post is None:
            raise DataError(f"no posterior sample set for experiment {eid!r}")
        if post.m != cnt:
            raise DataError(
                f"column block of {eid!r} holds {cnt} samples, bank has {post.m}"
            )
        weights = result.w[start : start + cnt]
        wv = WeightVector(experiment_id=eid, weights=weights, source="learned")
        if wv.nonzero_count == 0:
            all_zero.append(eid)
        out[eid] = wv
    if all_zero:
        warnings.warn(
            f"learned weights are entirely zero for {len(all_zero)} experiment(s): "
            f"{all_zero}"
        )
    return out
