"""Tests of whether a local optimum of the likelihood is the global one.

Four statistics are implemented, all evaluated at a converged point
``theta_hat``:

``rao``
    ``(1/p) s^T I^-1 s`` against ``chi2(p)/p``.
``two-sided``
    ``(l - m_hat)^2 / v_hat`` against ``chi2(1)``.
``one-sided``
    ``(l - m_hat) / sqrt(v_hat)``, rejecting for large *negative* values.
    In a location family the validation function can only shift downwards
    at a spurious optimum, which is what makes the one-sided form more
    powerful.
``gap``
    ``(g - m_g) / sqrt(v_g)`` where ``g`` is the log-likelihood improvement
    obtained by relaxing the model around ``theta_hat``; rejects for large
    values.

``m_hat, v_hat, m_g, v_g`` come from a parametric bootstrap at ``theta_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import stats

from .model import Embedding, GaussianLocationModel, StatisticalModel, as_samples
from .optimize import (DEFAULT_MAX_ITER, DEFAULT_TOL, _check_stationary,
                       minimize_gaussian_batch)
from .rng import as_generator

ACCEPT = "accept-H0"
REJECT = "reject-H0"
MAX_DROP_FRACTION = 0.10


class DegenerateVarianceError(ArithmeticError):
    """Bootstrap variance is zero, so the standardised statistic is undefined."""


class BootstrapFailure(RuntimeError):
    """Too many bootstrap replicates were lost to optimiser failures."""


@dataclass(frozen=True)
class BootstrapMoments:
    mean_hat: float
    var_hat: float
    replicates: int
    seed: Optional[int] = None
    values: Optional[np.ndarray] = None
    dropped: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least two bootstrap replicates")
        if self.var_hat < 0:
            raise ValueError("variance estimate must be non-negative")


@dataclass(frozen=True)
class TestReport:
    statistic: float
    threshold: float
    alpha: float
    decision: str
    kind: str
    moments: Optional[BootstrapMoments] = None

    __test__ = False  # not a pytest class

    @property
    def reject(self) -> bool:
        return self.decision == REJECT


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")


def _moments_from(values: np.ndarray, seed=None, dropped: int = 0) -> BootstrapMoments:
    values = np.asarray(values, dtype=float)
    return BootstrapMoments(float(values.mean()), float(values.var(ddof=1)), len(values),
                            seed, values, dropped)


def bootstrap_moments(model: StatisticalModel, theta_hat, B: int = 1000,
                      rng: Union[np.random.Generator, Sequence[np.random.Generator], int, None] = None,
                      n_columns: int = 1) -> BootstrapMoments:
    """Mean and unbiased variance of ``l(D_b; theta_hat)`` over ``D_b ~ f(.; theta_hat)``.

    ``rng`` may be one generator (all replicates drawn from it in order) or
    a sequence of ``B`` generators, one per replicate.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    if isinstance(rng, (list, tuple)):
        if len(rng) != B:
            raise ValueError("need one generator per replicate")
        values = [model.log_likelihood(model.sample(theta_hat, n_columns, g), theta_hat) for g in rng]
        return _moments_from(np.array(values), seed)
    gen = as_generator(rng)
    if isinstance(model, GaussianLocationModel):
        draws = model.sample_batch(theta_hat, B, n_columns, gen)
        thetas = np.broadcast_to(np.atleast_1d(np.asarray(theta_hat, dtype=float)), (B, model.n_params))
        values = model.log_likelihood_batch(draws, thetas)
    else:
        values = np.array([model.log_likelihood(model.sample(theta_hat, n_columns, gen), theta_hat)
                           for _ in range(B)])
    return _moments_from(values, seed)


def _require_variance(moments: BootstrapMoments):
    if not moments.var_hat > 0:
        raise DegenerateVarianceError("bootstrap variance is zero")


def two_sided_test(ell_obs: float, moments: BootstrapMoments, alpha: float = 0.05,
                   empirical: bool = False) -> TestReport:
    """Squared standardised validation function against the ``chi2(1)`` quantile."""
    _check_alpha(alpha)
    _require_variance(moments)
    stat = (ell_obs - moments.mean_hat) ** 2 / moments.var_hat
    if empirical and moments.values is not None:
        boot = (moments.values - moments.mean_hat) ** 2 / moments.var_hat
        eta = float(np.quantile(boot, 1.0 - alpha))
    else:
        eta = float(stats.chi2.ppf(1.0 - alpha, df=1))
    return TestReport(float(stat), eta, alpha, REJECT if stat > eta else ACCEPT, "two-sided", moments)


def one_sided_test(ell_obs: float, moments: BootstrapMoments, alpha: float = 0.05,
                   empirical: bool = False) -> TestReport:
    """Standardised validation function; rejects when it falls below the ``alpha`` quantile."""
    _check_alpha(alpha)
    _require_variance(moments)
    sd = np.sqrt(moments.var_hat)
    stat = (ell_obs - moments.mean_hat) / sd
    if empirical and moments.values is not None:
        eta = float(np.quantile((moments.values - moments.mean_hat) / sd, alpha))
    else:
        eta = float(stats.norm.ppf(alpha))
    return TestReport(float(stat), eta, alpha, REJECT if stat < eta else ACCEPT, "one-sided", moments)


def rao_score_test(model: StatisticalModel, data, theta_hat, alpha: float = 0.05) -> TestReport:
    """``(1/p) s^T I^-1 s`` with the total-data Fisher information ``n I(theta_hat)``."""
    _check_alpha(alpha)
    samples = as_samples(data)
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    s = model.score(samples, theta)
    info = samples.shape[1] * model.fisher(theta)
    evals = np.linalg.eigvalsh(info)
    if not evals[0] > 1e-12 * max(evals[-1], 0.0) or evals[-1] <= 0:
        raise ValueError(f"Fisher information is singular at theta_hat (eigenvalues {evals[0]:.3e} .. {evals[-1]:.3e})")
    p = theta.size
    stat = float(s @ np.linalg.solve(info, s)) / p
    thr = float(stats.chi2.ppf(1.0 - alpha, df=p)) / p
    return TestReport(stat, thr, alpha, REJECT if stat > thr else ACCEPT, "rao")


# gap statistic ---------------------------------------------------------------

def relocalize(model: GaussianLocationModel, samples: np.ndarray, starts: np.ndarray,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Restricted descent of each dataset from its start; returns the batch result."""
    return minimize_gaussian_batch(model, samples, starts, tol=tol, max_iter=max_iter)


def relaxed_gaps(embedding: Embedding, samples: np.ndarray, thetas: np.ndarray,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Gap of each dataset at its restricted point ``thetas[b]``.

    Returns ``(gaps, ok)``; ``ok`` flags replicates whose relaxed descent
    converged.  Gaps are differences of the relaxed objective between the
    start ``(theta, 0)`` and the end point; descent cannot make them
    negative except by rounding, which is clipped to zero.
    """
    thetas = np.asarray(thetas, dtype=float).reshape(len(samples), embedding.base.n_params)
    if embedding.n_extra == 0:
        return np.zeros(len(samples)), np.ones(len(samples), dtype=bool)
    starts = embedding.lift(thetas)
    f0 = -embedding.relaxed.log_likelihood_batch(samples, starts)
    res = minimize_gaussian_batch(embedding.relaxed, samples, starts, tol=tol, max_iter=max_iter)
    return np.maximum(f0 - res.fun, 0.0), res.converged


def gap_bootstrap(model: GaussianLocationModel, embeddings: Sequence[Embedding], theta_hat, B: int,
                  rng, n_columns: int = 1, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> list[BootstrapMoments]:
    """Bootstrap gap moments for several relaxations sharing the same replicates.

    Every replicate is drawn at ``theta_hat``, re-localised by restricted
    descent from ``theta_hat`` and then relaxed.  Replicates whose
    optimisations fail are dropped; more than 10% dropped is an error.
    """
    if B < 2:
        raise ValueError("B must be >= 2")
    gen = as_generator(rng)
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    draws = model.sample_batch(theta, B, n_columns, gen)
    loc = relocalize(model, draws, np.broadcast_to(theta, (B, theta.size)), tol, max_iter)
    out = []
    for emb in embeddings:
        gaps, ok = relaxed_gaps(emb, draws, loc.x, tol, max_iter)
        keep = ok & loc.converged
        dropped = int(B - keep.sum())
        if dropped > MAX_DROP_FRACTION * B:
            raise BootstrapFailure(f"{dropped} of {B} gap replicates failed to converge")
        if keep.sum() < 2:
            raise BootstrapFailure("fewer than two usable gap replicates")
        out.append(_moments_from(gaps[keep], None, dropped))
    return out


def observed_gap(embedding: Embedding, data, theta_hat, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> float:
    """Gap of the observed data at the restricted stationary point ``theta_hat``."""
    samples = as_samples(data)
    theta = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    _check_stationary(embedding.base, samples, theta, tol)
    gaps, ok = relaxed_gaps(embedding, samples[None], theta[None], tol, max_iter)
    if not ok[0]:
        raise BootstrapFailure("relaxed descent on the observed data did not converge")
    return float(gaps[0])


def gap_decision(gap: float, moments: BootstrapMoments, alpha: float = 0.01,
                 empirical: bool = False) -> TestReport:
    _check_alpha(alpha)
    _require_variance(moments)
    sd = np.sqrt(moments.var_hat)
    stat = (gap - moments.mean_hat) / sd
    if empirical and moments.values is not None:
        tau = float(np.quantile((moments.values - moments.mean_hat) / sd, 1.0 - alpha))
    else:
        tau = float(stats.norm.ppf(1.0 - alpha))
    return TestReport(float(stat), tau, alpha, REJECT if stat > tau else ACCEPT, "gap", moments)


def gap_test(model: GaussianLocationModel, embedding: Embedding, data, theta_hat, B: int = 200,
             alpha: float = 0.01, rng=None, tol: float = DEFAULT_TOL,
             max_iter: int = DEFAULT_MAX_ITER, empirical: bool = False) -> TestReport:
    """Standardised relaxation gap against the standard-normal ``1 - alpha`` quantile.

    Raises
    ------
    NotStationaryError
        ``theta_hat`` is not a stationary point of the restricted likelihood.
    DegenerateVarianceError
        All bootstrap gaps are equal (e.g. an embedding without extra
        coordinates).
    BootstrapFailure
        More than 10% of the replicates failed to converge.
    """
    samples = as_samples(data)
    g = observed_gap(embedding, samples, theta_hat, tol, max_iter)
    (moments,) = gap_bootstrap(model, [embedding], theta_hat, B, rng, samples.shape[1], tol, max_iter)
    return gap_decision(g, moments, alpha, empirical)


# ROC summaries -----------------------------------------------------------------

def roc_points(scores_h0, scores_h1) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ROC of the rule "reject when score > t", swept over all thresholds.

    Returns ``(pfa, pd)`` starting at ``(0, 0)`` and ending at ``(1, 1)``,
    both non-decreasing.
    """
    s0 = np.asarray(scores_h0, dtype=float)
    s1 = np.asarray(scores_h1, dtype=float)
    thr = np.unique(np.concatenate([s0, s1]))[::-1]
    pfa = [0.0] + [float(np.mean(s0 >= t)) for t in thr]
    pd = [0.0] + [float(np.mean(s1 >= t)) for t in thr]
    return np.array(pfa), np.array(pd)


def pd_at_pfa(scores_h0, scores_h1, pfa_grid) -> np.ndarray:
    """Largest detection rate achievable with false-alarm rate at most each grid value."""
    pfa, pd = roc_points(scores_h0, scores_h1)
    out = []
    for a in np.atleast_1d(pfa_grid):
        ok = pfa <= a + 1e-12
        out.append(float(pd[ok].max()))
    return np.array(out)


def auc(scores_h0, scores_h1) -> float:
    """Area under the ROC curve (Mann-Whitney, ties counted one half)."""
    s0 = np.asarray(scores_h0, dtype=float)
    s1 = np.asarray(scores_h1, dtype=float)
    if s0.size == 0 or s1.size == 0:
        raise ValueError("need scores under both hypotheses")
    ranks = stats.rankdata(np.concatenate([s0, s1]))
    r1 = ranks[s0.size:].sum()
    return float((r1 - s1.size * (s1.size + 1) / 2.0) / (s0.size * s1.size))
