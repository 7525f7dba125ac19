"""Statistical-model abstraction and Gaussian location-family analytics.

Log-likelihood convention
-------------------------
All log-likelihoods are *totals* over the columns of a dataset,
``sum_k ln f(d_k; theta)``.  Dividing by the number of columns recovers the
per-sample average.  Bootstrap moments and test statistics are formed on the
same total scale, so nothing needs rescaling downstream.

``fisher(theta)`` is the information of a single column; a dataset with ``n``
columns carries ``n * fisher(theta)``.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import as_generator

LOG_2PI = float(np.log(2.0 * np.pi))
FD_STEP = float(np.finfo(float).eps ** (1.0 / 3.0))


class EvaluationError(ArithmeticError):
    """A model function produced a non-finite value."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParamPoint:
    """A parameter vector with optional closed per-coordinate bounds.

    ``bounds`` has shape ``(p, 2)``; use ``-inf``/``inf`` for open sides.
    Instances convert transparently with ``np.asarray``.
    """

    values: np.ndarray
    bounds: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if values.ndim != 1 or values.size < 1:
            raise ValueError("a parameter point needs p >= 1 coordinates")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        object.__setattr__(self, "values", _freeze(values))
        if self.bounds is not None:
            bounds = np.asarray(self.bounds, dtype=float).reshape(-1, 2)
            if bounds.shape[0] != values.size:
                raise ValueError("bounds must have one interval per coordinate")
            if np.any(values < bounds[:, 0]) or np.any(values > bounds[:, 1]):
                raise ValueError(f"point {values} lies outside its bounds")
            object.__setattr__(self, "bounds", _freeze(bounds))

    def __array__(self, dtype=None, copy=None):
        return np.array(self.values, dtype=dtype)

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return self.values[i]


@dataclass(frozen=True)
class Dataset:
    """``m x n`` matrix whose columns are i.i.d. observations."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"dataset must be a non-empty m x n matrix, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise ValueError("dataset entries must be finite")
        object.__setattr__(self, "samples", _freeze(s))

    @property
    def m(self) -> int:
        return self.samples.shape[0]

    @property
    def n(self) -> int:
        return self.samples.shape[1]


def as_samples(data) -> np.ndarray:
    """Return the ``(m, n)`` sample matrix of a Dataset or array-like."""
    if isinstance(data, Dataset):
        return data.samples
    return Dataset(data).samples


class StatisticalModel(abc.ABC):
    """A parametric family ``f(d; theta)`` over ``m``-dimensional columns."""

    dim: int
    n_params: int
    bounds: Optional[np.ndarray] = None

    @abc.abstractmethod
    def mean(self, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def sample(self, theta, n: int, rng: np.random.Generator) -> Dataset: ...

    @abc.abstractmethod
    def log_likelihood(self, data, theta) -> float: ...

    @abc.abstractmethod
    def score(self, data, theta) -> np.ndarray: ...

    @abc.abstractmethod
    def fisher(self, theta) -> np.ndarray: ...

    def objective(self, data):
        """``(f, grad)`` callables for minimising ``-log_likelihood``."""
        samples = as_samples(data)
        return (lambda th: -self.log_likelihood(samples, th),
                lambda th: -self.score(samples, th))


class GaussianLocationModel(StatisticalModel):
    """``d_k = mean_fn(theta) + eps_k`` with ``eps_k ~ N(0, sigma^2 I)``.

    Parameters
    ----------
    mean_fn, jac_fn : callable
        ``theta -> (m,)`` and ``theta -> (m, p)``.  When ``vectorized`` is
        true both also accept a stack ``(B, p)`` and return ``(B, m)`` /
        ``(B, m, p)``.
    sigma : float
        Noise standard deviation.
    n_params, dim : int
    bounds : array_like, optional
        ``(p, 2)`` box for the parameters.
    hess_fn : callable, optional
        Second derivatives of the mean, ``(m, p, p)`` (or ``(B, m, p, p)``).
        Enables exact Newton steps in the batched solver; without it the
        solver falls back to Gauss-Newton.
    """

    def __init__(self, mean_fn: Callable, jac_fn: Callable, sigma: float, n_params: int,
                 dim: int, bounds=None, hess_fn: Optional[Callable] = None,
                 vectorized: bool = False, resid_hess_fn: Optional[Callable] = None):
        if not sigma > 0:
            raise ValueError("sigma must be positive")
        self.mean_fn = mean_fn
        self.jac_fn = jac_fn
        self.hess_fn = hess_fn
        self.resid_hess_fn = resid_hess_fn
        self.sigma = float(sigma)
        self.n_params = int(n_params)
        self.dim = int(dim)
        self.vectorized = vectorized
        if bounds is None:
            bounds = np.tile([-np.inf, np.inf], (self.n_params, 1))
        self.bounds = _freeze(np.asarray(bounds, dtype=float).reshape(self.n_params, 2))

    # single-point evaluation -------------------------------------------------

    def _theta(self, theta) -> np.ndarray:
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        if th.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {th.shape}")
        return th

    def mean(self, theta) -> np.ndarray:
        mu = np.asarray(self.mean_fn(self._theta(theta)), dtype=float)
        if not np.all(np.isfinite(mu)):
            raise EvaluationError("mean function returned non-finite values")
        return mu

    def jacobian(self, theta) -> np.ndarray:
        jac = np.asarray(self.jac_fn(self._theta(theta)), dtype=float).reshape(self.dim, self.n_params)
        if not np.all(np.isfinite(jac)):
            raise EvaluationError("mean Jacobian is not finite")
        return jac

    def _check(self, samples: np.ndarray) -> np.ndarray:
        if samples.shape[0] != self.dim:
            raise ValueError(f"data dimension {samples.shape[0]} != model dimension {self.dim}")
        return samples

    def sample(self, theta, n: int, rng=None) -> Dataset:
        if n < 1:
            raise ValueError("n must be >= 1")
        mu = self.mean(theta)
        return Dataset(mu[:, None] + self.sigma * as_generator(rng).standard_normal((self.dim, n)))

    def log_likelihood(self, data, theta) -> float:
        """Total Gaussian log-likelihood over all columns."""
        d = self._check(as_samples(data))
        resid = d - self.mean(theta)[:, None]
        n = d.shape[1]
        return float(-0.5 * np.sum(resid ** 2) / self.sigma ** 2
                     - 0.5 * n * self.dim * (LOG_2PI + 2.0 * np.log(self.sigma)))

    def score(self, data, theta) -> np.ndarray:
        d = self._check(as_samples(data))
        resid = (d - self.mean(theta)[:, None]).sum(axis=1)
        return self.jacobian(theta).T @ resid / self.sigma ** 2

    def fisher(self, theta) -> np.ndarray:
        jac = self.jacobian(theta)
        info = jac.T @ jac / self.sigma ** 2
        return 0.5 * (info + info.T)

    # batched evaluation (used by the bootstrap loops) -----------------------

    def mean_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.n_params)
        if self.vectorized:
            return np.asarray(self.mean_fn(thetas), dtype=float).reshape(len(thetas), self.dim)
        return np.array([self.mean_fn(t) for t in thetas], dtype=float).reshape(len(thetas), self.dim)

    def jacobian_batch(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.n_params)
        shape = (len(thetas), self.dim, self.n_params)
        if self.vectorized:
            return np.asarray(self.jac_fn(thetas), dtype=float).reshape(shape)
        return np.array([self.jac_fn(t) for t in thetas], dtype=float).reshape(shape)

    def hessian_batch(self, thetas: np.ndarray) -> Optional[np.ndarray]:
        if self.hess_fn is None:
            return None
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.n_params)
        shape = (len(thetas), self.dim, self.n_params, self.n_params)
        if self.vectorized:
            return np.asarray(self.hess_fn(thetas), dtype=float).reshape(shape)
        return np.array([self.hess_fn(t) for t in thetas], dtype=float).reshape(shape)

    def residual_hessian_batch(self, thetas: np.ndarray, resid: np.ndarray) -> Optional[np.ndarray]:
        """``sum_i resid[b, i] d^2 mu_i / dtheta^2`` as ``(B, p, p)``, or None without second derivatives."""
        thetas = np.asarray(thetas, dtype=float).reshape(-1, self.n_params)
        if self.resid_hess_fn is not None:
            return np.asarray(self.resid_hess_fn(thetas, resid), dtype=float).reshape(
                len(thetas), self.n_params, self.n_params)
        mh = self.hessian_batch(thetas)
        if mh is None:
            return None
        return np.einsum("bm,bmpq->bpq", resid, mh, optimize=False)

    def sample_batch(self, theta, count: int, n: int, rng=None) -> np.ndarray:
        """``count`` datasets at ``theta`` as a ``(count, m, n)`` array."""
        mu = self.mean(theta)
        return mu[None, :, None] + self.sigma * as_generator(rng).standard_normal((count, self.dim, n))

    def log_likelihood_batch(self, samples: np.ndarray, thetas: np.ndarray) -> np.ndarray:
        """Row-wise total log-likelihood of ``samples[b]`` at ``thetas[b]``."""
        samples = np.asarray(samples, dtype=float)
        if samples.ndim == 2:
            samples = samples[:, :, None]
        n = samples.shape[2]
        resid = samples - self.mean_batch(thetas)[:, :, None]
        sq = (resid ** 2).sum(axis=(1, 2))
        return -0.5 * sq / self.sigma ** 2 - 0.5 * n * self.dim * (LOG_2PI + 2.0 * np.log(self.sigma))


# location-family analytics -----------------------------------------------------

def noncentrality(theta_true, theta_eval, model: GaussianLocationModel) -> float:
    """``||mu(theta_true) - mu(theta_eval)||^2 / sigma^2``."""
    diff = model.mean(theta_true) - model.mean(theta_eval)
    return float(diff @ diff) / model.sigma ** 2


def log_likelihood_gaussian(model: GaussianLocationModel, data, theta) -> float:
    return model.log_likelihood(data, theta)


def expected_loglik_gaussian(theta_true, theta_eval, model: GaussianLocationModel,
                             n_columns: int = 1) -> float:
    """``E_{theta_true}[ l(D; theta_eval) ]`` for the isotropic Gaussian model.

    The quadratic form is non-central chi-square with ``q = m`` degrees of
    freedom, so the mean is ``-(q + lam)/2 - (q/2) ln sigma^2 - (q/2) ln 2 pi``
    per column.
    """
    q = model.dim
    lam = noncentrality(theta_true, theta_eval, model)
    per_column = -0.5 * (q + lam) - 0.5 * q * np.log(model.sigma ** 2) - 0.5 * q * LOG_2PI
    return float(n_columns * per_column)


def loglik_variance_gaussian(theta_true, theta_eval, model: GaussianLocationModel,
                             n_columns: int = 1) -> float:
    """``Var_{theta_true}[ l(D; theta_eval) ] = n (q + 2 lam) / 2``."""
    lam = noncentrality(theta_true, theta_eval, model)
    return float(n_columns * 0.5 * (model.dim + 2.0 * lam))


# embeddings ----------------------------------------------------------------------

@dataclass(frozen=True)
class Embedding:
    """A relaxed mean over ``(theta, theta_extra)`` reducing to ``base`` at zero.

    ``relaxed`` is itself a Gaussian model over the concatenated
    coordinates; its first ``base.n_params`` coordinates are the original
    parameters.
    """

    base: GaussianLocationModel
    relaxed: GaussianLocationModel
    n_extra: int = field(init=False)

    def __post_init__(self):
        extra = self.relaxed.n_params - self.base.n_params
        if extra < 0 or self.relaxed.dim != self.base.dim:
            raise ValueError("relaxed model must extend the base parameters over the same data space")
        if self.relaxed.sigma != self.base.sigma:
            raise ValueError("relaxed and base noise levels differ")
        object.__setattr__(self, "n_extra", extra)

    @classmethod
    def from_functions(cls, base: GaussianLocationModel, mean_fn, jac_fn, n_extra: int,
                       hess_fn=None, extra_bounds=None, vectorized=None,
                       resid_hess_fn=None) -> "Embedding":
        if extra_bounds is None:
            extra_bounds = np.tile([-np.inf, np.inf], (n_extra, 1))
        bounds = np.vstack([base.bounds, np.asarray(extra_bounds, dtype=float).reshape(n_extra, 2)])
        relaxed = GaussianLocationModel(
            mean_fn, jac_fn, base.sigma, base.n_params + n_extra, base.dim, bounds=bounds,
            hess_fn=hess_fn, vectorized=base.vectorized if vectorized is None else vectorized,
            resid_hess_fn=resid_hess_fn)
        return cls(base, relaxed)

    def relaxed_mean(self, theta, theta_extra) -> np.ndarray:
        return self.relaxed.mean(np.concatenate([np.atleast_1d(theta), np.atleast_1d(theta_extra)]))

    def lift(self, theta) -> np.ndarray:
        """``(theta, 0)``, the image of a base point in the relaxed space."""
        theta = np.asarray(theta, dtype=float)
        pad = np.zeros(theta.shape[:-1] + (self.n_extra,))
        return np.concatenate([theta, pad], axis=-1)

    def extra_indices(self) -> np.ndarray:
        return np.arange(self.base.n_params, self.relaxed.n_params)


def identity_embedding(base: GaussianLocationModel) -> Embedding:
    """Embedding with no extra coordinates; the gap is identically zero."""
    return Embedding(base, base)


def _lifted_resid_hess(base: GaussianLocationModel, n_total: int) -> Optional[Callable]:
    """Residual-contracted Hessian when the extra coordinates enter the mean linearly."""
    if base.hess_fn is None and base.resid_hess_fn is None:
        return None
    p = base.n_params

    def resid_hess_fn(tt, resid):
        tt = np.asarray(tt, dtype=float).reshape(-1, n_total)
        out = np.zeros((len(tt), n_total, n_total))
        out[:, :p, :p] = base.residual_hessian_batch(tt[:, :p], resid)
        return out

    return resid_hess_fn


def measurement_domain_embedding(base: GaussianLocationModel) -> Embedding:
    """``mu(theta) + theta_extra`` with ``theta_extra`` spanning all of R^m."""
    p, m = base.n_params, base.dim

    def mean_fn(tt):
        tt = np.asarray(tt, dtype=float)
        return base.mean_batch(tt[..., :p]).reshape(tt.shape[:-1] + (m,)) + tt[..., p:]

    def jac_fn(tt):
        tt = np.asarray(tt, dtype=float)
        lead = tt.shape[:-1]
        jb = base.jacobian_batch(tt[..., :p]).reshape(lead + (m, p))
        eye = np.broadcast_to(np.eye(m), lead + (m, m))
        return np.concatenate([jb, eye], axis=-1)

    hess_fn = None
    if base.hess_fn is not None:
        def hess_fn(tt):
            tt = np.asarray(tt, dtype=float)
            lead = tt.shape[:-1]
            out = np.zeros(lead + (m, p + m, p + m))
            out[..., :p, :p] = base.hessian_batch(tt[..., :p]).reshape(lead + (m, p, p))
            return out

    return Embedding.from_functions(base, mean_fn, jac_fn, m, hess_fn=hess_fn, vectorized=True,
                                    resid_hess_fn=_lifted_resid_hess(base, p + m))


def additive_embedding(model: GaussianLocationModel, directions) -> Embedding:
    """``mu(theta) + sum_j c_j r_j`` for unit directions ``r_j`` in data space."""
    R = np.atleast_2d(np.asarray(directions, dtype=float))
    if R.shape[1] != model.dim:
        raise ValueError("directions must live in the data space")
    norms = np.linalg.norm(R, axis=1)
    if not np.allclose(norms, 1.0, atol=1e-10):
        raise ValueError("relaxation directions must have unit norm")
    p, k, m = model.n_params, R.shape[0], model.dim

    def mean_fn(tt):
        tt = np.asarray(tt, dtype=float)
        base = model.mean_batch(tt[..., :p]).reshape(tt.shape[:-1] + (m,))
        return base + tt[..., p:] @ R

    def jac_fn(tt):
        tt = np.asarray(tt, dtype=float)
        lead = tt.shape[:-1]
        jb = model.jacobian_batch(tt[..., :p]).reshape(lead + (m, p))
        return np.concatenate([jb, np.broadcast_to(R.T, lead + (m, k))], axis=-1)

    hess_fn = None
    if model.hess_fn is not None:
        def hess_fn(tt):
            tt = np.asarray(tt, dtype=float)
            lead = tt.shape[:-1]
            out = np.zeros(lead + (m, p + k, p + k))
            out[..., :p, :p] = model.hessian_batch(tt[..., :p]).reshape(lead + (m, p, p))
            return out

    return Embedding.from_functions(model, mean_fn, jac_fn, k, hess_fn=hess_fn, vectorized=True,
                                    resid_hess_fn=_lifted_resid_hess(model, p + k))


def check_embedding(embedding: Embedding, thetas) -> float:
    """Largest ``||relaxed_mean(theta, 0) - mean(theta)||`` over ``thetas``."""
    worst = 0.0
    for th in np.atleast_2d(thetas):
        diff = embedding.relaxed.mean(embedding.lift(th)) - embedding.base.mean(th)
        worst = max(worst, float(np.linalg.norm(diff)))
    return worst


# finite differences -------------------------------------------------------------

def fd_gradient(fun: Callable, theta) -> np.ndarray:
    """Central differences with step ``eps^(1/3) * max(1, |theta_i|)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    grad = np.empty_like(theta)
    for i in range(theta.size):
        h = FD_STEP * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fun(up) - fun(dn)) / (up[i] - dn[i])
    return grad


def fd_jacobian(fun: Callable, theta) -> np.ndarray:
    """Central-difference Jacobian of a vector function, shape ``(m, p)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    cols = []
    for i in range(theta.size):
        h = FD_STEP * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        cols.append((np.asarray(fun(up)) - np.asarray(fun(dn))) / (up[i] - dn[i]))
    return np.stack(cols, axis=-1)
