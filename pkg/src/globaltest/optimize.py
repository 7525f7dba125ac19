"""Bound-constrained local minimisation with monotone descent.

Two solvers share one acceptance rule: Armijo sufficient decrease with
``c1 = 1e-4`` on the projected step.  Once the predicted decrease drops
below the rounding level of the objective, a step is accepted when the
objective stays within rounding and the projected gradient shrinks, so the
recorded objective never rises by more than ``8 eps |f|``:

* :func:`minimize_local` -- projected limited-memory BFGS for a single
  problem with arbitrary objective and gradient callables.
* :func:`minimize_gaussian_batch` -- projected (modified) Newton over a
  stack of independent Gaussian least-squares problems, used by the
  bootstrap loops where hundreds of small fits run at once.

Because no accepted step raises the objective (beyond rounding), a descent
started at a point only reaches points of its connected sublevel set; the relaxed minimiser
returned by :func:`restricted_relaxed_minimize` therefore lies in that set.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .model import Embedding, GaussianLocationModel, ParamPoint, as_samples

CONVERGED = "converged"
MAX_ITER = "max-iter"
LINE_SEARCH_FAILURE = "line-search-failure"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500
DEFAULT_MEMORY = 10
ARMIJO_C1 = 1e-4
_ROUNDING = 8.0 * np.finfo(float).eps


class NotStationaryError(ValueError):
    """The point handed to a relaxed descent is not a restricted stationary point."""


@dataclass(frozen=True)
class OptimizeResult:
    minimizer: ParamPoint
    objective_value: float
    gradient_norm: float
    iterations: int
    status: str
    history: tuple = ()

    @property
    def x(self) -> np.ndarray:
        return self.minimizer.values

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def _bounds_array(bounds, p: int) -> np.ndarray:
    if bounds is None:
        return np.tile([-np.inf, np.inf], (p, 1))
    b = np.asarray(bounds, dtype=float).reshape(p, 2)
    if np.any(b[:, 0] > b[:, 1]):
        raise ValueError("lower bound exceeds upper bound")
    return b


def projected_gradient(x: np.ndarray, g: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """``P(x - g) - x``; zero exactly at a KKT point of the box problem."""
    return np.clip(x - g, lower, upper) - x


def _active(x, g, lower, upper):
    return ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))


def _noise(f):
    return _ROUNDING * np.maximum(1.0, np.abs(f))


def _sufficient(f_new, f_old, decrease, pg_new=None, pg_old=None):
    """Armijo test on the projected step.

    When the predicted decrease is below the rounding level of ``f`` the
    function values carry no information; the step is then accepted if ``f``
    does not rise beyond rounding and the projected gradient shrinks.
    """
    if not np.isfinite(f_new):
        return False
    if abs(ARMIJO_C1 * decrease) <= _noise(f_old):
        if f_new <= f_old:
            return True
        return pg_new is not None and f_new <= f_old + _noise(f_old) and pg_new < pg_old
    return f_new <= f_old + ARMIJO_C1 * decrease


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Y))):
        a = (s @ q) / (y @ s)
        alphas.append(a)
        q -= a * y
    if S:
        s, y = S[-1], Y[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), a in zip(zip(S, Y), reversed(alphas)):
        b = (y @ q) / (y @ s)
        q += (a - b) * s
    return q


def minimize_local(objective: Callable, gradient: Callable, start, bounds=None,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   memory: int = DEFAULT_MEMORY) -> OptimizeResult:
    """Projected L-BFGS with backtracking line search.

    Parameters
    ----------
    objective, gradient : callable
        ``x -> float`` and ``x -> (p,)``.
    start : array_like
        Initial point; projected into ``bounds``.
    bounds : array_like, optional
        ``(p, 2)`` box.
    tol : float
        Stop when ``max|P(x - g) - x| <= tol``.

    Returns
    -------
    OptimizeResult
        ``status`` is ``"converged"``, ``"max-iter"`` or
        ``"line-search-failure"``; ``history`` holds the objective after
        every accepted step and is non-increasing up to rounding.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.atleast_1d(np.asarray(start, dtype=float)).copy()
    b = _bounds_array(bounds, x.size)
    lower, upper = b[:, 0], b[:, 1]
    x = np.clip(x, lower, upper)
    f = float(objective(x))
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the starting point")
    g = np.asarray(gradient(x), dtype=float).reshape(x.shape)
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    history = [f]
    status = MAX_ITER
    it = 0
    for it in range(max_iter + 1):
        pg = projected_gradient(x, g, lower, upper)
        if np.max(np.abs(pg)) <= tol:
            status = CONVERGED
            break
        if it == max_iter:
            break
        free = ~_active(x, g, lower, upper)
        gf = np.where(free, g, 0.0)
        d = -_two_loop(gf, S, Y) * free
        if not S or gf @ d >= -1e-12 * np.linalg.norm(gf) * np.linalg.norm(d):
            S.clear()
            Y.clear()
            d = -gf / max(1.0, np.max(np.abs(gf)))
        t = 1.0
        accepted = False
        pg_old = float(np.max(np.abs(pg)))
        for _ in range(60):
            xn = np.clip(x + t * d, lower, upper)
            s = xn - x
            if not np.any(s):
                break
            fn = float(objective(xn))
            gn = None
            dec = float(g @ s)
            pg_new = None
            if np.isfinite(fn) and fn > f and abs(ARMIJO_C1 * dec) <= _noise(f):
                gn = np.asarray(gradient(xn), dtype=float).reshape(x.shape)
                pg_new = float(np.max(np.abs(projected_gradient(xn, gn, lower, upper))))
            if _sufficient(fn, f, dec, pg_new, pg_old):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            status = LINE_SEARCH_FAILURE
            break
        if gn is None:
            gn = np.asarray(gradient(xn), dtype=float).reshape(x.shape)
        y = gn - g
        if s @ y > 1e-10 * (y @ y):
            S.append(s)
            Y.append(y)
        x, f, g = xn, fn, gn
        history.append(f)
    pg_norm = float(np.max(np.abs(projected_gradient(x, g, lower, upper))))
    return OptimizeResult(ParamPoint(x, b), f, pg_norm, it, status, tuple(history))


# batched Gaussian least squares ----------------------------------------------

@dataclass(frozen=True)
class BatchResult:
    """Element-wise outcome of :func:`minimize_gaussian_batch`."""

    x: np.ndarray
    fun: np.ndarray
    gradient_norm: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == CONVERGED


def _column_means(samples: np.ndarray) -> tuple[np.ndarray, int]:
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        return samples, 1
    return samples.mean(axis=2), samples.shape[2]


def gaussian_negloglik_batch(model: GaussianLocationModel, samples: np.ndarray,
                             thetas: np.ndarray) -> np.ndarray:
    """Row-wise ``-l`` for ``samples[b]`` (``(B, m)`` or ``(B, m, n)``) at ``thetas[b]``."""
    return -model.log_likelihood_batch(samples, thetas)


def minimize_gaussian_batch(model: GaussianLocationModel, samples: np.ndarray, starts: np.ndarray,
                            tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> BatchResult:
    """Minimise ``-l(samples[b]; theta)`` from ``starts[b]`` for every ``b``.

    Each problem runs a projected Newton iteration on the free coordinates
    (exact Hessian when the model supplies mean second derivatives,
    Gauss-Newton otherwise), with eigenvalues replaced by their absolute
    values so every direction is a descent direction, followed by the same
    backtracking rule as :func:`minimize_local`.  Problems are independent:
    the result for row ``b`` does not depend on the other rows.
    """
    samples = np.asarray(samples, dtype=float)
    dbar, ncol = _column_means(samples)
    B, p = len(dbar), model.n_params
    lower, upper = model.bounds[:, 0], model.bounds[:, 1]
    x = np.clip(np.asarray(starts, dtype=float).reshape(B, p), lower, upper).copy()
    full = gaussian_negloglik_batch(model, samples, x)
    if not np.all(np.isfinite(full)):
        raise ValueError("objective is not finite at a starting point")
    # the objective differs from -l by a constant; track -l directly
    w = ncol / model.sigma ** 2
    const = full - 0.5 * w * ((dbar - model.mean_batch(x)) ** 2).sum(axis=1)

    def fun(rows, xs):
        r = dbar[rows] - model.mean_batch(xs)
        return const[rows] + 0.5 * w * (r * r).sum(axis=1)

    f = full.copy()
    status = np.full(B, MAX_ITER, dtype=object)
    iters = np.zeros(B, dtype=int)
    gnorm = np.full(B, np.inf)
    live = np.arange(B)
    for it in range(max_iter + 1):
        if live.size == 0:
            break
        xl = x[live]
        r = dbar[live] - model.mean_batch(xl)
        jac = model.jacobian_batch(xl)
        g = -w * np.einsum("bmp,bm->bp", jac, r, optimize=False)
        pg = np.max(np.abs(np.clip(xl - g, lower, upper) - xl), axis=1)
        gnorm[live] = pg
        iters[live] = it
        done = pg <= tol
        status[live[done]] = CONVERGED
        if it == max_iter:
            break
        keep = ~done
        live, xl, r, jac, g = live[keep], xl[keep], r[keep], jac[keep], g[keep]
        pg_live = pg[keep]
        if live.size == 0:
            break
        hess = w * np.einsum("bmp,bmq->bpq", jac, jac, optimize=False)
        rh = model.residual_hessian_batch(xl, r)
        if rh is not None:
            hess = hess - w * rh
        active = _active(xl, g, lower, upper)
        free = ~active
        hm = hess * (free[:, :, None] & free[:, None, :])
        idx = np.arange(p)
        hm[:, idx, idx] = np.where(active, 1.0, hm[:, idx, idx])
        gf = np.where(free, g, 0.0)
        evals, evecs = np.linalg.eigh(hm)
        mag = np.abs(evals)
        floor = 1e-10 * np.maximum(1.0, mag.max(axis=1, keepdims=True))
        coef = np.einsum("bpk,bp->bk", evecs, gf, optimize=False) / np.maximum(mag, floor)
        d = -np.einsum("bpk,bk->bp", evecs, coef, optimize=False) * free
        t = np.ones(live.size)
        pending = np.ones(live.size, dtype=bool)
        accepted = np.zeros(live.size, dtype=bool)
        xnew = xl.copy()
        fnew = f[live].copy()
        for _ in range(60):
            rows = np.flatnonzero(pending)
            if rows.size == 0:
                break
            cand = np.clip(xl[rows] + t[rows, None] * d[rows], lower, upper)
            step = cand - xl[rows]
            moved = np.any(step != 0, axis=1)
            pending[rows[~moved]] = False
            rows, cand, step = rows[moved], cand[moved], step[moved]
            if rows.size == 0:
                break
            fc = fun(live[rows], cand)
            dec = (g[rows] * step).sum(axis=1)
            fo = f[live[rows]]
            small = np.abs(ARMIJO_C1 * dec) <= _noise(fo)
            ok = np.isfinite(fc) & np.where(small, fc <= fo, fc <= fo + ARMIJO_C1 * dec)
            # rounding regime: fall back to projected-gradient progress
            check = np.flatnonzero(small & ~ok & np.isfinite(fc) & (fc <= fo + _noise(fo)))
            if check.size:
                rc = dbar[live[rows[check]]] - model.mean_batch(cand[check])
                gc = -w * np.einsum("bmp,bm->bp", model.jacobian_batch(cand[check]), rc, optimize=False)
                pgc = np.max(np.abs(np.clip(cand[check] - gc, lower, upper) - cand[check]), axis=1)
                ok[check] = pgc < pg_live[rows[check]]
            good = rows[ok]
            xnew[good] = cand[ok]
            fnew[good] = fc[ok]
            accepted[good] = True
            pending[good] = False
            t[rows[~ok]] *= 0.5
        failed = ~accepted
        status[live[failed]] = LINE_SEARCH_FAILURE
        ok_rows = live[accepted]
        x[ok_rows] = xnew[accepted]
        f[ok_rows] = fnew[accepted]
        live = ok_rows
    return BatchResult(x, f, gnorm, iters, status)


# relaxed descent from a restricted stationary point -------------------------

def _check_stationary(model: GaussianLocationModel, samples: np.ndarray, theta: np.ndarray, tol: float):
    g = -model.score(samples, theta)
    pg = projected_gradient(theta, g, model.bounds[:, 0], model.bounds[:, 1])
    norm = float(np.max(np.abs(pg)))
    if norm > 10.0 * tol:
        raise NotStationaryError(
            f"theta_hat is not a stationary point of the restricted likelihood "
            f"(projected gradient {norm:.3e} > {10 * tol:.1e})")


def restricted_relaxed_minimize(embedding: Embedding, data, theta_hat, tol: float = DEFAULT_TOL,
                                max_iter: int = DEFAULT_MAX_ITER) -> OptimizeResult:
    """Descend the relaxed negative log-likelihood from ``(theta_hat, 0)``.

    ``theta_hat`` must be a stationary point of the restricted problem
    (projected gradient at most ``10 * tol``).
    """
    samples = as_samples(data)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    _check_stationary(embedding.base, samples, theta_hat, tol)
    start = embedding.lift(theta_hat)
    relaxed = embedding.relaxed
    f, g = relaxed.objective(samples)
    if embedding.n_extra == 0:
        val = f(start)
        pg = float(np.max(np.abs(projected_gradient(start, g(start), relaxed.bounds[:, 0], relaxed.bounds[:, 1]))))
        return OptimizeResult(ParamPoint(start, relaxed.bounds), val, pg, 0, CONVERGED, (val,))
    return minimize_local(f, g, start, relaxed.bounds, tol=tol, max_iter=max_iter)


def gap_statistic(embedding: Embedding, data, theta_hat, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> tuple[float, OptimizeResult]:
    """``l(relaxed optimum) - l(theta_hat)``, never negative, and the relaxed fit."""
    samples = as_samples(data)
    res = restricted_relaxed_minimize(embedding, samples, theta_hat, tol, max_iter)
    # both ends evaluated by the relaxed model so the difference is exactly >= 0
    return max(float(res.history[0] - res.objective_value), 0.0), res
