"""Sinusoid frequency estimation in white Gaussian noise.

``d = sin(theta * x) + eps`` with ``x = [0, 1, ..., 99] / 99`` and
``theta in [0, 4 pi]``.  The likelihood has many local minima in ``theta``,
which makes it a convenient benchmark for the global-optimality tests.
Two relaxations of the mean are provided: a polynomial instantaneous
frequency and an additive learned direction.
"""

from __future__ import annotations

import csv
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .model import Dataset, Embedding, additive_embedding, GaussianLocationModel, ParamPoint, as_samples
from .optimize import DEFAULT_TOL, minimize_local

M = 100
THETA_MAX = 4.0 * np.pi
THETA_TRUE = 3.0 * np.pi
GRID = np.arange(M) / (M - 1.0)
DEFAULT_RESOLUTION = 4001
DEDUP_TOL = 1e-4


def sinusoid_mean(theta: float) -> np.ndarray:
    """``sin(theta * x)`` on the 100-point grid; ``theta`` must lie in [0, 4 pi]."""
    theta = float(np.asarray(theta).reshape(-1)[0]) if np.ndim(theta) else float(theta)
    if not 0.0 <= theta <= THETA_MAX:
        raise ValueError(f"theta={theta} outside [0, 4 pi]")
    return np.sin(theta * GRID)


def _mean(th):
    th = np.asarray(th, dtype=float)
    return np.sin(th[..., :1] * GRID)


def _jac(th):
    th = np.asarray(th, dtype=float)
    return (np.cos(th[..., :1] * GRID) * GRID)[..., None]


def _hess(th):
    th = np.asarray(th, dtype=float)
    return (-np.sin(th[..., :1] * GRID) * GRID ** 2)[..., None, None]


class SinusoidModel(GaussianLocationModel):
    """Gaussian model with mean ``sin(theta x)`` and ``theta in [0, 4 pi]``."""

    def __init__(self, sigma: float = 1.0):
        super().__init__(_mean, _jac, sigma, n_params=1, dim=M, bounds=[[0.0, THETA_MAX]],
                         hess_fn=_hess, vectorized=True)

    def mean(self, theta) -> np.ndarray:
        th = self._theta(theta)
        return sinusoid_mean(th[0])


# relaxations -------------------------------------------------------------------

def naive_poly_embedding(model: GaussianLocationModel, k: int) -> Embedding:
    """``sin(t0 x + t1 x^2 + ... + tk x^(k+1))``; reduces to the base at ``t1..tk = 0``.

    The leading coefficient keeps the base bounds, the others are free.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    powers = np.stack([GRID ** (j + 1) for j in range(k + 1)], axis=-1)  # (m, k+1)

    def phase(tt):
        return np.asarray(tt, dtype=float) @ powers.T

    def mean_fn(tt):
        return np.sin(phase(tt))

    def jac_fn(tt):
        return np.cos(phase(tt))[..., None] * powers

    def hess_fn(tt):
        outer = powers[:, :, None] * powers[:, None, :]
        return -np.sin(phase(tt))[..., None, None] * outer

    return Embedding.from_functions(model, mean_fn, jac_fn, k, hess_fn=hess_fn, vectorized=True)


def learned_direction_embedding(model: GaussianLocationModel, directions) -> Embedding:
    """``mu(theta) + sum_j c_j r_j`` for unit directions ``r_j`` in data space."""
    return additive_embedding(model, directions)


def relaxation(model: GaussianLocationModel, kind: str, k: int = 1, directions=None) -> Embedding:
    """Build a relaxation by name: ``"naive-poly"`` or ``"learned-direction"``."""
    if kind == "naive-poly":
        return naive_poly_embedding(model, k)
    if kind == "learned-direction":
        if directions is None:
            raise ValueError("learned-direction relaxation needs directions")
        return learned_direction_embedding(model, directions)
    raise ValueError(f"unknown relaxation kind {kind!r}")


# profile scans and stationary-point enumeration ---------------------------------

@lru_cache(maxsize=8)
def _scan_basis(resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    thetas = np.linspace(0.0, THETA_MAX, resolution)
    S = np.sin(np.outer(thetas, GRID))
    S.setflags(write=False)
    energy = (S ** 2).sum(axis=1)
    return thetas, S, energy


def negloglik_profile(model: SinusoidModel, data, grid_resolution: int = DEFAULT_RESOLUTION):
    """``(thetas, -l(data; theta))`` on an equally spaced grid over [0, 4 pi]."""
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    d = as_samples(data)
    n = d.shape[1]
    thetas, S, energy = _scan_basis(int(grid_resolution))
    dsum = d.sum(axis=1)
    # sum_k ||d_k - s||^2 = sum ||d||^2 - 2 s.dsum + n ||s||^2
    sq = float((d ** 2).sum()) - 2.0 * (S @ dsum) + n * energy
    const = 0.5 * n * model.dim * (np.log(2.0 * np.pi) + 2.0 * np.log(model.sigma))
    return thetas.copy(), 0.5 * sq / model.sigma ** 2 + const


def _scan_minima(values: np.ndarray) -> np.ndarray:
    """Indices where the discrete derivative changes sign from - to +, plus edge minima."""
    diff = np.diff(values)
    idx = [i + 1 for i in range(len(diff) - 1) if diff[i] < 0 <= diff[i + 1]]
    if diff[0] > 0:
        idx.insert(0, 0)
    if diff[-1] < 0:
        idx.append(len(values) - 1)
    return np.asarray(idx, dtype=int)


def enumerate_local_minima(model: SinusoidModel, data, grid_resolution: int = DEFAULT_RESOLUTION,
                           tol: float = DEDUP_TOL) -> list[ParamPoint]:
    """All local minima of ``-l`` in [0, 4 pi], sorted by ``theta``.

    Each discrete minimum of the profile scan is refined by bounded descent;
    refined points closer than ``tol`` are merged.
    """
    d = as_samples(data)
    thetas, prof = negloglik_profile(model, d, grid_resolution)
    f, g = model.objective(d)
    found: list[float] = []
    for i in _scan_minima(prof):
        res = minimize_local(f, g, [thetas[i]], model.bounds, tol=DEFAULT_TOL)
        th = float(res.x[0])
        if all(abs(th - t) > tol for t in found):
            found.append(th)
    return [ParamPoint([t], model.bounds) for t in sorted(found)]


def global_minimum(model: SinusoidModel, data, grid_resolution: int = DEFAULT_RESOLUTION) -> ParamPoint:
    """The enumerated local minimum with the smallest ``-l``."""
    d = as_samples(data)
    minima = enumerate_local_minima(model, d, grid_resolution)
    values = [-model.log_likelihood(d, t) for t in minima]
    return minima[int(np.argmin(values))]


def descend(model: GaussianLocationModel, data, start, tol: float = DEFAULT_TOL):
    """Bounded local descent of ``-l`` from ``start``."""
    f, g = model.objective(data)
    return minimize_local(f, g, np.atleast_1d(start), model.bounds, tol=tol)


def noise_free_data(theta: float = THETA_TRUE) -> Dataset:
    return Dataset(sinusoid_mean(theta))


# CSV output --------------------------------------------------------------------

def write_profile_csv(path, thetas: Sequence[float], values: Sequence[float], header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["theta", "negloglik"])
        for t, v in zip(thetas, values):
            w.writerow([repr(float(t)), repr(float(v))])


def write_minima_csv(path, minima: Sequence[float], values: Sequence[float], header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["theta_min", "negloglik_min"])
        for t, v in zip(minima, values):
            w.writerow([repr(float(t)), repr(float(v))])
