"""Learning relaxation directions from encountered spurious minima.

For every pair (nominal truth, starting point) the restricted estimator is
run on noise-free data.  Whenever it stops away from the truth, the score of
the relaxed model at the restricted estimate is whitened by the relaxed
Fisher information at the truth and stored as a column.  The leading left
singular vector of the stored columns is the single extra degree of freedom
that best separates the spurious minima from the truths.

Only the extra (relaxation) coordinates enter the whitened score: the base
coordinates are re-estimated by the restricted fit, and their score block
vanishes at a restricted stationary point anyway.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import Embedding, GaussianLocationModel, as_samples, measurement_domain_embedding
from .optimize import minimize_local

EIG_FLOOR = 1e-10
MISMATCH_TOL = 1e-3


class NoSpuriousMinimaError(RuntimeError):
    """Every descent returned to its truth, so no direction can be derived."""


@dataclass(frozen=True)
class DiscoveryConfig:
    nominal_set: Sequence
    start_set: Sequence
    relaxed_space: Optional[Embedding] = None
    mismatch_tol: float = MISMATCH_TOL
    paired: bool = False

    def __post_init__(self):
        if len(self.nominal_set) == 0 or len(self.start_set) == 0:
            raise ValueError("nominal and start sets must be non-empty")
        if self.paired and len(self.nominal_set) != len(self.start_set):
            raise ValueError("paired sets must have equal length")

    def pairs(self):
        """``(truth, start)`` pairs: the Cartesian product, or element-wise when ``paired``."""
        if self.paired:
            return list(zip(self.nominal_set, self.start_set))
        return [(t, s) for t in self.nominal_set for s in self.start_set]


@dataclass(frozen=True)
class RelaxationDirection:
    r: np.ndarray
    singular_values: np.ndarray
    columns_used: int

    def __post_init__(self):
        if not np.isclose(np.linalg.norm(self.r), 1.0, atol=1e-10):
            raise ValueError("relaxation direction must have unit norm")


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so that its largest-magnitude entry is positive."""
    v = np.asarray(v, dtype=float)
    return v if v[np.argmax(np.abs(v))] >= 0 else -v


def inverse_sqrt_psd(matrix: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Pseudo-inverse square root of a symmetric PSD matrix.

    Eigenvalues below ``floor * lambda_max`` are treated as zero.
    """
    sym = 0.5 * (matrix + matrix.T)
    evals, evecs = np.linalg.eigh(sym)
    top = max(float(evals.max()), 0.0)
    keep = evals > floor * top
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / np.sqrt(evals[keep])
    return (evecs * inv) @ evecs.T


def whitened_score(relaxed_model: GaussianLocationModel, theta_tilde_0, data, theta_tilde_hat,
                   coords=None) -> np.ndarray:
    """``I~(theta_tilde_0)^(-1/2) s~(d, theta_tilde_hat)`` over ``coords``.

    ``coords`` selects the relaxed coordinates to whiten (default: all).
    Fisher and score are the total-data quantities.
    """
    samples = as_samples(data)
    idx = np.arange(relaxed_model.n_params) if coords is None else np.asarray(coords)
    info = samples.shape[1] * relaxed_model.fisher(theta_tilde_0)[np.ix_(idx, idx)]
    score = relaxed_model.score(samples, theta_tilde_hat)[idx]
    return inverse_sqrt_psd(info) @ score


def _default_optimizer(model: GaussianLocationModel, samples: np.ndarray, start) -> np.ndarray:
    f, g = model.objective(samples)
    return minimize_local(f, g, start, model.bounds).x


@dataclass(frozen=True)
class _Round:
    """Restricted model and relaxed space for one discovery round."""

    restricted: GaussianLocationModel
    relaxed: GaussianLocationModel
    n_base: int
    coords: np.ndarray
    lift_nominal: Callable


def _first_round(model: GaussianLocationModel, space: Embedding) -> _Round:
    p = model.n_params
    return _Round(model, space.relaxed, p, space.extra_indices(),
                  lambda th: np.concatenate([np.atleast_1d(th), np.zeros(space.n_extra)]))


def _collect(config: DiscoveryConfig, rnd: _Round, optimizer) -> np.ndarray:
    cols = []
    extra_zeros = np.zeros(rnd.restricted.n_params - rnd.n_base)
    for theta0, start in config.pairs():
        truth = np.concatenate([np.atleast_1d(np.asarray(theta0, dtype=float)), extra_zeros])
        d_nf = rnd.restricted.mean(truth)[:, None]
        start = np.concatenate([np.atleast_1d(np.asarray(start, dtype=float)), extra_zeros])
        theta_hat = np.asarray(optimizer(rnd.restricted, d_nf, start), dtype=float)
        if np.linalg.norm(theta_hat - truth) > config.mismatch_tol:
            tt0 = rnd.lift_nominal(truth)
            tth = rnd.lift_nominal(theta_hat)
            cols.append(whitened_score(rnd.relaxed, tt0, d_nf, tth, rnd.coords))
    if not cols:
        raise NoSpuriousMinimaError("no descent ended away from its truth; no direction can be derived")
    return np.stack(cols, axis=1)


def leading_direction(delta: np.ndarray) -> RelaxationDirection:
    """First left singular vector of ``delta`` with the sign convention applied."""
    u, s, _ = np.linalg.svd(delta, full_matrices=False)
    r = fix_sign(u[:, 0])
    return RelaxationDirection(r / np.linalg.norm(r), s, delta.shape[1])


def discover_relaxation_direction(config: DiscoveryConfig, model: GaussianLocationModel,
                                  optimizer: Optional[Callable] = None,
                                  return_matrix: bool = False):
    """Run the discovery loop once and return the leading relaxation direction.

    ``optimizer(model, data, start) -> theta_hat`` defaults to bounded
    L-BFGS descent.  The default relaxed space is the whole measurement
    domain, ``mu(theta) + theta'`` with ``theta'`` in R^m.

    Raises
    ------
    NoSpuriousMinimaError
        When no descent lands away from its truth.
    """
    optimizer = optimizer or _default_optimizer
    space = config.relaxed_space or measurement_domain_embedding(model)
    delta = _collect(config, _first_round(model, space), optimizer)
    direction = leading_direction(delta)
    return (direction, delta) if return_matrix else direction


def _augmented_round(model: GaussianLocationModel, space: Embedding, found: np.ndarray) -> _Round:
    """Restricted model with the found directions added; relaxed space deflated by them."""
    p, k, pe = model.n_params, found.shape[0], space.n_extra
    proj = np.eye(pe) - found.T @ found
    relaxed = space.relaxed

    def extra_of(tt):
        tt = np.asarray(tt, dtype=float)
        return tt[..., p:p + k] @ found + tt[..., p + k:] @ proj

    def base_of(tt):
        tt = np.asarray(tt, dtype=float)
        return np.concatenate([tt[..., :p], extra_of(tt)], axis=-1)

    # chain rule: d extra / d c = found.T, d extra / d theta' = proj
    chain = np.zeros((p + pe, p + k + pe))
    chain[:p, :p] = np.eye(p)
    chain[p:, p:p + k] = found.T
    chain[p:, p + k:] = proj

    def mean_aug(tt):
        return relaxed.mean_batch(base_of(tt)).reshape(np.shape(tt)[:-1] + (relaxed.dim,))

    def jac_aug(tt):
        lead = np.shape(tt)[:-1]
        jb = relaxed.jacobian_batch(base_of(tt)).reshape(lead + (relaxed.dim, p + pe))
        return jb @ chain

    bounds = np.vstack([model.bounds, np.tile([-np.inf, np.inf], (k + pe, 1))])
    full = GaussianLocationModel(mean_aug, jac_aug, model.sigma, p + k + pe, model.dim,
                                 bounds=bounds, vectorized=True)
    sub = np.arange(p + k)

    def mean_r(tt):
        tt = np.asarray(tt, dtype=float)
        return mean_aug(np.concatenate([tt, np.zeros(tt.shape[:-1] + (pe,))], axis=-1))

    def jac_r(tt):
        tt = np.asarray(tt, dtype=float)
        return jac_aug(np.concatenate([tt, np.zeros(tt.shape[:-1] + (pe,))], axis=-1))[..., sub]

    restricted = GaussianLocationModel(mean_r, jac_r, model.sigma, p + k, model.dim,
                                       bounds=bounds[:p + k], vectorized=True)
    return _Round(restricted, full, p, np.arange(p + k, p + k + pe),
                  lambda th: np.concatenate([np.atleast_1d(th), np.zeros(pe)]))


def iterate_discovery(config: DiscoveryConfig, model: GaussianLocationModel,
                      optimizer: Optional[Callable] = None, dims: int = 1) -> list[RelaxationDirection]:
    """Repeat discovery ``dims`` times, each round removing earlier directions.

    After a round the found directions join the restricted estimator as
    free coefficients and are projected out of the relaxed space, so the
    returned directions are mutually orthogonal.  If a later round finds no
    spurious minima the list ends early.
    """
    if dims < 1:
        raise ValueError("dims must be >= 1")
    optimizer = optimizer or _default_optimizer
    space = config.relaxed_space or measurement_domain_embedding(model)
    found: list[RelaxationDirection] = [discover_relaxation_direction(config, model, optimizer)]
    while len(found) < dims:
        R = np.stack([f.r for f in found])
        rnd = _augmented_round(model, space, R)
        try:
            delta = _collect(config, rnd, optimizer)
        except NoSpuriousMinimaError:
            break
        d = leading_direction(delta)
        # remove rounding-level leakage along earlier directions
        r = d.r - R.T @ (R @ d.r)
        found.append(RelaxationDirection(fix_sign(r / np.linalg.norm(r)), d.singular_values, d.columns_used))
    return found


def sinusoid_discovery_config(n_nominal: int = 100, n_starts: int = 50,
                              mismatch_tol: float = MISMATCH_TOL) -> DiscoveryConfig:
    """Equally spaced truths and starts over [0, 4 pi], measurement-domain relaxation."""
    from .sinusoid import THETA_MAX
    nominal = [np.array([t]) for t in np.linspace(0.0, THETA_MAX, n_nominal)]
    starts = [np.array([t]) for t in np.linspace(0.0, THETA_MAX, n_starts)]
    return DiscoveryConfig(nominal, starts, None, mismatch_tol)


def write_direction_csv(path, direction: RelaxationDirection, header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, v in enumerate(direction.r):
            w.writerow([i, repr(float(v))])


def write_singular_values_csv(path, direction: RelaxationDirection, header: Optional[str] = None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["index", "singular_value"])
        for i, v in enumerate(direction.singular_values):
            w.writerow([i, repr(float(v))])


def read_direction_csv(path) -> np.ndarray:
    values = []
    with open(path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        next(rows)
        for row in rows:
            values.append(float(row[1]))
    return np.asarray(values)
