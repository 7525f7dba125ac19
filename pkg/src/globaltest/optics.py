"""Pupil-plane phase screens, point-spread functions and Strehl shells.

Phase screens are sums of Noll-ordered Zernike modes starting at defocus
(Noll index 4), with coefficients in waves RMS.  The PSF is the squared
magnitude of the zero-padded inverse FFT of ``A exp(j Psi)``, normalised to
unit total.  Around any screen ``Psi`` a perturbation ``beta`` factors as

    A exp(j(Psi + beta)) = A exp(j Psi) * (1 + A_B (exp(j beta) - 1)),

so the perturbed coherent PSF is ``g (*) d`` with ``d`` the inverse FFT of
the second factor.  ``d`` has unit norm and equals the Kronecker delta at
``beta = 0``, which gives a point-wise bound on the PSF change that depends
on ``beta`` only through ``||d - a delta||``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import Embedding, GaussianLocationModel, additive_embedding, as_samples
from .optimize import DEFAULT_TOL, minimize_local
from .rng import as_generator, stream
from .validation import gap_test

FIRST_NOLL = 4
DEFAULT_N = 64
DEFAULT_OVERSAMPLING = 2.0
DEFAULT_SHELL_STARTS = 32
DEDUP_REL = 1e-4


# grids and coefficient vectors -------------------------------------------------

def pupil_coordinates(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar coordinates ``(rho, phi)`` of an ``N x N`` grid; ``rho = 1`` at the inscribed circle."""
    c = (np.arange(size) - (size - 1) / 2.0) / (size / 2.0)
    y, x = np.meshgrid(c, c, indexing="ij")
    return np.hypot(x, y), np.arctan2(y, x)


@dataclass(frozen=True, eq=False)
class PupilGrid:
    size: int
    aperture: np.ndarray
    binary_support: np.ndarray = field(init=False)
    oversampling: float = DEFAULT_OVERSAMPLING

    def __post_init__(self):
        ap = np.array(self.aperture, dtype=float)
        if ap.shape != (self.size, self.size):
            raise ValueError("aperture must be size x size")
        if np.any(ap < 0) or not np.all(np.isfinite(ap)):
            raise ValueError("aperture must be finite and nonnegative")
        if not ap.any():
            raise ValueError("aperture is empty")
        if self.oversampling < 2:
            raise ValueError("oversampling must be >= 2")
        ap.setflags(write=False)
        support = ap > 0
        support.setflags(write=False)
        object.__setattr__(self, "aperture", ap)
        object.__setattr__(self, "binary_support", support)

    @classmethod
    def circular(cls, size: int = DEFAULT_N, oversampling: float = DEFAULT_OVERSAMPLING) -> "PupilGrid":
        rho, _ = pupil_coordinates(size)
        return cls(size, (rho <= 1.0).astype(float), oversampling)

    @property
    def padded_size(self) -> int:
        return int(round(self.size * self.oversampling))

    def pad(self, field_: np.ndarray, fill: complex = 0.0) -> np.ndarray:
        out = np.full((self.padded_size, self.padded_size), fill, dtype=complex)
        out[:self.size, :self.size] = field_
        return out


@dataclass(frozen=True, eq=False)
class ZernikeCoeffs:
    """Coefficients (waves RMS) of Noll modes ``4, 5, ..., 3 + K``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise ValueError("need at least one finite coefficient")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self) -> int:
        return self.coeffs.size

    @property
    def noll_indices(self) -> np.ndarray:
        return np.arange(FIRST_NOLL, FIRST_NOLL + self.K)

    @property
    def rms(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __array__(self, dtype=None, copy=None):
        return np.array(self.coeffs, dtype=dtype)

    def __add__(self, other) -> "ZernikeCoeffs":
        return ZernikeCoeffs(self.coeffs + np.asarray(other, dtype=float))


@dataclass(frozen=True, eq=False)
class PSF:
    intensity: np.ndarray

    def __post_init__(self):
        h = np.array(self.intensity, dtype=float)
        if np.any(h < 0):
            raise ValueError("PSF intensity must be nonnegative")
        if abs(h.sum() - 1.0) > 1e-10:
            raise ValueError("PSF must sum to one")
        h.setflags(write=False)
        object.__setattr__(self, "intensity", h)


def _coeff_array(beta) -> np.ndarray:
    if isinstance(beta, ZernikeCoeffs):
        return np.asarray(beta.coeffs)
    return np.atleast_1d(np.asarray(beta, dtype=float))


# Zernike modes -----------------------------------------------------------------

def noll_to_zern(j: int) -> tuple[int, int]:
    """Radial order ``n`` and signed azimuthal order ``m`` of Noll index ``j``.

    ``m > 0`` is a cosine mode, ``m < 0`` a sine mode.
    """
    if j < 1:
        raise ValueError("Noll indices start at 1")
    n, j1 = 0, j - 1
    while j1 > n:
        n += 1
        j1 -= n
    m = (-1) ** j * ((n % 2) + 2 * ((j1 + ((n + 1) % 2)) // 2))
    return n, m


def zernike_radial(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    m = abs(m)
    out = np.zeros_like(rho, dtype=float)
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * factorial(n - s) / (
            factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s))
        out += c * rho ** (n - 2 * s)
    return out


def zernike_mode(j: int, rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Noll-normalised mode ``j`` (unit RMS over the unit disk), zero outside it."""
    n, m = noll_to_zern(j)
    radial = zernike_radial(n, m, rho)
    if m == 0:
        z = np.sqrt(n + 1.0) * radial
    elif m > 0:
        z = np.sqrt(2.0 * (n + 1)) * radial * np.cos(m * phi)
    else:
        z = np.sqrt(2.0 * (n + 1)) * radial * np.sin(-m * phi)
    return np.where(rho <= 1.0, z, 0.0)


@lru_cache(maxsize=16)
def _basis(size: int, K: int) -> np.ndarray:
    rho, phi = pupil_coordinates(size)
    disk = rho <= 1.0
    last = FIRST_NOLL + K
    raw = np.stack([zernike_mode(j, rho, phi)[disk] for j in range(1, last)], axis=1)
    # Gram-Schmidt in Noll order on the sampled disk: mode j only depends on modes < j
    q, r = np.linalg.qr(raw)
    q *= np.sign(np.diag(r)) * np.sqrt(disk.sum())
    B = np.zeros((K, size, size))
    B[:, disk] = q[:, FIRST_NOLL - 1:].T
    B.setflags(write=False)
    return B


def zernike_basis(K: int, grid: PupilGrid) -> np.ndarray:
    """``(K, N, N)`` stack of modes ``4 .. 3 + K`` in waves per unit coefficient.

    The analytic Noll modes are re-orthonormalised over the sampled unit
    disk (together with piston and tilts), so that the RMS of a screen over
    the pixels equals the coefficient norm exactly.  At ``N = 64`` the
    sampled modes differ from the analytic ones by about 1% RMS.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    return _basis(grid.size, int(K))


def zernike_phase(coeffs, grid: PupilGrid) -> np.ndarray:
    """Phase screen in radians, ``2 pi sum_k c_k Z_k``."""
    c = _coeff_array(coeffs)
    return 2.0 * np.pi * np.tensordot(c, zernike_basis(c.size, grid), axes=1)


# PSF evaluation ----------------------------------------------------------------

def coherent_psf(phase: np.ndarray, grid: PupilGrid) -> np.ndarray:
    """Unshifted ``ifft2`` of the padded field ``A exp(j Psi)``."""
    phase = np.asarray(phase, dtype=float)
    if not np.all(np.isfinite(phase)):
        raise ValueError("phase must be finite")
    return np.fft.ifft2(grid.pad(grid.aperture * np.exp(1j * phase)))


def unnormalized_psf(phase: np.ndarray, grid: PupilGrid) -> np.ndarray:
    """``|F^-1(A exp(j Psi))|^2`` with the unitary transform; totals ``sum A^2``."""
    field_ = grid.pad(grid.aperture * np.exp(1j * np.asarray(phase, dtype=float)))
    return np.fft.fftshift(np.abs(np.fft.ifft2(field_, norm="ortho")) ** 2)


def psf_from_phase(phase: np.ndarray, grid: PupilGrid) -> PSF:
    """Centred intensity PSF normalised to unit total."""
    if not np.all(np.isfinite(phase)):
        raise ValueError("phase must be finite")
    h = unnormalized_psf(phase, grid)
    return PSF(h / h.sum())


def strehl(beta, grid: PupilGrid) -> float:
    """On-axis intensity relative to the unaberrated PSF, in (0, 1]."""
    phase = zernike_phase(beta, grid)
    A = grid.aperture
    return float(np.abs(np.sum(A * np.exp(1j * phase))) ** 2 / np.sum(A) ** 2)


def _strehl_and_grad(beta: np.ndarray, A: np.ndarray, basis: np.ndarray):
    e = A * np.exp(2j * np.pi * np.tensordot(beta, basis, axes=1))
    z = e.sum()
    w2 = A.sum() ** 2
    dz = 2j * np.pi * np.tensordot(basis, e, axes=([1, 2], [0, 1]))
    return float(abs(z) ** 2 / w2), 2.0 * np.real(np.conj(z) * dz) / w2


# max-Strehl shells -------------------------------------------------------------

def _ascend_on_sphere(u0: np.ndarray, tau: float, A: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Local maximiser of Strehl over ``||beta|| = tau`` via ``beta = tau u / ||u||``."""

    def neg(u):
        nu = np.linalg.norm(u)
        uhat = u / nu
        s, g = _strehl_and_grad(tau * uhat, A, basis)
        # chain rule through the radial projection
        gu = tau * (g - uhat * (uhat @ g)) / nu
        return -s, -gu

    res = minimize(neg, u0, jac=True, method="L-BFGS-B",
                   options=dict(gtol=1e-14, ftol=1e-16, maxiter=2000))
    u = res.x
    return tau * u / np.linalg.norm(u)


def max_strehl_shell(tau: float, K: int, grid: PupilGrid, n_points: int = DEFAULT_SHELL_STARTS,
                     rng=None) -> list[ZernikeCoeffs]:
    """Local maximisers of Strehl on the sphere ``||beta|| = tau``.

    ``n_points`` random starts on the sphere are each driven to a local
    maximum; duplicates (closer than ``1e-4 tau``) are merged and the
    survivors are returned in order of decreasing Strehl.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if K < 1 or n_points < 1:
        raise ValueError("K and n_points must be >= 1")
    if tau == 0:
        return [ZernikeCoeffs(np.zeros(K))]
    gen = as_generator(rng)
    basis = zernike_basis(K, grid)
    A = grid.aperture
    starts = gen.standard_normal((n_points, K))
    found: list[np.ndarray] = []
    for u0 in starts:
        beta = _ascend_on_sphere(u0, tau, A, basis)
        beta *= tau / np.linalg.norm(beta)
        if all(np.linalg.norm(beta - b) > DEDUP_REL * tau for b in found):
            found.append(beta)
    # same evaluation as restart_candidates so both orderings agree on near-ties
    values = [strehl(b, grid) for b in found]
    order = np.argsort(-np.asarray(values), kind="stable")
    return [ZernikeCoeffs(found[i]) for i in order]


def restart_candidates(current, tau: float, shell: Sequence, grid: PupilGrid) -> list[ZernikeCoeffs]:
    """``current + beta`` for every shell point, highest-Strehl ``beta`` first."""
    if len(shell) == 0:
        raise ValueError("shell must be nonempty")
    cur = _coeff_array(current)
    betas = [_coeff_array(b) for b in shell]
    for b in betas:
        if b.shape != cur.shape:
            raise ValueError("shell and current point differ in mode count")
        if abs(np.linalg.norm(b) - tau) > 1e-8 * max(1.0, tau):
            raise ValueError("shell point is not on the tau sphere")
    values = [strehl(b, grid) for b in betas]
    order = np.argsort(-np.asarray(values), kind="stable")
    return [ZernikeCoeffs(cur + betas[i]) for i in order]


# point-wise perturbation bound -------------------------------------------------

def perturbation_kernel(beta, grid: PupilGrid) -> np.ndarray:
    """``d = F^-1(1 + A_B (exp(j beta) - 1))``; unit norm, a delta at ``beta = 0``."""
    phase = zernike_phase(beta, grid)
    factor = grid.pad(np.where(grid.binary_support, np.exp(1j * phase), 1.0), fill=1.0)
    return np.fft.ifft2(factor)


def psf_perturbation_bound(g_coherent: np.ndarray, beta, grid: PupilGrid, a: Optional[complex] = None):
    """Actual PSF change and its point-wise bound for a perturbation ``beta``.

    Parameters
    ----------
    g_coherent : ndarray
        Unshifted coherent PSF of the unperturbed screen (see :func:`coherent_psf`).
    a : complex, optional
        Unit-modulus reference; defaults to ``exp(j angle d[0, 0])``, which
        minimises the bound.

    Returns
    -------
    eps_map, bound_map : ndarray
        ``|h(beta) - h(0)|`` and ``||d - a delta|| (||d - a delta|| + 2 |g| / ||g||)``,
        both centred like :func:`psf_from_phase`.
    """
    g = np.asarray(g_coherent, dtype=complex)
    d = perturbation_kernel(beta, grid)
    if a is None:
        a = np.exp(1j * np.angle(d[0, 0]))
    gnorm2 = float(np.sum(np.abs(g) ** 2))
    c0 = 1.0 / gnorm2
    perturbed = np.fft.ifft2(np.fft.fft2(g) * np.fft.fft2(d))
    eps = np.abs(c0 * np.abs(perturbed) ** 2 - c0 * np.abs(g) ** 2)
    resid = d.copy()
    resid[0, 0] -= a
    r = float(np.linalg.norm(resid))
    bound = r * (r + 2.0 * np.abs(g) / np.sqrt(gnorm2))
    return np.fft.fftshift(eps), np.fft.fftshift(bound)


# CSV output --------------------------------------------------------------------

def write_shell_csv(path, shells: dict, grid: PupilGrid, header: Optional[str] = None):
    """Rows ``tau,point_index,noll_index,coefficient,strehl`` for ``{tau: shell}``."""
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["tau", "point_index", "noll_index", "coefficient", "strehl"])
        for tau in sorted(shells):
            for i, beta in enumerate(shells[tau]):
                s = strehl(beta, grid)
                for j, c in zip(beta.noll_indices, beta.coeffs):
                    w.writerow([repr(float(tau)), i, int(j), repr(float(c)), repr(s)])


def write_grid_csv(path, values: np.ndarray, header: Optional[str] = None, name: str = "value"):
    """Flat ``row,col,<name>`` dump of a 2-D array."""
    values = np.asarray(values, dtype=float)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header)
        w = csv.writer(fh)
        w.writerow(["row", "col", name])
        for (i, j), v in np.ndenumerate(values):
            w.writerow([i, j, repr(float(v))])


# toy blur estimation and the restart loop ----------------------------------------

TOY_K = 6
TOY_N = 16
TOY_CROP = 32
TOY_BLOCK = 2
TOY_WINDOW = 16
TOY_SIGMA = 0.01
# -l scales like 1/sigma^2 = 1e4 here, which lifts the gradient rounding floor to ~1e-6
TOY_TOL = 1e-5


class BlurToyModel(GaussianLocationModel):
    """Gaussian model whose mean is the cropped PSF of a ``K``-mode screen.

    The PSF is scaled so the unaberrated peak is one; ``sigma`` is in the
    same units.  Parameters are Zernike coefficients in waves RMS.
    """

    def __init__(self, grid: PupilGrid, K: int = TOY_K, crop: int = TOY_CROP, sigma: float = TOY_SIGMA):
        M = grid.padded_size
        if crop > M:
            raise ValueError("crop larger than the PSF")
        self.grid, self.K, self.crop = grid, int(K), int(crop)
        self._basis = zernike_basis(K, grid)
        lo = (M - crop) // 2
        self._window = (slice(lo, lo + crop), slice(lo, lo + crop))
        self._peak = float(np.max(unnormalized_psf(np.zeros((grid.size, grid.size)), grid)))
        super().__init__(self._mean, self._jac, sigma, n_params=K, dim=crop * crop,
                         hess_fn=self._hess, vectorized=True)

    def _fields(self, thetas):
        th = np.asarray(thetas, dtype=float)
        phase = 2.0 * np.pi * np.tensordot(th, self._basis, axes=1)
        e = self.grid.aperture * np.exp(1j * phase)
        M, N = self.grid.padded_size, self.grid.size
        padded = np.zeros(th.shape[:-1] + (M, M), dtype=complex)
        padded[..., :N, :N] = e
        return padded

    def _view(self, arr):
        arr = np.fft.fftshift(arr, axes=(-2, -1))
        return arr[(...,) + self._window]

    def _mean(self, thetas):
        G = np.fft.ifft2(self._fields(thetas), norm="ortho")
        h = self._view(np.abs(G) ** 2) / self._peak
        return h.reshape(h.shape[:-2] + (-1,))

    def _jac(self, thetas):
        P = self._fields(thetas)
        G = np.fft.ifft2(P, norm="ortho")
        N = self.grid.size
        dP = np.zeros(P.shape[:-2] + (self.K,) + P.shape[-2:], dtype=complex)
        dP[..., :N, :N] = 2j * np.pi * P[..., None, :N, :N] * self._basis
        dG = np.fft.ifft2(dP, norm="ortho")
        dh = 2.0 * np.real(np.conj(G)[..., None, :, :] * dG)
        dh = self._view(dh) / self._peak
        dh = dh.reshape(dh.shape[:-2] + (-1,))
        return np.swapaxes(dh, -1, -2)

    def _hess(self, thetas):
        P = self._fields(thetas)
        G = np.fft.ifft2(P, norm="ortho")
        N, K = self.grid.size, self.K
        lead = P.shape[:-2]
        dP = np.zeros(lead + (K,) + P.shape[-2:], dtype=complex)
        dP[..., :N, :N] = 2j * np.pi * P[..., None, :N, :N] * self._basis
        dG = np.fft.ifft2(dP, norm="ortho")
        zz = self._basis[:, None] * self._basis[None, :]
        d2P = np.zeros(lead + (K, K) + P.shape[-2:], dtype=complex)
        d2P[..., :N, :N] = -(2.0 * np.pi) ** 2 * P[..., None, None, :N, :N] * zz
        d2G = np.fft.ifft2(d2P, norm="ortho")
        cross = np.conj(dG)[..., :, None, :, :] * dG[..., None, :, :, :]
        d2h = 2.0 * np.real(cross + np.conj(G)[..., None, None, :, :] * d2G)
        d2h = self._view(d2h) / self._peak
        d2h = d2h.reshape(d2h.shape[:-2] + (-1,))
        return np.moveaxis(d2h, -1, -3)


def block_directions(size: int, block: int = TOY_BLOCK, window: Optional[int] = None) -> np.ndarray:
    """Orthonormal indicators of ``block x block`` tiles covering the central
    ``window x window`` part of a ``size x size`` image (default: all of it)."""
    window = size if window is None else int(window)
    if window > size or window % block or (size - window) % 2:
        raise ValueError("window must fit centrally in the image and be a multiple of block")
    lo, nb = (size - window) // 2, window // block
    rows = []
    for bi in range(nb):
        for bj in range(nb):
            tile = np.zeros((size, size))
            r0, c0 = lo + bi * block, lo + bj * block
            tile[r0:r0 + block, c0:c0 + block] = 1.0 / block
            rows.append(tile.ravel())
    return np.asarray(rows)


def toy_relaxation(model: BlurToyModel, block: int = TOY_BLOCK, window: int = TOY_WINDOW) -> Embedding:
    """Additive correction on 2x2 tiles of the PSF core, where misfit concentrates."""
    return additive_embedding(model, block_directions(model.crop, block, window))


@dataclass(frozen=True)
class RestartStep:
    theta: np.ndarray
    objective: float
    statistic: float
    decision: str


@dataclass(frozen=True)
class RestartResult:
    theta: np.ndarray
    accepted: bool
    restarts: int
    steps: list


def restart_search(model: GaussianLocationModel, embedding: Embedding, data, start, shell: Sequence,
                   grid: PupilGrid, tau: float, max_restarts: int = 20, alpha: float = 0.01,
                   B: int = 200, seed: int = 0, tol: float = TOY_TOL) -> RestartResult:
    """Detect-reject-restart: descend, gap-test, restart from shell candidates.

    After each rejected minimum the candidates ``current + beta`` are tried
    in order of decreasing Strehl of ``beta``; the first whose descent ends
    at a lower objective becomes the new current point and is tested again.
    Every candidate descent counts as one restart.
    """
    samples = as_samples(data)
    f, g = model.objective(samples)

    def descend(x0):
        res = minimize_local(f, g, np.asarray(x0, dtype=float), model.bounds, tol=tol)
        return res.x, res.objective_value

    cur, fcur = descend(start)
    steps, restarts, tested = [], 0, 0
    while True:
        report = gap_test(model, embedding, samples, cur, B=B, alpha=alpha, rng=stream(seed, 2, tested), tol=tol)
        tested += 1
        steps.append(RestartStep(cur.copy(), float(fcur), report.statistic, report.decision))
        if not report.reject:
            return RestartResult(cur, True, restarts, steps)
        moved = False
        for cand in restart_candidates(cur, tau, shell, grid):
            if restarts >= max_restarts:
                return RestartResult(cur, False, restarts, steps)
            restarts += 1
            x, fx = descend(cand.coeffs)
            if fx < fcur - _noise_level(fcur):
                cur, fcur, moved = x, fx, True
                break
        if not moved:
            return RestartResult(cur, False, restarts, steps)


def _noise_level(f: float) -> float:
    return 8.0 * np.finfo(float).eps * max(1.0, abs(f))


TOY_TRUTH_RMS = 0.3
TOY_TAU = 0.2
TOY_SHELL_STARTS = 64


@dataclass(frozen=True)
class RestartDemo:
    truth: np.ndarray
    result: RestartResult
    psf_error: float
    first_spurious: bool


def toy_truth(seed: int, K: int = TOY_K, rms: float = TOY_TRUTH_RMS) -> np.ndarray:
    v = stream(seed, 1).standard_normal(K)
    return rms * v / np.linalg.norm(v)


def run_restart_demo(seed: int = 0, K: int = TOY_K, size: int = TOY_N, tau: float = TOY_TAU,
                     max_restarts: int = 20, alpha: float = 0.01, B: int = 200,
                     shell_starts: int = TOY_SHELL_STARTS) -> RestartDemo:
    """Noise-free toy: descend from zero, then detect-reject-restart until accepted.

    Success is judged on the PSF, since a screen and its 180-degree rotated
    conjugate give the same PSF.
    """
    grid = PupilGrid.circular(size)
    model = BlurToyModel(grid, K=K)
    truth = toy_truth(seed, K)
    data = model.mean(truth)
    shell = max_strehl_shell(tau, K, grid, n_points=shell_starts, rng=stream(seed, 0))
    result = restart_search(model, toy_relaxation(model), data, np.zeros(K), shell, grid, tau,
                            max_restarts=max_restarts, alpha=alpha, B=B, seed=seed)
    err = float(np.max(np.abs(model.mean(result.theta) - data)))
    return RestartDemo(truth, result, err, result.steps[0].decision == "reject-H0")
