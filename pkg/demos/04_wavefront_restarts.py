"""
Restarting a blur estimate from a max-Strehl shell
==================================================

Phase screens are sums of Zernike modes.  The points on a sphere of fixed
RMS that keep the Strehl ratio highest are good restart offsets: they move
far in parameter space while disturbing the PSF little.  A small blur
estimation problem then restarts from shell offsets until the gap test
accepts.
"""

import numpy as np

from globaltest import PupilGrid, max_strehl_shell, psf_perturbation_bound, strehl
from globaltest.optics import TOY_TOL, coherent_psf, run_restart_demo, zernike_phase
from globaltest.rng import stream

grid = PupilGrid.circular(64)
K = 12

# Shell at 0.2 waves RMS compared with random directions of the same RMS.
shell = max_strehl_shell(0.2, K, grid, n_points=32, rng=stream(0))
rand = stream(1).standard_normal((200, K))
rand = 0.2 * rand / np.linalg.norm(rand, axis=1, keepdims=True)
print(f"{len(shell)} shell points, Strehl {strehl(shell[-1], grid):.3f} .. {strehl(shell[0], grid):.3f}")
print(f"best of 200 random offsets: {max(strehl(b, grid) for b in rand):.3f}")

# The point-wise bound on the PSF change caused by one offset.
g = coherent_psf(zernike_phase(0.1 * rand[0] / 0.2, grid), grid)
eps, bound = psf_perturbation_bound(g, shell[0], grid)
print(f"max |PSF change| {eps.max():.2e}, max bound {bound.max():.2e}, violations {(eps > bound).sum()}")

# The detect-reject-restart loop on the toy model.
demo = run_restart_demo(seed=0)
for i, step in enumerate(demo.result.steps):
    print(f"step {i}: -l = {step.objective:10.2f}  gap z = {step.statistic:8.2f}  {step.decision}")
print(f"accepted: {demo.result.accepted}, PSF error {demo.psf_error:.1e} (tolerance {TOY_TOL:g})")
