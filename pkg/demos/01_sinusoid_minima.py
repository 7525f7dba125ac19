"""
Is this local minimum the global one?
=====================================

A sinusoid with unknown frequency, observed in white Gaussian noise, has a
likelihood riddled with local optima.  This walk-through fits one dataset
from two starting points and asks three validation statistics whether each
fit is the global maximum-likelihood estimate.
"""

import numpy as np

from globaltest import (SinusoidModel, bootstrap_moments, enumerate_local_minima, gap_test, one_sided_test,
                        relaxation, two_sided_test)
from globaltest.experiments import default_learned_direction
from globaltest.rng import stream
from globaltest.sinusoid import THETA_TRUE, descend

# One noisy dataset at the true frequency 3 pi.
model = SinusoidModel(sigma=1.0)
data = model.sample([THETA_TRUE], 1, stream(1))

# The local minima of -l found by a dense scan followed by local descent.
minima = enumerate_local_minima(model, data)
print("local minima of -l:")
for m in minima:
    print(f"  theta = {m[0]:8.4f}   -l = {-model.log_likelihood(data, m):9.3f}")

# A learned relaxation direction (computed once, about ten seconds).
embedding = relaxation(model, "learned-direction", directions=default_learned_direction())

# Fit from a start near zero (lands on a spurious minimum) and from near the truth.
for start in (0.5, 9.0):
    theta_hat = descend(model, data, [start]).x
    ell = model.log_likelihood(data, theta_hat)
    moments = bootstrap_moments(model, theta_hat, 1000, stream(1, 2))
    two = two_sided_test(ell, moments, alpha=0.01)
    one = one_sided_test(ell, moments, alpha=0.01)
    gap = gap_test(model, embedding, data, theta_hat, B=200, alpha=0.01, rng=stream(1, 3))
    print(f"\nstart {start}: theta_hat = {theta_hat[0]:.4f}")
    for rep in (two, one, gap):
        print(f"  {rep.kind:10s} statistic {rep.statistic:9.3f}  threshold {rep.threshold:7.3f}  -> {rep.decision}")
