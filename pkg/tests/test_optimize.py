import numpy as np
import pytest
from scipy.optimize import rosen, rosen_der

from globaltest.model import GaussianLocationModel, identity_embedding, measurement_domain_embedding
from globaltest.optimize import (CONVERGED, MAX_ITER, NotStationaryError, gap_statistic, minimize_gaussian_batch,
                                 minimize_local, restricted_relaxed_minimize)
from globaltest.rng import stream
from globaltest.sinusoid import (THETA_TRUE, SinusoidModel, descend, enumerate_local_minima, naive_poly_embedding,
                                 noise_free_data, relaxation)


class TestMinimizeLocal:
    def test_bounded_quadratic(self):
        res = minimize_local(lambda t: (t[0] - 2) ** 2, lambda t: np.array([2 * (t[0] - 2)]), [0.0], [[0, 4]])
        assert res.converged
        assert res.x[0] == pytest.approx(2.0, abs=1e-8)

    def test_active_bound(self):
        res = minimize_local(lambda t: (t[0] - 7) ** 2, lambda t: np.array([2 * (t[0] - 7)]), [0.0], [[0, 4]])
        assert res.converged and res.x[0] == 4.0
        assert res.gradient_norm <= 1e-8

    def test_rosenbrock(self):
        res = minimize_local(rosen, rosen_der, [-1.2, 1.0], tol=1e-10, max_iter=2000)
        assert res.converged
        np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-6)

    def test_history_non_increasing(self):
        res = minimize_local(rosen, rosen_der, [-1.2, 1.0], max_iter=2000)
        h = np.array(res.history)
        assert np.all(np.diff(h) <= 1e-12 * np.maximum(1.0, np.abs(h[:-1])))

    def test_max_iter_status(self):
        res = minimize_local(rosen, rosen_der, [-1.2, 1.0], max_iter=3)
        assert res.status == MAX_ITER and not res.converged

    def test_converged_implies_small_gradient(self):
        model = SinusoidModel()
        d = model.sample([THETA_TRUE], 1, stream(9))
        for s in (1.0, 4.0, 8.0, 12.0):
            res = descend(model, d, [s])
            if res.status == CONVERGED:
                assert res.gradient_norm <= 1e-8

    def test_sinusoid_start_at_truth(self):
        model = SinusoidModel()
        res = descend(model, noise_free_data(), [THETA_TRUE])
        assert res.x[0] == pytest.approx(THETA_TRUE, abs=1e-10)
        assert res.objective_value == pytest.approx(50 * np.log(2 * np.pi), rel=1e-12)

    def test_sinusoid_start_2_matches_oracle(self):
        model = SinusoidModel()
        d = noise_free_data()
        minima = np.array([t.values[0] for t in enumerate_local_minima(model, d)])
        th = descend(model, d, [2.0]).x[0]
        # the minimum reached is the closest enumerated one on the downhill side
        assert np.min(np.abs(minima - th)) < 1e-6
        assert th < 2.0


class TestBatch:
    def test_matches_single(self):
        model = SinusoidModel(0.5)
        draws = model.sample_batch([THETA_TRUE], 6, 1, stream(3))
        starts = np.linspace(1.0, 11.0, 6)[:, None]
        res = minimize_gaussian_batch(model, draws, starts)
        for b in range(6):
            single = descend(model, draws[b], starts[b]).x[0]
            assert res.x[b, 0] == pytest.approx(single, abs=1e-6)
        assert np.all(res.converged)

    def test_rows_independent(self):
        model = SinusoidModel()
        draws = model.sample_batch([THETA_TRUE], 4, 1, stream(4))
        starts = np.array([[2.0], [5.0], [9.0], [11.0]])
        full = minimize_gaussian_batch(model, draws, starts).x
        part = minimize_gaussian_batch(model, draws[1:3], starts[1:3]).x
        np.testing.assert_array_equal(full[1:3], part)

    def test_linear_model_one_step(self):
        A = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 2.0]])
        model = GaussianLocationModel(lambda t: A @ t, lambda t: A, 1.0, 2, 3)
        d = stream(5).standard_normal((2, 3, 1))
        res = minimize_gaussian_batch(model, d, np.zeros((2, 2)))
        for b in range(2):
            np.testing.assert_allclose(res.x[b], np.linalg.lstsq(A, d[b, :, 0], rcond=None)[0], atol=1e-8)


class TestRelaxedDescent:
    def test_identity_embedding_zero_gap(self):
        model = SinusoidModel()
        d = noise_free_data()
        th = descend(model, d, [2.0]).x
        gap, res = gap_statistic(identity_embedding(model), d, th)
        assert gap == 0.0
        np.testing.assert_array_equal(res.x, th)

    @pytest.mark.parametrize("seed", range(5))
    def test_gap_non_negative(self, seed):
        model = SinusoidModel()
        d = model.sample([THETA_TRUE], 1, stream(seed))
        th = descend(model, d, [stream(seed, 1).uniform(0, 4 * np.pi)]).x
        for emb in (naive_poly_embedding(model, 1), naive_poly_embedding(model, 3),
                    measurement_domain_embedding(model)):
            gap, res = gap_statistic(emb, d, th)
            assert gap >= 0.0
            assert -emb.relaxed.log_likelihood(d, res.x) <= -model.log_likelihood(d, th) + 1e-9

    def test_rejects_non_stationary_point(self):
        model = SinusoidModel()
        with pytest.raises(NotStationaryError):
            restricted_relaxed_minimize(naive_poly_embedding(model, 1), noise_free_data(), [5.0])

    def test_learned_direction_separates_spurious(self, learned_direction):
        model = SinusoidModel()
        d = noise_free_data()
        emb = relaxation(model, "learned-direction", directions=learned_direction)
        spurious = descend(model, d, [0.5]).x
        assert abs(spurious[0] - THETA_TRUE) > 1.0
        gap_spur, _ = gap_statistic(emb, d, spurious)
        gap_true, _ = gap_statistic(emb, d, [THETA_TRUE])
        assert gap_spur > 0
        assert gap_spur >= 10 * gap_true
