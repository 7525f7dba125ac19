import numpy as np
import pytest
from scipy import linalg

from globaltest.discovery import (DiscoveryConfig, NoSpuriousMinimaError, RelaxationDirection,
                                  discover_relaxation_direction, fix_sign, inverse_sqrt_psd, iterate_discovery,
                                  leading_direction, read_direction_csv, sinusoid_discovery_config,
                                  whitened_score, write_direction_csv, write_singular_values_csv)
from globaltest.model import measurement_domain_embedding
from globaltest.rng import stream
from globaltest.sinusoid import (THETA_MAX, THETA_TRUE, SinusoidModel, descend, naive_poly_embedding, noise_free_data,
                                 sinusoid_mean)


def small_config(**kw):
    return sinusoid_discovery_config(n_nominal=30, n_starts=20, **kw)


class TestWhitenedScore:
    def test_measurement_domain_scales_residual_by_sigma(self):
        sigma = 0.4
        model = SinusoidModel(sigma)
        e = measurement_domain_embedding(model)
        d = model.sample([THETA_TRUE], 1, stream(1))
        th = np.array([5.0])
        w = whitened_score(e.relaxed, e.lift(np.array([THETA_TRUE])), d, e.lift(th), e.extra_indices())
        resid = d.samples[:, 0] - model.mean(th)
        # score is resid / sigma^2, whitening multiplies it by sigma
        np.testing.assert_allclose(w, resid / sigma, rtol=1e-12)

    def test_zero_score(self):
        model = SinusoidModel()
        e = measurement_domain_embedding(model)
        tt = e.lift(np.array([4.0]))
        w = whitened_score(e.relaxed, tt, sinusoid_mean(4.0), tt)
        np.testing.assert_allclose(w, 0.0, atol=1e-14)

    def test_dense_oracle(self):
        model = SinusoidModel(0.7)
        e = naive_poly_embedding(model, 3)
        d = model.sample([THETA_TRUE], 2, stream(2))
        t0 = np.array([THETA_TRUE, 0.3, -0.2, 0.1])
        th = np.array([6.0, 0.1, 0.2, -0.4])
        info = 2 * e.relaxed.fisher(t0)
        oracle = np.real(linalg.inv(linalg.sqrtm(info))) @ e.relaxed.score(d, th)
        np.testing.assert_allclose(whitened_score(e.relaxed, t0, d, th), oracle, rtol=1e-10, atol=1e-10)

    def test_inverse_sqrt_floors_null_space(self):
        v = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
        a = v @ np.diag([4.0, 1e-14]) @ v.T
        expected = v @ np.diag([0.5, 0.0]) @ v.T
        np.testing.assert_allclose(inverse_sqrt_psd(a), expected, atol=1e-12)


class TestDirection:
    def test_sign_convention(self):
        assert np.array_equal(fix_sign(np.array([0.1, -0.9])), [-0.1, 0.9])
        assert np.array_equal(fix_sign(np.array([0.1, 0.9])), [0.1, 0.9])

    def test_rank_one(self):
        c = stream(3).standard_normal(7)
        d = leading_direction(c[:, None])
        np.testing.assert_allclose(np.abs(d.r), np.abs(c) / np.linalg.norm(c), rtol=1e-12)
        assert d.columns_used == 1

    def test_unit_norm_enforced(self):
        with pytest.raises(ValueError):
            RelaxationDirection(np.ones(3), np.ones(1), 1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DiscoveryConfig([], [np.zeros(1)])
        with pytest.raises(ValueError):
            DiscoveryConfig([np.zeros(1)], [np.zeros(1), np.ones(1)], paired=True)

    def test_starts_at_truth_raise(self):
        truths = [np.array([t]) for t in np.linspace(0.5, THETA_MAX - 0.5, 10)]
        cfg = DiscoveryConfig(truths, truths, paired=True)
        with pytest.raises(NoSpuriousMinimaError):
            discover_relaxation_direction(cfg, SinusoidModel())

    def test_single_column_is_rao_direction(self):
        # the direction maximising the score statistic is I~^-1 s~, up to scale
        model = SinusoidModel()
        cfg = DiscoveryConfig([np.array([THETA_TRUE])], [np.array([0.5])], paired=True)
        d, delta = discover_relaxation_direction(cfg, model, return_matrix=True)
        assert delta.shape[1] == 1
        e = measurement_domain_embedding(model)
        th = descend(model, noise_free_data(), [0.5]).x
        idx = e.extra_indices()
        s = e.relaxed.score(noise_free_data(), e.lift(th))[idx]
        info = e.relaxed.fisher(e.lift(np.array([THETA_TRUE])))[np.ix_(idx, idx)]
        rao = np.linalg.solve(info, s)
        assert abs(d.r @ rao) / np.linalg.norm(rao) == pytest.approx(1.0, abs=1e-10)

    def test_deterministic_and_unit(self):
        a = discover_relaxation_direction(small_config(), SinusoidModel())
        b = discover_relaxation_direction(small_config(), SinusoidModel())
        assert np.array_equal(a.r, b.r)
        assert np.linalg.norm(a.r) == pytest.approx(1.0, abs=1e-12)
        assert a.r[np.argmax(np.abs(a.r))] > 0
        assert np.all(np.diff(a.singular_values) <= 0)


class TestIterate:
    def test_one_dim_matches_single(self):
        single = discover_relaxation_direction(small_config(), SinusoidModel())
        (it,) = iterate_discovery(small_config(), SinusoidModel(), dims=1)
        assert np.array_equal(single.r, it.r)

    def test_orthogonal(self):
        found = iterate_discovery(small_config(), SinusoidModel(), dims=2)
        assert len(found) == 2
        assert abs(found[0].r @ found[1].r) < 1e-8
        for f in found:
            assert np.linalg.norm(f.r) == pytest.approx(1.0, abs=1e-12)

    def test_dims_validated(self):
        with pytest.raises(ValueError):
            iterate_discovery(small_config(), SinusoidModel(), dims=0)


def test_csv_round_trip(tmp_path):
    r = fix_sign(stream(5).standard_normal(10))
    d = RelaxationDirection(r / np.linalg.norm(r), np.array([3.0, 1.0]), 4)
    write_direction_csv(tmp_path / "direction.csv", d, header="# seed=0\n")
    write_singular_values_csv(tmp_path / "sv.csv", d)
    assert np.array_equal(read_direction_csv(tmp_path / "direction.csv"), d.r)
    assert (tmp_path / "direction.csv").read_text().splitlines()[1] == "index,value"
    assert (tmp_path / "sv.csv").read_text().splitlines()[0] == "index,singular_value"
