import math

import numpy as np
import pytest

from radiozone.plm import PathLossFit, fit_plm, plm_predict


def synthetic_links(eta, z0, d0, distances):
    return [(d, z0 - 10.0 * eta * math.log10(d / d0)) for d in distances]


class TestFit:
    def test_two_point_slope(self):
        fit = fit_plm([(10.0, -20.0), (100.0, -50.0)])
        assert fit.eta == pytest.approx(3.0, abs=1e-12)
        assert fit.z0_dbm == -20.0 and fit.d0_m == 10.0

    def test_exact_recovery_from_model_data(self):
        rng = np.random.default_rng(0)
        distances = [5.0] + list(rng.uniform(5, 400, 80))
        links = synthetic_links(2.7, -20.0, 5.0, distances)
        fit = fit_plm(links)
        assert fit.eta == pytest.approx(2.7, abs=1e-9)
        assert fit.z0_dbm == pytest.approx(-20.0, abs=1e-9)

    def test_distance_tie_takes_smallest_rss(self):
        links = [(10.0, -21.0), (10.0, -24.0), (50.0, -40.0)]
        fit = fit_plm(links)
        assert fit.z0_dbm == -24.0

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        links = synthetic_links(2.0, -25.0, 8.0, list(rng.uniform(8, 300, 40)))
        links[5] = (links[5][0], links[5][1] - 4.0)  # off-model point
        ref = fit_plm(links)
        for seed in range(5):
            shuffled = list(links)
            np.random.default_rng(seed).shuffle(shuffled)
            got = fit_plm(shuffled)
            assert got.eta == pytest.approx(ref.eta, abs=1e-12)
            assert got.z0_dbm == ref.z0_dbm and got.d0_m == ref.d0_m

    def test_degenerate_all_equal_distances(self):
        with pytest.raises(ValueError):
            fit_plm([(10.0, -20.0), (10.0, -22.0), (10.0, -24.0)])

    def test_nonpositive_distance_rejected(self):
        with pytest.raises(ValueError):
            fit_plm([(0.0, -20.0), (10.0, -30.0)])


class TestPredict:
    fit = PathLossFit(eta=2.0, z0_dbm=-20.0, d0_m=10.0)

    def test_at_anchor(self):
        assert plm_predict(self.fit, (0.0, 0.0), (10.0, 0.0)) == pytest.approx(-20.0)

    def test_two_decades(self):
        assert plm_predict(self.fit, (0.0, 0.0), (1000.0, 0.0)) == pytest.approx(-60.0)

    def test_symmetry_in_endpoints(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            a, b = rng.uniform(0, 200, 2), rng.uniform(0, 200, 2)
            if np.allclose(a, b):
                continue
            assert plm_predict(self.fit, tuple(a), tuple(b)) == plm_predict(
                self.fit, tuple(b), tuple(a))

    def test_zero_distance_rejected(self):
        with pytest.raises(ValueError):
            plm_predict(self.fit, (3.0, 3.0), (3.0, 3.0))

    def test_training_residuals_reproduced(self):
        rng = np.random.default_rng(3)
        links = [(float(d), float(z)) for d, z in zip(
            rng.uniform(5, 300, 50), rng.uniform(-80, -20, 50))]
        links.append((4.0, -18.0))
        fit = fit_plm(links)
        # independent residual recomputation from the model formula
        for d, z in links:
            pred = plm_predict(fit, (0.0, 0.0), (d, 0.0))
            resid = z - pred
            manual = z - (fit.z0_dbm - 10 * fit.eta * math.log10(d / fit.d0_m))
            assert resid == pytest.approx(manual, abs=1e-12)

    def test_model_data_reproduced_to_1e9(self):
        links = synthetic_links(2.7, -20.0, 6.0, list(np.linspace(6, 350, 60)))
        fit = fit_plm(links)
        for d, z in links:
            assert plm_predict(fit, (0.0, 0.0), (0.0, d)) == pytest.approx(z, abs=1e-9)
