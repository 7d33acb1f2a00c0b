import numpy as np
import pytest
from scipy import stats

from adaptive_glmb.gaussbeta import LinearGaussianModel, constant_velocity_model
from adaptive_glmb.rfs import Gaussian
from adaptive_glmb.scenario import (
    ScenarioConfig,
    generate_truth,
    max_cardinality,
    preset,
    profile_value,
    simulate,
)


def static_model():
    cv = constant_velocity_model()
    return LinearGaussianModel(cv.F, np.zeros((4, 4)), cv.H, cv.R)


def test_profile_value():
    prof = ((1, 25.0), (51, 35.0))
    assert profile_value(prof, 1) == 25.0
    assert profile_value(prof, 50) == 25.0
    assert profile_value(prof, 51) == 35.0
    assert profile_value(prof, 100) == 35.0


def test_bad_profiles():
    with pytest.raises(ValueError):
        ScenarioConfig(detection_prob=((1, 1.2),))
    with pytest.raises(ValueError):
        ScenarioConfig(clutter_rate=((5, 1.0), (2, 3.0)))
    with pytest.raises(ValueError):
        ScenarioConfig(region=((0, 0), (0, 1)))


@pytest.mark.parametrize("sid,lam,pd", [(1, 10.0, 0.97), (2, 10.0, 0.85), (3, 70.0, 0.97)])
def test_presets(sid, lam, pd):
    cfg = preset(sid)
    assert cfg.true_lambda(1) == lam and cfg.true_lambda(100) == lam
    assert cfg.true_pd(37) == pd
    assert cfg.volume == 4e6


def test_preset4_switch():
    cfg = preset(4)
    assert [cfg.true_lambda(k) for k in (1, 50, 51, 100)] == [25.0, 25.0, 35.0, 35.0]
    truth = simulate(cfg, 0)
    assert len(truth.measurements) == 100


def test_unknown_preset():
    with pytest.raises(ValueError):
        preset(5)


def test_constant_trajectories():
    births = ((1.0, Gaussian(np.array([10.0, 20.0, 0.0, 0.0]), np.eye(4) * 1e-300)),)
    cfg = ScenarioConfig(duration=20, dynamics=static_model(), births=births, p_survival=1.0)
    truth = generate_truth(cfg, 0)
    first = truth.states[0]
    assert len(first) == 1
    (label, x0), = first.items()
    for st in truth.states:
        np.testing.assert_allclose(st[label], x0)


def test_no_births():
    cfg = ScenarioConfig(duration=30, births=tuple((0.0, g) for _, g in ScenarioConfig().births))
    assert max_cardinality(generate_truth(cfg, 0)) == 0


def test_all_empty():
    cfg = ScenarioConfig(duration=30, detection_prob=((1, 0.0),), clutter_rate=((1, 0.0),))
    truth = simulate(cfg, 2)
    assert all(Z.shape == (0, 2) for Z in truth.measurements)


def test_poisson_clutter_mean():
    cfg = ScenarioConfig(duration=1000, births=(), clutter_rate=((1, 10.0),))
    truth = simulate(cfg, 5)
    counts = [len(Z) for Z in truth.measurements]
    assert 9.0 <= np.mean(counts) <= 11.0


def test_clutter_uniform():
    cfg = ScenarioConfig(duration=1000, births=(), clutter_rate=((1, 100.0),))
    pts = np.vstack(simulate(cfg, 6).measurements)
    assert len(pts) > 9e4
    hist, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=10, range=[[-1000, 1000], [-1000, 1000]])
    assert stats.chisquare(hist.ravel()).pvalue > 0.01


def test_measurement_noise_covariance():
    births = ((1.0, Gaussian(np.zeros(4), np.eye(4) * 1e-300)),)
    # one new static object per step: about 20k detections in total
    cfg = ScenarioConfig(duration=200, dynamics=static_model(), births=births, p_survival=1.0,
                         detection_prob=((1, 1.0),), clutter_rate=((1, 0.0),))
    truth = simulate(cfg, 7)
    stack = np.vstack(truth.measurements)
    np.testing.assert_allclose(np.cov(stack.T), 9.0 * np.eye(2), atol=0.5)


def test_reproducible():
    a, b = simulate(preset(1), 11), simulate(preset(1), 11)
    for za, zb in zip(a.measurements, b.measurements):
        np.testing.assert_array_equal(za, zb)
    assert a.origins == b.origins
    c = simulate(preset(1), 12)
    assert any(len(x) != len(y) or not np.array_equal(x, y) for x, y in zip(a.measurements, c.measurements))


def test_origins_and_region_exit():
    cfg = preset(1)
    truth = simulate(cfg, 3)
    for k, (Z, tags) in enumerate(zip(truth.measurements, truth.origins), start=1):
        assert len(Z) == len(tags)
        for tag in tags:
            if tag is not None:
                assert tag in truth.states[k - 1]
        for x in truth.states[k - 1].values():
            assert abs(x[0]) <= 1000 and abs(x[1]) <= 1000


def test_population_reaches_about_ten():
    peaks = [max_cardinality(generate_truth(preset(1), s)) for s in range(100)]
    assert 6 <= np.mean(peaks) <= 14
