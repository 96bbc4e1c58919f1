import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcdgan import synth
from dcdgan.numcore import make_rng

from oracles import central_fd


def test_ring8_geometry():
    spec = synth.ring8()
    np.testing.assert_allclose(spec.means[0], [synth.RING_RADIUS, 0.0], atol=1e-15)
    np.testing.assert_allclose(spec.means[2], [0.0, synth.RING_RADIUS], atol=1e-15)
    gaps = np.linalg.norm(spec.means - np.roll(spec.means, -1, axis=0), axis=1)
    np.testing.assert_allclose(gaps, 2 * synth.RING_RADIUS * math.sin(math.pi / 8), rtol=1e-12)
    np.testing.assert_array_equal(spec.weights, 1 / 8)
    np.testing.assert_array_equal(spec.stds, synth.RING_STD)


def test_grid25_geometry():
    spec = synth.grid25()
    assert spec.n_modes == 25
    np.testing.assert_array_equal(spec.weights, 1 / 25)
    assert any(np.array_equal(m, [0.0, 0.0]) for m in spec.means)
    d = 2 * synth.GRID_SPACING
    corners = {tuple(m) for m in spec.means if abs(m[0]) == d and abs(m[1]) == d}
    assert corners == {(d, d), (d, -d), (-d, d), (-d, -d)}


def test_mixture_spec_validation():
    with pytest.raises(ValueError):
        synth.MixtureSpec([[0, 0]], [0.0], [1.0])
    with pytest.raises(ValueError):
        synth.MixtureSpec([[0, 0], [1, 1]], [1.0, 1.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        synth.MixtureSpec(np.zeros((0, 2)), [], [])
    spec = synth.ring8()
    with pytest.raises(ValueError):
        spec.means[0, 0] = 5.0


def test_spec_dict_round_trip():
    spec = synth.grid25()
    back = synth.MixtureSpec.from_dict(spec.to_dict())
    for name in ("means", "stds", "weights"):
        assert getattr(back, name).tobytes() == getattr(spec, name).tobytes()


def test_single_mode_covariance():
    x = synth.sample(synth.MixtureSpec.single(), make_rng(0), 10**6)
    np.testing.assert_allclose(np.cov(x.T), np.eye(2), atol=0.01)


def test_degenerate_std_samples_sit_on_modes():
    spec = synth.ring8(std=1e-9)
    x = synth.sample(spec, make_rng(1), 1000)
    d = np.linalg.norm(x[:, None, :] - spec.means[None], axis=2).min(axis=1)
    assert d.max() < 1e-6


def test_ring8_mode_balance():
    n = 10**5
    spec = synth.ring8()
    x = synth.sample(spec, make_rng(2), n)
    idx = np.linalg.norm(x[:, None, :] - spec.means[None], axis=2).argmin(axis=1)
    counts = np.bincount(idx, minlength=8)
    assert np.all(np.abs(counts - n / 8) <= 0.05 * n / 8)


def test_sample_rejects_empty():
    with pytest.raises(ValueError):
        synth.sample(synth.ring8(), make_rng(0), 0)


def test_standard_normal_log_density_at_origin():
    spec = synth.MixtureSpec.single()
    assert synth.log_density(spec, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), rel=1e-15)


def test_single_gaussian_score():
    mu, s = np.array([1.5, -0.5]), 0.7
    spec = synth.MixtureSpec.single(mu, s)
    x = np.array([0.2, 0.9])
    np.testing.assert_allclose(synth.score(spec, x), (mu - x) / s**2, rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.sampled_from(["ring8", "grid25"]))
def test_score_matches_fd(a, b, preset):
    # widen the modes so finite differences are well conditioned
    base = synth.PRESETS[preset]()
    spec = synth.MixtureSpec(base.means, np.full(base.n_modes, 0.5), base.weights)
    x = np.array([a, b])
    fd = central_fd(lambda: synth.log_density(spec, x), x)
    g = synth.score(spec, x)
    # symmetric points have a zero score; measure against a unit floor there
    assert np.abs(g - fd).max() <= 1e-6 * max(np.abs(g).max(), 1.0)


def test_log_density_far_away_is_finite():
    spec = synth.ring8()
    x = np.array([[100.0, 0.0], [-70.0, 70.0]])
    assert np.all(np.isfinite(synth.log_density(spec, x)))
    assert np.all(np.isfinite(synth.score(spec, x)))


def test_batched_matches_pointwise():
    spec = synth.grid25()
    x = make_rng(3).standard_normal((5, 2)) * 3
    batch = synth.log_density(spec, x)
    for row, val in zip(x, batch):
        assert synth.log_density(spec, row) == pytest.approx(val, rel=1e-14)
