import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcdgan import evaluation, nn, synth
from dcdgan.numcore import make_rng


@pytest.fixture(scope="module")
def critic():
    return nn.init_critic(make_rng(0), 32)


def test_exact_modes_all_recovered():
    spec = synth.ring8()
    rep = evaluation.mode_report(spec, spec.means)
    assert rep.modes_recovered == 8 and rep.hq_fraction == 1.0
    assert rep.per_mode_counts == [1] * 8


def test_total_collapse():
    spec = synth.ring8()
    rep = evaluation.mode_report(spec, np.repeat(spec.means[3:4], 100, axis=0))
    assert rep.modes_recovered == 1 and rep.hq_fraction == 1.0
    assert rep.per_mode_counts[3] == 100


def test_true_mixture_is_high_quality():
    spec = synth.ring8()
    rep = evaluation.mode_report(spec, synth.sample(spec, make_rng(1), 10**5), hq_sigmas=4)
    # P(chi2_2 <= 16) = 1 - exp(-8)
    assert 1 - math.exp(-8) > 0.999
    assert rep.hq_fraction >= 0.999
    assert rep.modes_recovered == 8


def test_report_invariants_and_permutation():
    spec = synth.grid25()
    x = make_rng(2).uniform(-5, 5, size=(3000, 2))
    rep = evaluation.mode_report(spec, x)
    assert sum(rep.per_mode_counts) == 3000
    assert 0 <= rep.hq_fraction <= 1 and rep.modes_recovered <= 25
    perm = evaluation.mode_report(spec, x[make_rng(3).permutation(3000)])
    assert perm.to_json() == rep.to_json()
    assert json.loads(rep.to_json())["n_samples"] == 3000


def test_mode_report_rejects_empty():
    with pytest.raises(ValueError):
        evaluation.mode_report(synth.ring8(), np.zeros((0, 2)))


def test_recovery_needs_enough_hq_samples():
    spec = synth.ring8()
    # 1000 samples, threshold 12.5 per mode; mode 0 gets 12, the rest 141
    x = np.concatenate([np.repeat(spec.means[:1], 12, axis=0), np.repeat(spec.means[1:], 141, axis=0)])
    rep = evaluation.mode_report(spec, x[:1000])
    assert rep.modes_recovered == 7


def test_constant_critic_level_grid():
    grid = evaluation.level_grid(nn.ConstantCritic(2.5), ((-1, 1), (0, 3)), (4, 3))
    assert grid.values.shape == (3, 4)
    np.testing.assert_array_equal(grid.values, 2.5)
    np.testing.assert_allclose(grid.boltzmann().sum(), 1.0)


def test_linear_critic_grid_increases_along_x():
    grid = evaluation.level_grid(nn.LinearCritic(np.array([1.0, 0.0])), ((-2, 2), (-2, 2)), 9)
    assert np.all(np.diff(grid.values, axis=1) > 0)


def test_grid_matches_pointwise_calls(critic):
    grid = evaluation.level_grid(critic, ((-3, 3), (-2, 4)), (7, 5))
    for i, y in enumerate(grid.ys):
        for j, x in enumerate(grid.xs):
            assert grid.values[i, j] == pytest.approx(critic.value(np.array([[x, y]]))[0], rel=1e-12, abs=1e-14)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 40), st.integers(2, 40))
def test_refined_grid_contains_coarse_grid(critic, nx, ny):
    ranges = ((-4.0, 4.0), (-3.0, 5.0))
    coarse = evaluation.level_grid(critic, ranges, (nx, ny))
    fine = evaluation.level_grid(critic, ranges, (2 * nx - 1, 2 * ny - 1))
    assert fine.values[::2, ::2].tobytes() == coarse.values.tobytes()


def test_level_grid_validation(critic):
    with pytest.raises(ValueError):
        evaluation.level_grid(critic, ((-1, 1), (-1, 1)), 1)
    with pytest.raises(ValueError):
        evaluation.level_grid(critic, ((1, -1), (-1, 1)), 4)


def test_level_grid_is_deterministic(critic):
    a = evaluation.level_grid(critic, ((-3, 3), (-3, 3)), 70)
    b = evaluation.level_grid(critic, ((-3, 3), (-3, 3)), 70)
    assert a.values.tobytes() == b.values.tobytes()


def test_alignment_perfect_and_anti():
    spec = synth.ring8()
    good = synth.LogDensityCritic(spec)
    assert evaluation.energy_alignment(spec, good, 500) == pytest.approx(1.0)

    class Negated:
        def value(self, x):
            return -good.value(x)

    assert evaluation.energy_alignment(spec, Negated(), 500) == pytest.approx(-1.0)


def test_alignment_constant_critic_warns_and_is_zero():
    with pytest.warns(RuntimeWarning):
        assert evaluation.energy_alignment(synth.grid25(), nn.ConstantCritic(1.0), 100) == 0.0
    with pytest.raises(ValueError):
        evaluation.energy_alignment(synth.grid25(), nn.ConstantCritic(1.0), 1)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.01, 100), st.floats(-50, 50))
def test_alignment_invariant_to_positive_affine_maps(critic, a, b):
    spec = synth.grid25()

    class Scaled:
        def value(self, x):
            return a * critic.value(x) + b

    base = evaluation.energy_alignment(spec, critic, 300, seed=4)
    assert evaluation.energy_alignment(spec, Scaled(), 300, seed=4) == pytest.approx(base, abs=1e-12)
