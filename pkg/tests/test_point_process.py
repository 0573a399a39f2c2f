import math

import numpy as np
import pytest
from scipy import integrate
from hypothesis import given
from hypothesis import strategies as st

from poisson_ustat.point_process import (
    BoundedDensity,
    Control,
    MarkDistribution,
    PointConfiguration,
    UniformDensity,
    Window,
    dumps_configuration,
    loads_configuration,
    sample_poisson_pp,
    sample_poissonized_binomial,
)

REPS = 10_000


def _counts(sampler, reps=REPS):
    return np.array([len(sampler(r)) for r in range(reps)], float)


def _mean_var_ok(counts, target):
    n = counts.size
    mean_se = counts.std(ddof=1) / math.sqrt(n)
    c = counts - counts.mean()
    var = counts.var(ddof=1)
    var_se = math.sqrt(max(np.mean(c**4) - var**2, 0.0) / n)
    return abs(counts.mean() - target) <= 4 * mean_se and abs(var - target) <= 4 * var_se


def test_window_volume_and_contains():
    w = Window(2, [0.5, 1.0])
    assert w.volume == pytest.approx(2.0)
    assert w.contains(np.zeros((1, 2)))[0]
    assert not w.contains(np.array([[0.6, 0.0]]))[0]
    assert Window.of_volume(3, 8.0).volume == pytest.approx(8.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_degenerate_window_rejected(bad):
    with pytest.raises(ValueError):
        Window(1, bad)


@pytest.mark.parametrize("bad", [math.inf, math.nan, -1.0])
def test_bad_intensity_rejected(bad):
    with pytest.raises(ValueError):
        sample_poisson_pp(Window(1, 1.0), bad)


def test_zero_intensity_is_empty():
    assert len(sample_poisson_pp(Window(2, 3.0), 0.0, seed=4)) == 0
    assert len(sample_poissonized_binomial(0.0, UniformDensity(Window(1, 0.5)))) == 0


def test_poisson_count_moments():
    w = Window.of_volume(2, 1.0)
    counts = _counts(lambda r: sample_poisson_pp(w, 50.0, seed=11, key=r))
    assert _mean_var_ok(counts, 50.0)


def test_poissonized_binomial_matches_poisson_sampler():
    w = Window.of_volume(1, 1.0)
    a = _counts(lambda r: sample_poissonized_binomial(30.0, UniformDensity(w), seed=5, key=r))
    b = _counts(lambda r: sample_poisson_pp(w, 30.0, seed=6, key=r))
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    assert abs(a.mean() - b.mean()) <= 4 * se
    assert _mean_var_ok(a, 30.0) and _mean_var_ok(b, 30.0)


def test_triangular_density_mean():
    # f(x) = 2 (x + 1/2) on [-1/2, 1/2], i.e. the density 2u on [0, 1] shifted
    w = Window(1, 0.5)
    dens = BoundedDensity(lambda x: 2.0 * (x[:, 0] + 0.5), w, 2.0)
    xs = np.concatenate([sample_poissonized_binomial(100.0, dens, seed=2, key=r).locations[:, 0]
                         for r in range(400)])
    se = xs.std(ddof=1) / math.sqrt(xs.size)
    assert abs(xs.mean() - (2.0 / 3.0 - 0.5)) <= 4 * se


def test_rejection_envelope_too_small():
    w = Window(1, 0.5)
    dens = BoundedDensity(lambda x: 2.0 * (x[:, 0] + 0.5), w, 1.5)
    with pytest.raises(ValueError, match="envelope"):
        sample_poissonized_binomial(200.0, dens, seed=1)


def test_constant_marks_exact():
    cfg = sample_poisson_pp(Window(1, 5.0), 4.0, MarkDistribution.constant(1.0), seed=3)
    assert len(cfg) > 0 and np.all(cfg.marks == 1.0)


def test_power_law_marks_normalized_and_tail():
    nu = MarkDistribution.power_law_radius(4.0, 1.0)
    mass, _ = integrate.quad(lambda r: float(nu.pdf(np.array([r]))[0]), 1.0, np.inf)
    assert mass == pytest.approx(1.0, rel=1e-9)
    assert nu.tail(2.0) == pytest.approx(2.0**-3)
    draws = nu.sample(np.random.default_rng(0), 200_000)
    assert draws.min() >= 1.0
    se = math.sqrt(nu.tail(2.0) * (1 - nu.tail(2.0)) / draws.size)
    assert abs(np.mean(draws > 2.0) - 2.0**-3) <= 4 * se


def test_empirical_marks_probabilities():
    with pytest.raises(ValueError):
        MarkDistribution.empirical([1.0, 2.0], [0.5, 0.6])
    nu = MarkDistribution.empirical([1.0, 2.0], [0.25, 0.75])
    vals, probs = nu.atoms()
    assert probs.sum() == pytest.approx(1.0)


def test_spatial_uniformity_and_mark_independence():
    w = Window(2, [1.0, 2.0])
    cfgs = [sample_poisson_pp(w, 20.0, MarkDistribution.power_law_radius(6.0), seed=9, key=r) for r in range(500)]
    loc = np.concatenate([c.locations for c in cfgs])
    marks = np.concatenate([c.marks for c in cfgs])
    se = loc.std(axis=0, ddof=1) / math.sqrt(loc.shape[0])
    assert np.all(np.abs(loc.mean(axis=0)) <= 4 * se)
    for axis in range(2):
        corr = np.corrcoef(loc[:, axis], marks)[0, 1]
        assert abs(corr) <= 4 / math.sqrt(loc.shape[0])


def test_same_seed_same_configuration():
    w = Window(3, 1.0)
    a = sample_poisson_pp(w, 10.0, MarkDistribution.power_law_radius(5.0), seed=42, key=(3, 7))
    b = sample_poisson_pp(w, 10.0, MarkDistribution.power_law_radius(5.0), seed=42, key=(3, 7))
    c = sample_poisson_pp(w, 10.0, MarkDistribution.power_law_radius(5.0), seed=42, key=(3, 8))
    assert a == b
    assert a != c


def test_configuration_is_read_only():
    cfg = sample_poisson_pp(Window(1, 1.0), 10.0, seed=1)
    with pytest.raises(ValueError):
        cfg.locations[0, 0] = 0.0


def test_points_outside_window_rejected():
    with pytest.raises(ValueError):
        PointConfiguration(Window(1, 1.0), 1.0, np.array([[2.0]]))


@given(st.integers(0, 2**31), st.integers(1, 3), st.booleans())
def test_serialization_round_trip_is_bit_exact(seed, dim, marked):
    marks = MarkDistribution.power_law_radius(5.5) if marked else None
    cfg = sample_poisson_pp(Window(dim, 0.7), 6.0, marks, seed=seed)
    assert loads_configuration(dumps_configuration(cfg)) == cfg


def test_serialization_rejects_foreign_text():
    with pytest.raises(ValueError):
        loads_configuration("hello\n")


def test_control_sampling_shapes():
    ctl = Control(Window(2, 1.0), 3.0, MarkDistribution.constant(2.0))
    t, m = ctl.sample(np.random.default_rng(0), 5, 3)
    assert t.shape == (5, 3, 2) and m.shape == (5, 3)
    assert ctl.mass == pytest.approx(12.0)
