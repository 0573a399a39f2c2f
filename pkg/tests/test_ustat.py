import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_ustat.kernels import (
    Kernel,
    constant_kernel,
    edge_kernel,
    gaussian_pair_kernel,
    indicator_kernel,
    product_kernel,
    sign_kernel,
)
from poisson_ustat.mc import UnstableEstimateWarning
from poisson_ustat.point_process import Control, PointConfiguration, Window, sample_poisson_pp
from poisson_ustat.ustat import (
    ChaosKernel,
    DegenerateKernelError,
    UStatistic,
    chaos_moments,
    detect_hoeffding_rank,
    project_kernel,
    ustat_value,
)


def _config(points, hw=10.0):
    pts = np.asarray(points, float)
    return PointConfiguration(Window(pts.shape[1], hw), 1.0, pts)


def _ordered_sum(kernel, config):
    """Direct sum over every ordered tuple of distinct indices."""
    n, k = len(config), kernel.order
    tot = []
    for idx in itertools.permutations(range(n), k):
        t = config.locations[list(idx)][None]
        m = None if config.marks is None else config.marks[list(idx)][None]
        tot.append(float(kernel.evaluate(t, m)[0]))
    return math.fsum(tot)


def test_single_point_pair_statistic_is_zero():
    assert ustat_value(edge_kernel(1.0), _config([[0.0]])) == 0.0


def test_hand_enumerated_pairs():
    cfg = _config([[0.0], [1.0], [2.0]])
    assert ustat_value(indicator_kernel(2, 1.5), cfg, "grid") == 4.0
    assert ustat_value(indicator_kernel(2, 1.5), cfg, "brute_force") == 4.0


@given(st.integers(0, 2**32 - 1))
def test_grid_equals_brute_force_triples(seed):
    rng = np.random.default_rng(seed)
    cfg = _config(rng.uniform(-1, 1, (8, 2)), 1.0)
    h = Kernel(3, lambda t, m: np.exp(-t[:, :, 0].sum(axis=1)) * (indicator_kernel(3, 0.9).evaluate(t)),
               0.9, False, True, "weighted")
    assert ustat_value(h, cfg, "grid") == ustat_value(h, cfg, "brute_force")
    assert ustat_value(h, cfg, "grid") == pytest.approx(_ordered_sum(h, cfg), rel=1e-12, abs=1e-12)


def test_non_symmetric_kernel_uses_every_ordering():
    h = Kernel(2, lambda t, m: t[:, 0, 0] - 2 * t[:, 1, 0], symmetric=False)
    cfg = _config([[0.1], [0.7], [-0.4]])
    assert ustat_value(h, cfg, "brute_force") == pytest.approx(_ordered_sum(h, cfg), rel=1e-12)


def test_brute_force_order_cap():
    with pytest.raises(ValueError):
        ustat_value(constant_kernel(9), _config(np.zeros((10, 1))), "brute_force")


def test_grid_requires_radius():
    with pytest.raises(ValueError):
        UStatistic(gaussian_pair_kernel(1.0), "grid").fit()


@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_permutation_invariance_is_exact(seed, k):
    rng = np.random.default_rng(seed)
    cfg = _config(rng.uniform(-1, 1, (9, 2)), 1.0)
    h = Kernel(k, lambda t, m: np.sin(3 * t.sum(axis=(1, 2))) * indicator_kernel(k, 1.2).evaluate(t), 1.2)
    perm = rng.permutation(len(cfg))
    assert ustat_value(h, cfg) == ustat_value(h, cfg.permuted(perm))


@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_ordered_equals_factorial_times_subsets(seed, k):
    rng = np.random.default_rng(seed)
    cfg = _config(rng.uniform(-1, 1, (10, 1)), 1.0)
    count = sum(1 for s in itertools.combinations(range(10), k)
                if np.ptp(cfg.locations[list(s), 0]) <= 0.5)
    assert ustat_value(indicator_kernel(k, 0.5), cfg) == math.factorial(k) * count


def test_estimator_transform():
    u = UStatistic(edge_kernel(0.3)).fit()
    cfgs = [sample_poisson_pp(Window(1, 1.0), 10.0, seed=1, key=r) for r in range(3)]
    out = u.transform(cfgs)
    assert out.shape == (3, 1)
    assert out[1, 0] == ustat_value(edge_kernel(0.3), cfgs[1])
    assert u.get_params()["acceleration"] == "auto"


# -- projections ---------------------------------------------------------------

CTRL = Control(Window(1, 1.0), 1.0)


def test_top_level_projection_is_exact_passthrough():
    h = edge_kernel(0.5)
    f = project_kernel(h, 2, CTRL)
    t = np.array([[0.1], [0.3]])
    est = f.at(t)
    assert est.value == 0.5 and est.std_error == 0.0 and est.is_exact


@pytest.mark.parametrize("k,i", [(2, 1), (3, 1), (3, 2), (4, 2)])
def test_constant_projection(k, i):
    ctrl = Control(Window(2, 0.75), 1.5)
    f = project_kernel(constant_kernel(k, 2.0), i, ctrl)
    est = f.at(np.zeros((i, 2)))
    assert est.value == pytest.approx(math.comb(k, i) * 2.0 * ctrl.mass ** (k - i), rel=1e-12)


@pytest.mark.parametrize("x", [-0.9, -0.2, 0.35, 0.8])
def test_sign_kernel_first_projection_vanishes(x):
    # x = 0 is excluded: there the kernel is identically +1 (a null set)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnstableEstimateWarning)
        est = project_kernel(sign_kernel(), 1, CTRL, budget=20_000, seed=3).at([[x]])
    assert abs(est.value) <= 4 * est.std_error


def test_projection_standard_error_shrinks_with_budget():
    h = edge_kernel(0.4, 1.0)
    ses = [ChaosKernel(h, 1, CTRL, b, seed=2).at([[0.2]]).std_error for b in (1000, 4000, 16000)]
    for a, b in zip(ses, ses[1:]):
        assert 1.6 < a / b < 2.5


def test_projection_envelope_of_absolute_kernel():
    h = Kernel(2, lambda t, m: np.cos(7 * t[:, 0, 0] * t[:, 1, 0]), symmetric=True)
    f = ChaosKernel(h, 1, CTRL, 20_000, seed=1, unstable_rel_se=None)
    g = ChaosKernel(h.absolute(), 1, CTRL, 20_000, seed=1, unstable_rel_se=None)
    x = np.linspace(-0.9, 0.9, 7).reshape(-1, 1, 1)
    fv, _ = f.estimate(x)
    gv, _ = g.estimate(x)
    assert np.all(np.abs(fv) <= gv + 1e-12)


def test_projection_level_validated():
    with pytest.raises(ValueError):
        project_kernel(edge_kernel(0.1), 3, CTRL)


# -- chaos moments ---------------------------------------------------------------


def test_zero_kernel_moments():
    dec = chaos_moments(constant_kernel(2, 0.0), CTRL, budget=1000)
    assert dec.mean.value == 0 and dec.variance.value == 0


@pytest.mark.parametrize("V", [0.5, 1.0, 2.0])
def test_constant_kernel_chaos_variance_by_quadrature(V):
    ctrl = Control(Window.of_volume(1, V), 1.0)
    dec = chaos_moments(constant_kernel(2), ctrl, method="quadrature", nodes=3)
    assert dec.variance.value == pytest.approx(4 * V**3 + 2 * V**2, rel=1e-9)
    assert dec.mean.value == pytest.approx(V**2, rel=1e-9)
    recs = dec.to_records()
    assert [r["factorial_weight"] for r in recs] == [1, 2]
    assert set(recs[0]) == {"i", "norm_sq", "std_error", "factorial_weight"}


def test_mean_matches_replications():
    ctrl = Control(Window(1, 0.5), 30.0)
    h = edge_kernel(0.1)
    dec = chaos_moments(h, ctrl, budget=200_000, seed=1)
    vals = np.array([ustat_value(h, sample_poisson_pp(ctrl.window, 30.0, seed=8, key=r)) for r in range(4000)])
    se = math.hypot(vals.std(ddof=1) / math.sqrt(vals.size), dec.mean.std_error)
    assert abs(vals.mean() - dec.mean.value) <= 4 * se


def test_order_cap_for_variance_sums():
    with pytest.raises(ValueError):
        chaos_moments(constant_kernel(7), CTRL, budget=100)


# -- Hoeffding rank ------------------------------------------------------------------


@pytest.mark.parametrize("kernel,rank", [(sign_kernel(), 2), (constant_kernel(2), 1), (product_kernel(2), 2),
                                         (edge_kernel(0.3), 1)])
def test_hoeffding_rank(kernel, rank):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnstableEstimateWarning)
        assert detect_hoeffding_rank(kernel, CTRL, budget=40_000, seed=5) == rank


def test_degenerate_kernel_reported():
    with pytest.raises(DegenerateKernelError, match="degenerate to order > 2"):
        detect_hoeffding_rank(constant_kernel(2, 0.0), CTRL, budget=2000)
