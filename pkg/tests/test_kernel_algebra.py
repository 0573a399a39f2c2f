import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from poisson_ustat.kernel_algebra import (
    FullSpaceControl,
    KappaDensity,
    a_functional_quadrature,
    a_kappa_p,
    a_prime_p,
    admissible_quadruples,
    b3_bound,
    contract,
    contraction_envelope,
    contraction_norm_sq,
    flat_integral,
    inner_product,
    lp_asymptotic_ratio,
    omega_bruteforce,
    omega_diagnostics,
    power_integral,
    projection_inequality,
    rescaled_orders_inputs,
    verify_lp_rescaling,
    verify_rescaling,
)
from poisson_ustat.kernels import Kernel, constant_kernel, edge_kernel, gaussian_pair_kernel, indicator_kernel
from poisson_ustat.mc import UnstableEstimateWarning
from poisson_ustat.point_process import Control, Window
from poisson_ustat.ustat import project_kernel

W1 = Window(1, 0.5)
CTRL = Control(W1, 1.0)
CAUCHY = KappaDensity.cauchy_power(1, 1.0)


def _unit_indicator(s, m):
    return (np.abs(s[:, 0, 0]) <= 1).astype(float)


# -- contractions --------------------------------------------------------------


def test_inner_product_of_constants():
    ctrl = Control(Window(1, 1.5), 1.0)
    c = contract(constant_kernel(1), constant_kernel(1), 1, 1, ctrl)
    assert c.order == 0
    assert c.at().value == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("p,q,r,l", [(1, 1, 1, 0), (2, 1, 1, 1), (2, 2, 2, 1), (3, 2, 2, 2), (3, 3, 2, 0)])
def test_contraction_of_constants(p, q, r, l):
    ctrl = Control(Window(2, 0.6), 2.0)
    c = contract(constant_kernel(p, 1.5), constant_kernel(q, -2.0), r, l, ctrl, budget=64)
    t = np.zeros((c.order, 2))
    assert c.at(t).value == pytest.approx(1.5 * -2.0 * ctrl.mass**l, rel=1e-12)


def test_zero_contraction_is_tensor_product():
    c = contract(constant_kernel(1, 2.0), constant_kernel(1, 3.0), 0, 0, CTRL)
    est = c.at(np.zeros((2, 1)))
    assert est.value == 6.0 and est.std_error == 0.0


@pytest.mark.parametrize("r,l", [(2, 1), (1, 2), (-1, 0)])
def test_contraction_index_errors(r, l):
    with pytest.raises(ValueError):
        contract(constant_kernel(1), constant_kernel(2), r, l, CTRL)


def test_full_space_needs_a_radius():
    full = FullSpaceControl(1, 1.0)
    with pytest.raises(ValueError):
        contract(gaussian_pair_kernel(1.0), gaussian_pair_kernel(1.0), 1, 1, full)
    c = contract(edge_kernel(0.5, 1.0), gaussian_pair_kernel(1.0), 1, 1, full, budget=20_000)
    # int 1{|x - z| <= 1/2} exp(-(y - z)^2) dz at x = y = 0
    want = math.sqrt(math.pi) * math.erf(0.5)
    est = c.at(np.zeros((2, 1)))
    assert abs(est.value - want) <= 4 * est.std_error


def test_contraction_estimate_matches_quadrature():
    h = gaussian_pair_kernel(0.7)
    c = contract(h, h, 1, 1, CTRL, budget=40_000, seed=4)
    t = np.array([[[0.1], [-0.3]]])
    est = c.at(t[0])
    assert abs(est.value - c.quad(t, None, nodes=24)[0]) <= 4 * est.std_error


# -- contraction norms -----------------------------------------------------------


@pytest.mark.parametrize("p,q,r,l", [(1, 1, 1, 0), (2, 1, 1, 1), (2, 2, 1, 0), (2, 2, 2, 1), (3, 2, 2, 2)])
def test_constant_norms(p, q, r, l):
    ctrl = Control(Window(1, 0.75), 2.0)
    a, b = 1.5, -0.5
    exact = a * a * b * b * ctrl.mass ** (p + q - r + l)
    quad = contraction_norm_sq(constant_kernel(p, a), constant_kernel(q, b), r, l, ctrl, method="quadrature",
                               nodes=3)
    assert quad.value == pytest.approx(exact, rel=1e-9)
    mc = contraction_norm_sq(constant_kernel(p, a), constant_kernel(q, b), r, l, ctrl, budget=1000)
    assert mc.within(exact, abs_tol=1e-9 * exact)


@pytest.mark.parametrize("t", [0.1, 0.4, 0.9])
def test_indicator_norm(t):
    h = Kernel(1, lambda x, m: (x[:, 0, 0] <= -0.5 + t).astype(float))
    est = contraction_norm_sq(h, h, 1, 0, CTRL, budget=100_000, seed=2)
    assert abs(est.value - t) <= 4 * est.std_error


def test_full_contraction_is_squared_norm():
    h = gaussian_pair_kernel(0.6)
    full = contraction_norm_sq(h, h, 2, 2, CTRL, method="quadrature", nodes=16)
    sq = power_integral(h, 2, CTRL, method="quadrature", nodes=16).value ** 2
    assert full.value == pytest.approx(sq, rel=1e-9)


def test_inner_product_identity():
    h, g = gaussian_pair_kernel(0.6), edge_kernel(0.4, 1.0)
    c = contract(h, g, 2, 2, CTRL, budget=200_000, seed=1).at()
    direct = inner_product(h, g, CTRL, budget=200_000, seed=2)
    assert abs(c.value - direct.value) <= 4 * (c.std_error + direct.std_error)


def test_norm_quadrature_and_mc_agree():
    h = gaussian_pair_kernel(0.5)
    mc = contraction_norm_sq(h, h, 1, 1, CTRL, budget=200_000, seed=3)
    quad = contraction_norm_sq(h, h, 1, 1, CTRL, method="quadrature", nodes=12)
    assert abs(mc.value - quad.value) <= 4 * mc.std_error


def test_norm_rejects_full_space():
    with pytest.raises(ValueError):
        contraction_norm_sq(edge_kernel(0.1), edge_kernel(0.1), 1, 1, FullSpaceControl(1, 1.0))


def test_mc_is_deterministic_per_seed():
    h = edge_kernel(0.3)
    a = contraction_norm_sq(h, h, 1, 1, CTRL, budget=50_000, seed=9)
    b = contraction_norm_sq(h, h, 1, 1, CTRL, budget=50_000, seed=9)
    c = contraction_norm_sq(h, h, 1, 1, CTRL, budget=50_000, seed=10)
    assert a == b and a.value != c.value


# -- B3 --------------------------------------------------------------------------


def test_admissible_quadruples_exclude_degenerate_case():
    assert admissible_quadruples([1]) == []
    quads = admissible_quadruples([1, 2])
    assert (1, 1, 1, 1) not in quads
    assert set(quads) == {(1, 2, 1, 1), (2, 2, 1, 1), (2, 2, 2, 1)}


@pytest.mark.parametrize("c,V", [(1.0, 1.0), (2.0, 3.0), (0.5, 0.25)])
def test_b3_single_constant(c, V):
    res = b3_bound([constant_kernel(1, c)], 1.0, Control(Window.of_volume(1, V), 1.0), budget=100)
    assert res.value.value == pytest.approx(c * c * math.sqrt(V), rel=1e-12)
    assert res.to_records() == []


@given(st.floats(0.1, 10.0))
def test_b3_homogeneity(c):
    kernels = [(1, project_kernel(edge_kernel(0.3), 1, CTRL, budget=256)), (2, edge_kernel(0.3))]
    a = b3_bound(kernels, 1.0, CTRL, budget=2000, seed=1)
    b = b3_bound(kernels, c, CTRL, budget=2000, seed=1)
    assert b.value.value == pytest.approx(a.value.value / c, rel=1e-12)


def test_b3_input_errors():
    with pytest.raises(ValueError):
        b3_bound([], 1.0, CTRL)
    with pytest.raises(ValueError):
        b3_bound([edge_kernel(0.1)], 0.0, CTRL)
    with pytest.raises(ValueError):
        b3_bound([edge_kernel(0.1), constant_kernel(1)], 1.0, CTRL)


def test_b3_audit_records():
    res = b3_bound([constant_kernel(1), constant_kernel(2)], 1.0, CTRL, budget=100)
    recs = res.to_records()
    assert len(recs) == 3
    assert all(set(r) == {"i", "j", "r", "l", "value", "std_error", "n_samples"} for r in recs)


# -- rescaling ---------------------------------------------------------------------


def test_identity_rescaling():
    h = gaussian_pair_kernel(0.5)
    chk = verify_rescaling(h, h, 1.0, 1.0, 1.0, 1.0, 1, 1, W1, method="quadrature", nodes=10)
    assert chk.lhs.value == pytest.approx(chk.rhs.value, rel=1e-12)


@pytest.mark.parametrize("k,q,r,l", [(2, 2, 1, 1), (2, 1, 1, 1), (3, 2, 2, 1), (2, 2, 2, 2)])
def test_constant_rescaling_closed_form(k, q, r, l):
    a, b, alpha, lam = 1.5, 0.5, 2.0, 4.0
    chk = verify_rescaling(constant_kernel(k, a), constant_kernel(q, b), 1.0, 1.0, alpha, lam, r, l, W1,
                           method="quadrature", nodes=3)
    m = q + k - r - l
    exact = a * a * b * b * (lam * W1.volume) ** (m + 2 * l)
    assert chk.lhs.value == pytest.approx(exact, rel=1e-9)
    assert chk.rhs.value == pytest.approx(exact, rel=1e-9)


def test_indicator_rescaling():
    h = edge_kernel(0.3, 1.0)
    chk = verify_rescaling(h, h, 1.0, 1.0, 3.0, 2.0, 1, 1, W1, budget=200_000, seed=1)
    assert chk.consistent()


@given(st.floats(0.5, 3.0), st.floats(0.5, 4.0), st.floats(0.5, 2.0), st.integers(1, 2))
def test_lp_rescaling(alpha, lam, gamma, half_p):
    chk = verify_lp_rescaling(gaussian_pair_kernel(0.4), gamma, alpha, lam, 2 * half_p, W1, method="quadrature",
                              nodes=12)
    # both sides come from the same grid up to the dilation, so agreement is
    # limited only by quadrature error on different supports
    assert chk.lhs.value == pytest.approx(chk.rhs.value, rel=1e-6)


def test_rescaling_index_errors():
    with pytest.raises(ValueError):
        verify_rescaling(edge_kernel(0.1), edge_kernel(0.1), 1, 1, 1, 1, 1, 0, W1)


# -- kappa and A functionals -----------------------------------------------------


@pytest.mark.parametrize("d,eps", [(1, 1.0), (1, 0.5), (2, 1.0), (3, 2.0)])
def test_kappa_normalized_and_bounded(d, eps):
    kap = KappaDensity.cauchy_power(d, eps)
    assert kap.normalization() == pytest.approx(1.0, rel=0.01)
    t = np.random.default_rng(0).normal(scale=0.3, size=(1000, 1, d))
    vals = kap.joint_pdf(t)
    assert np.all(vals > 0) and np.all(vals <= kap.bound * (1 + 1e-12))


def test_kappa_sampler_matches_density():
    kap = KappaDensity.cauchy_power(2, 1.0)
    s = kap.sample(np.random.default_rng(1), 200_000, 1)[:, 0]
    frac = np.mean(np.linalg.norm(s, axis=1) <= 1.0)
    r = np.linspace(0, 1, 20001)
    dens = kap.joint_pdf(np.stack([r, np.zeros_like(r)], -1)[:, None, :])
    want = np.sum(2 * np.pi * r * dens) * (r[1] - r[0])
    assert abs(frac - want) <= 4 * math.sqrt(want * (1 - want) / 200_000) + 1e-4


def test_custom_kappa_normalization():
    kap = KappaDensity.custom(1, lambda t: 0.5 * np.exp(-np.abs(t[..., 0])),
                              lambda rng, n: rng.laplace(size=(n, 1)), 0.5)
    assert kap.normalization() == pytest.approx(1.0, rel=0.01)


def test_zero_kernel_a_functionals():
    zero = lambda s, m: np.zeros(s.shape[0])  # noqa: E731
    assert a_kappa_p(zero, CAUCHY, 2, 2, 1000).value == 0
    assert a_prime_p(zero, CAUCHY, 4, 2, 1000).value == 0


def test_a_functional_analytic_values():
    assert a_functional_quadrature(_unit_indicator, CAUCHY, 2, 2, 1.0) == pytest.approx(8 * math.pi / 3, rel=1e-9)
    a4 = a_functional_quadrature(_unit_indicator, CAUCHY, 4, 2, 1.0, prime=True)
    assert a4 == pytest.approx(math.pi**3 * 192 / 35, rel=1e-9)
    assert a_kappa_p(_unit_indicator, CAUCHY, 2, 2, 200_000, seed=1).within(8 * math.pi / 3)
    assert a_prime_p(_unit_indicator, CAUCHY, 4, 2, 200_000, seed=1).within(math.pi**3 * 192 / 35)


def test_a_prime_two_equals_a_two():
    a = a_kappa_p(_unit_indicator, CAUCHY, 2, 2, 10_000, seed=3)
    b = a_prime_p(_unit_indicator, CAUCHY, 2, 2, 10_000, seed=3)
    assert a == b


def test_unstable_a_functional_is_flagged():
    spike = lambda s, m: np.where(np.abs(s[:, 0, 0]) > 40, 1e6, 0.0)  # noqa: E731
    with pytest.warns(UnstableEstimateWarning):
        est = a_kappa_p(spike, CAUCHY, 2, 2, 200, seed=0)
    assert "unstable" in est.flags


STATIONARY = [edge_kernel(0.3), edge_kernel(0.3, 1.0), indicator_kernel(3, 0.4), gaussian_pair_kernel(0.3)]


@pytest.mark.parametrize("h", STATIONARY, ids=lambda h: f"{h.name}-{h.order}")
def test_projection_functionals_dominated(h):
    rows = projection_inequality(h.factorized(), CAUCHY, h.order, budget=100_000, seed=2)
    for row in rows:
        lhs, rhs = row["projection"], row["a_prime"]
        assert lhs.value <= rhs.value + 4 * (lhs.std_error + rhs.std_error), row


def test_binomially_weighted_projection_breaks_domination():
    # with the C(k, j) weight folded into the projection, j = 1 of the unit
    # edge kernel has A_2 = (2 * 2)^2 = 16 > 8 pi / 3
    rows = projection_inequality(_unit_indicator, CAUCHY, 2, budget=100_000, seed=2, binomial=True)
    row = next(r for r in rows if r["j"] == 1 and r["p"] == 2)
    assert row["projection"].within(16.0)
    assert row["projection"].value > row["a_prime"].value + 4 * row["a_prime"].std_error


PAIRS = [(h, g) for h in STATIONARY for g in STATIONARY if g.order <= h.order]


@pytest.mark.parametrize("h,g", PAIRS, ids=lambda k: f"{k.name}-{k.order}")
def test_contraction_envelope(h, g):
    w = Window(1, 1.0)
    for r in range(1, g.order + 1):
        for l in range(1, min(r, h.order - 1) + 1):
            lhs, bound = contraction_envelope(h, g, r, l, w, CAUCHY, budget=50_000, seed=1)
            assert lhs.value <= bound.value + 4 * (lhs.std_error + bound.std_error), (r, l)


def test_equal_index_envelope_is_not_scale_free():
    # lhs scales like c^4 and the r = l bound like c^6, so small kernels break it
    h = edge_kernel(0.3, 0.05)
    lhs, bound = contraction_envelope(h, h, 1, 1, Window(1, 1.0), CAUCHY, budget=50_000, seed=1)
    assert lhs.value > bound.value + 4 * (lhs.std_error + bound.std_error)


def test_envelope_needs_density_below_one():
    kap = KappaDensity.custom(1, lambda t: 2.0 * np.ones(t.shape[:-1]), lambda rng, n: rng.random((n, 1)), 2.0)
    with pytest.raises(ValueError):
        contraction_envelope(edge_kernel(0.1), edge_kernel(0.1), 1, 1, W1, kap)


@pytest.mark.parametrize("h", [edge_kernel(0.3, 1.0), indicator_kernel(3, 0.4)], ids=lambda h: h.name)
@pytest.mark.parametrize("p", [2, 4])
def test_lp_norm_ratio_tends_to_one(h, p):
    out = lp_asymptotic_ratio(h, p, Window(1, 0.5), CAUCHY, lambdas=(1, 2, 4, 8, 16, 32), budget=200_000)
    ratios = [e.value for _, e in out]
    assert all(b >= a - 4 * (ea.std_error + eb.std_error)
               for (a, (_, ea)), (b, (_, eb)) in zip(zip(ratios, out), zip(ratios[1:], out[1:])))
    assert abs(ratios[-1] - 1.0) <= 0.10


# -- omega -------------------------------------------------------------------------


def test_omega_degenerate():
    assert omega_diagnostics([1.0], [1], 1.0, 1.0, 1, 1.0) == (0.0, 1.0)


@given(
    st.lists(st.floats(0.1, 10.0), min_size=1, max_size=4),
    st.floats(0.1, 10.0),
    st.floats(0.1, 10.0),
    st.integers(1, 3),
    st.floats(0.1, 10.0),
)
def test_omega_matches_bruteforce(gammas, m, alpha, d, sigma):
    orders = list(range(1, len(gammas) + 1))
    fast = omega_diagnostics(gammas, orders, m, alpha, d, sigma)
    slow = omega_bruteforce(gammas, orders, m, alpha, d, sigma)
    assert fast == pytest.approx(slow, rel=1e-12)


@given(st.integers(2, 5), st.floats(0.05, 50.0), st.floats(0.2, 5.0), st.integers(1, 3))
def test_omega_geometric_case_split(k, m, alpha, d):
    gammas, orders, sigma = rescaled_orders_inputs(k, m, alpha, d)
    om, omp = omega_diagnostics(gammas, orders, m, alpha, d, sigma)
    split = alpha ** (-d) * (1.0 if m >= 1 else m ** (-k))
    exact_prime = alpha ** (-d) * (1.0 / m if m > 1 else m ** (-k))
    assert omp == pytest.approx(exact_prime, rel=1e-9)
    assert om <= split * (1 + 1e-9)
    assert om + omp <= 2 * split * (1 + 1e-9)


def test_omega_input_validation():
    with pytest.raises(ValueError):
        omega_diagnostics([1.0, 1.0], [2, 1], 1.0, 1.0, 1, 1.0)
    with pytest.raises(ValueError):
        omega_diagnostics([1.0], [1], 1.0, 1.0, 1, 0.0)


# -- flat integrals --------------------------------------------------------------


def test_flat_integral_backends_agree():
    h = gaussian_pair_kernel(0.5)
    ctrl = Control(Window(2, 0.5), 3.0)
    mc = flat_integral([(h, [0, 1]), (h, [1, 2])], 3, ctrl, budget=200_000, seed=1)
    quad = flat_integral([(h, [0, 1]), (h, [1, 2])], 3, ctrl, method="quadrature", nodes=6)
    assert abs(mc.value - quad.value) <= 4 * mc.std_error


def test_flat_integral_shard_independence():
    h = edge_kernel(0.2)
    a = flat_integral([(h, [0, 1])], 2, CTRL, budget=100_000, seed=5)
    b = flat_integral([(h, [0, 1])], 2, CTRL, budget=100_000, seed=5)
    assert a == b
