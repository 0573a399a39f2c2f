"""Contractions, contraction norms, the third-order bound ``B3``, dilation
identities, ``A``-functionals of stationary kernels and the omega diagnostics.

Integrals are flat products of kernel factors over a common set of variables.
The Monte Carlo backend draws every variable from the normalized control and
asks each factor for an unbiased value via ``factor.draw``; randomized factors
(projections, contractions) use fresh inner draws per occurrence, so products
stay unbiased. The quadrature backend tabulates ``factor.quad`` on a tensor
grid and contracts with ``einsum``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from ._random import stream
from .kernels import Kernel
from .mc import MCEstimate, QuadratureGrid, mc_mean, tensor_integrate
from .point_process import Control, MarkDistribution, Window

__all__ = [
    "FullSpaceControl",
    "flat_integral",
    "power_integral",
    "inner_product",
    "ContractedKernel",
    "contract",
    "contraction_norm_sq",
    "admissible_quadruples",
    "B3Result",
    "b3_bound",
    "RescalingCheck",
    "verify_rescaling",
    "verify_lp_rescaling",
    "KappaDensity",
    "a_kappa_p",
    "a_prime_p",
    "a_functional_quadrature",
    "a_projection",
    "projection_inequality",
    "contraction_envelope",
    "stationary_lp_norm",
    "lp_asymptotic_ratio",
    "omega_diagnostics",
    "omega_bruteforce",
    "rescaled_orders_inputs",
]


@dataclass(frozen=True)
class FullSpaceControl:
    """``intensity * Lebesgue`` on all of ``R^d`` (infinite mass)."""

    dim: int
    intensity: float = 1.0
    marks: MarkDistribution = field(default_factory=MarkDistribution.none)


def _marks_slice(m, ids):
    return None if m is None else m[:, ids]


# -- flat integrals ----------------------------------------------------------


def flat_integral(
    factors,
    nvars: int,
    control: Control,
    budget: int = 100_000,
    seed=0,
    key=(),
    method: str = "mc",
    nodes: int = 32,
    rule: str = "gauss",
    unstable_rel_se: Optional[float] = None,
) -> MCEstimate:
    """``int prod_f f(x_ids) d mu^nvars`` over the control measure.

    ``factors`` is a list of ``(kernel_like, var_ids)``.
    """
    if isinstance(control, FullSpaceControl):
        raise ValueError("integrals over the full space have infinite control mass; use a window")
    for f, ids in factors:
        if f.order != len(ids):
            raise ValueError(f"factor of order {f.order} given {len(ids)} variables")
    if nvars == 0:
        val = 1.0
        for f, _ in factors:
            val *= float(f.evaluate(np.zeros((1, 0, control.dim)), None)[0])
        return MCEstimate.exact(val)
    if method == "quadrature":
        grid = QuadratureGrid(control, nodes, rule)
        tabs = [(lambda t, m, f=f: f.quad(t, m, nodes, rule), list(ids)) for f, ids in factors]
        return MCEstimate.exact(tensor_integrate(tabs, nvars, grid))
    if method != "mc":
        raise ValueError(f"unknown integration method {method!r}")

    def sample(rng, n):
        t, m = control.sample(rng, n, nvars)
        out = np.ones(n)
        for f, ids in factors:
            ids = list(ids)
            out *= f.draw(t[:, ids], _marks_slice(m, ids), rng)
        return out

    return mc_mean(sample, budget, seed, key, scale=control.mass**nvars, unstable_rel_se=unstable_rel_se)


def power_integral(f, p: int, control, **kw) -> MCEstimate:
    """``int f^p`` for even ``p`` (each copy drawn independently)."""
    if p % 2:
        raise ValueError("power integrals are only unbiased for even p")
    ids = list(range(f.order))
    return flat_integral([(f, ids)] * p, f.order, control, **kw)


def inner_product(h, g, control, **kw) -> MCEstimate:
    if h.order != g.order:
        raise ValueError("inner product needs kernels of equal order")
    ids = list(range(h.order))
    return flat_integral([(h, ids), (g, ids)], h.order, control, **kw)


# -- contractions --------------------------------------------------------------


def _check_indices(p, q, r, l):
    if not (0 <= l <= r <= min(p, q)):
        raise ValueError(f"need 0 <= l <= r <= min(p, q); got p={p}, q={q}, r={r}, l={l}")


class ContractedKernel:
    """``h *_r^l g`` as a function of ``(y_{r-l}, x_{p-r}, x'_{q-r})``.

    Arguments are laid out as the ``r - l`` identified but not integrated
    variables first, then the remaining arguments of ``h``, then those of ``g``.
    """

    def __init__(self, h, g, r, l, control, budget=4096, seed=0):
        p, q = h.order, g.order
        _check_indices(p, q, r, l)
        if not (getattr(h, "symmetric", True) and getattr(g, "symmetric", True)):
            raise ValueError("contractions are defined for symmetric kernels")
        self.h, self.g, self.r, self.l = h, g, r, l
        self.control = control
        self.budget = int(budget)
        self.seed = seed
        self.order = p + q - r - l
        self.symmetric = False
        self.name = f"({h.name if hasattr(h, 'name') else 'h'})*_{r}^{l}({getattr(g, 'name', 'g')})"
        if isinstance(control, FullSpaceControl) and l > 0:
            self._full_space_anchor()

    def _full_space_anchor(self):
        p, q, l = self.h.order, self.g.order, self.l
        h_fixed = p - l  # y plus x arguments of h
        g_fixed = q - l
        for side, kern, nfixed in (("h", self.h, h_fixed), ("g", self.g, g_fixed)):
            rad = getattr(kern, "interaction_radius", None)
            if rad is not None and nfixed > 0:
                self._radius, self._anchor_side = rad, side
                return
        raise ValueError("full-space contraction needs a kernel with an interaction radius and a fixed argument")

    # layout helpers
    def _split(self, t, m):
        r, l = self.r, self.l
        p = self.h.order
        ny, nx = r - l, p - r
        y = t[:, :ny]
        x = t[:, ny : ny + nx]
        x2 = t[:, ny + nx :]
        if m is None:
            return (y, x, x2), (None, None, None)
        return (y, x, x2), (m[:, :ny], m[:, ny : ny + nx], m[:, ny + nx :])

    @staticmethod
    def _cat(parts, mparts):
        t = np.concatenate(parts, axis=1)
        if any(mp is None for mp in mparts):
            return t, None
        return t, np.concatenate(mparts, axis=1)

    def _sample_z(self, rng, t, n):
        """Integration variables ``z`` and the measure of their domain."""
        l = self.l
        ctrl = self.control
        if isinstance(ctrl, FullSpaceControl):
            (y, x, x2), _ = self._split(t, None)
            fixed = np.concatenate([y, x] if self._anchor_side == "h" else [y, x2], axis=1)
            anchor = fixed[:, 0]
            box = Window(ctrl.dim, self._radius)
            z = anchor[:, None, :] + box.uniform(rng, (n, l))
            zm = ctrl.marks.sample(rng, (n, l))
            mass = ctrl.intensity * box.volume
            return z, zm, mass
        z, zm = ctrl.sample(rng, n, l)
        return z, zm, ctrl.mass

    def _one_draw(self, t, m, rng):
        n = t.shape[0]
        (y, x, x2), (my, mx, mx2) = self._split(t, m)
        if self.l == 0:
            ht, hm = self._cat([y, x], [my, mx])
            gt, gm = self._cat([y, x2], [my, mx2])
            return self.h.draw(ht, hm, rng) * self.g.draw(gt, gm, rng)
        z, zm, mass = self._sample_z(rng, t, n)
        ht, hm = self._cat([z, y, x], [zm, my, mx])
        gt, gm = self._cat([z, y, x2], [zm, my, mx2])
        return mass**self.l * self.h.draw(ht, hm, rng) * self.g.draw(gt, gm, rng)

    def draw(self, t, m, rng):
        return self._one_draw(np.asarray(t, float), m, rng)

    def estimate(self, t, m=None):
        """Per-point ``(values, std_errors)`` from ``budget`` draws each."""
        t = np.asarray(t, float)
        if t.ndim == 2:
            t = t[None]
        n = t.shape[0]
        if self.l == 0 and _is_exact(self.h) and _is_exact(self.g):
            return self._one_draw(t, m, None), np.zeros(n)
        b = self.budget
        rng = stream(self.seed, 104729)
        tt = np.repeat(t, b, axis=0)
        mm = None if m is None else np.repeat(np.asarray(m, float).reshape(n, -1), b, axis=0)
        v = self._one_draw(tt, mm, rng).reshape(n, b)
        return v.mean(axis=1), v.std(axis=1, ddof=1) / math.sqrt(b)

    def evaluate(self, t, m=None):
        return self.estimate(t, m)[0]

    __call__ = evaluate

    def at(self, t=None, m=None) -> MCEstimate:
        """Estimate at a single argument tuple (``None`` for order zero)."""
        d = self.control.dim
        t = np.zeros((1, 0, d)) if t is None else np.asarray(t, float).reshape(1, self.order, d)
        m = None if m is None else np.asarray(m, float).reshape(1, self.order)
        v, se = self.estimate(t, m)
        exact = se[0] == 0
        return MCEstimate(float(v[0]), float(se[0]), 0 if exact else self.budget)

    def quad(self, t, m, nodes=32, rule="gauss"):
        if isinstance(self.control, FullSpaceControl):
            raise ValueError("quadrature is only available on windows")
        (y, x, x2), (my, mx, mx2) = self._split(t, m)
        if self.l == 0:
            ht, hm = self._cat([y, x], [my, mx])
            gt, gm = self._cat([y, x2], [my, mx2])
            return self.h.quad(ht, hm, nodes, rule) * self.g.quad(gt, gm, nodes, rule)
        grid = QuadratureGrid(self.control, nodes, rule)
        zt, zm = grid.product(self.l)
        zw = np.ones(1)
        for _ in range(self.l):
            zw = np.multiply.outer(zw, grid.w).reshape(-1)
        n, gz = t.shape[0], zt.shape[0]

        def rep(a):
            return None if a is None else np.repeat(a, gz, axis=0)

        def til(a):
            return None if a is None else np.tile(a, (n,) + (1,) * (a.ndim - 1))

        ht, hm = self._cat([til(zt), rep(y), rep(x)], [til(zm), rep(my), rep(mx)])
        gt, gm = self._cat([til(zt), rep(y), rep(x2)], [til(zm), rep(my), rep(mx2)])
        prod = self.h.quad(ht, hm, nodes, rule) * self.g.quad(gt, gm, nodes, rule)
        return prod.reshape(n, gz) @ zw


def _is_exact(f) -> bool:
    return isinstance(f, Kernel) or getattr(f, "is_exact", False)


def contract(h, g, r: int, l: int, control, budget: int = 4096, seed=0) -> ContractedKernel:
    """The contraction ``h *_r^l g`` (``r`` identified, ``l`` integrated)."""
    return ContractedKernel(h, g, r, l, control, budget, seed)


def contraction_norm_sq(h, g, r: int, l: int, control, budget: int = 200_000, seed=0, key=(), **kw) -> MCEstimate:
    """Squared norm of ``h *_r^l g`` as one flat integral in ``p + q - r + l`` variables.

    Variables: ``x`` (p-r), ``x'`` (q-r), ``y`` (r-l), ``z`` (l), ``z'`` (l); the
    integrand is ``h(z,y,x) g(z,y,x') h(z',y,x) g(z',y,x')``.
    """
    p, q = h.order, g.order
    _check_indices(p, q, r, l)
    if isinstance(control, FullSpaceControl):
        raise ValueError("contraction norms need a finite window (full-space control has infinite mass)")
    counter = itertools.count()

    def take(n):
        return [next(counter) for _ in range(n)]

    x, x2, y, z, z2 = take(p - r), take(q - r), take(r - l), take(l), take(l)
    nvars = next(counter)
    factors = [(h, z + y + x), (g, z + y + x2), (h, z2 + y + x), (g, z2 + y + x2)]
    return flat_integral(factors, nvars, control, budget, seed, key, **kw)


# -- B3 ----------------------------------------------------------------------


def admissible_quadruples(orders: Sequence[int]):
    """``(i, j, r, l)`` (1-based list positions) with ``1 <= l <= r <= q_i <= q_j``,
    ``i <= j`` and ``l != q_j``."""
    out = []
    n = len(orders)
    for i in range(n):
        for j in range(i, n):
            qi, qj = orders[i], orders[j]
            for r in range(1, qi + 1):
                for l in range(1, r + 1):
                    if l != qj:
                        out.append((i + 1, j + 1, r, l))
    return out


@dataclass(frozen=True)
class B3Result:
    value: MCEstimate
    raw: MCEstimate
    sigma: float
    audit: tuple
    l4_terms: tuple

    def to_records(self) -> list:
        return [dict(rec) for rec in self.audit]


def _check_orders(orders):
    if any(b <= a for a, b in zip(orders, orders[1:])):
        raise ValueError(f"kernel orders must be strictly increasing, got {orders}")


def b3_bound(kernels, sigma: float, control, budget: int = 200_000, seed=0, **kw) -> B3Result:
    """``(1/sigma) [max_(quadruples) ||f_i *_r^l f_j|| + max_i ||f_i||_{L^4}^2]``.

    ``kernels`` is a list of kernels (or ``(order, kernel)`` pairs) with
    strictly increasing orders.
    """
    if not kernels:
        raise ValueError("b3_bound needs at least one kernel")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    fs = [k[1] if isinstance(k, tuple) else k for k in kernels]
    orders = [k[0] if isinstance(k, tuple) else k.order for k in kernels]
    for q, f in zip(orders, fs):
        if q != f.order:
            raise ValueError(f"declared order {q} differs from kernel order {f.order}")
    _check_orders(orders)
    audit = []
    best = None
    for i, j, r, l in admissible_quadruples(orders):
        nsq = contraction_norm_sq(fs[i - 1], fs[j - 1], r, l, control, budget, seed, (1, i, j, r, l), **kw)
        norm = nsq.sqrt()
        audit.append({"i": i, "j": j, "r": r, "l": l, **norm.to_dict()})
        if best is None or norm.value > best.value:
            best = norm
    l4 = []
    for i, f in enumerate(fs):
        l4.append(power_integral(f, 4, control, budget=budget, seed=seed, key=(2, i + 1), **kw).sqrt())
    best_l4 = max(l4, key=lambda e: e.value)
    raw = best_l4 if best is None else best + best_l4
    return B3Result(raw.scaled(1.0 / sigma), raw, float(sigma), tuple(audit), tuple(l4))


# -- dilation identities -----------------------------------------------------


@dataclass(frozen=True)
class RescalingCheck:
    lhs: MCEstimate
    rhs: MCEstimate
    factor: float

    @property
    def discrepancy(self) -> float:
        return abs(self.lhs.value - self.rhs.value)

    @property
    def combined_se(self) -> float:
        return self.lhs.std_error + self.rhs.std_error

    def consistent(self, n_se: float = 4.0, rel: float = 0.0) -> bool:
        scale = max(abs(self.lhs.value), abs(self.rhs.value))
        return self.discrepancy <= max(n_se * self.combined_se, rel * scale)


def verify_rescaling(
    h, h2, gamma, gamma2, alpha, lam, r, l, window: Window, budget=200_000, seed=0,
    marks: MarkDistribution = None, **kw,
) -> RescalingCheck:
    """Squared contraction norms of dilated kernels versus the rescaled originals.

    ``lhs = ||f *_r^l f'||^2`` under ``lam * Lebesgue`` on ``window`` with
    ``f(x) = gamma h(alpha x)``; ``rhs = gamma^2 gamma2^2 (lam alpha^-d)^(m+2l)``
    times the same norm of ``h, h2`` under Lebesgue on ``alpha * window``,
    where ``m = q + k - r - l``. The two sides use independent streams.
    """
    k, q = h.order, h2.order
    if not (1 <= l <= r <= q <= k):
        raise ValueError(f"need 1 <= l <= r <= q <= k; got k={k}, q={q}, r={r}, l={l}")
    marks = MarkDistribution.none() if marks is None else marks
    d = window.dim
    m_ = q + k - r - l
    factor = gamma**2 * gamma2**2 * (lam * alpha ** (-d)) ** (m_ + 2 * l)
    f, f2 = h.rescaled(gamma, alpha), h2.rescaled(gamma2, alpha)
    lhs = contraction_norm_sq(f, f2, r, l, Control(window, lam, marks), budget, seed, (11,), **kw)
    base = contraction_norm_sq(h, h2, r, l, Control(window.dilate(alpha), 1.0, marks), budget, seed, (12,), **kw)
    return RescalingCheck(lhs, base.scaled(factor), factor)


def verify_lp_rescaling(
    h, gamma, alpha, lam, p, window: Window, budget=200_000, seed=0, marks: MarkDistribution = None, **kw
) -> RescalingCheck:
    """``||gamma h(alpha .)||_p^p`` under ``mu_lam`` versus ``gamma^p (lam alpha^-d)^k ||h||_p^p``."""
    marks = MarkDistribution.none() if marks is None else marks
    k, d = h.order, window.dim
    factor = gamma**p * (lam * alpha ** (-d)) ** k
    lhs = power_integral(h.rescaled(gamma, alpha), p, Control(window, lam, marks), budget=budget, seed=seed,
                         key=(21,), **kw)
    base = power_integral(h, p, Control(window.dilate(alpha), 1.0, marks), budget=budget, seed=seed, key=(22,), **kw)
    return RescalingCheck(lhs, base.scaled(factor), factor)


# -- A functionals -----------------------------------------------------------


def _unit_sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


class KappaDensity:
    """A positive probability density on ``R^d`` used as an importance proposal.

    Parameters
    ----------
    dim : int
    pdf : callable
        ``pdf(t)`` for ``t`` of shape ``(N, d)``.
    sampler : callable
        ``sampler(rng, n)`` returning ``(n, d)`` draws.
    bound : float
        Upper bound on ``pdf``.
    radial : callable, optional
        Radial profile ``f(r)`` when the density depends on ``|t|`` only; used
        for the normalization check.
    """

    def __init__(self, dim, pdf, sampler, bound, name="kappa", radial=None):
        self.dim = int(dim)
        self.pdf = pdf
        self.sampler = sampler
        self.bound = float(bound)
        self.name = name
        self.radial = radial

    @classmethod
    def cauchy_power(cls, dim: int, eps: float = 1.0) -> "KappaDensity":
        """Density proportional to ``(1 + |t|^(d + eps))^-1``."""
        d, s = int(dim), float(dim) + float(eps)
        if not eps > 0:
            raise ValueError("eps must be positive")
        norm = 1.0 / (_unit_sphere_area(d) * (math.pi / s) / math.sin(math.pi * d / s))
        a = d / s

        def radial(r):
            return norm / (1.0 + np.asarray(r, float) ** s)

        def pdf(t):
            return radial(np.linalg.norm(np.asarray(t, float), axis=-1))

        def sampler(rng, n):
            # beta prime ratio; the floor avoids 0 from tiny-shape gammas
            g1 = rng.standard_gamma(a, size=n)
            g2 = np.maximum(rng.standard_gamma(1.0 - a, size=n), np.finfo(float).tiny)
            r = (g1 / g2) ** (1.0 / s)
            u = rng.normal(size=(n, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            return u * r[:, None]

        return cls(d, pdf, sampler, norm, f"cauchy_power(d={d}, eps={eps})", radial)

    @classmethod
    def custom(cls, dim, pdf, sampler, bound, name="custom") -> "KappaDensity":
        return cls(dim, pdf, sampler, bound, name)

    def joint_pdf(self, t: np.ndarray) -> np.ndarray:
        """Product density over the middle axis of ``t`` (shape ``(N, j, d)``)."""
        if t.shape[1] == 0:
            return np.ones(t.shape[0])
        return np.prod(self.pdf(t.reshape(-1, self.dim)).reshape(t.shape[:2]), axis=1)

    def sample(self, rng, n, nvars):
        if nvars == 0:
            return np.zeros((n, 0, self.dim))
        return self.sampler(rng, n * nvars).reshape(n, nvars, self.dim)

    def normalization(self, half_width: float = 50.0, nodes: int = 400) -> float:
        """Total mass, by radial quadrature or a tensor midpoint rule on a box."""
        if self.radial is not None:
            area = _unit_sphere_area(self.dim)
            val, _ = integrate.quad(lambda r: area * r ** (self.dim - 1) * float(self.radial(r)), 0, np.inf,
                                    limit=200)
            return float(val)
        x = (np.arange(nodes) + 0.5) / nodes * 2 * half_width - half_width
        mesh = np.stack([a.reshape(-1) for a in np.meshgrid(*[x] * self.dim, indexing="ij")], axis=-1)
        return float(self.pdf(mesh).sum() * (2 * half_width / nodes) ** self.dim)


def _a_generic(hbar, kappa, p, k, budget, marks, seed, key, weight_power, unstable_rel_se):
    marks = MarkDistribution.none() if marks is None else marks

    def sample(rng, n):
        s = kappa.sample(rng, n, k - 1)
        m = marks.sample(rng, (n, k))
        val = np.asarray(hbar(s, m), float) ** p
        dens = kappa.joint_pdf(s)
        return np.where(val == 0, 0.0, val / np.where(val == 0, 1.0, dens) ** weight_power)

    return mc_mean(sample, budget, seed, key, unstable_rel_se=unstable_rel_se)


def a_kappa_p(hbar, kappa: KappaDensity, p: int, k: int, budget: int = 200_000, marks=None, seed=0, key=(),
              unstable_rel_se: float = 0.5) -> MCEstimate:
    """``int kappa_{k-1}^-1 hbar^p`` by importance sampling from ``kappa_{k-1}``."""
    return _a_generic(hbar, kappa, p, k, budget, marks, seed, (31, 2) + tuple(key), 2, unstable_rel_se)


def a_prime_p(hbar, kappa: KappaDensity, p: int, k: int, budget: int = 200_000, marks=None, seed=0, key=(),
              unstable_rel_se: float = 0.5) -> MCEstimate:
    """``int kappa_{k-1}^(1-p) hbar^p`` by importance sampling from ``kappa_{k-1}``."""
    # keyed by the density exponent, so p = 2 shares the stream of a_kappa_p
    return _a_generic(hbar, kappa, p, k, budget, marks, seed, (31, p) + tuple(key), p, unstable_rel_se)


def a_functional_quadrature(hbar, kappa: KappaDensity, p: int, k: int, support_half_width: float,
                            marks=None, nodes: int = 64, prime: bool = False) -> float:
    """Gauss-Legendre value of ``A_p`` (or ``A'_p``) when ``hbar`` vanishes
    outside ``[-w, w]^(d(k-1))`` and marks have finitely many atoms."""
    marks = MarkDistribution.none() if marks is None else marks
    d, j = kappa.dim, k - 1
    x, w = np.polynomial.legendre.leggauss(nodes)
    x, w = x * support_half_width, w * support_half_width
    n_ax = d * j
    if n_ax:
        mesh = np.stack([a.reshape(-1) for a in np.meshgrid(*[x] * n_ax, indexing="ij")], axis=-1)
        wt = np.ones(1)
        for _ in range(n_ax):
            wt = np.multiply.outer(wt, w).reshape(-1)
        s = mesh.reshape(-1, j, d)
    else:
        s, wt = np.zeros((1, 0, d)), np.ones(1)
    power = (p - 1) if prime else 1
    dens = kappa.joint_pdf(s) ** power
    if marks.is_none:
        return float(np.sum(wt * np.asarray(hbar(s, None), float) ** p / dens))
    vals, probs = marks.atoms()
    total = 0.0
    for combo in itertools.product(range(vals.size), repeat=k):
        m = np.broadcast_to(vals[list(combo)], (s.shape[0], k))
        total += np.prod(probs[list(combo)]) * np.sum(wt * np.asarray(hbar(s, m), float) ** p / dens)
    return float(total)


def a_projection(hbar, kappa: KappaDensity, p: int, k: int, j: int, budget: int = 200_000, marks=None,
                 seed=0, binomial: bool = False, unstable_rel_se: float = 0.5) -> MCEstimate:
    """``A_p`` of the level-``j`` projection of a factorized kernel.

    The projection integrates ``hbar`` over its last ``k - j`` points (spatial
    and mark); it carries the factor ``C(k, j)`` only when ``binomial`` is set.
    Each of the ``p`` copies of the projection is estimated by an independent
    importance-sampled inner draw, so the product is unbiased.
    """
    if not 1 <= j <= k:
        raise ValueError("projection level must lie in [1, k]")
    marks = MarkDistribution.none() if marks is None else marks
    weight = math.comb(k, j) if binomial else 1.0
    n_outer, n_inner = j - 1, k - j

    def sample(rng, n):
        s = kappa.sample(rng, n, n_outer)
        m = marks.sample(rng, (n, j))
        out = weight**p / kappa.joint_pdf(s) ** 2 if n_outer else np.full(n, weight**p)
        for _ in range(p):
            u = kappa.sample(rng, n, n_inner)
            mu = marks.sample(rng, (n, n_inner))
            full_s = np.concatenate([s, u], axis=1)
            full_m = None if m is None else np.concatenate([m, mu], axis=1)
            out = out * np.asarray(hbar(full_s, full_m), float) / kappa.joint_pdf(u)
        return out

    return mc_mean(sample, budget, seed, (33, j, p, int(binomial)), unstable_rel_se=unstable_rel_se)


def projection_inequality(hbar, kappa, k, budget=200_000, marks=None, seed=0, binomial=False):
    """Pairs ``(A_p(hbar_j), A'_p(hbar))`` for ``j = 1..k`` and ``p = 2, 4``."""
    rows = []
    for p in (2, 4):
        ap = a_prime_p(hbar, kappa, p, k, budget, marks, seed)
        for j in range(1, k + 1):
            rows.append({"j": j, "p": p, "projection": a_projection(hbar, kappa, p, k, j, budget, marks, seed,
                                                                     binomial), "a_prime": ap})
    return rows


def contraction_envelope(h: Kernel, g: Kernel, r: int, l: int, window: Window, kappa: KappaDensity,
                         budget: int = 200_000, seed=0):
    """Squared contraction norm on ``window`` (Lebesgue) and its ``A``-functional bound.

    The bound is ``vol * sqrt(A4(hbar) A4(gbar))`` when ``r > l`` and
    ``vol * sqrt(A2(hbar) A4(hbar) A2(gbar) A4(gbar))`` when ``r = l``.
    """
    k, q = h.order, g.order
    if not (1 <= l <= r <= q <= k and l <= k - 1):
        raise ValueError(f"need 1 <= l <= r <= q <= k with l <= k-1; got k={k}, q={q}, r={r}, l={l}")
    if kappa.bound > 1:
        raise ValueError("the bound needs a density bounded by 1")
    lhs = contraction_norm_sq(h, g, r, l, Control(window), budget, seed, (41,))
    hb, gb = h.factorized(), g.factorized()
    a4h = a_kappa_p(hb, kappa, 4, k, budget, seed=seed, key=(1,))
    a4g = a_kappa_p(gb, kappa, 4, q, budget, seed=seed, key=(2,))
    factors = [a4h, a4g]
    if r == l:
        factors += [a_kappa_p(hb, kappa, 2, k, budget, seed=seed, key=(3,)),
                    a_kappa_p(gb, kappa, 2, q, budget, seed=seed, key=(4,))]
    prod = math.prod(f.value for f in factors)
    rel = math.sqrt(sum((f.std_error / f.value) ** 2 for f in factors if f.value))
    bound = window.volume * math.sqrt(prod)
    return lhs, MCEstimate(bound, 0.5 * rel * bound, min(f.n_samples for f in factors))


def stationary_lp_norm(h: Kernel, p: int, window: Window, kappa: KappaDensity, budget=400_000, seed=0, key=()):
    """``int_{window^k} h^p`` for a stationary kernel, sampling the first point
    uniformly and the offsets of the others from ``kappa``."""
    k = h.order
    hb = h.factorized()

    def sample(rng, n):
        x = window.uniform(rng, n)
        s = kappa.sample(rng, n, k - 1)
        inside = np.all(window.contains(x[:, None, :] + s), axis=1) if k > 1 else np.ones(n, bool)
        val = np.asarray(hb(s, None), float) ** p
        return np.where(inside, val / kappa.joint_pdf(s), 0.0)

    return mc_mean(sample, budget, seed, (51,) + tuple(key), scale=window.volume)


def lp_asymptotic_ratio(h: Kernel, p: int, window: Window, kappa: KappaDensity, lambdas=(1, 2, 4, 8, 16),
                        budget=400_000, seed=0):
    """``||h||_p^p`` on ``(lam^(1/d) window)^k`` over ``lam vol ||hbar||_p^p``, per ``lam``.

    The denominator is integrated over all of space by importance sampling.
    """
    d = window.dim
    k = h.order
    hb = h.factorized()
    # ||hbar||_p^p = E_kappa[hbar^p / kappa]
    denom = mc_mean(lambda rng, n: _ratio_inner(hb, kappa, p, k, rng, n), budget, seed, (52,))
    out = []
    for i, lam in enumerate(lambdas):
        w = window.dilate(lam ** (1.0 / d))
        num = stationary_lp_norm(h, p, w, kappa, budget, seed, (i,))
        base = lam * window.volume * denom.value
        ratio = num.value / base
        se = ratio * math.hypot(num.relative_error, denom.relative_error)
        out.append((float(lam), MCEstimate(ratio, se, num.n_samples)))
    return out


def _ratio_inner(hb, kappa, p, k, rng, n):
    s = kappa.sample(rng, n, k - 1)
    return np.asarray(hb(s, None), float) ** p / kappa.joint_pdf(s)


# -- omega diagnostics -------------------------------------------------------


def _check_omega_inputs(gammas, orders, m_lam, alpha, sigma):
    if len(gammas) != len(orders) or not orders:
        raise ValueError("need one gamma per order")
    _check_orders(list(orders))
    for name, v in (("m", m_lam), ("alpha", alpha), ("sigma", sigma)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if any(not g > 0 for g in gammas):
        raise ValueError("gammas must be positive")


def omega_diagnostics(gammas, orders, m_lambda, alpha_lambda, d, sigma):
    """``(omega, omega')``: the closed-form maxima controlling ``B3`` for
    dilated kernels ``gamma_i h_i``. ``omega`` is 0 on an empty quadruple set."""
    _check_omega_inputs(gammas, orders, m_lambda, alpha_lambda, sigma)
    lead = alpha_lambda**d / sigma**4
    quads = admissible_quadruples(list(orders))
    terms = [
        (gammas[i - 1] * gammas[j - 1]) ** 2 * m_lambda ** (orders[i - 1] + orders[j - 1] - r + l)
        for i, j, r, l in quads
    ]
    omega = lead * max(terms) if terms else 0.0
    omega_p = lead * max(g**4 * m_lambda**q for g, q in zip(gammas, orders))
    return float(omega), float(omega_p)


def omega_bruteforce(gammas, orders, m_lambda, alpha_lambda, d, sigma):
    """Same quantities by looping over every index combination and filtering."""
    _check_omega_inputs(gammas, orders, m_lambda, alpha_lambda, sigma)
    n = len(orders)
    top = max(orders)
    omega = 0.0
    for i, j, r, l in itertools.product(range(n), range(n), range(1, top + 1), range(1, top + 1)):
        qi, qj = orders[i], orders[j]
        if i <= j and l <= r <= qi <= qj and l != qj:
            val = (gammas[i] * gammas[j]) ** 2 * m_lambda ** (qi + qj - r + l) * alpha_lambda**d / sigma**4
            omega = max(omega, val)
    omega_p = 0.0
    for i in range(n):
        omega_p = max(omega_p, gammas[i] ** 4 * m_lambda ** orders[i] * alpha_lambda**d / sigma**4)
    return omega, omega_p


def rescaled_orders_inputs(k: int, m_lambda: float, alpha_lambda: float, d: int):
    """Inputs for a dilated order-``k`` U-statistic: orders ``1..k``,
    ``gamma_i = m^(k-i)`` and ``sigma^2 = alpha^d m^(2k-1) max(1, m^(1-k))``."""
    orders = list(range(1, k + 1))
    gammas = [m_lambda ** (k - i) for i in orders]
    sigma = math.sqrt(alpha_lambda**d * m_lambda ** (2 * k - 1) * max(1.0, m_lambda ** (1 - k)))
    return gammas, orders, sigma
