"""Geometric statistics of point configurations: induced subgraph counts of the
disk graph, weighted edge mass of a boolean model with ball grains, and
coverage simplex counts with random ranges.

Disk-graph edges join points at distance in the open interval ``(0, t)``;
grain intersection and coverage use closed inequalities.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from sklearn.base import BaseEstimator, TransformerMixin

from .kernels import Kernel, pairwise_distances
from .mc import MCEstimate, mc_mean
from .neighbors import all_subsets, brute_pairs, cliques, connected_subsets, neighbor_pairs
from .point_process import MarkDistribution, PointConfiguration
from .ustat import _canonical_rank

__all__ = [
    "PatternGraph",
    "pattern_kernel",
    "subgraph_count",
    "RadialWeight",
    "boolean_kernel",
    "boolean_edge_mass",
    "chi_nu",
    "chi_nu_quadrature",
    "BooleanMeanDivergenceWarning",
    "boolean_mean",
    "boolean_clt_condition",
    "simplex_kernel",
    "simplex_count",
    "tail_moment_condition",
    "RegimeSpec",
    "regime_sequence",
    "variance_scale",
    "clt_rate_scale",
    "SubgraphCounter",
    "BooleanEdgeMass",
    "SimplexCounter",
]


# -- patterns ----------------------------------------------------------------


def _pair_slots(k):
    return list(itertools.combinations(range(k), 2))


class PatternGraph:
    """Connected simple graph on ``k`` vertices (``2 <= k <= 6``).

    Isomorphism is decided by the set of adjacency codes over all vertex
    relabelings; the code of a labeled graph sets bit ``e`` for the ``e``-th pair
    ``(a, b)``, ``a < b``, in lexicographic order.
    """

    def __init__(self, k: int, edges):
        k = int(k)
        if not 2 <= k <= 6:
            raise ValueError(f"pattern order must lie in [2, 6], got {k}")
        es = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError("patterns cannot have self-loops")
            if not (0 <= a < k and 0 <= b < k):
                raise ValueError(f"edge ({a}, {b}) outside vertex range 0..{k - 1}")
            es.add((min(a, b), max(a, b)))
        self.k = k
        self.edges = tuple(sorted(es))
        if not self.connected:
            raise ValueError("pattern graph must be connected")
        self.degrees = tuple(sorted(sum(v in e for e in self.edges) for v in range(k)))
        self.codes = frozenset(self._codes())

    @property
    def connected(self) -> bool:
        seen, todo = {0}, [0]
        while todo:
            v = todo.pop()
            for a, b in self.edges:
                for u, w in ((a, b), (b, a)):
                    if u == v and w not in seen:
                        seen.add(w)
                        todo.append(w)
        return len(seen) == self.k

    def _codes(self):
        slot = {p: e for e, p in enumerate(_pair_slots(self.k))}
        out = set()
        for perm in itertools.permutations(range(self.k)):
            code = 0
            for a, b in self.edges:
                u, v = perm[a], perm[b]
                code |= 1 << slot[(min(u, v), max(u, v))]
            out.add(code)
        return out

    def matches_codes(self, codes: np.ndarray) -> np.ndarray:
        return np.isin(codes, np.fromiter(self.codes, np.int64))

    def is_isomorphic(self, other: "PatternGraph") -> bool:
        if other.k != self.k or len(other.edges) != len(self.edges) or other.degrees != self.degrees:
            return False
        return bool(self.codes & other.codes)

    @classmethod
    def complete(cls, k):
        return cls(k, _pair_slots(k))

    @classmethod
    def path(cls, k):
        return cls(k, [(i, i + 1) for i in range(k - 1)])

    @classmethod
    def cycle(cls, k):
        return cls(k, [(i, (i + 1) % k) for i in range(k)])

    @classmethod
    def star(cls, k):
        return cls(k, [(0, i) for i in range(1, k)])

    @classmethod
    def from_spec(cls, spec) -> "PatternGraph":
        """``"K3"``, ``"P4"``, ``"C4"``, ``"S4"`` or ``{"k": .., "edges": [[a, b], ..]}``."""
        if isinstance(spec, PatternGraph):
            return spec
        if isinstance(spec, dict):
            return cls(spec["k"], spec["edges"])
        kinds = {"K": cls.complete, "P": cls.path, "C": cls.cycle, "S": cls.star}
        s = str(spec).strip().upper()
        if len(s) >= 2 and s[0] in kinds and s[1:].isdigit():
            return kinds[s[0]](int(s[1:]))
        raise ValueError(f"unknown pattern {spec!r}")

    def __eq__(self, other):
        return isinstance(other, PatternGraph) and self.k == other.k and self.edges == other.edges

    def __hash__(self):
        return hash((self.k, self.edges))

    def __repr__(self):
        return f"PatternGraph(k={self.k}, edges={list(self.edges)})"


def _codes_from_distances(dist: np.ndarray, t: float) -> np.ndarray:
    """Adjacency codes from per-subset distance matrices ``(M, k, k)``."""
    k = dist.shape[1]
    code = np.zeros(dist.shape[0], np.int64)
    for e, (a, b) in enumerate(_pair_slots(k)):
        dab = dist[:, a, b]
        code |= ((dab > 0) & (dab < t)).astype(np.int64) << e
    return code


def pattern_kernel(pattern: PatternGraph, t: float, normalized: bool = True) -> Kernel:
    """Indicator that the induced disk graph at threshold ``t`` is isomorphic to
    ``pattern``, divided by ``k!`` when ``normalized``."""
    k, t = pattern.k, float(t)
    scale = 1.0 / math.factorial(k) if normalized else 1.0

    def func(x, m):
        codes = _codes_from_distances(pairwise_distances(x), t)
        return scale * pattern.matches_codes(codes)

    return Kernel(k, func, (k - 1) * t, True, True, f"pattern{pattern.edges}@{t}")


def _open_edges(points, t, acceleration):
    if acceleration == "grid":
        i, j = neighbor_pairs(points, t, closed=False)
    else:
        i, j = brute_pairs(points, t, closed=False)
    diff = points[i] - points[j]
    keep = np.any(diff != 0, axis=1)
    return i[keep], j[keep]


def subgraph_count(config: PointConfiguration, t: float, pattern: PatternGraph, acceleration: str = "grid") -> int:
    """Number of ``k``-subsets whose induced disk graph is isomorphic to ``pattern``."""
    if not t > 0:
        raise ValueError("threshold t must be positive")
    if not isinstance(pattern, PatternGraph):
        pattern = PatternGraph.from_spec(pattern)
    k, n = pattern.k, len(config)
    pts = config.locations
    if k > n:
        return 0
    if acceleration == "brute_force":
        subsets = all_subsets(n, k)
        if subsets.shape[0] == 0:
            return 0
        count = 0
        for s in range(0, subsets.shape[0], 1 << 16):
            rows = subsets[s : s + (1 << 16)]
            count += int(np.sum(pattern.matches_codes(_codes_from_distances(pairwise_distances(pts[rows]), t))))
        return count
    if acceleration != "grid":
        raise ValueError(f"unknown acceleration {acceleration!r}")
    i, j = _open_edges(pts, t, "grid")
    if k == 2:
        return int(i.size)
    subsets = connected_subsets(n, i, j, k)
    if subsets.shape[0] == 0:
        return 0
    keys = np.sort(i * n + j)
    code = np.zeros(subsets.shape[0], np.int64)
    for e, (a, b) in enumerate(_pair_slots(k)):
        q = subsets[:, a] * n + subsets[:, b]
        pos = np.minimum(np.searchsorted(keys, q), keys.size - 1)
        code |= (keys[pos] == q).astype(np.int64) << e
    return int(np.sum(pattern.matches_codes(code)))


# -- boolean model -----------------------------------------------------------


class RadialWeight:
    """Even weight ``phi(x) = profile(|x|)`` with a power-law exponent ``beta``
    when it grows or decays like ``|x|^beta`` (``None`` if bounded support)."""

    def __init__(self, profile: Callable, beta: Optional[float] = None, name: str = "phi", breakpoints=()):
        self.profile = profile
        self.beta = beta
        self.name = name
        self.breakpoints = tuple(breakpoints)

    @classmethod
    def power(cls, beta: float, scale: float = 1.0) -> "RadialWeight":
        beta, scale = float(beta), float(scale)
        if beta == 0:
            return cls(lambda r: np.full(np.shape(r), scale), 0.0, f"{scale}")
        return cls(lambda r: scale * np.asarray(r, float) ** beta, beta, f"{scale}*|x|^{beta}")

    @classmethod
    def indicator(cls, radius: float) -> "RadialWeight":
        radius = float(radius)
        return cls(lambda r: (np.asarray(r, float) <= radius).astype(float), None, f"1(|x|<={radius})", (radius,))

    @classmethod
    def zero(cls) -> "RadialWeight":
        return cls(lambda r: np.zeros(np.shape(r)), None, "0")

    @classmethod
    def from_spec(cls, spec) -> "RadialWeight":
        if isinstance(spec, RadialWeight):
            return spec
        kind = spec.get("kind", "power")
        if kind == "power":
            return cls.power(spec.get("beta", 0.0), spec.get("scale", 1.0))
        if kind == "indicator":
            return cls.indicator(spec["radius"])
        if kind == "zero":
            return cls.zero()
        raise ValueError(f"unknown weight kind {kind!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.asarray(self.profile(np.sqrt(np.sum(x * x, axis=-1))), float)

    def __repr__(self):
        return f"RadialWeight({self.name})"


def boolean_kernel(phi: RadialWeight, max_radius: Optional[float] = None) -> Kernel:
    """``phi(x - y) 1{|x - y| <= R + R'}`` on marked pairs.

    With ``max_radius`` (an upper bound on every mark) the kernel declares the
    interaction radius ``2 * max_radius``.
    """

    def func(t, m):
        if m is None:
            raise ValueError("boolean kernel needs radius marks")
        diff = t[:, 0, :] - t[:, 1, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1))
        return np.where(dist <= m[:, 0] + m[:, 1], phi(diff), 0.0)

    radius = None if max_radius is None else 2.0 * float(max_radius)
    return Kernel(2, func, radius, True, True, f"boolean({phi.name})")


def _require_marks(config):
    if config.marks is None:
        raise ValueError("configuration has no radius marks")


def boolean_edge_mass(config: PointConfiguration, phi: RadialWeight) -> float:
    """``sum over ordered distinct pairs of phi(x - y) 1{|x - y| <= R_x + R_y}``."""
    _require_marks(config)
    n = len(config)
    if n < 2:
        return 0.0
    marks = config.marks
    i, j = neighbor_pairs(config.locations, 2.0 * float(marks.max()) * (1 + 1e-12), closed=True)
    rank = _canonical_rank(config)
    swap = rank[i] > rank[j]
    a, b = np.where(swap, j, i), np.where(swap, i, j)
    diff = config.locations[a] - config.locations[b]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    keep = dist <= marks[a] + marks[b]
    return float(2 * math.fsum(phi(diff[keep]).tolist()))


def chi_nu(x, nu: MarkDistribution, budget: int = 100_000, seed=0) -> MCEstimate:
    """``P(R + R' >= |x|)`` for independent radii ``R, R' ~ nu``.

    Exact for finitely supported ``nu``; Monte Carlo otherwise.
    """
    s = float(np.linalg.norm(np.atleast_1d(np.asarray(x, float))))
    if nu.is_none:
        raise ValueError("chi_nu needs a radius distribution")
    if nu.finite_support:
        v, p = nu.atoms()
        return MCEstimate.exact(float(np.sum(np.outer(p, p) * (v[:, None] + v[None, :] >= s))))

    def sample(rng, n):
        r = nu.sample(rng, (n, 2))
        return (r.sum(axis=1) >= s).astype(float)

    return mc_mean(sample, budget, seed, (71,))


def chi_nu_quadrature(s: float, nu: MarkDistribution) -> float:
    """Convolution integral for ``P(R + R' >= s)``."""
    s = float(s)
    if nu.finite_support:
        return chi_nu(s, nu).value
    if nu.variant != "power_law_radius":
        raise ValueError(f"no quadrature rule for {nu.variant} marks")
    a, c = nu.params["alpha"], nu.params["cutoff"]
    if s <= 2 * c:
        return 1.0
    # P(R >= s - c) + int_c^{s-c} f(r) P(R' >= s - r) dr
    head = float(nu.tail(s - c))
    body, _ = integrate.quad(lambda r: float(nu.pdf(r)) * (c / (s - r)) ** (a - 1), c, s - c, limit=200)
    return head + body


class BooleanMeanDivergenceWarning(RuntimeWarning):
    pass


def boolean_clt_condition(beta: float, alpha: float, d: int) -> bool:
    """Whether power-law marks with exponent ``alpha`` and weight ``|x|^beta``
    satisfy ``alpha > 2 (beta + d) + 1``."""
    return alpha > 2 * (beta + d) + 1


def boolean_mean(phi: RadialWeight, nu: MarkDistribution, d: int, upper: float = np.inf) -> MCEstimate:
    """``int_{R^d} phi(x) chi_nu(x) dx`` by radial quadrature.

    For power-law marks the result carries the flag ``"outside_clt_condition"``
    (with a warning) when ``alpha > 2 (beta + d) + 1`` fails, and is infinite
    with the flag ``"divergent"`` when the integral does not converge.
    """
    flags = []
    if nu.variant == "power_law_radius":
        a = nu.params["alpha"]
        beta = phi.beta if phi.beta is not None else -np.inf
        if phi.beta is not None and not boolean_clt_condition(beta, a, d):
            warnings.warn(f"alpha = {a} <= 2(beta + d) + 1 = {2 * (beta + d) + 1}", BooleanMeanDivergenceWarning,
                          stacklevel=2)
            flags.append("outside_clt_condition")
        if phi.beta is not None and not (a > beta + d + 1) and np.isinf(upper):
            return MCEstimate(math.inf, 0.0, 0, tuple(flags + ["divergent"]))
    area = 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)

    def integrand(r):
        return area * r ** (d - 1) * float(phi.profile(np.asarray(r))) * chi_nu_quadrature(r, nu)

    if nu.finite_support:
        v, _ = nu.atoms()
        cuts = sorted({float(a + b) for a in v for b in v if a + b > 0} | set(phi.breakpoints))
    else:
        cuts = sorted({2.0 * nu.params["cutoff"]} | set(phi.breakpoints))
    cuts = [c for c in cuts if c < upper]
    edges = [0.0] + cuts + [upper]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        val, _ = integrate.quad(integrand, lo, hi, limit=400)
        total += val
    return MCEstimate(total, 0.0, 0, tuple(flags))


# -- coverage simplices ------------------------------------------------------


def simplex_kernel(k: int, max_radius: Optional[float] = None) -> Kernel:
    """``1{|x_i - x_j| <= r_i for all i, j}`` on ``k`` marked points."""
    if not 2 <= k <= 6:
        raise ValueError(f"simplex order must lie in [2, 6], got {k}")

    def func(t, m):
        if m is None:
            raise ValueError("simplex kernel needs radius marks")
        dist = pairwise_distances(t)
        return np.all(dist <= m[:, :, None], axis=(1, 2)).astype(float)

    return Kernel(k, func, max_radius, True, True, f"simplex{k}")


def simplex_count(config: PointConfiguration, k: int) -> int:
    """Number of ``k``-subsets whose pairwise distances are at most every member's radius."""
    if not 2 <= k <= 6:
        raise ValueError(f"simplex order must lie in [2, 6], got {k}")
    _require_marks(config)
    n = len(config)
    if n < k:
        return 0
    marks = config.marks
    i, j = neighbor_pairs(config.locations, float(marks.max()) * (1 + 1e-12), closed=True)
    diff = config.locations[i] - config.locations[j]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    keep = (dist <= marks[i]) & (dist <= marks[j])
    i, j = i[keep], j[keep]
    if k == 2:
        return int(i.size)
    return int(cliques(n, i, j, k).shape[0])


def tail_moment_condition(alpha: float, d: int):
    """For power-law radii: is ``int F(r) r^(4d - 1 + eps) dr`` finite for some
    ``eps > 0``? Returns ``(ok, eps)`` with a witness ``eps`` when it is."""
    gap = (alpha - 1.0) - 4.0 * d
    return (gap > 0, gap / 2.0 if gap > 0 else None)


# -- regimes -------------------------------------------------------------------


@dataclass(frozen=True)
class RegimeSpec:
    """Scaling of the disk-graph threshold ``t_n`` with the intensity ``n``.

    ``R1``: ``t = n^(-(1+delta)/d)`` (sparse); ``R2``: ``t = n^(-beta/d)`` (dense);
    ``R3``: ``t = (c/n)^(1/d)`` (thermodynamic).
    """

    variant: str
    d: int = 1
    k: int = 2
    delta: Optional[float] = None
    beta: float = 0.5
    c: float = 1.0

    def __post_init__(self):
        if self.variant not in ("R1", "R2", "R3"):
            raise ValueError(f"unknown regime {self.variant!r}")
        if self.variant == "R1":
            bound = 1.0 / (self.k - 1)
            delta = self.delta if self.delta is not None else 0.5 * bound
            if not 0 < delta < bound:
                raise ValueError(f"R1 needs 0 < delta < 1/(k-1) = {bound}, got {delta}")
            object.__setattr__(self, "delta", float(delta))
        if self.variant == "R2" and not 0 < self.beta < 1:
            raise ValueError("R2 needs beta in (0, 1)")
        if self.variant == "R3" and not self.c > 0:
            raise ValueError("R3 needs c > 0")

    def t_of_n(self, n: float) -> float:
        n, d = float(n), self.d
        if self.variant == "R1":
            return n ** (-(1.0 + self.delta) / d)
        if self.variant == "R2":
            return n ** (-self.beta / d)
        return (self.c / n) ** (1.0 / d)

    def check(self, n_grid) -> list:
        """Findings (empty when the defining limits trend correctly on the grid)."""
        lo, hi = float(n_grid[0]), float(n_grid[-1])
        d, k = self.d, self.k

        def occ(n):
            return n * self.t_of_n(n) ** d

        findings = []
        if self.variant == "R1":
            def dense(n):
                return n**k * self.t_of_n(n) ** (d * (k - 1))

            if not occ(hi) < occ(lo):
                findings.append("R1: n t^d does not decrease on the grid")
            if not dense(hi) > dense(lo):
                findings.append("R1: n^k t^(d(k-1)) does not increase on the grid")
        elif self.variant == "R2":
            if not occ(hi) > occ(lo):
                findings.append("R2: n t^d does not increase on the grid")
        else:
            if not (math.isclose(occ(lo), self.c, rel_tol=1e-9) and math.isclose(occ(hi), self.c, rel_tol=1e-9)):
                findings.append("R3: n t^d is not constant on the grid")
        return findings


def regime_sequence(spec: RegimeSpec, n_grid) -> list:
    grid = [float(n) for n in n_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("n grid must be increasing")
    return [(n, spec.t_of_n(n)) for n in grid]


def variance_scale(variant: str, n: float, t: float, d: int, k: int = 2) -> float:
    """Predicted order of the variance of an order-``k`` subgraph count in each regime."""
    if variant == "R1":
        return n**k * t ** (d * (k - 1))
    if variant == "R2":
        return n ** (2 * k - 1) * t ** (2 * d * (k - 1))
    if variant == "R3":
        return float(n)
    raise ValueError(f"unknown regime {variant!r}")


def clt_rate_scale(variant: str, n: float, t: float, d: int, k: int = 2) -> float:
    """Scale ``s`` such that the Wasserstein distance to the Gaussian is of order ``s^-1/2``."""
    return variance_scale("R1", n, t, d, k) if variant == "R1" else float(n)


# -- estimator wrappers ----------------------------------------------------------


class _ConfigTransformer(TransformerMixin, BaseEstimator):
    def fit(self, X=None, y=None):
        self._check_params()
        return self

    def _check_params(self):
        pass

    def transform(self, X):
        self._check_params()
        configs = [X] if isinstance(X, PointConfiguration) else list(X)
        return np.array([self._value(c) for c in configs], dtype=float).reshape(-1, 1)


class SubgraphCounter(_ConfigTransformer):
    """Induced subgraph counts of the disk graph, one per configuration."""

    def __init__(self, pattern="K2", threshold: float = 1.0, acceleration: str = "grid"):
        self.pattern = pattern
        self.threshold = threshold
        self.acceleration = acceleration

    def _check_params(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        self.pattern_ = PatternGraph.from_spec(self.pattern)

    def _value(self, config):
        return subgraph_count(config, self.threshold, self.pattern_, self.acceleration)


class BooleanEdgeMass(_ConfigTransformer):
    def __init__(self, phi=None):
        self.phi = phi

    def _value(self, config):
        phi = RadialWeight.power(0.0) if self.phi is None else self.phi
        return boolean_edge_mass(config, phi)


class SimplexCounter(_ConfigTransformer):
    def __init__(self, k: int = 2):
        self.k = k

    def _check_params(self):
        if not 2 <= int(self.k) <= 6:
            raise ValueError("simplex order must lie in [2, 6]")

    def _value(self, config):
        return simplex_count(config, int(self.k))
