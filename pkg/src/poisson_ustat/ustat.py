"""U-statistics over point configurations and their chaos projections."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._random import stream
from .kernel_algebra import FullSpaceControl, flat_integral, power_integral
from .kernels import Kernel
from .mc import MCEstimate, QuadratureGrid, UnstableEstimateWarning
from .neighbors import all_subsets, cliques, neighbor_pairs
from .point_process import PointConfiguration, Window

__all__ = [
    "UStatistic",
    "ustat_value",
    "candidate_subsets",
    "ChaosKernel",
    "project_kernel",
    "ChaosDecomposition",
    "chaos_moments",
    "DegenerateKernelError",
    "detect_hoeffding_rank",
]

MAX_BRUTE_ORDER = 8
MAX_VARIANCE_ORDER = 6
_CHUNK = 1 << 18
# neighbor search is made slightly inclusive so float rounding in the distance
# test can never drop a tuple on which the kernel is non-zero
_RADIUS_SLACK = 1.0 + 1e-12


def _canonical_rank(config: PointConfiguration) -> np.ndarray:
    """Rank of each point in a lexicographic order of (coordinates, mark).

    Arguments handed to a symmetric kernel are sorted by this rank, so the
    value of a subset does not depend on the order of the point list.
    """
    keys = [config.locations[:, c] for c in range(config.dim - 1, -1, -1)]
    if config.marks is not None:
        keys = [config.marks] + keys
    order = np.lexsort(keys)
    rank = np.empty(len(config), dtype=np.int64)
    rank[order] = np.arange(len(config))
    return rank


def candidate_subsets(config: PointConfiguration, k: int, radius: Optional[float], acceleration: str):
    """Increasing index ``k``-subsets that may carry a non-zero kernel value."""
    n = len(config)
    if k > n:
        return np.zeros((0, k), np.int64)
    if acceleration == "grid":
        if radius is None:
            raise ValueError("grid acceleration needs a kernel with an interaction radius")
        i, j = neighbor_pairs(config.locations, radius * _RADIUS_SLACK, closed=True)
        return cliques(n, i, j, k)
    if acceleration == "brute_force":
        if k > MAX_BRUTE_ORDER:
            raise ValueError(f"brute-force enumeration is limited to order {MAX_BRUTE_ORDER}, got {k}")
        return all_subsets(n, k)
    raise ValueError(f"unknown acceleration {acceleration!r}")


def _subset_values(kernel: Kernel, config: PointConfiguration, subsets: np.ndarray) -> list:
    if subsets.shape[0] == 0:
        return []
    rank = _canonical_rank(config)
    by_rank = np.take_along_axis(subsets, np.argsort(rank[subsets], axis=1), axis=1)
    if kernel.symmetric:
        tuples = [by_rank]
    else:
        tuples = [by_rank[:, list(p)] for p in itertools.permutations(range(kernel.order))]
    vals = []
    for rows in tuples:
        for s in range(0, rows.shape[0], _CHUNK):
            idx = rows[s : s + _CHUNK]
            t = config.locations[idx]
            m = None if config.marks is None else config.marks[idx]
            vals.append(kernel.evaluate(t, m))
    return np.concatenate(vals).tolist()


def ustat_value(kernel: Kernel, config: PointConfiguration, acceleration: str = "grid") -> float:
    """Sum of ``kernel`` over ordered ``k``-tuples of distinct points."""
    k = kernel.order
    subsets = candidate_subsets(config, k, kernel.interaction_radius, acceleration)
    total = math.fsum(_subset_values(kernel, config, subsets))
    return float(math.factorial(k) * total) if kernel.symmetric else float(total)


class UStatistic(TransformerMixin, BaseEstimator):
    """Order-``k`` U-statistic ``F = sum over distinct ordered tuples h``.

    Parameters
    ----------
    kernel : Kernel
    acceleration : {"auto", "grid", "brute_force"}
        ``grid`` enumerates only cliques of the neighbor graph at the kernel's
        interaction radius; ``auto`` picks it whenever a radius is declared.
    """

    def __init__(self, kernel: Kernel = None, acceleration: str = "auto"):
        self.kernel = kernel
        self.acceleration = acceleration

    def _strategy(self) -> str:
        if not isinstance(self.kernel, Kernel):
            raise TypeError("UStatistic needs a Kernel")
        acc = self.acceleration
        if acc == "auto":
            return "grid" if self.kernel.interaction_radius is not None else "brute_force"
        if acc == "grid" and self.kernel.interaction_radius is None:
            raise ValueError("grid acceleration needs a kernel with an interaction radius")
        if acc not in ("grid", "brute_force"):
            raise ValueError(f"unknown acceleration {acc!r}")
        return acc

    def fit(self, X=None, y=None):
        self.strategy_ = self._strategy()
        self.order_ = self.kernel.order
        return self

    def evaluate(self, config: PointConfiguration) -> float:
        return ustat_value(self.kernel, config, self._strategy())

    def transform(self, X):
        """Column of statistic values, one row per configuration."""
        configs = [X] if isinstance(X, PointConfiguration) else list(X)
        return np.array([[self.evaluate(c)] for c in configs], dtype=float).reshape(-1, 1)


# -- chaos projections ---------------------------------------------------------


class ChaosKernel:
    """Level-``i`` projection ``C(k,i) int h(x_i, .) d mu^(k-i)`` of an order-``k`` kernel.

    ``draw`` is a single-sample unbiased estimate (one draw of the integrated
    arguments); ``estimate`` averages ``sample_budget`` draws per point and
    reports standard errors; ``quad`` integrates on the quadrature grid.
    """

    def __init__(self, base: Kernel, level: int, control, sample_budget: int = 4096, seed=0,
                 unstable_rel_se: float = 0.5):
        k = base.order
        if not 1 <= level <= k:
            raise ValueError(f"projection level must lie in [1, {k}], got {level}")
        if isinstance(control, FullSpaceControl) and level < k and base.interaction_radius is None:
            raise ValueError("full-space projections need a kernel with an interaction radius")
        self.base = base
        self.level = int(level)
        self.control = control
        self.sample_budget = int(sample_budget)
        self.seed = seed
        self.unstable_rel_se = unstable_rel_se
        self.order = self.level
        self.symmetric = True
        self.interaction_radius = None
        self.weight = math.comb(k, level)
        self.name = f"proj{level}({base.name})"

    @property
    def is_exact(self) -> bool:
        return self.level == self.base.order

    def _integrated(self, rng, t):
        n, j = t.shape[0], self.base.order - self.level
        ctrl = self.control
        if isinstance(ctrl, FullSpaceControl):
            box = Window(ctrl.dim, self.base.interaction_radius)
            y = t[:, :1, :] + box.uniform(rng, (n, j))
            return y, ctrl.marks.sample(rng, (n, j)), ctrl.intensity * box.volume
        y, ym = ctrl.sample(rng, n, j)
        return y, ym, ctrl.mass

    def draw(self, t, m, rng):
        t = np.asarray(t, float)
        if self.is_exact:
            return self.base.draw(t, m, rng)
        j = self.base.order - self.level
        y, ym, mass = self._integrated(rng, t)
        tt = np.concatenate([t, y], axis=1)
        mm = None if m is None or ym is None else np.concatenate([np.asarray(m, float), ym], axis=1)
        return self.weight * mass**j * self.base.draw(tt, mm, rng)

    def estimate(self, t, m=None):
        t = np.asarray(t, float)
        if t.ndim == 2:
            t = t[..., None] if t.shape[1] == self.order else t[None]
        n = t.shape[0]
        if self.is_exact:
            return self.base.evaluate(t, m), np.zeros(n)
        b = self.sample_budget
        rng = stream(self.seed, 15485863)
        tt = np.repeat(t, b, axis=0)
        mm = None if m is None else np.repeat(np.asarray(m, float).reshape(n, -1), b, axis=0)
        v = self.draw(tt, mm, rng).reshape(n, b)
        mean = v.mean(axis=1)
        se = v.std(axis=1, ddof=1) / math.sqrt(b)
        if self.unstable_rel_se is not None:
            nz = mean != 0
            if np.any(se[nz] > self.unstable_rel_se * np.abs(mean[nz])):
                warnings.warn(f"{self.name}: relative standard error above {self.unstable_rel_se}",
                              UnstableEstimateWarning, stacklevel=2)
        return mean, se

    def evaluate(self, t, m=None):
        return self.estimate(t, m)[0]

    __call__ = evaluate

    def at(self, t, m=None) -> MCEstimate:
        """Estimate at one argument tuple of shape ``(level, d)``."""
        d = self.control.dim
        t = np.asarray(t, float).reshape(1, self.order, d)
        m = None if m is None else np.asarray(m, float).reshape(1, self.order)
        v, se = self.estimate(t, m)
        n = 0 if self.is_exact else self.sample_budget
        flags = ()
        if self.unstable_rel_se is not None and v[0] != 0 and se[0] > self.unstable_rel_se * abs(v[0]):
            flags = ("unstable",)
        return MCEstimate(float(v[0]), float(se[0]), n, flags)

    def quad(self, t, m, nodes=32, rule="gauss"):
        if self.is_exact:
            return self.base.quad(t, m, nodes, rule)
        if isinstance(self.control, FullSpaceControl):
            raise ValueError("quadrature is only available on windows")
        j = self.base.order - self.level
        grid = QuadratureGrid(self.control, nodes, rule)
        yt, ym = grid.product(j)
        w = np.ones(1)
        for _ in range(j):
            w = np.multiply.outer(w, grid.w).reshape(-1)
        n, g = t.shape[0], yt.shape[0]
        tt = np.concatenate([np.repeat(t, g, axis=0), np.tile(yt, (n, 1, 1))], axis=1)
        mm = None
        if m is not None and ym is not None:
            mm = np.concatenate([np.repeat(m, g, axis=0), np.tile(ym, (n, 1))], axis=1)
        vals = self.base.quad(tt, mm, nodes, rule).reshape(n, g)
        return self.weight * (vals @ w)


def project_kernel(h: Kernel, level: int, control, budget: int = 4096, seed=0) -> ChaosKernel:
    return ChaosKernel(h, level, control, budget, seed)


@dataclass(frozen=True)
class ChaosDecomposition:
    projections: tuple
    mean: MCEstimate
    norms_sq: tuple
    variance_terms: tuple

    @property
    def variance(self) -> MCEstimate:
        total = MCEstimate.exact(0.0)
        for term in self.variance_terms:
            total = total + term
        return total

    def to_records(self) -> list:
        return [
            {"i": i, "norm_sq": n.value, "std_error": n.std_error, "factorial_weight": math.factorial(i)}
            for i, n in enumerate(self.norms_sq, start=1)
        ]


def chaos_moments(h: Kernel, control, budget: int = 200_000, seed=0, method: str = "mc", nodes: int = 32,
                  rule: str = "gauss", projection_budget: int = 4096) -> ChaosDecomposition:
    """Mean ``int h d mu^k`` and variance ``sum_i i! ||f_i||^2`` of the U-statistic."""
    k = h.order
    if k > MAX_VARIANCE_ORDER:
        raise ValueError(f"variance sums are limited to order {MAX_VARIANCE_ORDER}")
    kw = dict(method=method, nodes=nodes, rule=rule)
    mean = flat_integral([(h, list(range(k)))], k, control, budget, seed, (61,), **kw)
    projs, norms, terms = [], [], []
    for i in range(1, k + 1):
        f = ChaosKernel(h, i, control, projection_budget, seed)
        nsq = power_integral(f, 2, control, budget=budget, seed=seed, key=(62, i), **kw)
        projs.append(f)
        norms.append(nsq)
        terms.append(nsq.scaled(math.factorial(i)))
    return ChaosDecomposition(tuple(projs), mean, tuple(norms), tuple(terms))


class DegenerateKernelError(ValueError):
    pass


def detect_hoeffding_rank(h: Kernel, control, budget: int = 200_000, tol: Optional[float] = None, seed=0,
                          n_se: float = 4.0) -> int:
    """Smallest level ``i`` whose projection has norm clearly above zero.

    Level ``i`` is accepted when its squared-norm estimate exceeds
    ``tol + n_se * SE``; ``tol`` defaults to ``1e-6`` times the top-level norm.
    """
    k = h.order
    norms = [power_integral(ChaosKernel(h, i, control, seed=seed), 2, control, budget=budget, seed=seed,
                            key=(63, i)) for i in range(1, k + 1)]
    if tol is None:
        tol = 1e-6 * abs(norms[-1].value)
    for i, est in enumerate(norms, start=1):
        if est.value > tol + n_se * est.std_error:
            return i
    raise DegenerateKernelError(f"degenerate to order > {k}: no projection level is distinguishable from 0")
