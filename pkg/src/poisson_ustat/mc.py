"""Monte Carlo estimates with standard errors, and a tensor-grid quadrature backend."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._random import stream

__all__ = [
    "MCEstimate",
    "UnstableEstimateWarning",
    "mc_mean",
    "QuadratureGrid",
    "tensor_integrate",
]

SHARD_SIZE = 1 << 15


class UnstableEstimateWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MCEstimate:
    """A value with its standard error and sample count.

    ``std_error == 0`` marks an exact result (quadrature or degenerate case).
    """

    value: float
    std_error: float = 0.0
    n_samples: int = 0
    flags: tuple = field(default=(), compare=False)

    @classmethod
    def exact(cls, value: float) -> "MCEstimate":
        return cls(float(value), 0.0, 0)

    @property
    def is_exact(self) -> bool:
        return self.std_error == 0.0

    @property
    def relative_error(self) -> float:
        if self.value == 0:
            return 0.0 if self.std_error == 0 else math.inf
        return self.std_error / abs(self.value)

    def scaled(self, c: float) -> "MCEstimate":
        return MCEstimate(self.value * c, self.std_error * abs(c), self.n_samples, self.flags)

    def __add__(self, other):
        if isinstance(other, MCEstimate):
            return MCEstimate(
                self.value + other.value,
                math.hypot(self.std_error, other.std_error),
                self.n_samples + other.n_samples,
                self.flags + other.flags,
            )
        return MCEstimate(self.value + other, self.std_error, self.n_samples, self.flags)

    def __sub__(self, other):
        if isinstance(other, MCEstimate):
            return self + other.scaled(-1.0)
        return self + (-other)

    def sqrt(self) -> "MCEstimate":
        """Delta-method square root; negative estimates are clipped to zero."""
        v = max(self.value, 0.0)
        root = math.sqrt(v)
        se = 0.0 if self.std_error == 0 else (self.std_error / (2 * root) if root > 0 else math.sqrt(self.std_error))
        return MCEstimate(root, se, self.n_samples, self.flags)

    def within(self, target: float, n_se: float = 4.0, rel: float = 0.0, abs_tol: float = 0.0) -> bool:
        tol = max(n_se * self.std_error, rel * abs(target), abs_tol)
        return abs(self.value - target) <= tol

    def to_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples}

    def __float__(self):
        return float(self.value)


def mc_mean(
    sample_fn: Callable[[np.random.Generator, int], np.ndarray],
    budget: int,
    seed=0,
    key: Sequence[int] = (),
    scale: float = 1.0,
    shard_size: int = SHARD_SIZE,
    unstable_rel_se: float | None = None,
) -> MCEstimate:
    """Estimate ``scale * E[sample_fn]`` from ``budget`` draws.

    The budget is split in fixed shards, each with its own stream keyed by the
    shard index; shard statistics are merged in shard order, so the result does
    not depend on how shards are scheduled.
    """
    budget = int(budget)
    if budget < 2:
        raise ValueError("Monte Carlo budget must be at least 2")
    n_tot, mean, m2 = 0, 0.0, 0.0
    for s in range(math.ceil(budget / shard_size)):
        m = min(shard_size, budget - s * shard_size)
        v = np.asarray(sample_fn(stream(seed, *key, s), m), dtype=float)
        if v.shape != (m,):
            raise ValueError(f"sample function returned shape {v.shape}, expected {(m,)}")
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("non-finite Monte Carlo sample")
        mu = float(v.mean())
        ss = float(np.sum((v - mu) ** 2))
        # Chan et al. pairwise merge
        delta = mu - mean
        tot = n_tot + m
        mean += delta * m / tot
        m2 += ss + delta * delta * n_tot * m / tot
        n_tot = tot
    var = m2 / (n_tot - 1)
    se = math.sqrt(var / n_tot)
    est = MCEstimate(mean * scale, se * abs(scale), n_tot)
    if unstable_rel_se is not None and est.value != 0 and est.relative_error > unstable_rel_se:
        warnings.warn(
            f"relative standard error {est.relative_error:.2f} exceeds {unstable_rel_se}",
            UnstableEstimateWarning,
            stacklevel=2,
        )
        est = MCEstimate(est.value, est.std_error, est.n_samples, ("unstable",))
    return est


class QuadratureGrid:
    """Tensor-product nodes for one variable of a control measure.

    ``t`` is ``(G, d)``, ``m`` is ``(G,)`` or ``None`` and ``w`` carries the full
    control mass (intensity, volume and mark probabilities).
    """

    def __init__(self, control, nodes: int = 32, rule: str = "gauss"):
        d = control.dim
        axes, weights = [], []
        for w in control.window.half_width:
            if rule == "gauss":
                x, wt = np.polynomial.legendre.leggauss(nodes)
            elif rule == "midpoint":
                x = (np.arange(nodes) + 0.5) / nodes * 2 - 1
                wt = np.full(nodes, 2.0 / nodes)
            else:
                raise ValueError(f"unknown quadrature rule {rule!r}")
            axes.append(x * w)
            weights.append(wt * w)
        mesh = np.meshgrid(*axes, indexing="ij")
        t = np.stack([a.reshape(-1) for a in mesh], axis=-1)
        wt = np.ones(1)
        for ww in weights:
            wt = np.multiply.outer(wt, ww).reshape(-1)
        wt = wt * control.intensity
        if control.marks.is_none:
            m = None
        else:
            if not control.marks.finite_support:
                raise ValueError("quadrature needs marks with finite support")
            vals, probs = control.marks.atoms()
            g = t.shape[0]
            t = np.repeat(t, vals.size, axis=0)
            m = np.tile(vals, g)
            wt = np.repeat(wt, vals.size) * np.tile(probs, g)
        self.t, self.m, self.w = t, m, wt
        self.dim = d

    @property
    def size(self) -> int:
        return self.t.shape[0]

    def product(self, nvars: int):
        """All ``G**nvars`` tuples as ``(t, m)`` arrays shaped for kernels."""
        g = self.size
        idx = np.indices((g,) * nvars).reshape(nvars, -1).T
        t = self.t[idx]
        m = None if self.m is None else self.m[idx]
        return t, m


def tensor_integrate(factors, nvars: int, grid: QuadratureGrid, max_points: int = 20_000_000) -> float:
    """Integrate a product of factors over ``nvars`` variables on ``grid``.

    ``factors`` is a list of ``(fn, var_ids)`` where ``fn(t, m)`` evaluates the
    factor on stacked tuples of the listed variables. Each factor is tabulated
    once on its own sub-grid and the product is contracted with ``einsum``.
    """
    g = grid.size
    operands = []
    for fn, ids in factors:
        ids = list(ids)
        if g ** len(ids) > max_points:
            raise MemoryError(f"quadrature table of {g}**{len(ids)} points exceeds limit")
        t, m = grid.product(len(ids))
        table = np.asarray(fn(t, m), dtype=float).reshape((g,) * len(ids))
        operands += [table, ids]
    for v in range(nvars):
        operands += [grid.w, [v]]
    return float(np.einsum(*operands, [], optimize=True))
