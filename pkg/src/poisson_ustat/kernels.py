"""Symmetric kernels of marked points and a small library of concrete ones.

A kernel of order ``k`` is evaluated in batches: ``t`` has shape ``(N, k, d)``
(spatial coordinates) and ``m`` has shape ``(N, k)`` (marks) or is ``None``; the
result has shape ``(N,)``.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional

import numpy as np

from ._random import stream

__all__ = [
    "Kernel",
    "pairwise_distances",
    "constant_kernel",
    "indicator_kernel",
    "edge_kernel",
    "sign_kernel",
    "product_kernel",
    "gaussian_pair_kernel",
    "probe_symmetry",
    "probe_stationarity",
    "probe_radius",
]


def pairwise_distances(t: np.ndarray) -> np.ndarray:
    diff = t[:, :, None, :] - t[:, None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


class Kernel:
    """Real function of ``order`` marked points.

    Parameters
    ----------
    order : int
        Number of arguments ``k``.
    func : callable
        ``func(t, m) -> values`` on batched arguments.
    interaction_radius : float, optional
        ``func`` vanishes whenever some pairwise spatial distance exceeds it.
    stationary, symmetric : bool
        Declared invariances; trusted at runtime, checked by the probe helpers.
    """

    def __init__(
        self,
        order: int,
        func: Callable,
        interaction_radius: Optional[float] = None,
        stationary: bool = False,
        symmetric: bool = True,
        name: str = "kernel",
    ):
        if int(order) < 1:
            raise ValueError("kernel order must be positive")
        self.order = int(order)
        self.func = func
        self.interaction_radius = None if interaction_radius is None else float(interaction_radius)
        self.stationary = bool(stationary)
        self.symmetric = bool(symmetric)
        self.name = name

    def __repr__(self):
        return f"Kernel({self.name!r}, order={self.order})"

    def _check(self, t, m):
        t = np.asarray(t, dtype=float)
        if t.ndim == 2:
            t = t[..., None]
        if t.ndim != 3 or t.shape[1] != self.order:
            raise ValueError(f"{self.name}: expected arguments of shape (N, {self.order}, d), got {t.shape}")
        if m is not None:
            m = np.asarray(m, dtype=float).reshape(t.shape[0], self.order)
        return t, m

    def evaluate(self, t, m=None) -> np.ndarray:
        t, m = self._check(t, m)
        if t.shape[0] == 0:
            return np.zeros(0)
        return np.asarray(self.func(t, m), dtype=float).reshape(t.shape[0])

    __call__ = evaluate

    def draw(self, t, m, rng) -> np.ndarray:
        """Unbiased randomized evaluation; exact for plain kernels."""
        return self.evaluate(t, m)

    def quad(self, t, m, nodes: int = 32, rule: str = "gauss") -> np.ndarray:
        """Deterministic evaluation used by the quadrature backend."""
        return self.evaluate(t, m)

    def rescaled(self, gamma: float = 1.0, alpha: float = 1.0) -> "Kernel":
        """The kernel ``x -> gamma * h(alpha x)`` (dilation acts on space only)."""
        base = self

        def func(t, m):
            return gamma * base.evaluate(alpha * t, m)

        radius = None if self.interaction_radius is None else self.interaction_radius / alpha
        return Kernel(self.order, func, radius, self.stationary, self.symmetric, f"{gamma}*{self.name}({alpha}x)")

    def absolute(self) -> "Kernel":
        base = self
        return Kernel(
            self.order, lambda t, m: np.abs(base.evaluate(t, m)), self.interaction_radius,
            self.stationary, self.symmetric, f"|{self.name}|",
        )

    def factorized(self) -> Callable:
        """``hbar(s, m)``: the kernel with its first point pinned at the origin.

        ``s`` has shape ``(N, k-1, d)`` (positions of the other points relative
        to the first) and ``m`` shape ``(N, k)``.
        """
        if not self.stationary:
            raise ValueError(f"{self.name} is not declared stationary")
        base = self

        def hbar(s, m):
            s = np.asarray(s, dtype=float)
            zero = np.zeros((s.shape[0], 1, s.shape[2]))
            return base.evaluate(np.concatenate([zero, s], axis=1), m)

        return hbar


# -- library ---------------------------------------------------------------


def constant_kernel(order: int, value: float = 1.0) -> Kernel:
    value = float(value)
    return Kernel(order, lambda t, m: np.full(t.shape[0], value), None, True, True, f"const({value})")


def indicator_kernel(order: int, radius: float, value: float = 1.0) -> Kernel:
    """``value`` when every pairwise distance is at most ``radius``."""
    radius = float(radius)

    def func(t, m):
        dist = pairwise_distances(t)
        return value * np.all(dist <= radius, axis=(1, 2))

    return Kernel(order, func, radius, True, True, f"clique({radius})")


def edge_kernel(threshold: float, value: float = 0.5) -> Kernel:
    """Order-2 edge indicator ``value * 1{|x - y| <= threshold}``."""
    k = indicator_kernel(2, threshold, value)
    k.name = f"edge({threshold})"
    return k


def sign_kernel() -> Kernel:
    """``+1`` if ``x1 x2 >= 0`` else ``-1``, on the line."""

    def func(t, m):
        return np.where(t[:, 0, 0] * t[:, 1, 0] >= 0, 1.0, -1.0)

    return Kernel(2, func, None, False, True, "sign")


def product_kernel(order: int = 2) -> Kernel:
    """Product of first coordinates, ``x1 x2 ... xk``."""
    return Kernel(order, lambda t, m: np.prod(t[:, :, 0], axis=1), None, False, True, "product")


def gaussian_pair_kernel(scale: float = 1.0) -> Kernel:
    s2 = float(scale) ** 2

    def func(t, m):
        diff = t[:, 0, :] - t[:, 1, :]
        return np.exp(-np.sum(diff * diff, axis=-1) / s2)

    return Kernel(2, func, None, True, True, f"gauss({scale})")


# -- probes ------------------------------------------------------------------


def _probe_args(kernel: Kernel, control, n: int, seed):
    rng = stream(seed, 7919)
    return control.sample(rng, n, kernel.order), rng


def _close(a, b, rtol):
    return np.all(np.abs(a - b) <= rtol * np.maximum(np.abs(a), np.abs(b)))


def probe_symmetry(kernel: Kernel, control, n_probes: int = 30, seed=0, rtol: float = 1e-12) -> bool:
    """Random permutations of random arguments leave the value unchanged."""
    (t, m), rng = _probe_args(kernel, control, n_probes, seed)
    base = kernel.evaluate(t, m)
    perms = list(itertools.permutations(range(kernel.order)))
    for i in range(n_probes):
        p = np.asarray(perms[rng.integers(len(perms))])
        v = kernel.evaluate(t[:, p], None if m is None else m[:, p])
        if not _close(base, v, rtol):
            return False
    return True


def probe_stationarity(kernel: Kernel, control, n_probes: int = 30, seed=0, rtol: float = 1e-12, shift_scale=1.0):
    """Random common translations leave the value unchanged."""
    (t, m), rng = _probe_args(kernel, control, n_probes, seed)
    base = kernel.evaluate(t, m)
    for i in range(n_probes):
        shift = rng.normal(scale=shift_scale, size=control.dim)
        v = kernel.evaluate(t + shift, m)
        if not _close(base, v, rtol):
            return False
    return True


def probe_radius(kernel: Kernel, control, n_probes: int = 30, seed=0) -> bool:
    """Arguments spread beyond the interaction radius give zero."""
    if kernel.interaction_radius is None:
        return True
    if kernel.order < 2:
        return True
    (t, m), rng = _probe_args(kernel, control, n_probes, seed)
    t = t.copy()
    direction = rng.normal(size=(n_probes, control.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    gap = kernel.interaction_radius * (1.0 + rng.random((n_probes, 1))) + 1e-9
    t[:, 1] = t[:, 0] + gap * direction
    return bool(np.all(kernel.evaluate(t, m) == 0))
