"""Distances to the Gaussian, fourth-moment gaps, power-law rate fits and
moment checks for non-Gaussian limits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
import numpy as np
from scipy import special
from sklearn.base import BaseEstimator, RegressorMixin

from ._random import stream

__all__ = [
    "SampleSet",
    "standardize",
    "wasserstein1_to_std_gaussian",
    "fourth_moment_gap",
    "RateFit",
    "rate_fit",
    "PowerLawFit",
    "moment_estimate",
    "sample_sign_limit",
    "MomentCheck",
    "geometric_limit_check",
    "variance_asymptotics_check",
    "NormalApproximation",
]


@dataclass(frozen=True)
class SampleSet:
    """Replicated statistic values with their metadata."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("sample values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def standardized(self) -> "SampleSet":
        return SampleSet(standardize(self.values), {**self.meta, "standardization": "empirical"})


def _values(samples) -> np.ndarray:
    v = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float).reshape(-1)
    if not np.all(np.isfinite(v)):
        raise ValueError("sample values must be finite")
    return v


def standardize(values) -> np.ndarray:
    """Subtract the sample mean and divide by the sample standard deviation."""
    v = _values(values)
    if v.size < 2:
        raise ValueError("standardization needs at least two values")
    sd = v.std(ddof=1)
    if sd == 0:
        raise ValueError("cannot standardize constant samples")
    return (v - v.mean()) / sd


def _gauss_cdf_integral(a):
    """``int_{-inf}^a Phi``, which is ``a Phi(a) + phi(a)``."""
    a = np.asarray(a, float)
    pdf = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi)
    return a * special.ndtr(a) + pdf


def wasserstein1_to_std_gaussian(samples) -> float:
    """Exact ``int |F_n - Phi|`` between the empirical law and ``N(0, 1)``.

    Between consecutive order statistics the empirical CDF is a constant
    ``c = i/n``; each piece is split at ``Phi^-1(c)`` so the sign of
    ``c - Phi`` is fixed and the integral follows from the antiderivative of
    ``Phi``.
    """
    x = np.sort(_values(samples))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    A = _gauss_cdf_integral
    # left tail: int_{-inf}^{x_1} Phi; right tail: int_{x_n}^{inf} (1 - Phi)
    total = [float(A(x[0])), float(A(-x[-1]))]
    if n > 1:
        lo, hi = x[:-1], x[1:]
        c = np.arange(1, n) / n
        q = np.clip(special.ndtri(c), lo, hi)
        # on [lo, q] Phi <= c, on [q, hi] Phi >= c
        left = c * (q - lo) - (A(q) - A(lo))
        right = (A(hi) - A(q)) - c * (hi - q)
        total.extend(left.tolist())
        total.extend(right.tolist())
    return math.fsum(total)


def fourth_moment_gap(samples, min_size: int = 100):
    """``E[F^4] - 3 E[F^2]^2`` for already centered samples, with a delta-method SE."""
    v = _values(samples)
    if v.size < min_size:
        raise ValueError(f"fourth-moment gap needs at least {min_size} samples")
    n = v.size
    x2 = v * v
    x4 = x2 * x2
    m2, m4 = x2.mean(), x4.mean()
    gap = m4 - 3 * m2 * m2
    psi = (x4 - m4) - 6 * m2 * (x2 - m2)
    se = math.sqrt(float(np.mean(psi * psi)) / n)
    return float(gap), se


@dataclass(frozen=True)
class RateFit:
    grid: tuple
    slope: float
    intercept: float
    r_squared: float
    slope_se: float = 0.0

    def predict(self, scale):
        return np.exp(self.intercept) * np.asarray(scale, float) ** self.slope

    def in_band(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r_squared": self.r_squared,
                "slope_se": self.slope_se, "grid": [list(p) for p in self.grid]}


def rate_fit(points, min_points: int = 4) -> RateFit:
    """Least-squares line through ``(log scale, log distance)``."""
    pts = [(float(s), float(v)) for s, v in points]
    if len(pts) < min_points:
        raise ValueError(f"rate fit needs at least {min_points} points")
    s = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(np.diff(s) <= 0):
        raise ValueError("scales must be increasing")
    if np.any(v <= 0) or np.any(s <= 0):
        raise ValueError("scales and distances must be positive")
    x, y = np.log(s), np.log(v)
    xc = x - x.mean()
    sxx = float(xc @ xc)
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(resid @ resid)
    r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    dof = len(pts) - 2
    se = math.sqrt(ss_res / dof / sxx) if dof > 0 else 0.0
    return RateFit(tuple(pts), slope, intercept, r2, se)


class PowerLawFit(RegressorMixin, BaseEstimator):
    """Estimator form of :func:`rate_fit`: ``fit(scales, values)`` then ``predict``."""

    def __init__(self, min_points: int = 4):
        self.min_points = min_points

    def fit(self, X, y):
        X = np.asarray(X, float).reshape(-1)
        y = np.asarray(y, float).reshape(-1)
        if X.shape != y.shape:
            raise ValueError("scales and values differ in length")
        self.fit_ = rate_fit(zip(X, y), self.min_points)
        self.slope_ = self.fit_.slope
        self.intercept_ = self.fit_.intercept
        return self

    def predict(self, X):
        return self.fit_.predict(np.asarray(X, float).reshape(-1))

    def score(self, X, y, sample_weight=None):
        """Coefficient of determination on the log scale."""
        y = np.log(np.asarray(y, float).reshape(-1))
        pred = np.log(self.predict(X))
        ss = float(np.sum((y - y.mean()) ** 2))
        return 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss else 1.0


def moment_estimate(values, order: int):
    """Raw sample moment ``mean(x^order)`` with its standard error."""
    v = _values(values) ** order
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def sample_sign_limit(n: int, seed=0) -> np.ndarray:
    """Draws of ``2 (xi^2 - 1)`` for standard normal ``xi``."""
    rng = stream(seed, 81)
    xi = rng.standard_normal(int(n))
    return 2.0 * (xi * xi - 1.0)


@dataclass(frozen=True)
class MomentCheck:
    scale: float
    second: tuple
    third: tuple
    mean: tuple
    limit_second: tuple
    limit_third: tuple

    def second_ok(self, target=8.0, rel=0.05, n_se=4.0) -> bool:
        v, se = self.second
        return abs(v - target) <= max(n_se * se, rel * target)

    def third_ok(self, target=64.0, rel=0.10, n_se=4.0) -> bool:
        v, se = self.third
        return abs(v - target) <= max(n_se * se, rel * target)

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "second": list(self.second),
            "third": list(self.third),
            "mean": list(self.mean),
            "limit_second": list(self.limit_second),
            "limit_third": list(self.limit_third),
        }


def geometric_limit_check(values_by_scale: dict, normalization_power: float = -1.0, limit_draws: int = 1_000_000,
                          seed=0) -> list:
    """Second and third moments of ``scale^p F`` per scale, with the same
    moments of the limit law ``2 (xi^2 - 1)`` for comparison."""
    lim = sample_sign_limit(limit_draws, seed)
    l2, l3 = moment_estimate(lim, 2), moment_estimate(lim, 3)
    out = []
    for scale in sorted(values_by_scale):
        v = _values(values_by_scale[scale]) * float(scale) ** normalization_power
        out.append(MomentCheck(float(scale), moment_estimate(v, 2), moment_estimate(v, 3), moment_estimate(v, 1),
                               l2, l3))
    return out


def _variance_se(v: np.ndarray) -> float:
    """Standard error of the unbiased sample variance (fourth central moment form)."""
    n = v.size
    c = v - v.mean()
    m2 = float(np.mean(c * c))
    m4 = float(np.mean(c**4))
    return math.sqrt(max(m4 - (n - 3) / (n - 1) * m2 * m2, 0.0) / n)


def variance_asymptotics_check(values_by_scale: dict, predicted=None, min_points: int = 4):
    """Fit the log-log slope of empirical variance against ``predicted(scale)``
    (default: the scale itself). Returns ``(fit, rows)`` where rows hold
    ``(scale, variance, variance_se)``."""
    rows = []
    for scale in sorted(values_by_scale):
        v = _values(values_by_scale[scale])
        if v.size < 2:
            raise ValueError("variance needs at least two replications")
        rows.append((float(scale), float(v.var(ddof=1)), _variance_se(v)))
    xs = [predicted(s) if predicted is not None else s for s, _, _ in rows]
    order = np.argsort(xs)
    fit = rate_fit([(xs[i], rows[i][1]) for i in order], min_points)
    return fit, rows


class NormalApproximation(BaseEstimator):
    """Fit on replicated statistic values; reports the Wasserstein-1 distance of
    the empirically standardized sample to ``N(0, 1)`` and the fourth-moment gap."""

    def __init__(self, min_size: int = 100):
        self.min_size = min_size

    def fit(self, X, y=None):
        v = _values(X)
        if v.size < 2:
            raise ValueError("need at least two values")
        self.mean_ = float(v.mean())
        self.scale_ = float(v.std(ddof=1))
        z = standardize(v)
        self.w1_ = wasserstein1_to_std_gaussian(z)
        self.fourth_moment_gap_, self.fourth_moment_se_ = (
            fourth_moment_gap(z, self.min_size) if v.size >= self.min_size else (math.nan, math.nan)
        )
        return self

    def transform(self, X):
        return (np.asarray(X, float) - self.mean_) / self.scale_
