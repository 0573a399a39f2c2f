"""Marked Poisson point processes on centered boxes.

Locations live in ``Window`` boxes ``[-w, w]^d``; marks are scalar reals drawn
i.i.d. from a :class:`MarkDistribution`. All samplers take an explicit seed (plus
optional key components) and are pure functions of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ._random import stream, token

__all__ = [
    "Window",
    "MarkDistribution",
    "MarkedPoint",
    "PointConfiguration",
    "Control",
    "UniformDensity",
    "BoundedDensity",
    "sample_poisson_pp",
    "sample_poissonized_binomial",
    "dumps_configuration",
    "loads_configuration",
]


@dataclass(frozen=True)
class Window:
    """Axis-aligned centered box ``[-half_width, half_width]`` per axis."""

    dim: int
    half_width: tuple[float, ...]

    def __init__(self, dim: int, half_width):
        dim = int(dim)
        if dim < 1:
            raise ValueError(f"window dimension must be >= 1, got {dim}")
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        if not np.all(np.isfinite(hw)) or np.any(hw <= 0):
            raise ValueError(f"degenerate window half-width {half_width!r}")
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "half_width", tuple(float(v) for v in hw))

    @classmethod
    def of_volume(cls, dim: int, volume: float) -> "Window":
        if not volume > 0:
            raise ValueError("window volume must be positive")
        return cls(dim, 0.5 * volume ** (1.0 / dim))

    @property
    def hw(self) -> np.ndarray:
        return np.asarray(self.half_width)

    @property
    def volume(self) -> float:
        return float(np.prod(2.0 * self.hw))

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.all(np.abs(t) <= self.hw, axis=-1)

    def dilate(self, alpha: float) -> "Window":
        return Window(self.dim, self.hw * alpha)

    def uniform(self, rng: np.random.Generator, size) -> np.ndarray:
        shape = tuple(np.atleast_1d(size)) + (self.dim,)
        return rng.uniform(-1.0, 1.0, size=shape) * self.hw


class MarkDistribution:
    """Law of the scalar mark attached to every point.

    Use the constructors :meth:`none`, :meth:`constant`, :meth:`power_law_radius`
    and :meth:`empirical`.
    """

    def __init__(self, variant: str, **params):
        self.variant = variant
        self.params = params

    # -- constructors -------------------------------------------------------
    @classmethod
    def none(cls) -> "MarkDistribution":
        return cls("none")

    @classmethod
    def constant(cls, value: float) -> "MarkDistribution":
        value = float(value)
        if not math.isfinite(value):
            raise ValueError("constant mark must be finite")
        return cls("constant", value=value)

    @classmethod
    def power_law_radius(cls, alpha: float, cutoff: float = 1.0) -> "MarkDistribution":
        """Density ``(alpha-1) c^(alpha-1) r^-alpha`` on ``r >= c``."""
        alpha, cutoff = float(alpha), float(cutoff)
        if not alpha > 1:
            raise ValueError(f"power-law exponent must exceed 1, got {alpha}")
        if not cutoff >= 1:
            raise ValueError(f"power-law cutoff must be >= 1, got {cutoff}")
        return cls("power_law_radius", alpha=alpha, cutoff=cutoff)

    @classmethod
    def empirical(cls, values: Sequence[float], probabilities: Optional[Sequence[float]] = None):
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("empirical marks need a non-empty 1-d list of values")
        p = np.full(v.size, 1.0 / v.size) if probabilities is None else np.asarray(probabilities, float)
        if p.shape != v.shape or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("empirical mark probabilities must be non-negative and sum to 1")
        return cls("empirical", values=tuple(v.tolist()), probabilities=tuple(p.tolist()))

    # -- behaviour ----------------------------------------------------------
    @property
    def is_none(self) -> bool:
        return self.variant == "none"

    def sample(self, rng: np.random.Generator, size) -> Optional[np.ndarray]:
        if self.variant == "none":
            return None
        if self.variant == "constant":
            return np.full(size, self.params["value"], dtype=float)
        if self.variant == "power_law_radius":
            a, c = self.params["alpha"], self.params["cutoff"]
            u = 1.0 - rng.random(size)  # (0, 1]
            return c * u ** (-1.0 / (a - 1.0))
        values = np.asarray(self.params["values"])
        idx = rng.choice(values.size, size=size, p=np.asarray(self.params["probabilities"]))
        return values[idx]

    def atoms(self):
        """``(values, probabilities)`` for finitely supported laws, else ``None``."""
        if self.variant == "none":
            return None
        if self.variant == "constant":
            return np.array([self.params["value"]]), np.array([1.0])
        if self.variant == "empirical":
            return np.asarray(self.params["values"]), np.asarray(self.params["probabilities"])
        raise ValueError(f"{self.variant} marks have no finite atoms")

    @property
    def finite_support(self) -> bool:
        return self.variant in ("none", "constant", "empirical")

    def tail(self, r) -> np.ndarray:
        """``P(R > r)``."""
        r = np.asarray(r, dtype=float)
        if self.variant == "none":
            raise ValueError("no marks")
        if self.variant == "constant":
            return (self.params["value"] > r).astype(float)
        if self.variant == "power_law_radius":
            a, c = self.params["alpha"], self.params["cutoff"]
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(r < c, 1.0, (c / np.maximum(r, c)) ** (a - 1.0))
        v, p = self.atoms()
        return np.sum(p * (v > r[..., None]), axis=-1)

    def pdf(self, r) -> np.ndarray:
        if self.variant != "power_law_radius":
            raise ValueError("pdf is only defined for power-law marks")
        a, c = self.params["alpha"], self.params["cutoff"]
        r = np.asarray(r, dtype=float)
        return np.where(r >= c, (a - 1.0) * c ** (a - 1.0) * np.maximum(r, c) ** (-a), 0.0)

    def to_dict(self) -> dict:
        return {"variant": self.variant, **self.params}

    def __eq__(self, other):
        return isinstance(other, MarkDistribution) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(sorted(self.to_dict().items())))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"MarkDistribution.{self.variant}({args})"


@dataclass(frozen=True)
class MarkedPoint:
    location: tuple[float, ...]
    mark: Optional[float] = None


@dataclass(frozen=True, eq=False)
class PointConfiguration:
    """Immutable finite point set with its window, intensity and seed token.

    ``locations`` has shape ``(n, d)``; ``marks`` is ``(n,)`` or ``None``.
    """

    window: Window
    intensity: float
    locations: np.ndarray
    marks: Optional[np.ndarray] = None
    seed: tuple = field(default=())

    def __post_init__(self):
        loc = np.array(self.locations, dtype=float).reshape(-1, self.window.dim)
        loc.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        if self.marks is not None:
            m = np.array(self.marks, dtype=float).reshape(-1)
            if m.shape[0] != loc.shape[0]:
                raise ValueError("marks and locations disagree in length")
            m.setflags(write=False)
            object.__setattr__(self, "marks", m)
        if loc.size and not np.all(self.window.contains(loc)):
            raise ValueError("configuration has points outside its window")

    def __len__(self) -> int:
        return self.locations.shape[0]

    def __iter__(self) -> Iterator[MarkedPoint]:
        for i in range(len(self)):
            mark = None if self.marks is None else float(self.marks[i])
            yield MarkedPoint(tuple(self.locations[i].tolist()), mark)

    @property
    def points(self) -> list[MarkedPoint]:
        return list(self)

    @property
    def dim(self) -> int:
        return self.window.dim

    def translated(self, shift) -> "PointConfiguration":
        """Shift points and window together (window re-centered as a larger box)."""
        shift = np.asarray(shift, dtype=float)
        loc = self.locations + shift
        hw = self.window.hw + np.abs(shift)
        return PointConfiguration(Window(self.dim, hw), self.intensity, loc, self.marks, self.seed)

    def permuted(self, order) -> "PointConfiguration":
        order = np.asarray(order)
        marks = None if self.marks is None else self.marks[order]
        return PointConfiguration(self.window, self.intensity, self.locations[order], marks, self.seed)

    def __eq__(self, other):
        if not isinstance(other, PointConfiguration):
            return NotImplemented
        same_marks = (self.marks is None and other.marks is None) or (
            self.marks is not None and other.marks is not None and np.array_equal(self.marks, other.marks)
        )
        return (
            self.window == other.window
            and self.intensity == other.intensity
            and np.array_equal(self.locations, other.locations)
            and same_marks
            and tuple(self.seed) == tuple(other.seed)
        )


@dataclass(frozen=True)
class Control:
    """Control measure ``intensity * Lebesgue|window (x) mark law``."""

    window: Window
    intensity: float = 1.0
    marks: MarkDistribution = field(default_factory=MarkDistribution.none)

    def __post_init__(self):
        if not (math.isfinite(self.intensity) and self.intensity > 0):
            raise ValueError(f"control intensity must be positive and finite, got {self.intensity}")

    @property
    def dim(self) -> int:
        return self.window.dim

    @property
    def mass(self) -> float:
        return self.intensity * self.window.volume

    def sample(self, rng: np.random.Generator, n: int, nvars: int):
        """Draw ``n`` tuples of ``nvars`` points from the normalized control."""
        t = self.window.uniform(rng, (n, nvars))
        m = self.marks.sample(rng, (n, nvars))
        return t, m


def _check_intensity(intensity):
    intensity = float(intensity)
    if not math.isfinite(intensity) or intensity < 0:
        raise ValueError(f"intensity must be finite and >= 0, got {intensity}")
    return intensity


def sample_poisson_pp(window: Window, intensity: float, marks: MarkDistribution = None, seed=0, key=()):
    """Marked Poisson process with control ``intensity * Lebesgue|window (x) marks``.

    The count is Poisson(intensity * volume), locations are i.i.d. uniform and
    marks i.i.d. from ``marks`` independently of locations.
    """
    intensity = _check_intensity(intensity)
    marks = MarkDistribution.none() if marks is None else marks
    key = key if isinstance(key, tuple) else (key,)
    rng = stream(seed, *key)
    n = int(rng.poisson(intensity * window.volume)) if intensity > 0 else 0
    loc = window.uniform(rng, n)
    m = marks.sample(rng, n)
    return PointConfiguration(window, intensity, loc, m, token(seed, *key))


@dataclass(frozen=True)
class UniformDensity:
    window: Window

    def sample(self, rng, n):
        return self.window.uniform(rng, n)


@dataclass(frozen=True)
class BoundedDensity:
    """Density ``pdf`` supported in ``window`` with ``pdf <= bound``.

    ``pdf`` maps an ``(n, d)`` array of locations to ``(n,)`` densities.
    """

    pdf: Callable[[np.ndarray], np.ndarray]
    window: Window
    bound: float

    def sample(self, rng, n):
        out = np.empty((0, self.window.dim))
        # acceptance rate is 1 / (bound * volume)
        while out.shape[0] < n:
            need = n - out.shape[0]
            batch = max(16, int(1.2 * need * self.bound * self.window.volume) + 16)
            prop = self.window.uniform(rng, batch)
            f = np.asarray(self.pdf(prop), dtype=float)
            if np.any(f > self.bound):
                raise ValueError(
                    f"rejection envelope {self.bound} is below the density (max probe {f.max():.6g})"
                )
            acc = rng.random(batch) * self.bound < f
            out = np.concatenate([out, prop[acc]])
        return out[:n]


def sample_poissonized_binomial(n: float, density, marks: MarkDistribution = None, seed=0, key=()):
    """``N ~ Poisson(n)`` i.i.d. locations from ``density``; control ``n f(x) dx``."""
    n = _check_intensity(n)
    marks = MarkDistribution.none() if marks is None else marks
    key = key if isinstance(key, tuple) else (key,)
    rng = stream(seed, *key)
    count = int(rng.poisson(n)) if n > 0 else 0
    loc = density.sample(rng, count)
    m = marks.sample(rng, count)
    window = density.window
    return PointConfiguration(window, n / window.volume, loc, m, token(seed, *key))


# -- serialization ----------------------------------------------------------

_HEADER = "# poisson-ustat configuration v1"


def dumps_configuration(config: PointConfiguration) -> str:
    """Line-oriented text; floats use ``repr`` so round-trips are bit-exact."""
    lines = [
        _HEADER,
        f"dim {config.dim}",
        f"intensity {config.intensity!r}",
        "half_width " + " ".join(repr(v) for v in config.window.half_width),
        "seed " + " ".join(str(v) for v in config.seed),
        f"marks {'yes' if config.marks is not None else 'no'}",
        f"points {len(config)}",
    ]
    for i in range(len(config)):
        row = [repr(float(v)) for v in config.locations[i]]
        if config.marks is not None:
            row.append(repr(float(config.marks[i])))
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def loads_configuration(text: str) -> PointConfiguration:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise ValueError("not a poisson-ustat configuration file")
    head = {}
    for line in lines[1:7]:
        name, _, rest = line.partition(" ")
        head[name] = rest.split()
    dim = int(head["dim"][0])
    intensity = float(head["intensity"][0])
    window = Window(dim, [float(v) for v in head["half_width"]])
    seed = tuple(int(v) for v in head["seed"])
    has_marks = head["marks"][0] == "yes"
    n = int(head["points"][0])
    rows = [list(map(float, line.split())) for line in lines[7 : 7 + n]]
    if len(rows) != n:
        raise ValueError(f"expected {n} point lines, found {len(rows)}")
    arr = np.asarray(rows, dtype=float).reshape(n, dim + int(has_marks))
    marks = arr[:, dim].copy() if has_marks else None
    return PointConfiguration(window, intensity, arr[:, :dim].copy(), marks, seed)
