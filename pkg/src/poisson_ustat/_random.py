"""Counter-based random streams keyed by integer tuples.

Every random draw in the package goes through :func:`stream`, so a result is
fully determined by ``(seed, *key)`` no matter how work is split across
processes.
"""

from __future__ import annotations

import numpy as np


def _as_key(parts) -> tuple[int, ...]:
    out = []
    for p in parts:
        if isinstance(p, (tuple, list)):
            out.extend(_as_key(p))
        else:
            v = int(p)
            if v < 0:
                raise ValueError(f"stream key components must be non-negative, got {v}")
            out.append(v)
    return tuple(out)


def stream(seed, *key) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *key)``."""
    seed_key = _as_key((seed,))
    if len(seed_key) == 0:
        raise ValueError("seed is required")
    ss = np.random.SeedSequence(entropy=seed_key[0], spawn_key=seed_key[1:] + _as_key(key))
    return np.random.Generator(np.random.Philox(ss))


def token(seed, *key) -> tuple[int, ...]:
    """Normalized reproducibility token stored on sampled objects."""
    return _as_key((seed,) + key)
