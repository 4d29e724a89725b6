"""Finite-dimensional (quasi-)normed spaces.

Four space kinds are supported, all with vectors represented as flat numpy
arrays of a fixed dimension:

* ``euclid(d)``      -- Euclidean norm on R^d.
* ``seq_lp(q, d)``   -- unweighted l^q on R^d, 0 < q < infinity.  For q < 1
  this is a quasi-norm.
* ``sup_norm(d)``    -- the max norm; the only way to spell q = infinity.
* ``nested(levels)`` -- iterated discrete Lebesgue averages: levels is a
  sequence of (q_i, d_i) pairs, the norm averages with uniform weight 1/d_i
  at every level, innermost level last.  Total dimension is prod(d_i).

Each space carries an r-normability exponent ``r = min(1, min q_i)`` (1 for
euclid and sup): the triangle inequality holds for ||.||^r with constant one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Single-vector norms switch to exact compensated accumulation above this
# dimension; below it numpy's pairwise summation is already at rounding level.
_FSUM_DIM = 1000


class SpaceError(ValueError):
    pass


@dataclass(frozen=True)
class Space:
    kind: str                      # "euclid" | "lp" | "sup" | "nested"
    shape: tuple[tuple[float, int], ...]  # (q, d) per level; one level unless nested

    def __post_init__(self):
        if self.kind not in ("euclid", "lp", "sup", "nested"):
            raise SpaceError(f"unknown space kind {self.kind!r}")
        if not self.shape:
            raise SpaceError("space needs at least one (q, d) level")
        for q, d in self.shape:
            if d < 1 or d != int(d):
                raise SpaceError(f"bad dimension {d!r}")
            if self.kind != "sup" and not (0 < q < math.inf):
                raise SpaceError(f"exponent {q!r} out of range; use sup_norm for q=inf")

    @property
    def dim(self) -> int:
        return int(np.prod([d for _, d in self.shape]))

    @property
    def r(self) -> float:
        """r-normability exponent: ||x+y||^r <= ||x||^r + ||y||^r."""
        if self.kind in ("euclid", "sup"):
            return 1.0
        return min(1.0, min(q for q, _ in self.shape))

    def norm(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise SpaceError(f"expected shape ({self.dim},), got {x.shape}")
        if self.dim > _FSUM_DIM and self.kind in ("euclid", "lp"):
            q = 2.0 if self.kind == "euclid" else self.shape[0][0]
            return math.fsum(abs(v) ** q for v in x) ** (1.0 / q)
        return float(self.norms(x[None, :])[0])

    def norms(self, arr) -> np.ndarray:
        """Vectorized norm over the trailing axis of ``arr``."""
        arr = np.asarray(arr, dtype=float)
        if arr.shape[-1] != self.dim:
            raise SpaceError(f"trailing axis must be {self.dim}, got {arr.shape[-1]}")
        if self.kind == "euclid":
            return np.sqrt(np.sum(arr * arr, axis=-1))
        if self.kind == "sup":
            return np.max(np.abs(arr), axis=-1)
        if self.kind == "lp":
            q = self.shape[0][0]
            return np.sum(np.abs(arr) ** q, axis=-1) ** (1.0 / q)
        # nested: fold from the innermost level outward, uniform weights
        out = np.abs(arr).reshape(arr.shape[:-1] + tuple(d for _, d in self.shape))
        for q, _ in reversed(self.shape):
            out = np.mean(out ** q, axis=-1) ** (1.0 / q)
        return out

    def describe(self) -> str:
        return format_space(self)


def euclid(d: int) -> Space:
    return Space("euclid", ((2.0, int(d)),))


def seq_lp(q: float, d: int) -> Space:
    return Space("lp", ((float(q), int(d)),))


def sup_norm(d: int) -> Space:
    return Space("sup", ((math.inf, int(d)),))


def nested(levels) -> Space:
    return Space("nested", tuple((float(q), int(d)) for q, d in levels))


def lu_constants(p: float) -> tuple[float, float]:
    """The two-point power comparison constants (l_p, u_p).

    l_p = 2^(1-p) v 1 and u_p = 2^(p-1) v 1 give, for all a, b >= 0,
        l_p^(-1) (a^p + b^p) <= (a + b)^p <= u_p (a^p + b^p),
    with the identity 2^(1-p) u_p = l_p tying them together.
    """
    if p <= 0:
        raise SpaceError("p must be positive")
    return max(2.0 ** (1.0 - p), 1.0), max(2.0 ** (p - 1.0), 1.0)


def parse_space(text: str) -> Space:
    """Parse the CLI space grammar.

    ``l2:8`` -> euclid(8); ``lp:0.5:4`` -> seq_lp(0.5, 4);
    ``linf:16`` -> sup_norm(16); ``nested:1x2,3x2`` -> nested([(1,2),(3,2)]).
    """
    parts = text.strip().split(":")
    try:
        if parts[0] == "l2" and len(parts) == 2:
            return euclid(int(parts[1]))
        if parts[0] == "linf" and len(parts) == 2:
            return sup_norm(int(parts[1]))
        if parts[0] == "lp" and len(parts) == 3:
            return seq_lp(float(parts[1]), int(parts[2]))
        if parts[0] == "nested" and len(parts) == 2:
            levels = []
            for item in parts[1].split(","):
                q, d = item.split("x")
                levels.append((float(q), int(d)))
            return nested(levels)
    except (ValueError, SpaceError) as exc:
        raise SpaceError(f"bad space spec {text!r}: {exc}") from exc
    raise SpaceError(f"bad space spec {text!r}")


def format_space(space: Space) -> str:
    if space.kind == "euclid":
        return f"l2:{space.dim}"
    if space.kind == "sup":
        return f"linf:{space.dim}"
    if space.kind == "lp":
        q, d = space.shape[0]
        q_text = f"{q:g}"
        return f"lp:{q_text}:{d}"
    inner = ",".join(f"{q:g}x{d}" for q, d in space.shape)
    return f"nested:{inner}"
