"""Rearrangement classes on the grid and the operations that move within them.

On a uniform grid a rearrangement class is a finite object: the multiset
of cell values.  :class:`RearrangementProfile` stores it as a descending
ladder of ``(value, cell count)`` pairs; zero is never a level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vortexpair.field import ScalarField

__all__ = [
    "RearrangementProfile",
    "DriftReport",
    "NegativeValuesError",
    "InsufficientAreaError",
    "decreasing_rearrangement",
    "distribution_drift",
    "is_rearrangement",
    "is_sub_rearrangement",
    "rearrange_along",
    "placement_order",
    "steiner_symmetrize",
    "steiner_row_order",
    "curtail_negative_stream",
    "dump_profile",
    "load_profile",
]


class NegativeValuesError(ValueError):
    pass


class InsufficientAreaError(ValueError):
    """The unmasked region cannot hold the profile's support."""


@dataclass(frozen=True, eq=False)
class RearrangementProfile:
    """Decreasing rearrangement as a ladder.

    ``values`` strictly decreasing and positive; ``counts[k]`` is the number
    of cells carrying ``values[k]``, so the level's area is ``counts[k] * h**2``.
    """

    values: np.ndarray
    counts: np.ndarray
    h: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        c = np.asarray(self.counts, dtype=np.int64).copy()
        if v.shape != c.shape or v.ndim != 1:
            raise ValueError("values and counts must be 1-d and of equal length")
        if v.size and (np.any(v <= 0) or np.any(np.diff(v) >= 0)):
            raise ValueError("ladder values must be positive and strictly decreasing")
        if np.any(c <= 0):
            raise ValueError("ladder counts must be positive")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "h", float(self.h))

    @classmethod
    def patch(cls, value: float, area: float, h: float) -> "RearrangementProfile":
        """Single-level profile: ``value`` on ``round(area / h^2)`` cells."""
        n = int(round(area / (h * h)))
        if n < 1 or not value > 0:
            raise ValueError(f"patch needs value > 0 and area >= h^2 (value={value}, area={area})")
        return cls(np.array([value]), np.array([n]), h)

    @classmethod
    def bump(cls, peak: float, radius: float, h: float, power: float = 2.0) -> "RearrangementProfile":
        """Ladder of ``peak * (1 - r^2/radius^2)^power`` sampled on a cell-centred
        disk of spacing ``h``."""
        m = int(math.ceil(radius / h)) + 1
        c = (np.arange(-m, m) + 0.5) * h
        R2 = c[None, :] ** 2 + c[:, None] ** 2
        v = peak * np.clip(1.0 - R2 / radius**2, 0.0, None) ** power
        vals, counts = np.unique(v[v > 0], return_counts=True)
        return cls(vals[::-1], counts[::-1], h)

    @property
    def areas(self) -> np.ndarray:
        return self.counts * (self.h * self.h)

    @property
    def n_cells(self) -> int:
        return int(self.counts.sum())

    @property
    def total_area(self) -> float:
        return self.n_cells * self.h * self.h

    @property
    def l1(self) -> float:
        return float(np.sum(self.values * self.counts)) * self.h * self.h

    @property
    def l2(self) -> float:
        return math.sqrt(float(np.sum(self.values**2 * self.counts)) * self.h * self.h)

    def lp(self, p: float) -> float:
        if math.isinf(p):
            return float(self.values[0]) if self.values.size else 0.0
        return (float(np.sum(self.values**p * self.counts)) * self.h * self.h) ** (1.0 / p)

    def expand(self) -> np.ndarray:
        """Every cell value, descending."""
        return np.repeat(self.values, self.counts)

    def ladder(self) -> list[tuple[float, float]]:
        return [(float(v), float(a)) for v, a in zip(self.values, self.areas)]

    def __eq__(self, other):
        if not isinstance(other, RearrangementProfile):
            return NotImplemented
        return (np.array_equal(self.values, other.values)
                and np.array_equal(self.counts, other.counts)
                and self.h == other.h)

    def __repr__(self):
        return f"RearrangementProfile(levels={self.values.size}, cells={self.n_cells}, h={self.h:g})"


def decreasing_rearrangement(f: ScalarField) -> RearrangementProfile:
    v = f.flat()
    if np.any(v < 0):
        raise NegativeValuesError("decreasing rearrangement needs a nonnegative field")
    vals, counts = np.unique(v[v > 0], return_counts=True)
    return RearrangementProfile(vals[::-1], counts[::-1], f.grid.h)


@dataclass(frozen=True)
class DriftReport:
    drift: float
    level_area_drift: np.ndarray  # signed area mismatch per profile level

    @property
    def max_level_drift(self) -> float:
        return float(np.max(np.abs(self.level_area_drift))) if self.level_area_drift.size else 0.0


def distribution_drift(f: ScalarField, profile: RearrangementProfile) -> float:
    """``int_0^inf | |{f > a}| - |{profile > a}| | da``.

    Both distribution functions are step functions with jumps at the
    merged set of levels, so the integral is an exact finite sum.
    """
    fv = np.sort(f.flat()[f.flat() > 0])
    fa = f.grid.cell_area
    pv = profile.values[::-1]  # ascending
    pc = profile.counts[::-1]
    brk = np.unique(np.concatenate(([0.0], fv, pv)))
    if brk.size == 1:
        return 0.0
    upper = brk[1:]
    widths = np.diff(brk)
    # area of {f >= upper[k]}, which equals |{f > a}| for a in (brk[k], brk[k+1])
    mu_f = (fv.size - np.searchsorted(fv, upper, side="left")) * fa
    csum = np.concatenate(([0], np.cumsum(pc)))
    mu_p = (csum[-1] - csum[np.searchsorted(pv, upper, side="left")]) * profile.h**2
    return float(np.sum(np.abs(mu_f - mu_p) * widths))


def _level_area_drift(f: ScalarField, profile: RearrangementProfile) -> np.ndarray:
    if profile.values.size == 0:
        return np.zeros(0)
    v = profile.values
    # band edges halfway between consecutive levels; below half the lowest level counts as zero
    edges = np.concatenate(((v[:-1] + v[1:]) / 2, [v[-1] / 2]))
    fv = f.flat()
    fv = fv[fv > 0]
    # band index k: edges[k] <= value < edges[k-1]
    idx = np.searchsorted(-edges, -fv, side="right")
    have = np.bincount(idx[idx < v.size], minlength=v.size) * f.grid.cell_area
    return have - profile.areas


def is_rearrangement(f: ScalarField, profile: RearrangementProfile, tol: float = 1e-9):
    """Membership of ``f`` in the profile's rearrangement class.

    Returns ``(ok, report)``; ``ok`` is ``report.drift <= tol``.
    """
    if np.any(f.values < 0):
        raise NegativeValuesError("membership test needs a nonnegative field")
    rep = DriftReport(distribution_drift(f, profile), _level_area_drift(f, profile))
    return rep.drift <= tol, rep


def is_sub_rearrangement(f: ScalarField, profile: RearrangementProfile) -> bool:
    """Exact test that ``f`` is a restriction of a rearrangement of the profile:
    its positive values form a sub-multiset of the ladder."""
    fv = f.flat()
    if np.any(fv < 0):
        return False
    vals, counts = np.unique(fv[fv > 0], return_counts=True)
    if vals.size == 0:
        return True
    pv = profile.values[::-1]
    pc = profile.counts[::-1]
    pos = np.searchsorted(pv, vals)
    pos_c = np.minimum(pos, pv.size - 1)
    found = (pos < pv.size) & (pv[pos_c] == vals)
    return bool(np.all(found) and np.all(counts <= pc[pos_c]))


def placement_order(psi: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Flat cell indices by descending ``psi``; ties by ascending index."""
    p = np.asarray(psi, dtype=float).reshape(-1)
    idx = np.arange(p.size)
    if mask is not None:
        idx = idx[np.asarray(mask, dtype=bool).reshape(-1)]
    order = np.lexsort((idx, -p[idx]))
    return idx[order]


def rearrange_along(profile: RearrangementProfile, psi: ScalarField, mask=None) -> ScalarField:
    """Place the ladder on the cells of largest ``psi`` (largest value on largest psi).

    This maximizes ``sum zeta * psi`` over all fields equimeasurable with the
    profile on the unmasked cells.
    """
    if not math.isclose(profile.h, psi.grid.h, rel_tol=1e-12):
        raise ValueError(f"profile spacing {profile.h} differs from grid spacing {psi.grid.h}")
    order = placement_order(psi.values, mask)
    n = profile.n_cells
    if n > order.size:
        raise InsufficientAreaError(
            f"profile needs {n} cells but only {order.size} are available")
    out = np.zeros(psi.grid.size)
    out[order[:n]] = profile.expand()
    return ScalarField(psi.grid, out.reshape(psi.grid.shape))


def steiner_row_order(f: ScalarField) -> np.ndarray:
    """Column indices ordered by ``|x1|`` ascending, ties with ``x1 > 0`` first."""
    g = f.grid
    twice = 2.0 * g.x1 / g.h
    keys = np.round(twice)
    if not np.allclose(keys, twice, rtol=0, atol=1e-6):
        keys = twice
    return np.lexsort((keys < 0, np.abs(keys)))


def steiner_symmetrize(f: ScalarField) -> ScalarField:
    """Row-wise symmetric-decreasing rearrangement about ``x1 = 0``."""
    if np.any(f.values < 0):
        raise NegativeValuesError("Steiner symmetrization needs a nonnegative field")
    cols = steiner_row_order(f)
    out = np.empty_like(f.values)
    out[:, cols] = -np.sort(-f.values, axis=1)
    return f.with_values(out)


def curtail_negative_stream(zeta: ScalarField, psi_total: ScalarField) -> ScalarField:
    """Zero ``zeta`` wherever the co-moving stream function is ``<= 0``."""
    return zeta.with_values(np.where(psi_total.values > 0, zeta.values, 0.0))


# --- profile CSV --------------------------------------------------------------

_PROFILE_MAGIC = "# profile v1"


def dump_profile(profile: RearrangementProfile, path) -> None:
    lines = [f"{_PROFILE_MAGIC}, h={profile.h:.17g}"]
    lines += [f"{v:.17g},{a:.17g}" for v, a in profile.ladder()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_profile(path) -> RearrangementProfile:
    text = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not text or not text[0].startswith(_PROFILE_MAGIC):
        raise ValueError(f"{path}: not a profile v1 file")
    h = float(text[0].split("h=")[1])
    vals, counts = [], []
    for ln in text[1:]:
        v, a = (float(s) for s in ln.split(","))
        n = a / (h * h)
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError(f"{path}: area {a} is not a multiple of h^2")
        vals.append(v)
        counts.append(int(round(n)))
    return RearrangementProfile(np.array(vals), np.array(counts, dtype=np.int64), h)
