"""Uniform half-plane grids, cell-centred scalar fields and their elementary
functionals (mass, impulse, L^p norms, the X and Y norms, distances).

Fields are immutable: ``ScalarField.values`` is a read-only ``(ny, nx)``
array indexed ``[j, i]``; row ``j = 0`` is the row nearest the wall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

__all__ = [
    "GridSpec",
    "ScalarField",
    "NormReport",
    "GridMismatchError",
    "impulse",
    "lp_norm",
    "norms",
    "dist2",
    "dist_y",
    "dump_field",
    "load_field",
]


class GridMismatchError(ValueError):
    """Two fields live on different grids."""


@dataclass(frozen=True)
class GridSpec:
    """Truncated window ``[x1_min, x1_max] x [0, x2_max]`` of the half-plane.

    The spacing is uniform and equal in both directions; ``h`` is derived
    from the x2 extent and checked against the x1 extent.
    """

    x1_min: float
    x1_max: float
    x2_max: float
    nx: int
    ny: int
    h: float = dc_field(init=False)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ValueError(f"nx, ny must be positive integers, got nx={self.nx}, ny={self.ny}")
        if not self.x2_max > 0:
            raise ValueError(f"x2_max must be positive, got {self.x2_max}")
        h = self.x2_max / self.ny
        width = self.x1_max - self.x1_min
        if not math.isclose(width, self.nx * h, rel_tol=1e-12, abs_tol=0.0):
            raise ValueError(
                f"non-uniform spacing: (x1_max - x1_min)/nx = {width / self.nx!r} "
                f"but x2_max/ny = {h!r}"
            )
        object.__setattr__(self, "nx", int(self.nx))
        object.__setattr__(self, "ny", int(self.ny))
        object.__setattr__(self, "h", h)

    @classmethod
    def centered(cls, h: float, nx: int, ny: int) -> "GridSpec":
        """Window symmetric about ``x1 = 0`` with spacing ``h``."""
        half = 0.5 * nx * h
        return cls(-half, half, ny * h, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def x1(self) -> np.ndarray:
        """Cell-centre abscissae, length ``nx``."""
        return self.x1_min + (np.arange(self.nx) + 0.5) * self.h

    @property
    def x2(self) -> np.ndarray:
        """Cell-centre heights, length ``ny``; all strictly positive."""
        return (np.arange(self.ny) + 0.5) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(X1, X2)`` arrays of shape ``(ny, nx)``."""
        return np.meshgrid(self.x1, self.x2)

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and math.isclose(self.h, other.h, rel_tol=1e-12)
            and math.isclose(self.x1_min, other.x1_min, rel_tol=1e-12, abs_tol=1e-12 * self.h)
        )

    def header_dict(self) -> dict:
        return {"x1_min": self.x1_min, "x1_max": self.x1_max, "x2_max": self.x2_max,
                "nx": self.nx, "ny": self.ny, "h": self.h}


class ScalarField:
    """Cell-centre samples on a :class:`GridSpec`; immutable."""

    __slots__ = ("grid", "_values")

    def __init__(self, grid: GridSpec, values):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            if arr.size != grid.size:
                raise ValueError(f"expected {grid.size} values, got {arr.size}")
            arr = arr.reshape(grid.shape)
        if arr.shape != grid.shape:
            raise ValueError(f"expected shape {grid.shape}, got {arr.shape}")
        arr.setflags(write=False)
        self.grid = grid
        self._values = arr

    @property
    def values(self) -> np.ndarray:
        return self._values

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def flat(self) -> np.ndarray:
        """Row-major (j outer, i inner) view of the samples."""
        return self._values.reshape(-1)

    def is_nonnegative(self) -> bool:
        return bool(np.all(self._values >= 0))

    def support(self) -> np.ndarray:
        return self._values != 0

    def support_area(self) -> float:
        return int(np.count_nonzero(self._values)) * self.grid.cell_area

    def mass(self) -> float:
        return float(np.sum(self._values)) * self.grid.cell_area

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self._values + other._values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _check_same_grid(self, other)
        return ScalarField(self.grid, self._values - other._values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self._values * c)

    __rmul__ = __mul__

    def __repr__(self):
        return f"ScalarField(nx={self.grid.nx}, ny={self.grid.ny}, h={self.grid.h:g})"


@dataclass(frozen=True)
class NormReport:
    l1: float
    l2: float
    lp: float
    p: float
    impulse: float
    impulse_of_abs: float
    norm_x: float
    norm_y: float


def _check_same_grid(f: ScalarField, g: ScalarField):
    if not f.grid.same_as(g.grid):
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


def impulse(f: ScalarField) -> float:
    """Midpoint quadrature of the x1-impulse, sum of f * x2 * h^2."""
    g = f.grid
    # correctly rounded row sums: invariant under any reordering within a row
    rows = [math.fsum(r) for r in f.values]
    return math.fsum(x2 * r for x2, r in zip(g.x2, rows)) * g.cell_area


def lp_norm(f: ScalarField, p: float) -> float:
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    a = np.abs(f.values)
    if math.isinf(p):
        return float(a.max()) if a.size else 0.0
    if p == 1:
        return float(np.sum(a)) * f.grid.cell_area
    if p == 2:
        return math.sqrt(float(np.sum(a * a)) * f.grid.cell_area)
    m = float(a.max())
    if m == 0.0:
        return 0.0
    # scale by the max to keep |f|^p in range for large p
    return m * (float(np.sum((a / m) ** p)) * f.grid.cell_area) ** (1.0 / p)


def norms(f: ScalarField, p: float = 4.0) -> NormReport:
    l2 = lp_norm(f, 2)
    imp = impulse(f)
    imp_abs = impulse(ScalarField(f.grid, np.abs(f.values)))
    return NormReport(
        l1=lp_norm(f, 1),
        l2=l2,
        lp=lp_norm(f, p),
        p=p,
        impulse=imp,
        impulse_of_abs=imp_abs,
        norm_x=l2 + imp_abs,
        norm_y=l2 + abs(imp),
    )


def dist2(f: ScalarField, g: ScalarField) -> float:
    _check_same_grid(f, g)
    return lp_norm(f - g, 2)


def dist_y(f: ScalarField, g: ScalarField) -> float:
    _check_same_grid(f, g)
    return lp_norm(f - g, 2) + abs(impulse(f) - impulse(g))


# --- grid dump format -------------------------------------------------------

_FIELD_MAGIC = "# vortex-field v1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_field(f: ScalarField, path) -> None:
    g = f.grid
    lines = [f"{_FIELD_MAGIC}, nx={g.nx}, ny={g.ny}, x1_min={_fmt(g.x1_min)}, h={_fmt(g.h)}"]
    for row in f.values:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path) -> ScalarField:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(_FIELD_MAGIC):
        raise ValueError(f"{path}: not a vortex-field v1 dump")
    meta = {}
    for part in text[0][len(_FIELD_MAGIC):].split(","):
        part = part.strip()
        if part:
            k, v = part.split("=")
            meta[k.strip()] = v.strip()
    nx, ny = int(meta["nx"]), int(meta["ny"])
    x1_min, h = float(meta["x1_min"]), float(meta["h"])
    rows = [r for r in text[1:] if r.strip()]
    if len(rows) != ny:
        raise ValueError(f"{path}: expected {ny} rows, found {len(rows)}")
    vals = np.array([[float(v) for v in r.split(",")] for r in rows])
    grid = GridSpec(x1_min, x1_min + nx * h, ny * h, nx, ny)
    return ScalarField(grid, vals)
