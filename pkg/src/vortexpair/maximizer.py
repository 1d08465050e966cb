"""Maximize kinetic energy minus ``lam`` * impulse over a rearrangement class.

Each step linearizes the objective at the current iterate and maximizes the
linearization over the class, which is a sorting problem
(:func:`vortexpair.rearrange.rearrange_along`).  Because the discrete Green
matrix is positive definite the objective never decreases:

    F(z') - F(z) = <z' - z, psi> + E(z' - z) >= 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
import scipy.signal

from vortexpair.field import GridSpec, ScalarField, dist2, impulse, norms
from vortexpair.greens import (
    apply_green,
    green_column,
    self_interaction,
    stream_function,
    support_height_z,
)
from vortexpair.rearrange import (
    RearrangementProfile,
    is_rearrangement,
    rearrange_along,
    steiner_symmetrize,
)

__all__ = [
    "WindowExhaustionError",
    "NonMonotoneError",
    "MaximizerConfig",
    "TraceRow",
    "MaximizerResult",
    "SweepRow",
    "ascend_once",
    "shift_x1",
    "shift_x2",
    "swap_polish",
    "recenter_x1",
    "seed_field",
    "maximize",
    "comonotonicity_residual",
    "concentration_diagnostics",
    "lambda_sweep",
    "empirical_threshold",
    "support_edge_clearance",
]

log = logging.getLogger(__name__)

SEED_PLACEMENTS = ("disk", "strip", "given-field")


# past a handful of levels the grid pinning that polishing removes is
# negligible next to its cost
POLISH_AUTO_LEVELS = 8


class WindowExhaustionError(RuntimeError):
    """The computational window is too small for the vorticity it must hold."""


class NonMonotoneError(RuntimeError):
    """The objective decreased along the ascent beyond rounding tolerance."""


@dataclass
class MaximizerConfig:
    lam: float
    max_iters: int = 500
    tol_objective: float = 1e-10
    tol_field: float = 1e-12
    steiner_every: int = 0
    recenter: bool = True
    seed_placement: str = "disk"
    curtail: bool = True
    seed_center: tuple[float, float] | None = None
    initial: ScalarField | None = None
    edge_margin: int = 3
    ball_radius: float = 1.0
    polish: bool | str = "auto"  # "auto": only for ladders of at most POLISH_AUTO_LEVELS levels
    max_polish_rounds: int = 200

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise ValueError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not (isinstance(self.lam, (int, float)) and self.lam > 0):
            out.append(f"lambda must be > 0 (got {self.lam})")
        if not self.max_iters >= 1:
            out.append(f"max_iters must be >= 1 (got {self.max_iters})")
        if not self.tol_objective > 0:
            out.append(f"tol_objective must be > 0 (got {self.tol_objective})")
        if not self.tol_field > 0:
            out.append(f"tol_field must be > 0 (got {self.tol_field})")
        if self.steiner_every < 0:
            out.append(f"steiner_every must be >= 0 (got {self.steiner_every})")
        if self.seed_placement not in SEED_PLACEMENTS:
            out.append(f"seed_placement must be one of {SEED_PLACEMENTS} (got {self.seed_placement!r})")
        if self.polish not in (True, False, "auto"):
            out.append(f"polish must be true, false or 'auto' (got {self.polish!r})")
        if self.seed_placement == "given-field" and self.initial is None:
            out.append("seed_placement 'given-field' needs an initial field")
        return out


@dataclass
class TraceRow:
    iter: int
    objective: float
    delta_l2: float
    support_area: float
    best_ball_mass_R1: float


@dataclass
class MaximizerResult:
    zeta_star: ScalarField
    psi: ScalarField
    s_lambda: float
    trace: list[TraceRow]
    converged: bool
    full_rearrangement: bool
    comonotonicity_residual: float
    z_height: float
    lam: float
    warnings: list[str] = dc_field(default_factory=list)

    @property
    def iterations(self) -> int:
        return self.trace[-1].iter if self.trace else 0

    @property
    def support_top(self) -> float:
        rows = np.flatnonzero(self.zeta_star.values.any(axis=1))
        return float((rows[-1] + 1) * self.zeta_star.grid.h) if rows.size else 0.0


def _quantize(psi: ScalarField, rel: float = 1e-12) -> ScalarField:
    # collapse rounding-level differences so that symmetric ties go to the index rule
    scale = float(np.max(np.abs(psi.values)))
    if scale == 0.0:
        return psi
    q = rel * scale
    return psi.with_values(np.round(psi.values / q) * q)


def ascend_once(zeta: ScalarField, profile: RearrangementProfile, lam: float,
                positive_only: bool = False, psi: ScalarField | None = None) -> ScalarField:
    """One linearize-and-rearrange step.

    With ``positive_only`` the ladder is dropped wherever the stream function
    is not positive, which maximizes the linearization over restrictions of
    rearrangements instead of full rearrangements.
    """
    if psi is None:
        psi = stream_function(zeta, lam)
    if not positive_only and int(np.count_nonzero(psi.values > 0)) < profile.n_cells:
        raise WindowExhaustionError(
            f"only {int(np.count_nonzero(psi.values > 0))} cells have positive stream "
            f"function; the profile needs {profile.n_cells}")
    out = rearrange_along(profile, psi)
    if positive_only:
        out = out.with_values(np.where(psi.values > 0, out.values, 0.0))
    return out


def shift_x1(f: ScalarField, k: int) -> ScalarField:
    """Translate by ``k`` cells in x1 (positive = towards larger x1)."""
    if k == 0:
        return f
    v = f.values
    nx = f.grid.nx
    cols = np.flatnonzero(v.any(axis=0))
    if cols.size and (cols[0] + k < 0 or cols[-1] + k >= nx):
        raise WindowExhaustionError(f"shift by {k} cells would push the support out of the window")
    out = np.zeros_like(v)
    if k > 0:
        out[:, k:] = v[:, : nx - k]
    else:
        out[:, : nx + k] = v[:, -k:]
    return f.with_values(out)


def recenter_x1(zeta: ScalarField) -> ScalarField:
    """Integer-cell shift putting the mass centroid within h/2 of ``x1 = 0``."""
    total = float(np.sum(zeta.values))
    if total <= 0:
        raise ValueError("cannot recenter a field with no mass")
    cx = float(np.sum(zeta.values.sum(axis=0) * zeta.grid.x1)) / total
    return shift_x1(zeta, -int(round(cx / zeta.grid.h)))


def support_edge_clearance(f: ScalarField) -> dict:
    """Cells between the support and the left, right and top window edges."""
    v = f.values
    cols = np.flatnonzero(v.any(axis=0))
    rows = np.flatnonzero(v.any(axis=1))
    if cols.size == 0:
        n = max(f.grid.nx, f.grid.ny)
        return {"left": n, "right": n, "top": n}
    return {"left": int(cols[0]), "right": int(f.grid.nx - 1 - cols[-1]),
            "top": int(f.grid.ny - 1 - rows[-1])}


def _check_window(f: ScalarField, margin: int):
    c = support_edge_clearance(f)
    bad = {k: v for k, v in c.items() if v < margin}
    if bad:
        raise WindowExhaustionError(
            f"support within {margin} cells of the window edge ({bad}); enlarge the window")


def default_seed_center(profile: RearrangementProfile, grid: GridSpec, lam: float,
                        margin: int = 3) -> tuple[float, float]:
    """Height where a point vortex of the profile's circulation, paired with
    its image, translates at speed ``lam``; clamped into the window."""
    a = math.sqrt(profile.total_area / math.pi)
    target = profile.l1 / (4 * math.pi * lam)
    lo = a + margin * grid.h
    hi = grid.x2_max - a - margin * grid.h
    return 0.0, float(min(max(target, lo), max(lo, hi)))


def seed_field(profile: RearrangementProfile, grid: GridSpec, cfg: MaximizerConfig) -> ScalarField:
    if cfg.seed_placement == "given-field":
        if not cfg.initial.grid.same_as(grid):
            raise ValueError("initial field lives on a different grid")
        return cfg.initial
    cx, cy = cfg.seed_center or default_seed_center(profile, grid, cfg.lam, cfg.edge_margin)
    X1, X2 = grid.mesh()
    if cfg.seed_placement == "disk":
        key = (X1 - cx) ** 2 + (X2 - cy) ** 2
        order = np.lexsort((np.arange(grid.size), _snap(key, grid).ravel()))
    else:  # strip: a 4:1 rectangle, filled outward from its centre
        box = np.maximum(np.abs(X1 - cx) / 4.0, np.abs(X2 - cy))
        key = (X1 - cx) ** 2 + (X2 - cy) ** 2
        order = np.lexsort((np.arange(grid.size), _snap(key, grid).ravel(),
                            _snap(box, grid).ravel()))
    out = np.zeros(grid.size)
    out[order[: profile.n_cells]] = profile.expand()
    return ScalarField(grid, out.reshape(grid.shape))


def _snap(key: np.ndarray, grid: GridSpec) -> np.ndarray:
    # geometric keys equal up to rounding must tie exactly
    return np.round(key / (grid.h * 1e-9))


def comonotonicity_residual(zeta: ScalarField, psi: ScalarField) -> float:
    """Normalized violation of "zeta is an increasing function of psi".

    Sums ``max(0, psi_b - psi_a) * (zeta_a - zeta_b)`` over pairs with ``a`` in
    the support and ``zeta_a > zeta_b``, divided by ``sum zeta^2``.

    Pairs whose ``b`` lies outside the support are handled with prefix sums
    over psi; pairs inside the support by a sweep in decreasing psi with a
    Fenwick tree over the ranks of zeta, so the cost is O(N log N).
    """
    z = zeta.flat()
    p = psi.flat()
    denom = float(np.sum(z * z))
    if denom == 0.0:
        return 0.0
    sup = np.flatnonzero(z > 0)
    za, pa = z[sup], p[sup]

    # b outside the support: zeta_b = 0 < zeta_a, contributes zeta_a * sum_{psi_b > psi_a} (psi_b - psi_a)
    pz = np.sort(p[z == 0])
    tail = np.concatenate((np.cumsum(pz[::-1])[::-1], [0.0]))
    k = np.searchsorted(pz, pa, side="right")
    outside = float(np.sum(za * (tail[k] - (pz.size - k) * pa)))

    # b inside the support
    levels, rank = np.unique(za, return_inverse=True)
    n = levels.size
    trees = np.zeros((4, n + 1))  # count, sum psi, sum zeta, sum psi*zeta
    order = np.lexsort((np.arange(sup.size), -pa))
    inside = 0.0
    i = 0
    while i < order.size:
        j = i
        while j + 1 < order.size and pa[order[j + 1]] == pa[order[i]]:
            j += 1
        group = order[i : j + 1]
        for a in group:  # query strictly smaller zeta ranks among strictly larger psi
            q = np.zeros(4)
            r = int(rank[a])
            while r > 0:
                q += trees[:, r]
                r -= r & -r
            c, sp, sz, spz = q
            if c:
                inside += sp * za[a] - spz - pa[a] * za[a] * c + pa[a] * sz
        for b in group:
            r = int(rank[b]) + 1
            vec = (1.0, pa[b], za[b], pa[b] * za[b])
            while r <= n:
                trees[:, r] += vec
                r += r & -r
        i = j + 1
    return (outside + inside) / denom


def _disk(radius: float, h: float) -> np.ndarray:
    m = int(math.floor(radius / h + 1e-9))
    d = np.arange(-m, m + 1)
    DI, DJ = np.meshgrid(d, d)
    return ((DI * DI + DJ * DJ) * h * h <= radius * radius * (1 + 1e-12)).astype(float)


def concentration_diagnostics(zeta: ScalarField, radii) -> np.ndarray:
    """Largest mass in a ball of radius R centred at a cell centre, per R."""
    z = zeta.values
    out = []
    for r in radii:
        if not r > 0:
            raise ValueError(f"radii must be positive, got {r}")
        if not np.any(z):
            out.append(0.0)
            continue
        disk = _disk(r, zeta.grid.h)
        s = scipy.signal.fftconvolve(z, disk, mode="same")
        out.append(float(np.max(s)) * zeta.grid.cell_area)
    return np.array(out)


def shift_x2(f: ScalarField, k: int, margin: int = 0) -> ScalarField:
    """Translate by ``k`` cells in x2; the support must stay off the wall row
    boundary and ``margin`` cells below the top edge."""
    if k == 0:
        return f
    v = f.values
    ny = f.grid.ny
    rows = np.flatnonzero(v.any(axis=1))
    if rows.size and (rows[0] + k < 0 or rows[-1] + k > ny - 1 - margin):
        raise WindowExhaustionError(f"vertical shift by {k} cells leaves the window")
    out = np.zeros_like(v)
    if k > 0:
        out[k:] = v[: ny - k]
    else:
        out[: ny + k] = v[-k:]
    return f.with_values(out)


def swap_polish(zeta: ScalarField, lam: float, psi0: ScalarField | None = None,
                max_swaps: int = 10_000) -> ScalarField:
    """Greedy exchange of values between boundary cells.

    A fixed point of the linearized step can still gain from moving single
    cells, because the exact change of moving ``d`` from cell a to cell b is

        h^2 d (psi_b - psi_a) + h^4 d^2 (K_aa + K_bb - 2 K_ab) / 2

    and the quadratic term is positive.  Each accepted swap is the best
    improving one among cells on the edges of the level sets.
    """
    grid = zeta.grid
    if psi0 is None:
        psi0 = apply_green(zeta)
    z = zeta.values.copy()
    p0 = psi0.values.copy()
    x2 = grid.x2[:, None]
    h2 = grid.cell_area
    diag = apply_green_diag(grid)
    X1, X2 = grid.mesh()
    for _ in range(max_swaps):
        hi, lo = _level_edges(z)
        if hi.size == 0 or lo.size == 0:
            break
        zf = z.ravel()
        psi = (p0 - lam * x2).ravel()
        d = zf[hi][:, None] - zf[lo][None, :]
        ok = d > 0
        if not ok.any():
            break
        y1a, y2a = X1.ravel()[hi][:, None], X2.ravel()[hi][:, None]
        y1b, y2b = X1.ravel()[lo][None, :], X2.ravel()[lo][None, :]
        r2 = (y1a - y1b) ** 2 + (y2a - y2b) ** 2
        # a cell can sit on both edge lists; such pairs have d == 0 and are masked below
        r2 = np.where(r2 == 0.0, np.inf, r2)
        kab = np.log1p(4.0 * y2a * y2b / r2) / (4 * math.pi)
        quad = diag.ravel()[hi][:, None] + diag.ravel()[lo][None, :] - 2.0 * kab
        gain = h2 * d * (psi[lo][None, :] - psi[hi][:, None]) + 0.5 * h2 * h2 * d * d * quad
        gain = np.where(ok, gain, -np.inf)
        flat = int(np.argmax(gain))
        best = gain.flat[flat]
        scale = abs(0.5 * h2 * float(np.sum(zf * p0.ravel())))
        if not best > 1e-13 * max(scale, 1e-300):
            break
        a, b = hi[flat // lo.size], lo[flat % lo.size]
        da = zf[a] - zf[b]
        p0 += da * (green_column(grid, b) - green_column(grid, a))
        z.ravel()[a], z.ravel()[b] = zf[b], zf[a]
    return zeta.with_values(z)


def apply_green_diag(grid: GridSpec) -> np.ndarray:
    return np.broadcast_to(self_interaction(grid)[:, None], grid.shape)


def _level_edges(z: np.ndarray):
    """Flat indices of support cells touching an empty cell (``hi``) and empty
    cells touching the support (``lo``), 8-neighbourhood.  Outside the window
    counts as empty except below the wall, where the image lives."""
    pos = z > 0
    ny, nx = z.shape
    pad_pos = np.pad(pos, 1, constant_values=False)
    pad_empty = np.pad(~pos, 1, constant_values=True)
    pad_empty[0] = False
    near_pos = np.zeros(z.shape, dtype=bool)
    near_empty = np.zeros(z.shape, dtype=bool)
    for dj in (-1, 0, 1):
        for di in (-1, 0, 1):
            if dj or di:
                near_pos |= pad_pos[1 + dj : 1 + dj + ny, 1 + di : 1 + di + nx]
                near_empty |= pad_empty[1 + dj : 1 + dj + ny, 1 + di : 1 + di + nx]
    return np.flatnonzero(pos & near_empty), np.flatnonzero(~pos & near_pos)


def _reseed(zeta, profile, cfg, dx, dy):
    """Disk seed at the centroid of ``zeta`` offset by ``(dx, dy)`` cells."""
    g = zeta.grid
    w = zeta.values
    m = float(np.sum(w))
    cx = float(np.sum(w.sum(axis=0) * g.x1)) / m
    cy = float(np.sum(w.sum(axis=1) * g.x2)) / m
    cx = (math.floor(cx / g.h) + dx) * g.h
    cy = (math.floor(cy / g.h) + dy) * g.h
    c = MaximizerConfig(**{**cfg.__dict__, "seed_placement": "disk", "seed_center": (cx, cy),
                           "initial": None})
    return seed_field(profile, g, c)


def _climb(zeta, profile, cfg, k0, on_iterate=None):
    """Run the ascent from ``zeta`` until the objective and field stall."""
    lam = cfg.lam
    psi0 = apply_green(zeta)
    obj = _objective(zeta, psi0, lam)
    rows = []
    converged = False
    for k in range(k0, k0 + cfg.max_iters):
        psi = _quantize(stream_function(zeta, lam, psi0))
        new = ascend_once(zeta, profile, lam, positive_only=cfg.curtail, psi=psi)
        if cfg.steiner_every and k % cfg.steiner_every == 0:
            new = steiner_symmetrize(new)
        if cfg.recenter and np.any(new.values):
            new = recenter_x1(new)
        _check_window(new, cfg.edge_margin)
        new_psi0 = apply_green(new)
        new_obj = _objective(new, new_psi0, lam)
        if new_obj < obj - 1e-10 * max(1.0, abs(obj)):
            raise NonMonotoneError(f"objective fell from {obj!r} to {new_obj!r} at iteration {k}")
        delta = dist2(new, zeta)
        rel = abs(new_obj - obj) / max(abs(new_obj), 1e-300)
        zeta, psi0, obj = new, new_psi0, new_obj
        if on_iterate is not None:
            on_iterate(k, zeta)
        rows.append(TraceRow(k, obj, delta, zeta.support_area(),
                             float(concentration_diagnostics(zeta, [cfg.ball_radius])[0])))
        if rel < cfg.tol_objective and delta < cfg.tol_field:
            converged = True
            break
    return zeta, psi0, obj, rows, converged


def maximize(profile: RearrangementProfile, grid: GridSpec, cfg: MaximizerConfig,
             on_iterate: Callable[[int, ScalarField], None] | None = None) -> MaximizerResult:
    """Ascent to a fixed point, then (with ``cfg.polish``) alternate greedy
    swaps and vertical translations, re-climbing after each accepted move.

    ``on_iterate(k, zeta)`` sees the seed and every iterate of every climb,
    including polish trials that are later rejected."""
    lam = cfg.lam
    zeta = seed_field(profile, grid, cfg)
    _check_window(zeta, cfg.edge_margin)
    if on_iterate is not None:
        on_iterate(0, zeta)
    psi0 = apply_green(zeta)
    obj = _objective(zeta, psi0, lam)
    trace = [TraceRow(0, obj, 0.0, zeta.support_area(),
                      float(concentration_diagnostics(zeta, [cfg.ball_radius])[0]))]
    zeta, psi0, obj, rows, converged = _climb(zeta, profile, cfg, 1, on_iterate)
    trace += rows

    polish = cfg.polish
    if polish == "auto":
        polish = profile.values.size <= POLISH_AUTO_LEVELS
    rounds = 0
    while polish and converged and np.any(zeta.values) and rounds < cfg.max_polish_rounds:
        rounds += 1
        candidates = [("swap", lambda z: swap_polish(z, lam)),
                      ("steiner", steiner_symmetrize)]
        candidates += [(f"shift{k:+d}", lambda z, k=k: shift_x2(z, k, cfg.edge_margin))
                       for k in (1, -1, 2, -2)]
        candidates += [(f"reseed{dx:+.1f},{dy:+.1f}",
                        lambda z, dx=dx, dy=dy: _reseed(z, profile, cfg, dx, dy))
                       for dx in (0.0, 0.5) for dy in (0.0, -0.5, 0.5)]
        accepted = False
        for name, move in candidates:
            try:
                start = move(zeta)
                if start is zeta:
                    continue
                cz, cpsi0, cobj, _, cconv = _climb(start, profile, cfg, trace[-1].iter + 1,
                                                         on_iterate)
            except WindowExhaustionError:
                continue
            if cconv and cobj > obj + 1e-13 * max(abs(obj), 1e-300):
                trace.append(TraceRow(trace[-1].iter + 1, cobj, dist2(cz, zeta), cz.support_area(),
                                      float(concentration_diagnostics(cz, [cfg.ball_radius])[0])))
                log.debug("polish move %s raised the objective to %r", name, cobj)
                zeta, psi0, obj = cz, cpsi0, cobj
                accepted = True
                break
        if not accepted:
            break

    psi = stream_function(zeta, lam, psi0)
    warnings = []
    full, _ = is_rearrangement(zeta, profile, 0.0)
    if obj <= 0:
        warnings.append(f"objective at the optimum is {obj:.3e} <= 0: the zero field competes "
                        "and the maximizer is not a full rearrangement")
    edge_pos = _positive_on_edges(psi, zeta)
    if edge_pos:
        warnings.append(f"stream function positive on window edges {edge_pos}; "
                        "the window may truncate the positive set")
    if not converged:
        warnings.append(f"not converged after {cfg.max_iters} iterations")
    for w in warnings:
        log.warning(w)
    nr = norms(zeta)
    return MaximizerResult(
        zeta_star=zeta,
        psi=psi,
        s_lambda=obj,
        trace=trace,
        converged=converged,
        full_rearrangement=bool(full),
        comonotonicity_residual=comonotonicity_residual(zeta, psi),
        z_height=support_height_z(nr, lam),
        lam=lam,
        warnings=warnings,
    )


def _objective(zeta, psi0, lam):
    return 0.5 * float(np.sum(zeta.values * psi0.values)) * zeta.grid.cell_area - lam * impulse(zeta)


def _positive_on_edges(psi: ScalarField, zeta: ScalarField) -> list[str]:
    """Window edges where psi reaches the smallest psi on the support, i.e.
    where cells just outside the window could have competed for the ladder."""
    sup = zeta.values > 0
    if not sup.any():
        return []
    v = psi.values
    floor = max(0.0, float(v[sup].min()))
    edges = {"left": v[:, 0], "right": v[:, -1], "top": v[-1]}
    return [name for name, e in edges.items() if np.any(e > floor)]


@dataclass
class SweepRow:
    lam: float
    s_lambda: float
    full_rearrangement: bool
    support_height: float
    converged: bool
    iterations: int


def lambda_sweep(profile: RearrangementProfile, grid: GridSpec, lambdas, cfg: MaximizerConfig) -> list[SweepRow]:
    lambdas = [float(x) for x in lambdas]
    if any(x <= 0 for x in lambdas) or any(b <= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambdas must be positive and strictly ascending")
    rows = []
    for lam in lambdas:
        c = MaximizerConfig(**{**cfg.__dict__, "lam": lam})
        res = maximize(profile, grid, c)
        rows.append(SweepRow(lam, res.s_lambda, res.full_rearrangement, res.support_top,
                             res.converged, res.iterations))
    return rows


def empirical_threshold(rows: list[SweepRow]) -> float | None:
    """Largest swept lambda whose maximizer is a full rearrangement."""
    ok = [r.lam for r in rows if r.full_rearrangement]
    return max(ok) if ok else None
