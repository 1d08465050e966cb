"""Half-plane Green's function (method of images), the operator G, kinetic
energy, the co-moving velocity field and the a-priori sup bound on G.

The discrete operator is midpoint quadrature of

    G(x, y) = (1/4pi) log(1 + 4 x2 y2 / |x - y|^2)

except on the diagonal, where the logarithmic singularity of the direct
part is integrated exactly over the square cell and the (regular) image
part is evaluated at the centre.  Two evaluation paths share that rule:
``direct`` (O(N^2) summation, the reference) and ``fft`` (the kernel is
Toeplitz in x1 and Toeplitz/Hankel in x2, so both halves are linear
convolutions).
"""

from __future__ import annotations

import math
import os
from functools import lru_cache

import numpy as np
import scipy.fft

from vortexpair.field import GridSpec, NormReport, ScalarField, impulse

__all__ = [
    "FOUR_PI",
    "LEMMA9_CONSTANTS",
    "SupBoundConstants",
    "CoincidentPointsError",
    "kernel",
    "kernel_log_ratio",
    "direct_self_weight",
    "self_interaction",
    "apply_green",
    "energy",
    "objective",
    "stream_function",
    "velocity",
    "sup_bound",
    "support_height_z",
    "n_threads",
    "green_column",
]

FOUR_PI = 4.0 * math.pi

# Cells per grid below which apply_green sums directly.
DIRECT_MAX_CELLS = 1024


class CoincidentPointsError(ValueError):
    pass


class SupBoundConstants:
    """Coefficients of ``4 pi ||G zeta||_inf <= c_log |z|_1 + c_imp I(|z|) + c_l2 |z|_2``.

    Derivation, for zeta >= 0 and rho = |x - y|:

    * on ``y2 >= x2/2``, ``4 x2 y2 <= 8 y2^2`` and
      ``log(1 + a + b) <= log 3 + (log a)_+ + (log b)_+`` with ``a = 8 y2^2``,
      ``b = rho^-2`` (the constant 1 contributes log 1 = 0);
    * ``(log 8 y2^2)_+ <= log 8 + 2 y2`` gives ``log 8 |z|_1 + 2 I(z)``;
    * ``(log rho^-2)_+`` is supported on ``rho <= 1`` and by Cauchy-Schwarz
      contributes ``(int_{rho<=1} 4 log^2 rho)^(1/2) |z|_2``; with
      ``int_0^1 r log^2 r dr = 1/4`` that integral is ``2 pi``;
    * on ``y2 <= x2/2``, ``rho >= x2/2`` and ``4 x2 y2 <= 2 x2^2`` so the
      kernel is at most ``log 9``.

    Summing: ``c_log = log 3 + log 8 + log 9 = log 216``, ``c_imp = 2``,
    ``c_l2 = sqrt(2 pi)``.
    """

    c_log = math.log(216.0)
    c_imp = 2.0
    c_l2 = math.sqrt(2.0 * math.pi)

    @classmethod
    def as_dict(cls) -> dict:
        return {"c_log": cls.c_log, "c_imp": cls.c_imp, "c_l2": cls.c_l2,
                "prefactor": 1.0 / FOUR_PI}


LEMMA9_CONSTANTS = SupBoundConstants.as_dict()


def n_threads() -> int:
    """Worker cap for FFTs, from ``VPL_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("VPL_THREADS", "1")))
    except ValueError:
        return 1


def kernel(x, y) -> float:
    """Green's function of -Laplace on the half-plane with Dirichlet wall."""
    x1, x2 = x
    y1, y2 = y
    r2 = (x1 - y1) ** 2 + (x2 - y2) ** 2
    if r2 == 0.0:
        raise CoincidentPointsError(f"kernel is singular at x = y = {tuple(x)}")
    return math.log1p(4.0 * x2 * y2 / r2) / FOUR_PI


def kernel_log_ratio(x, y) -> float:
    """Same kernel written as the log of the image/direct distance ratio."""
    x1, x2 = x
    y1, y2 = y
    num = (x1 - y1) ** 2 + (x2 + y2) ** 2
    den = (x1 - y1) ** 2 + (x2 - y2) ** 2
    if den == 0.0:
        raise CoincidentPointsError(f"kernel is singular at x = y = {tuple(x)}")
    return math.log(num / den) / FOUR_PI


def direct_self_weight(h: float) -> float:
    """Cell average of ``-(1/2pi) log|y|`` over a square of side ``h``
    centred at the origin.

    Uses ``int_{[-a,a]^2} log(x^2 + y^2) = 4 a^2 (log(2 a^2) - 3 + pi/2)``.
    """
    return -(math.log(0.5 * h * h) - 3.0 + 0.5 * math.pi) / FOUR_PI


def self_interaction(grid: GridSpec) -> np.ndarray:
    """Diagonal kernel weight per row (direct part exact, image at centre)."""
    return direct_self_weight(grid.h) + np.log(4.0 * grid.x2**2) / FOUR_PI


# --- operator G --------------------------------------------------------------


def _grid_key(grid: GridSpec):
    return (grid.nx, grid.ny, grid.h)


@lru_cache(maxsize=16)
def _fft_plan(nx: int, ny: int, h: float):
    ly = scipy.fft.next_fast_len(2 * ny - 1, real=True)
    lx = scipy.fft.next_fast_len(2 * nx - 1, real=True)
    di = np.arange(-(nx - 1), nx)
    dj = np.arange(-(ny - 1), ny)
    DI, DJ = np.meshgrid(di, dj)
    direct = np.zeros((ly, lx))
    with np.errstate(divide="ignore"):
        vals = -np.log((DI * DI + DJ * DJ) * (h * h)) / FOUR_PI
    vals[ny - 1, nx - 1] = direct_self_weight(h)
    direct[DJ % ly, DI % lx] = vals
    # image part indexed by q = j - m with m the flipped source row; x2 + y2 = (q + ny) h
    image = np.zeros((ly, lx))
    image[DJ % ly, DI % lx] = np.log((DI * DI + (DJ + ny) ** 2) * (h * h)) / FOUR_PI
    return (ly, lx,
            scipy.fft.rfft2(direct),
            scipy.fft.rfft2(image))


def _apply_fft(grid: GridSpec, z: np.ndarray) -> np.ndarray:
    ly, lx, kd, ki = _fft_plan(*_grid_key(grid))
    w = n_threads()
    fz = scipy.fft.rfft2(z, s=(ly, lx), workers=w)
    fzf = scipy.fft.rfft2(z[::-1], s=(ly, lx), workers=w)
    out = scipy.fft.irfft2(fz * kd + fzf * ki, s=(ly, lx), workers=w)
    return out[: grid.ny, : grid.nx] * grid.cell_area


def _apply_direct(grid: GridSpec, z: np.ndarray) -> np.ndarray:
    X1, X2 = grid.mesh()
    x1 = X1.ravel()
    x2 = X2.ravel()
    zf = z.ravel()
    src = np.flatnonzero(zf)
    out = np.zeros(grid.size)
    if src.size == 0:
        return out.reshape(grid.shape)
    y1, y2, zs = x1[src], x2[src], zf[src]
    diag = direct_self_weight(grid.h) + np.log(4.0 * x2 * x2) / FOUR_PI
    chunk = max(1, 2_000_000 // src.size)
    for start in range(0, grid.size, chunk):
        t = slice(start, min(start + chunk, grid.size))
        d1 = x1[t, None] - y1[None, :]
        d2 = x2[t, None] - y2[None, :]
        r2 = d1 * d1 + d2 * d2
        with np.errstate(divide="ignore", invalid="ignore"):
            k = np.log1p(4.0 * x2[t, None] * y2[None, :] / r2) / FOUR_PI
        hit = r2 == 0.0
        if hit.any():
            rows, cols = np.nonzero(hit)
            k[rows, cols] = diag[src[cols]]
        out[t] = k @ zs
    return (out * grid.cell_area).reshape(grid.shape)


def apply_green(zeta: ScalarField, method: str = "auto") -> ScalarField:
    """Stream function ``psi0 = G zeta`` sampled at cell centres."""
    grid = zeta.grid
    z = zeta.values
    if method == "auto":
        method = "direct" if grid.size <= DIRECT_MAX_CELLS else "fft"
    if method == "direct":
        return ScalarField(grid, _apply_direct(grid, z))
    if method == "fft":
        return ScalarField(grid, _apply_fft(grid, z))
    raise ValueError(f"unknown method {method!r}")


def energy(zeta: ScalarField, psi0: ScalarField | None = None) -> float:
    if psi0 is None:
        psi0 = apply_green(zeta)
    return 0.5 * float(np.sum(zeta.values * psi0.values)) * zeta.grid.cell_area


def objective(zeta: ScalarField, lam: float, psi0: ScalarField | None = None) -> float:
    """Kinetic energy minus ``lam`` times impulse."""
    return energy(zeta, psi0) - lam * impulse(zeta)


def stream_function(zeta: ScalarField, lam: float, psi0: ScalarField | None = None) -> ScalarField:
    """Co-moving stream function ``G zeta - lam x2``."""
    if psi0 is None:
        psi0 = apply_green(zeta)
    return psi0.with_values(psi0.values - lam * zeta.grid.x2[:, None])


def _d_dx1(psi: np.ndarray, h: float) -> np.ndarray:
    d = np.empty_like(psi)
    nx = psi.shape[1]
    if nx == 1:
        d[:] = 0.0
        return d
    d[:, 1:-1] = (psi[:, 2:] - psi[:, :-2]) / (2 * h)
    if nx >= 3:
        d[:, 0] = (-3 * psi[:, 0] + 4 * psi[:, 1] - psi[:, 2]) / (2 * h)
        d[:, -1] = (3 * psi[:, -1] - 4 * psi[:, -2] + psi[:, -3]) / (2 * h)
    else:
        d[:, 0] = d[:, -1] = (psi[:, 1] - psi[:, 0]) / h
    return d


def _d_dx2(psi: np.ndarray, h: float) -> np.ndarray:
    # ghost row below the wall: psi0(x1, -x2) = -psi0(x1, x2)
    d = np.empty_like(psi)
    ny = psi.shape[0]
    if ny == 1:
        d[0] = psi[0] / h
        return d
    d[0] = (psi[1] + psi[0]) / (2 * h)
    d[1:-1] = (psi[2:] - psi[:-2]) / (2 * h)
    if ny >= 3:
        d[-1] = (3 * psi[-1] - 4 * psi[-2] + psi[-3]) / (2 * h)
    else:
        d[-1] = (psi[-1] - psi[-2]) / h
    return d


def velocity(zeta: ScalarField, lam: float, psi0: ScalarField | None = None):
    """``u = lam e1 + perp-grad(G zeta)`` at cell centres as ``(u1, u2)``."""
    if psi0 is None:
        psi0 = apply_green(zeta)
    h = zeta.grid.h
    p = psi0.values
    u1 = lam - _d_dx2(p, h)
    u2 = _d_dx1(p, h)
    return ScalarField(zeta.grid, u1), ScalarField(zeta.grid, u2)


def sup_bound(nr: NormReport) -> float:
    """A-priori upper bound on ``max |G zeta|`` from the field's norms."""
    c = SupBoundConstants
    return (c.c_log * nr.l1 + c.c_imp * nr.impulse_of_abs + c.c_l2 * nr.l2) / FOUR_PI


def support_height_z(nr: NormReport, lam: float) -> float:
    """Height above which ``G zeta - lam x2 < 0`` for any field with these norms."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return sup_bound(nr) / lam


def green_column(grid: GridSpec, index: int) -> np.ndarray:
    """``h^2 G(x, y_index)`` for every cell centre x, shape ``(ny, nx)``."""
    j, i = divmod(int(index), grid.nx)
    X1, X2 = grid.mesh()
    y1, y2 = grid.x1[i], grid.x2[j]
    r2 = (X1 - y1) ** 2 + (X2 - y2) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        col = np.log1p(4.0 * X2 * y2 / r2) / FOUR_PI
    col[j, i] = direct_self_weight(grid.h) + math.log(4.0 * y2 * y2) / FOUR_PI
    return col * grid.cell_area
