"""Thin-plate-spline grid generator.

A TPS with control points ``P`` (N x 2) and targets ``V`` (N x 2) is

    f(q) = a0 + a_x * x + a_y * y + sum_i w_i * U(|p_i - q|),   U(r) = r^2 log r

with one such function per output coordinate. The coefficients come from the
block system

    [K  P1] [w]   [V]
    [P1' 0] [a] = [0]

where ``K_ij = U(|p_i - p_j|)`` and ``P1 = [1, x, y]``. The system matrix only
depends on the control lattice, so it is factorized once and reused.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.linalg

from .core import (
    DimensionError,
    InvalidInput,
    SalresampleError,
    SamplingGrid,
    identity_coords,
)


class DomainError(SalresampleError, ValueError):
    pass


class SingularSystem(SalresampleError, np.linalg.LinAlgError):
    pass


# above this condition estimate solve() goes through the LU factors instead of L^-1
COND_SWITCH = 1e10
_CHUNK_ROWS = 8192
CLAMP_TOL = 1e-9
LATTICE_TOL = 1e-10
# dense design matrices up to this many entries (~160 MB) are kept in memory
_CACHE_ENTRIES = 20_000_000


def radial_basis(r):
    """``U(r) = r**2 * log(r)`` with the limit value ``U(0) = 0``.

    Accepts scalars or arrays; negative distances raise :class:`DomainError`.
    """
    arr = np.asarray(r, dtype=np.float64)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("radial_basis needs finite, non-negative distances")
    out = np.zeros_like(arr)
    pos = arr > 0
    rp = arr[pos]
    out[pos] = rp * rp * np.log(rp)
    if out.ndim == 0:
        return float(out)
    return out


def _kernel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # pairwise U(|a_i - b_j|) using squared distances: r^2 log r = 0.5 r^2 log r^2
    d2 = (
        (a[:, None, 0] - b[None, :, 0]) ** 2
        + (a[:, None, 1] - b[None, :, 1]) ** 2
    )
    out = np.zeros_like(d2)
    pos = d2 > 0
    out[pos] = 0.5 * d2[pos] * np.log(d2[pos])
    return out


@dataclass(frozen=True)
class ControlGrid:
    """``n`` control points on a corner-aligned ``g x g`` lattice over [-1, 1]^2.

    Points are ordered row-major (y outer, x inner).
    """

    n: int = 256

    def __post_init__(self):
        g = int(round(np.sqrt(self.n)))
        if g * g != self.n or g < 2:
            raise InvalidInput(f"control point count must be a square >= 4, got {self.n}")

    @property
    def side(self) -> int:
        return int(round(np.sqrt(self.n)))

    @property
    def points(self) -> np.ndarray:
        c = identity_coords(self.side, self.side).reshape(-1, 2)
        c.setflags(write=False)
        return c


@dataclass(frozen=True, eq=False)
class TpsSystem:
    control: ControlGrid
    K: np.ndarray
    P: np.ndarray
    L: np.ndarray
    L_inv: np.ndarray
    lu: tuple = field(repr=False)
    cond: float

    @property
    def n(self) -> int:
        return self.control.n

    @property
    def points(self) -> np.ndarray:
        return self.P[:, 1:]


def build_system(control: ControlGrid = ControlGrid()) -> TpsSystem:
    return _build_system_cached(control.n)


@lru_cache(maxsize=8)
def _build_system_cached(n: int) -> TpsSystem:
    control = ControlGrid(n)
    pts = control.points
    K = _kernel(pts, pts)
    P = np.hstack([np.ones((n, 1)), pts])
    L = np.zeros((n + 3, n + 3))
    L[:n, :n] = K
    L[:n, n:] = P
    L[n:, :n] = P.T
    lu = scipy.linalg.lu_factor(L)
    if np.any(np.diag(lu[0]) == 0):
        raise SingularSystem("TPS system matrix is singular")
    L_inv = scipy.linalg.lu_solve(lu, np.eye(n + 3))
    cond = float(np.linalg.cond(L))
    for a in (K, P, L, L_inv):
        a.setflags(write=False)
    return TpsSystem(control, K, P, L, L_inv, lu, cond)


@dataclass(frozen=True, eq=False)
class TpsModel:
    """Fitted spline. ``W`` rows ``0..n-1`` are the local weights, the last three
    rows the affine part ``(const, x, y)`` for each output coordinate."""

    system: TpsSystem
    V_dot: np.ndarray
    W: np.ndarray

    @property
    def local(self) -> np.ndarray:
        return self.W[: self.system.n]

    @property
    def affine(self) -> np.ndarray:
        return self.W[self.system.n:]

    def bending_energy(self) -> float:
        """Sum over both coordinates of ``w' K w`` for the local weights."""
        w = self.local
        return float(np.einsum("ik,ij,jk->", w, self.system.K, w))


def solve(system: TpsSystem, V_dot) -> TpsModel:
    """Fit the spline that sends control point ``i`` to ``V_dot[i]`` (absolute position)."""
    V_dot = np.asarray(V_dot, dtype=np.float64)
    if V_dot.shape != (system.n, 2):
        raise DimensionError(f"expected displaced points of shape ({system.n}, 2), got {V_dot.shape}")
    if not np.all(np.isfinite(V_dot)):
        raise InvalidInput("displaced control points must be finite")
    V = np.vstack([V_dot, np.zeros((3, 2))])
    if system.cond > COND_SWITCH:
        W = scipy.linalg.lu_solve(system.lu, V)
    else:
        W = system.L_inv @ V
    V_dot = V_dot.copy()
    V_dot.setflags(write=False)
    W.setflags(write=False)
    return TpsModel(system, V_dot, W)


def solve_displacement(system: TpsSystem, delta) -> TpsModel:
    """Same as :func:`solve` with ``V_dot = control points + delta``."""
    return solve(system, system.points + np.asarray(delta, dtype=np.float64))


def design_matrix(system: TpsSystem, q) -> np.ndarray:
    """Rows ``[U(|q_k - p_1|), ..., U(|q_k - p_n|), 1, x_k, y_k]`` for points ``q`` (m x 2)."""
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    return np.hstack([_kernel(q, system.points), np.ones((len(q), 1)), q])


def evaluate(model: TpsModel, q) -> np.ndarray:
    """Evaluate the spline at one point or an ``(..., 2)`` array of points.

    This is the scalar path: explicit affine part plus a per-point kernel sum,
    deliberately not sharing code with :func:`dense_grid`.
    """
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise InvalidInput("evaluation point must be finite")
    flat = q.reshape(-1, 2)
    a = model.affine
    pts = model.system.points
    out = np.empty_like(flat)
    for k, (x, y) in enumerate(flat):
        r = np.hypot(pts[:, 0] - x, pts[:, 1] - y)
        u = radial_basis(r)
        out[k, 0] = a[0, 0] + a[1, 0] * x + a[2, 0] * y + u @ model.local[:, 0]
        out[k, 1] = a[0, 1] + a[1, 1] * x + a[2, 1] * y + u @ model.local[:, 1]
    return out.reshape(q.shape)


def dense_grid(model: TpsModel, height: int, width: int, grid_id: Optional[str] = None) -> SamplingGrid:
    """Sampling grid ``G = L' W`` over the identity lattice of the given size.

    Values leaving [-1, 1] are clamped and the grid is flagged.
    """
    if height < 2 or width < 2:
        raise DimensionError(f"need height, width >= 2, got {height}x{width}")
    raw = dense_values(model, height, width)
    # round-off at the border is clipped silently; only real overshoot is flagged
    clamped = bool(np.any(np.abs(raw) > 1.0 + CLAMP_TOL))
    np.clip(raw, -1.0, 1.0, out=raw)
    # solve round-off is ~1e-12; entries that close to the lattice are put back on it
    ident = identity_coords(height, width)
    on_lattice = np.abs(raw - ident) <= LATTICE_TOL
    raw[on_lattice] = ident[on_lattice]
    return SamplingGrid(raw, clamped=clamped, grid_id=grid_id)


def dense_values(model: TpsModel, height: int, width: int) -> np.ndarray:
    """Unclamped ``(height, width, 2)`` spline values on the identity lattice."""
    n = model.system.n
    if height * width * (n + 3) <= _CACHE_ENTRIES:
        return (dense_design(n, height, width) @ model.W).reshape(height, width, 2)
    q = identity_coords(height, width).reshape(-1, 2)
    out = np.empty_like(q)
    for start in range(0, len(q), _CHUNK_ROWS):
        stop = start + _CHUNK_ROWS
        out[start:stop] = design_matrix(model.system, q[start:stop]) @ model.W
    return out.reshape(height, width, 2)


@lru_cache(maxsize=4)
def dense_design(n: int, height: int, width: int) -> np.ndarray:
    """``L'`` for the identity lattice: ``(height * width, n + 3)``, cached."""
    D = design_matrix(_build_system_cached(n), identity_coords(height, width).reshape(-1, 2))
    D.setflags(write=False)
    return D


@lru_cache(maxsize=16)
def grid_operator(n: int, height: int, width: int) -> np.ndarray:
    """Linear map from displaced control points to the dense grid.

    Returns ``A`` of shape ``(height * width, n)`` with ``G = A @ V_dot`` (per
    coordinate); this is ``L'`` times the first ``n`` columns of ``L^-1``.
    """
    system = _build_system_cached(n)
    A = dense_design(n, height, width) @ system.L_inv[:, :n]
    A.setflags(write=False)
    return A
