"""2D grid containers and the field operations shared by every stage.

Scalars (density, pressure) live at cell centers; velocity is MAC-staggered
with u on vertical faces and v on horizontal faces. Arrays are indexed
[j, i] = [row along y, column along x], row-major. Cell (i, j) has its center
at ((i + 0.5) dx, (j + 0.5) dx); u-face (i, j) sits at (i dx, (j + 0.5) dx),
v-face (i, j) at ((i + 0.5) dx, j dx).

Out-of-domain sample positions are clamped to the valid interpolation
rectangle (closed-box semantics), which also gives bilinear sampling its
max-principle property.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RHO_MAX = 1.0

BOOLEAN_OPS = ("add", "subtract", "intersect")


@dataclass(frozen=True)
class GridDims:
    nx: int
    ny: int
    dx: float

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.nx}x{self.ny}")
        if not (self.dx > 0):
            raise ValueError(f"cell size must be positive, got {self.dx}")

    @property
    def width(self) -> float:
        return self.nx * self.dx

    @property
    def height(self) -> float:
        return self.ny * self.dx

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X, Y) of cell-center world positions, each (ny, nx)."""
        xs = (np.arange(self.nx) + 0.5) * self.dx
        ys = (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(xs, ys)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass
class Field2:
    """Scalar field at cell centers; values shaped (ny, nx)."""

    dims: GridDims
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.dims.ny, self.dims.nx)
        if self.values.shape != expected:
            raise ValueError(
                f"field data shape {self.values.shape} does not match grid {expected}"
            )
        _check_finite("field", self.values)

    @classmethod
    def zeros(cls, dims: GridDims) -> "Field2":
        return cls(dims, np.zeros((dims.ny, dims.nx)))

    @classmethod
    def full(cls, dims: GridDims, value: float) -> "Field2":
        return cls(dims, np.full((dims.ny, dims.nx), float(value)))

    def copy(self) -> "Field2":
        return Field2(self.dims, self.values.copy())

    def total(self) -> float:
        return float(self.values.sum())


@dataclass
class MacVelocity2:
    """Staggered velocity: u shaped (ny, nx+1), v shaped (ny+1, nx)."""

    dims: GridDims
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        nx, ny = self.dims.nx, self.dims.ny
        if self.u.shape != (ny, nx + 1):
            raise ValueError(f"u shape {self.u.shape} does not match ({ny}, {nx + 1})")
        if self.v.shape != (ny + 1, nx):
            raise ValueError(f"v shape {self.v.shape} does not match ({ny + 1}, {nx})")
        _check_finite("u", self.u)
        _check_finite("v", self.v)

    @classmethod
    def zeros(cls, dims: GridDims) -> "MacVelocity2":
        return cls(dims, np.zeros((dims.ny, dims.nx + 1)), np.zeros((dims.ny + 1, dims.nx)))

    def copy(self) -> "MacVelocity2":
        return MacVelocity2(self.dims, self.u.copy(), self.v.copy())

    def max_speed(self) -> float:
        return float(max(np.abs(self.u).max(initial=0.0), np.abs(self.v).max(initial=0.0)))

    def to_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Average face values to cell centers; both results (ny, nx)."""
        uc = 0.5 * (self.u[:, :-1] + self.u[:, 1:])
        vc = 0.5 * (self.v[:-1, :] + self.v[1:, :])
        return uc, vc


@dataclass(frozen=True)
class NormStats:
    """Per-field data range; normalize maps [lo, hi] affinely onto [-1, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (self.hi > self.lo):
            raise ValueError(f"degenerate statistics: hi={self.hi} <= lo={self.lo}")

    @classmethod
    def from_values(cls, values: np.ndarray, pad: float = 0.0) -> "NormStats":
        lo = float(np.min(values))
        hi = float(np.max(values))
        if hi <= lo:
            hi = lo + 1.0  # constant data: widen so the map stays well defined
        span = hi - lo
        return cls(lo - pad * span, hi + pad * span)


def normalize_array(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return 2.0 * (values - stats.lo) / (stats.hi - stats.lo) - 1.0


def denormalize_array(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return (values + 1.0) * 0.5 * (stats.hi - stats.lo) + stats.lo


def normalize(fld: Field2, stats: NormStats) -> Field2:
    return Field2(fld.dims, normalize_array(fld.values, stats))


def denormalize(fld: Field2, stats: NormStats) -> Field2:
    return Field2(fld.dims, denormalize_array(fld.values, stats))


def _bilinear(grid: np.ndarray, gx, gy):
    """Sample `grid` at fractional indices, clamped to the grid rectangle.

    gx indexes the last axis (size nx), gy the first (size ny). Works on
    scalars and arrays alike.
    """
    ny, nx = grid.shape
    gx = np.clip(gx, 0.0, nx - 1.0)
    gy = np.clip(gy, 0.0, ny - 1.0)
    i0 = np.minimum(gx.astype(np.int64) if isinstance(gx, np.ndarray) else int(gx), nx - 2)
    j0 = np.minimum(gy.astype(np.int64) if isinstance(gy, np.ndarray) else int(gy), ny - 2)
    tx = gx - i0
    ty = gy - j0
    f00 = grid[j0, i0]
    f10 = grid[j0, i0 + 1]
    f01 = grid[j0 + 1, i0]
    f11 = grid[j0 + 1, i0 + 1]
    return (
        (1.0 - tx) * (1.0 - ty) * f00
        + tx * (1.0 - ty) * f10
        + (1.0 - tx) * ty * f01
        + tx * ty * f11
    )


def sample_bilinear(fld: Field2, pos: tuple[float, float]) -> float:
    """Bilinear sample of a cell-centered field at a world-space point."""
    x, y = pos
    dx = fld.dims.dx
    return float(_bilinear(fld.values, x / dx - 0.5, y / dx - 0.5))


def sample_field_many(fld: Field2, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    dx = fld.dims.dx
    return _bilinear(fld.values, xs / dx - 0.5, ys / dx - 0.5)


def sample_velocity(vel: MacVelocity2, xs, ys):
    """Interpolate both MAC components at world points; returns (u, v)."""
    dx = vel.dims.dx
    u = _bilinear(vel.u, np.asarray(xs) / dx, np.asarray(ys) / dx - 0.5)
    v = _bilinear(vel.v, np.asarray(xs) / dx - 0.5, np.asarray(ys) / dx)
    return u, v


def divergence(vel: MacVelocity2) -> Field2:
    """Per-cell discrete divergence (u_right - u_left + v_top - v_bottom)/dx."""
    dx = vel.dims.dx
    div = (vel.u[:, 1:] - vel.u[:, :-1] + vel.v[1:, :] - vel.v[:-1, :]) / dx
    return Field2(vel.dims, div)


def boolean_combine(
    a: Field2, b: Field2, op: str, rho_max: float = DEFAULT_RHO_MAX
) -> Field2:
    """Boolean density mixing: add (clamped), subtract (floored), intersect."""
    if a.dims != b.dims:
        raise ValueError(
            f"incompatible keyframes: {a.dims.nx}x{a.dims.ny} vs {b.dims.nx}x{b.dims.ny}"
        )
    if op == "add":
        out = np.minimum(a.values + b.values, rho_max)
    elif op == "subtract":
        out = np.maximum(a.values - b.values, 0.0)
    elif op == "intersect":
        out = np.minimum(a.values, b.values)
    else:
        raise ValueError(f"unknown boolean op {op!r}; expected one of {BOOLEAN_OPS}")
    return Field2(a.dims, out)
