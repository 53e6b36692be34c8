"""Periodic truncated-domain grids and conservative discrete calculus.

The box is [-L, L)^d with N cells per axis, cell centers x_j = -L + (j + 1/2) h,
h = 2L/N.  Whole-space problems are surrogated by taking initial data equal to
the far-field constant near the box boundary, so periodicity introduces no
boundary layer over the horizons simulated here.

Two families of stencils live side by side:

* cell-centered central differences (``gradient``, ``divergence``,
  ``laplacian``) used for diagnostics -- they satisfy exact discrete
  adjointness, sum f * div(v) * h^d = -sum grad(f) . v * h^d, and the
  laplacian is literally divergence(gradient(.)),
* face-based differences (``face_diff``, ``face_mean``, ``flux_divergence``)
  used by the time steppers -- every update is a difference of face fluxes,
  so cell sums telescope and mass is conserved to machine precision.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import ConfigurationError, GridMismatchError

# numpy renamed trapz -> trapezoid in 2.0
trapezoid = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "trapezoid",
    "Grid",
    "Field",
    "gradient",
    "divergence",
    "laplacian",
    "integrate",
    "l1_distance",
    "l1_norm",
    "mass_excess",
    "face_diff",
    "face_mean",
    "flux_divergence",
    "field_to_csv",
    "field_from_csv",
    "field_to_binary",
    "field_from_binary",
    "vector_to_binary",
    "vector_from_binary",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box [-L, L)^d, d in {1, 2}."""

    d: int
    L: float
    N: int

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError(f"dimension must be 1 or 2, got {self.d}")
        if self.L <= 0:
            raise ConfigurationError(f"half-width L must be positive, got {self.L}")
        if self.N < 4 or self.N % 2 != 0:
            raise ConfigurationError(f"N must be even and >= 4, got {self.N}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.d

    @property
    def n_cells(self) -> int:
        return self.N**self.d

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def centers(self) -> np.ndarray:
        """1d array of cell-center coordinates along one axis."""
        return -self.L + (np.arange(self.N) + 0.5) * self.h

    def coords(self) -> list[np.ndarray]:
        """Cell-center coordinate arrays, one per axis ('ij' indexing)."""
        c = self.centers()
        if self.d == 1:
            return [c]
        return list(np.meshgrid(c, c, indexing="ij"))

    def radius_sq(self) -> np.ndarray:
        """|x|^2 at cell centers."""
        out = np.zeros(self.shape)
        for x in self.coords():
            out += x * x
        return out

    def offsets(self) -> list[np.ndarray]:
        """Minimal-image lattice offsets along one axis, kernel layout.

        Index 0 is offset zero, positive offsets first, then negative, so an
        array tabulated on these offsets convolves cyclically via FFT or
        rolled sums without re-centering.
        """
        k = (np.arange(self.N) + self.N // 2) % self.N - self.N // 2
        off = k * self.h
        if self.d == 1:
            return [off]
        return list(np.meshgrid(off, off, indexing="ij"))


@dataclass
class Field:
    """A scalar density on a periodic grid with far-field reference value."""

    grid: Grid
    values: np.ndarray
    gamma: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.grid.shape:
            raise GridMismatchError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )
        if self.gamma <= 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.gamma)

    @classmethod
    def constant(cls, grid: Grid, gamma: float) -> "Field":
        return cls(grid, np.full(grid.shape, float(gamma)), gamma)


def _check_same_grid(a: Grid, b: Grid):
    if a != b:
        raise GridMismatchError(f"grids differ: {a} vs {b}")


# -- cell-centered central-difference calculus --------------------------------


def gradient(f: Field) -> np.ndarray:
    """Central-difference gradient; shape (d, N, ...) component-first."""
    g = grad_values(f.values, f.grid.h)
    return g


def grad_values(values: np.ndarray, h: float) -> np.ndarray:
    d = values.ndim
    return np.stack(
        [
            (np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2.0 * h)
            for a in range(d)
        ]
    )


def divergence(v: np.ndarray, grid: Grid) -> np.ndarray:
    """Face-flux-difference divergence of a cell vector field.

    Faces carry the arithmetic mean of adjacent cells, which collapses to the
    central difference and is the exact negative adjoint of ``gradient``.
    """
    if v.shape != (grid.d,) + grid.shape:
        raise GridMismatchError(
            f"vector field shape {v.shape} != {(grid.d,) + grid.shape}"
        )
    return div_values(v, grid.h)


def div_values(v: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros(v.shape[1:])
    for a in range(v.shape[0]):
        out += (np.roll(v[a], -1, axis=a) - np.roll(v[a], 1, axis=a)) / (2.0 * h)
    return out


def laplacian(f: Field) -> np.ndarray:
    """divergence(gradient(f)); same stencil composition by construction."""
    return div_values(grad_values(f.values, f.grid.h), f.grid.h)


# -- face-based conservative stencils ------------------------------------------


def face_diff(values: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Forward difference at faces: entry j is (f[j+1] - f[j]) / h."""
    return (np.roll(values, -1, axis=axis) - values) / h


def face_mean(values: np.ndarray, axis: int) -> np.ndarray:
    """Arithmetic mean of adjacent cells at faces: entry j is face j+1/2."""
    return 0.5 * (values + np.roll(values, -1, axis=axis))


def flux_divergence(face_fluxes: list[np.ndarray], h: float) -> np.ndarray:
    """(F_{j+1/2} - F_{j-1/2}) / h summed over axes; telescopes exactly."""
    out = np.zeros(face_fluxes[0].shape)
    for a, F in enumerate(face_fluxes):
        out += (F - np.roll(F, 1, axis=a)) / h
    return out


# -- quadrature ----------------------------------------------------------------


def integrate(f: Field) -> float:
    """Midpoint quadrature of f over the box."""
    return float(f.values.sum() * f.grid.cell_volume)


def l1_distance(f: Field, g: Field) -> float:
    _check_same_grid(f.grid, g.grid)
    return float(np.abs(f.values - g.values).sum() * f.grid.cell_volume)


def l1_norm(values: np.ndarray, grid: Grid) -> float:
    return float(np.abs(values).sum() * grid.cell_volume)


def mass_excess(f: Field) -> float:
    """Integral of (f - gamma), the mass carried above the far-field level."""
    return float((f.values - f.gamma).sum() * f.grid.cell_volume)


# -- serialization ---------------------------------------------------------------

_BIN_MAGIC = b"FLU1"


def field_to_csv(f: Field, path):
    """One row per cell: flat index, coordinates, value."""
    coords = f.grid.coords()
    flat = [c.ravel() for c in coords]
    vals = f.values.ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index"] + [f"x{i}" for i in range(f.grid.d)] + ["value"])
        for i in range(vals.size):
            w.writerow([i] + [repr(float(c[i])) for c in flat] + [repr(float(vals[i]))])


def field_from_csv(path, grid: Grid, gamma: float) -> Field:
    vals = np.empty(grid.n_cells)
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[0] != "index" or header[-1] != "value":
            raise ConfigurationError(f"unrecognized field CSV header: {header}")
        for row in r:
            vals[int(row[0])] = float(row[-1])
    return Field(grid, vals.reshape(grid.shape), gamma)


def field_to_binary(f: Field, path):
    """Header: d, N as int64, L, gamma as float64, all little-endian;
    payload row-major float64."""
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<qqdd", f.grid.d, f.grid.N, f.grid.L, f.gamma))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def field_from_binary(path) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BIN_MAGIC:
            raise ConfigurationError(f"not a field binary dump: {path}")
        d, N, L, gamma = struct.unpack("<qqdd", fh.read(32))
        grid = Grid(int(d), float(L), int(N))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if payload.size != grid.n_cells:
        raise ConfigurationError(
            f"payload has {payload.size} values, expected {grid.n_cells}"
        )
    return Field(grid, payload.reshape(grid.shape).copy(), float(gamma))


def vector_to_binary(v: np.ndarray, grid: Grid, path):
    """Vector-field dump: header d, N, L, n_components, payload component-major."""
    if v.shape[1:] != grid.shape:
        raise GridMismatchError(f"vector shape {v.shape} does not match {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(_BIN_MAGIC)
        fh.write(struct.pack("<qqdq", grid.d, grid.N, grid.L, v.shape[0]))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def vector_from_binary(path) -> tuple[np.ndarray, Grid]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BIN_MAGIC:
            raise ConfigurationError(f"not a vector binary dump: {path}")
        d, N, L, ncomp = struct.unpack("<qqdq", fh.read(32))
        grid = Grid(int(d), float(L), int(N))
        payload = np.frombuffer(fh.read(), dtype="<f8")
    expected = int(ncomp) * grid.n_cells
    if payload.size != expected:
        raise ConfigurationError(f"payload has {payload.size} values, expected {expected}")
    return payload.reshape((int(ncomp),) + grid.shape).copy(), grid
