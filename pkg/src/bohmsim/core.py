"""Grids, sampled wave fields, difference operators, and unit handling.

Everything downstream builds on this module: uniform 1D/2D meshes, complex
and polar (amplitude/action) representations of the wave function,
second-order finite-difference stencils with hard-wall ghost points, trapezoid
quadrature, and seeded position sampling from a probability density.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import constants

TWO_PI = 2.0 * np.pi


class GridMismatchError(ValueError):
    """Field shape does not match the grid it claims to live on."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1D mesh: point k sits at x0 + k*dx."""

    x0: float
    dx: float
    n: int

    def __post_init__(self):
        if self.dx <= 0.0:
            raise ValueError("grid step must be positive")
        if self.n < 3:
            raise ValueError("need at least 3 points for difference stencils")

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n)

    @property
    def length(self) -> float:
        return self.dx * (self.n - 1)

    @classmethod
    def from_extent(cls, xmin: float, xmax: float, n: int) -> "Grid1D":
        if xmax <= xmin:
            raise ValueError("extent must have xmax > xmin")
        return cls(x0=xmin, dx=(xmax - xmin) / (n - 1), n=n)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two orthogonal 1D axes (configuration space)."""

    axis0: Grid1D
    axis1: Grid1D

    @property
    def shape(self) -> tuple[int, int]:
        return (self.axis0.n, self.axis1.n)

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis0.x, self.axis1.x, indexing="ij")


@dataclass(frozen=True)
class UnitSystem:
    """Physical constants for one simulation: SI internally.

    energy_unit is the multiplicative factor taking config-file energies
    (eV by convention) to Joules.
    """

    hbar: float = constants.hbar
    mass: float = constants.m_e
    energy_unit: float = constants.electron_volt

    def __post_init__(self):
        if self.hbar <= 0.0 or self.mass <= 0.0:
            raise ValueError("hbar and mass must be positive")

    def with_mass_ratio(self, ratio: float) -> "UnitSystem":
        """Same constants with an effective mass ratio*m_e (heterostructures)."""
        return UnitSystem(hbar=self.hbar, mass=ratio * constants.m_e,
                          energy_unit=self.energy_unit)


SI_ELECTRON = UnitSystem()


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _grid_shape(grid) -> tuple[int, ...]:
    return grid.shape if isinstance(grid, Grid2D) else (grid.n,)


def as_values(f) -> np.ndarray:
    """Accept either a bare ndarray or a field wrapper in operator calls."""
    if isinstance(f, (ComplexField, PolarField)):
        return f.values if isinstance(f, ComplexField) else f.amplitude
    return np.asarray(f)


def _check_shape(values: np.ndarray, grid) -> None:
    if values.shape != _grid_shape(grid):
        raise GridMismatchError(
            f"field shape {values.shape} does not match grid shape {_grid_shape(grid)}")


@dataclass(frozen=True)
class ComplexField:
    """Complex scalar wave sampled on a grid. Immutable after construction."""

    grid: object
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=complex)
        _check_shape(v, self.grid)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.values) ** 2


@dataclass(frozen=True)
class PolarField:
    """Amplitude/action pair (R, S) equivalent to R*exp(i*S/hbar).

    The action is stored continuity-unwrapped: adjacent differences stay
    within (-pi*hbar, pi*hbar] wherever the amplitude is above the node
    threshold. node_mask marks points where the amplitude was too small for
    the phase to mean anything; their action is carried from the previous
    grid point.
    """

    grid: object
    amplitude: np.ndarray
    action: np.ndarray
    node_mask: np.ndarray = None

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=float)
        act = np.array(self.action, dtype=float)
        _check_shape(amp, self.grid)
        _check_shape(act, self.grid)
        if np.any(amp < 0.0):
            raise ValueError("amplitude must be non-negative")
        if not (np.all(np.isfinite(amp)) and np.all(np.isfinite(act))):
            raise ValueError("field contains non-finite values")
        mask = self.node_mask
        mask = np.zeros(amp.shape, dtype=bool) if mask is None \
            else np.array(mask, dtype=bool)
        _check_shape(mask, self.grid)
        object.__setattr__(self, "amplitude", _readonly(amp))
        object.__setattr__(self, "action", _readonly(act))
        object.__setattr__(self, "node_mask", _readonly(mask))


@dataclass(frozen=True)
class PotentialSpec:
    """Static external potential. kind selects which parameters apply.

    kinds:
      flat                   value (J) everywhere
      piecewise-rectangular  baseline 0 plus rectangular segments
                             (start_m, stop_m, height_J); points landing
                             exactly on an edge get half the jump
      tabulated              explicit per-point table (J)
      harmonic               0.5 * spring_constant * (x - center)^2
    """

    kind: str
    value: float = 0.0
    segments: tuple = ()
    table: np.ndarray = None
    center: float = 0.0
    spring_constant: float = 0.0

    def __post_init__(self):
        kinds = ("flat", "piecewise-rectangular", "tabulated", "harmonic")
        if self.kind not in kinds:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        segs = tuple(tuple(float(v) for v in s) for s in self.segments)
        prev_stop = -np.inf
        for a, b, _h in segs:
            if b <= a:
                raise ValueError("segment must have stop > start")
            if a < prev_stop:
                raise ValueError("segments must be ordered and non-overlapping")
            prev_stop = b
        object.__setattr__(self, "segments", segs)
        if self.table is not None:
            t = np.array(self.table, dtype=float)
            if not np.all(np.isfinite(t)):
                raise ValueError("tabulated potential contains non-finite values")
            object.__setattr__(self, "table", _readonly(t))
        elif self.kind == "tabulated":
            raise ValueError("tabulated potential needs a table")

    @classmethod
    def flat(cls, value: float = 0.0) -> "PotentialSpec":
        return cls(kind="flat", value=value)

    @classmethod
    def barriers(cls, segments) -> "PotentialSpec":
        return cls(kind="piecewise-rectangular", segments=tuple(segments))

    @classmethod
    def tabulated(cls, table) -> "PotentialSpec":
        return cls(kind="tabulated", table=table)

    @classmethod
    def harmonic(cls, center: float, spring_constant: float) -> "PotentialSpec":
        return cls(kind="harmonic", center=center, spring_constant=spring_constant)

    @classmethod
    def harmonic_from_omega(cls, center: float, omega: float,
                            units: UnitSystem = SI_ELECTRON) -> "PotentialSpec":
        return cls.harmonic(center, units.mass * omega * omega)

    def evaluate(self, grid: Grid1D) -> np.ndarray:
        """Sample the potential on the grid, in Joules."""
        x = grid.x
        if self.kind == "flat":
            return np.full(grid.n, self.value)
        if self.kind == "harmonic":
            return 0.5 * self.spring_constant * (x - self.center) ** 2
        if self.kind == "tabulated":
            if self.table.shape != (grid.n,):
                raise GridMismatchError("tabulated potential length does not match grid")
            return self.table.copy()
        V = np.zeros(grid.n)
        tol = 1e-9 * grid.dx  # edge coincidence is an exact-placement convention
        for a, b, h in self.segments:
            V[(x > a + tol) & (x < b - tol)] += h
            V[np.abs(x - a) <= tol] += 0.5 * h
            V[np.abs(x - b) <= tol] += 0.5 * h
        return V


# ---------------------------------------------------------------------------
# difference operators


def gradient(f, grid, axis: int = 0) -> np.ndarray:
    """First spatial derivative, second-order central in the interior.

    Boundary points use first-order one-sided differences so the operator
    is defined on the whole mesh. Works on real or complex fields; for 2D
    grids `axis` picks the direction.
    """
    v = as_values(f)
    _check_shape(v, grid)
    if isinstance(grid, Grid2D):
        dx = (grid.axis0.dx, grid.axis1.dx)[axis]
        return np.gradient(v, dx, axis=axis, edge_order=1)
    return np.gradient(v, grid.dx, edge_order=1)


def laplacian(f, grid) -> np.ndarray:
    """Second derivative by the three-point stencil, hard-wall ghosts.

    Points outside the mesh are taken to be zero (the box walls sit half a
    step beyond the sampled extent), which keeps the discrete operator
    symmetric and matches the propagators' boundary handling.
    """
    v = as_values(f)
    _check_shape(v, grid)
    if isinstance(grid, Grid2D):
        return _axis_second_diff(v, grid.axis0.dx, 0) \
            + _axis_second_diff(v, grid.axis1.dx, 1)
    return _axis_second_diff(v, grid.dx, 0)


def _axis_second_diff(v: np.ndarray, dx: float, axis: int) -> np.ndarray:
    padded = np.zeros(tuple(s + 2 if a == axis else s for a, s in enumerate(v.shape)),
                      dtype=v.dtype)
    core = tuple(slice(1, -1) if a == axis else slice(None) for a in range(v.ndim))
    padded[core] = v
    lo = tuple(slice(0, -2) if a == axis else slice(None) for a in range(v.ndim))
    hi = tuple(slice(2, None) if a == axis else slice(None) for a in range(v.ndim))
    return (padded[lo] - 2.0 * v + padded[hi]) / (dx * dx)


# ---------------------------------------------------------------------------
# polar transform


def _wrap_to_half_open(d: np.ndarray) -> np.ndarray:
    # map increments into (-pi, pi]
    w = d - TWO_PI * np.round(d / TWO_PI)
    return np.where(w <= -np.pi, w + TWO_PI, w)

def _unwrap_rows(theta: np.ndarray, valid: np.ndarray,
                 anchors: np.ndarray = None) -> np.ndarray:
    """Left-to-right phase unwrap along the last axis, row-parallel.

    Flagged (invalid) points carry the running value forward unchanged.
    `anchors` pins element 0 of each row to an already-unwrapped value.
    """
    out = np.empty(theta.shape, dtype=float)
    prev = theta[:, 0].copy() if anchors is None else np.array(anchors, dtype=float)
    out[:, 0] = prev
    for k in range(1, theta.shape[1]):
        step = _wrap_to_half_open(theta[:, k] - prev)
        prev = np.where(valid[:, k], prev + step, prev)
        out[:, k] = prev
    return out


def to_polar(psi: ComplexField, units: UnitSystem = SI_ELECTRON,
             node_threshold: float = 1e-12) -> PolarField:
    """Split a complex wave into amplitude and continuity-unwrapped action.

    Parameters
    ----------
    psi : ComplexField
    units : UnitSystem
        supplies hbar for the phase-to-action scaling
    node_threshold : float
        points with density below node_threshold * max(density) have no
        trustworthy phase; their action is carried from the previous point
        and they are flagged in node_mask

    Returns
    -------
    PolarField
    """
    v = psi.values
    dens = np.abs(v) ** 2
    eps = node_threshold * dens.max()
    valid = dens >= eps if eps > 0.0 else np.ones(v.shape, dtype=bool)
    theta = np.arctan2(v.imag, v.real)
    if v.ndim == 1:
        s = _unwrap_rows(theta[None, :], valid[None, :])[0]
    else:
        # unwrap the first column, then every row anchored on it
        col = _unwrap_rows(theta[:, :1].T, valid[:, :1].T)[0]
        s = _unwrap_rows(theta, valid, anchors=col)
    return PolarField(grid=psi.grid, amplitude=np.abs(v),
                      action=units.hbar * s, node_mask=~valid)


def from_polar(p: PolarField, units: UnitSystem = SI_ELECTRON) -> ComplexField:
    """Recombine amplitude and action into the complex wave."""
    return ComplexField(grid=p.grid,
                        values=p.amplitude * np.exp(1j * p.action / units.hbar))


# ---------------------------------------------------------------------------
# quadrature and sampling


def norm(psi, grid=None) -> float:
    """Trapezoid integral of the density, over one or two axes."""
    if isinstance(psi, ComplexField):
        grid = psi.grid if grid is None else grid
        v = psi.values
    else:
        v = np.asarray(psi)
    if grid is None:
        raise ValueError("norm of a bare array needs an explicit grid")
    _check_shape(v, grid)
    dens = np.abs(v) ** 2
    if isinstance(grid, Grid2D):
        inner = np.trapezoid(dens, dx=grid.axis1.dx, axis=1)
        return float(np.trapezoid(inner, dx=grid.axis0.dx))
    return float(np.trapezoid(dens, dx=grid.dx))


def normalize(psi: ComplexField) -> ComplexField:
    n = norm(psi)
    if n <= 0.0:
        raise ValueError("cannot normalize a zero field")
    return ComplexField(grid=psi.grid, values=psi.values / np.sqrt(n))


def sample_quantum_equilibrium(density, grid, count: int, seed: int) -> np.ndarray:
    """Draw initial positions distributed like the given density.

    1D grids use exact inverse-CDF sampling on the piecewise-linear
    cumulative of the density (cell mass by trapezoid, uniform placement
    within a cell). 2D grids pick a cell by its trapezoid mass and place
    the point uniformly inside it; rows of the result are (x0, x1) pairs.
    Deterministic for a fixed seed.
    """
    d = np.asarray(density, dtype=float)
    _check_shape(d, grid)
    if count < 1:
        raise ValueError("need at least one sample")
    if np.any(d < 0.0):
        raise ValueError("density must be non-negative")
    rng = np.random.default_rng(seed)
    if isinstance(grid, Grid2D):
        cell = 0.25 * (d[:-1, :-1] + d[1:, :-1] + d[:-1, 1:] + d[1:, 1:])
        total = cell.sum()
        if total <= 0.0:
            raise ValueError("density is identically zero")
        flat = rng.choice(cell.size, size=count, p=(cell / total).ravel())
        i, j = np.unravel_index(flat, cell.shape)
        u = rng.random((count, 2))
        x0 = grid.axis0.x0 + (i + u[:, 0]) * grid.axis0.dx
        x1 = grid.axis1.x0 + (j + u[:, 1]) * grid.axis1.dx
        return np.column_stack([x0, x1])
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (d[:-1] + d[1:]) * grid.dx)])
    if cdf[-1] <= 0.0:
        raise ValueError("density is identically zero")
    return np.interp(rng.random(count) * cdf[-1], cdf, grid.x)
