"""Velocity fields, quantum potential, and trajectory integration.

A wave snapshot induces a particle velocity field v = J/rho; integrating an
ensemble of seed positions through a time sequence of such fields gives the
trajectory picture of the same dynamics. Node handling follows one rule
everywhere: points whose density falls below a fixed fraction of the peak are
flagged, and flagged values are carried from the nearest trusted grid point,
so downstream consumers never see NaN or inf.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    SI_ELECTRON,
    ComplexField,
    Grid1D,
    GridMismatchError,
    PolarField,
    UnitSystem,
    _check_shape,
    _readonly,
    as_values,
    from_polar,
    gradient,
)

# density below this fraction of its peak marks a node
NODE_DENSITY_FRACTION = 1e-12


# ---------------------------------------------------------------------------
# frame and trajectory containers


@dataclass(frozen=True)
class VelocityFrame:
    """Guidance field at one instant, with its density and node flags."""

    time: float
    grid: Grid1D
    velocity: np.ndarray
    density: np.ndarray
    node_mask: np.ndarray

    def __post_init__(self):
        vel = np.array(self.velocity, dtype=float)
        dens = np.array(self.density, dtype=float)
        mask = np.array(self.node_mask, dtype=bool)
        for a in (vel, dens, mask):
            _check_shape(a, self.grid)
        if not np.all(np.isfinite(vel)):
            raise ValueError("frame velocity must be finite everywhere; "
                             "node points carry a neighbour's value")
        if np.any(dens < 0.0):
            raise ValueError("density must be non-negative")
        object.__setattr__(self, "velocity", _readonly(vel))
        object.__setattr__(self, "density", _readonly(dens))
        object.__setattr__(self, "node_mask", _readonly(mask))


@dataclass(frozen=True)
class Trajectory:
    """One particle path sampled on the ensemble's shared time axis."""

    id: int
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        if not (t.ndim == 1 and t.shape == x.shape == v.shape):
            raise ValueError("times, positions and velocities must be "
                             "1D arrays of equal length")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("sample times must increase strictly")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "positions", _readonly(x))
        object.__setattr__(self, "velocities", _readonly(v))


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """Lockstep bundle of trajectories on one shared time axis.

    positions and velocities are (n_times, n_trajectories) matrices; column
    k belongs to ids[k]. boundary_hits counts integration sub-steps whose
    end point had to be clamped back into the box.
    """

    grid: Grid1D
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    ids: np.ndarray
    seed: int | None = None
    source: str = ""
    boundary_hits: int = 0

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        x = np.array(self.positions, dtype=float)
        v = np.array(self.velocities, dtype=float)
        ids = np.array(self.ids, dtype=int)
        if t.ndim != 1 or x.shape != (t.size, ids.size) or v.shape != x.shape:
            raise ValueError("positions/velocities must be (n_times, n_trajectories)")
        if t.size > 1 and not np.all(np.diff(t) > 0.0):
            raise ValueError("sample times must increase strictly")
        if np.unique(ids).size != ids.size:
            raise ValueError("trajectory ids must be unique")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "positions", _readonly(x))
        object.__setattr__(self, "velocities", _readonly(v))
        object.__setattr__(self, "ids", _readonly(ids))

    def __len__(self) -> int:
        return self.ids.size

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(id=int(self.ids[k]), times=self.times,
                          positions=self.positions[:, k],
                          velocities=self.velocities[:, k])

    def __iter__(self):
        return (self.trajectory(k) for k in range(len(self)))


# ---------------------------------------------------------------------------
# velocity fields


def _nearest_valid_fill(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Replace flagged entries by the value at the nearest trusted index.

    Ties between equally distant neighbours resolve leftward. With no
    trusted point at all the result is zero: there is nothing to carry.
    """
    out = np.array(values, dtype=float)
    idx = np.flatnonzero(valid)
    if idx.size == valid.size:
        return out
    if idx.size == 0:
        out[:] = 0.0
        return out
    pos = np.arange(valid.size)
    right = np.searchsorted(idx, pos)
    left = np.clip(right - 1, 0, idx.size - 1)
    right = np.clip(right, 0, idx.size - 1)
    pick_left = np.abs(pos - idx[left]) <= np.abs(idx[right] - pos)
    nearest = np.where(pick_left, idx[left], idx[right])
    bad = ~valid
    out[bad] = out[nearest[bad]]
    return out


def current_density(psi, grid, units: UnitSystem = SI_ELECTRON,
                    axis: int = 0) -> np.ndarray:
    """Probability current J = (i*hbar/2m)(psi grad psi* - psi* grad psi).

    The combination is Hermitian, so any imaginary part is pure rounding;
    it is asserted below 1e-12 of the current's scale and discarded. On 2D
    grids `axis` picks the derivative direction.
    """
    v = np.asarray(as_values(psi), dtype=complex)
    _check_shape(v, grid)
    g = gradient(v, grid, axis=axis)
    raw = 0.5j * units.hbar / units.mass * (v * np.conj(g) - np.conj(v) * g)
    scale = float(np.abs(raw.real).max())
    assert float(np.abs(raw.imag).max()) <= 1e-12 * max(scale, np.finfo(float).tiny), \
        "current density came out complex"
    return raw.real


def _zero_frame(grid: Grid1D, dens: np.ndarray, t: float) -> VelocityFrame:
    return VelocityFrame(time=t, grid=grid, velocity=np.zeros(grid.n),
                         density=dens, node_mask=np.ones(grid.n, dtype=bool))


def bohmian_velocity(psi, grid, units: UnitSystem = SI_ELECTRON, t: float = 0.0,
                     node_fraction: float = NODE_DENSITY_FRACTION) -> VelocityFrame:
    """Guidance velocity v = J/rho packaged as a VelocityFrame at time t.

    Node points (density below node_fraction of the peak) are flagged and
    take the velocity of the nearest trusted grid point, so the returned
    field is finite everywhere.
    """
    v = np.asarray(as_values(psi), dtype=complex)
    if v.ndim != 1:
        raise GridMismatchError("velocity frames are one-dimensional")
    _check_shape(v, grid)
    dens = np.abs(v) ** 2
    peak = float(dens.max())
    if peak == 0.0:
        return _zero_frame(grid, dens, t)
    jj = current_density(v, grid, units)
    valid = dens >= node_fraction * peak
    raw = np.divide(jj, dens, out=np.zeros(grid.n), where=valid)
    vel = _nearest_valid_fill(raw, valid)
    return VelocityFrame(time=t, grid=grid, velocity=vel, density=dens,
                         node_mask=~valid)


def velocity_from_phase(polar: PolarField, units: UnitSystem = SI_ELECTRON,
                        t: float = 0.0,
                        node_fraction: float = NODE_DENSITY_FRACTION) -> VelocityFrame:
    """Velocity from the action gradient, (1/m) dS/dx, as a VelocityFrame.

    The action derivative is taken through the recombined wave,
    dS/dx = hbar*(Re d(Im) - Im d(Re))/R^2, which is the derivative of the
    phase arctangent. That form shares every stencil with `bohmian_velocity`,
    so the two velocity readings agree to rounding rather than to stencil
    error, and stays well defined however large the unwrapped action grows.
    """
    grid = polar.grid
    psi = from_polar(polar, units)
    re, im = psi.values.real, psi.values.imag
    if re.ndim != 1:
        raise GridMismatchError("velocity frames are one-dimensional")
    dens = re * re + im * im
    peak = float(dens.max())
    if peak == 0.0:
        return _zero_frame(grid, dens, t)
    num = re * gradient(im, grid) - im * gradient(re, grid)
    valid = (dens >= node_fraction * peak) & ~polar.node_mask
    raw = np.divide(units.hbar * num, units.mass * dens,
                    out=np.zeros(grid.n), where=valid)
    vel = _nearest_valid_fill(raw, valid)
    return VelocityFrame(time=t, grid=grid, velocity=vel, density=dens,
                         node_mask=~valid)


def quantum_potential(amplitude, grid, units: UnitSystem = SI_ELECTRON,
                      node_fraction: float = NODE_DENSITY_FRACTION):
    """Shape-dependent potential Q = -(hbar^2/2m) * R''/R.

    Parameters
    ----------
    amplitude : array-like or PolarField
        real non-negative amplitude R on the grid
    node_fraction : float
        points with R^2 below this fraction of the peak are flagged

    Returns
    -------
    (q, mask) : tuple of ndarray
        mask flags the outer two points at each box edge (no centred
        fourth-order stencil exists there) plus every node point; flagged
        entries carry the nearest trusted value.

    The curvature uses a five-point fourth-order stencil rather than the
    propagators' three-point one: Q is a diagnostic ratio, and the higher
    order keeps its error negligible on smooth fields at practical steps.
    """
    amp = np.asarray(as_values(amplitude), dtype=float)
    if amp.ndim != 1:
        raise GridMismatchError("the quantum potential is evaluated on 1D grids")
    _check_shape(amp, grid)
    n, dx = grid.n, grid.dx
    if n < 5:
        raise ValueError("need at least five grid points for the curvature stencil")
    dens = amp * amp
    peak = float(dens.max())
    if peak == 0.0:
        return np.zeros(n), np.ones(n, dtype=bool)
    d2 = np.zeros(n)
    d2[2:-2] = (-amp[:-4] + 16.0 * amp[1:-3] - 30.0 * amp[2:-2]
                + 16.0 * amp[3:-1] - amp[4:]) / (12.0 * dx * dx)
    edge = np.zeros(n, dtype=bool)
    edge[:2] = edge[-2:] = True
    valid = (dens >= node_fraction * peak) & ~edge
    q = np.divide(-(units.hbar ** 2) / (2.0 * units.mass) * d2, amp,
                  out=np.zeros(n), where=valid)
    return _nearest_valid_fill(q, valid), ~valid


def velocity_frames(result, grid, units: UnitSystem = SI_ELECTRON,
                    node_fraction: float = NODE_DENSITY_FRACTION) -> list:
    """Guidance frames for every snapshot of a propagation result."""
    return [bohmian_velocity(s.psi, grid, units, t=s.t, node_fraction=node_fraction)
            for s in result.snapshots]


# ---------------------------------------------------------------------------
# integration


def integrate_trajectories(frames, initial_positions, *, max_step: float = None,
                           max_substeps_per_frame: int = 10000, ids=None,
                           seed: int = None, source: str = "") -> TrajectoryEnsemble:
    """Integrate an ensemble through a time sequence of velocity frames.

    Classic fourth-order Runge-Kutta on dx/dt = v(x, t), where v is bilinear:
    linear in x between grid points and linear in t between the two frames
    bracketing the evaluation time. All trajectories advance in lockstep and
    are sampled exactly at the frame times.

    Parameters
    ----------
    frames : sequence of VelocityFrame
        strictly increasing times, all on one grid
    initial_positions : array-like
        seed positions, all inside the grid extent
    max_step : float, optional
        upper bound on the integrator sub-step; each frame gap is split into
        equal sub-steps no longer than this. Default: one sub-step per gap.
    max_substeps_per_frame : int
        budget guard; a frame gap needing more sub-steps than this is a
        configuration error (denser frames or a larger budget are required)
    ids : array-like of int, optional
        trajectory labels, default 0..M-1
    seed, source : metadata recorded on the ensemble

    Returns
    -------
    TrajectoryEnsemble
        sub-step end points falling outside the box are clamped to the wall
        and counted in boundary_hits

    Raises
    ------
    ValueError
        empty frame list, non-increasing times, seeds outside the grid, or
        a frame gap exceeding the sub-step budget
    GridMismatchError
        frames on differing grids
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one velocity frame")
    grid = frames[0].grid
    for f in frames[1:]:
        if f.grid != grid:
            raise GridMismatchError("all frames must share one grid")
    times = np.array([f.time for f in frames], dtype=float)
    if times.size > 1 and not np.all(np.diff(times) > 0.0):
        raise ValueError("frame times must increase strictly")

    xs = grid.x
    lo, hi = xs[0], xs[-1]
    x = np.array(initial_positions, dtype=float).ravel()
    if np.any((x < lo) | (x > hi)):
        raise ValueError("initial positions must lie inside the grid extent")
    ids = np.arange(x.size) if ids is None else np.asarray(ids, dtype=int)

    pos = np.empty((times.size, x.size))
    vel = np.empty_like(pos)
    pos[0] = x
    vel[0] = np.interp(x, xs, frames[0].velocity)
    hits = 0

    for j in range(times.size - 1):
        fa, fb = frames[j], frames[j + 1]
        gap = times[j + 1] - times[j]
        nsub = 1 if max_step is None else max(1, math.ceil(gap / max_step))
        if nsub > max_substeps_per_frame:
            raise ValueError(
                f"frame gap {gap:g} needs {nsub} sub-steps at max_step={max_step:g} "
                f"but the budget is {max_substeps_per_frame}; supply denser frames "
                f"or raise the budget")
        va, vb = fa.velocity, fb.velocity

        def speed(y, t, ta=times[j], gap=gap, va=va, vb=vb):
            w = (t - ta) / gap
            return (1.0 - w) * np.interp(y, xs, va) + w * np.interp(y, xs, vb)

        for i in range(nsub):
            t0 = times[j] + gap * (i / nsub)
            t1 = times[j] + gap * ((i + 1) / nsub)
            h = t1 - t0
            k1 = speed(x, t0)
            k2 = speed(x + 0.5 * h * k1, t0 + 0.5 * h)
            k3 = speed(x + 0.5 * h * k2, t0 + 0.5 * h)
            k4 = speed(x + h * k3, t1)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out = (x < lo) | (x > hi)
            hits += int(np.count_nonzero(out))
            np.clip(x, lo, hi, out=x)
        pos[j + 1] = x
        vel[j + 1] = np.interp(x, xs, vb)

    return TrajectoryEnsemble(grid=grid, times=times, positions=pos,
                              velocities=vel, ids=ids, seed=seed,
                              source=source, boundary_hits=hits)


def left_probability(density, grid, positions) -> np.ndarray:
    """Integrated density strictly to the left of each position.

    Full cells contribute by the trapezoid rule; the partial cell containing
    the position contributes the integral of the linearly interpolated
    density. Positions are clamped to the grid extent first, matching the
    integrator's clamping. For a unit-normalised density the result is the
    left-of-the-particle probability.
    """
    rho = np.asarray(as_values(density), dtype=float)
    _check_shape(rho, grid)
    dx = grid.dx
    cum = np.zeros(grid.n)
    np.cumsum(0.5 * (rho[1:] + rho[:-1]) * dx, out=cum[1:])
    p = np.clip(np.asarray(positions, dtype=float), grid.x[0], grid.x[-1])
    cell = np.clip(((p - grid.x0) // dx).astype(int), 0, grid.n - 2)
    s = p - (grid.x0 + cell * dx)
    rho_at = rho[cell] + (rho[cell + 1] - rho[cell]) * (s / dx)
    return cum[cell] + 0.5 * (rho[cell] + rho_at) * s
