"""Mean values computed the operator way, the density way, and from ensembles.

Every supported observable can be read three ways: from the wave function
with the usual operator sandwich, from the density and phase fields, and as
a plain average over a trajectory ensemble. Reports carry all readings that
were computable plus the tolerances used to flag their mutual agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    SI_ELECTRON,
    ComplexField,
    Grid1D,
    PotentialSpec,
    UnitSystem,
    _check_shape,
    _readonly,
    as_values,
    gradient,
    laplacian,
)
from .trajectories import (
    NODE_DENSITY_FRACTION,
    TrajectoryEnsemble,
    _nearest_valid_fill,
    left_probability,
)


class InconclusiveRunError(RuntimeError):
    """The run did not reach a state from which the observable is defined."""


@dataclass(frozen=True)
class ObservableReport:
    """One observable, up to three readings, and their agreement flags."""

    name: str
    unit: str
    orthodox_value: float = None
    bohmian_density_value: float = None
    trajectory_ensemble_value: float = None
    tolerances: dict = field(default_factory=dict)

    def agreement(self) -> dict:
        """Pairwise pass/fail for every reading pair with a tolerance."""
        pairs = (("orthodox_vs_density", self.orthodox_value,
                  self.bohmian_density_value),
                 ("density_vs_ensemble", self.bohmian_density_value,
                  self.trajectory_ensemble_value))
        flags = {}
        for key, a, b in pairs:
            if a is not None and b is not None and key in self.tolerances:
                flags[key] = bool(abs(a - b) <= self.tolerances[key])
        return flags


@dataclass(frozen=True)
class LocalMean:
    """Local mean field A_B(x) = Re[psi* A psi]/rho plus its weighted mean.

    Node points are flagged, their field values carried from the nearest
    trusted point, and their probability mass excluded from the mean and
    reported separately.
    """

    name: str
    values: np.ndarray
    node_mask: np.ndarray
    mean: float
    imaginary_mean: float
    excluded_mass: float

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.array(self.values, dtype=float)))
        object.__setattr__(self, "node_mask", _readonly(np.array(self.node_mask, dtype=bool)))


def _weights(grid: Grid1D) -> np.ndarray:
    w = np.full(grid.n, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    return w


def _field_and_grid(psi, grid):
    if isinstance(psi, ComplexField):
        grid = psi.grid if grid is None else grid
        v = psi.values
    else:
        if grid is None:
            raise ValueError("a bare array needs an explicit grid")
        v = np.asarray(psi)
    v = np.asarray(v, dtype=complex)
    _check_shape(v, grid)
    return v, grid


# ---------------------------------------------------------------------------
# mean values


def mean_position(psi=None, ensemble: TrajectoryEnsemble = None, grid: Grid1D = None,
                  row: int = -1) -> ObservableReport:
    """Mean position from the density and/or a trajectory ensemble row.

    The position operator is multiplicative, so the operator reading and the
    density reading are the same integral; both slots are filled with it.
    The ensemble tolerance is the Monte-Carlo band 4*std/sqrt(M).
    """
    orth = dens_val = ens_val = None
    tol = {}
    if psi is not None:
        v, grid = _field_and_grid(psi, grid)
        rho = (np.conj(v) * v).real
        total = np.trapezoid(rho, dx=grid.dx)
        orth = dens_val = float(np.trapezoid(rho * grid.x, dx=grid.dx) / total)
        tol["orthodox_vs_density"] = 0.0
    if ensemble is not None:
        xs = ensemble.positions[row]
        ens_val = float(xs.mean())
        if dens_val is not None:
            tol["density_vs_ensemble"] = 4.0 * float(xs.std()) / math.sqrt(xs.size)
    return ObservableReport(name="position", unit="m", orthodox_value=orth,
                            bohmian_density_value=dens_val,
                            trajectory_ensemble_value=ens_val, tolerances=tol)


def mean_momentum(psi=None, ensemble: TrajectoryEnsemble = None, grid: Grid1D = None,
                  units: UnitSystem = SI_ELECTRON, row: int = -1,
                  node_fraction: float = NODE_DENSITY_FRACTION) -> ObservableReport:
    """Mean momentum three ways.

    Operator reading: Re of the -i*hbar*d/dx sandwich. Density reading: the
    same integrand restricted to trusted (non-node) points, which is the
    R^2 * dS/dx integral written through the phase-arctangent derivative.
    Ensemble reading: m times the mean sampled velocity.
    """
    orth = dens_val = ens_val = None
    tol = {}
    if psi is not None:
        v, grid = _field_and_grid(psi, grid)
        rho = (np.conj(v) * v).real
        num = np.imag(np.conj(v) * gradient(v, grid))  # = R^2 dS/dx / hbar
        w = _weights(grid)
        orth = float(units.hbar * np.sum(w * num))
        valid = rho >= node_fraction * rho.max()
        dens_val = float(units.hbar * np.sum(w[valid] * num[valid]))
        tol["orthodox_vs_density"] = 1e-6 * max(abs(orth), abs(dens_val)) + 1e-40
    if ensemble is not None:
        ps = units.mass * ensemble.velocities[row]
        ens_val = float(ps.mean())
        if dens_val is not None:
            tol["density_vs_ensemble"] = 4.0 * float(ps.std()) / math.sqrt(ps.size)
    return ObservableReport(name="momentum", unit="kg*m/s", orthodox_value=orth,
                            bohmian_density_value=dens_val,
                            trajectory_ensemble_value=ens_val, tolerances=tol)


def mean_kinetic(psi, grid: Grid1D = None,
                 units: UnitSystem = SI_ELECTRON) -> tuple:
    """Mean kinetic energy and its exact two-part split.

    Returns (total, flow_part, shape_part). The total is the first-derivative
    form (hbar^2/2m) * integral |d psi|^2, and the gradient is decomposed
    pointwise into components along and orthogonal to the local phase, so

        total = flow_part + shape_part

    holds to rounding: flow_part is the Bohmian kinetic term integral of
    R^2 (dS/dx)^2 / 2m and shape_part is the mean quantum potential in its
    (hbar^2/2m) * integral (dR/dx)^2 form. At exact nodes the whole gradient
    is amplitude-like and is assigned to the shape part.
    """
    v, grid = _field_and_grid(psi, grid)
    g = gradient(v, grid)
    c = units.hbar ** 2 / (2.0 * units.mass)
    w = _weights(grid)
    g2 = (np.conj(g) * g).real
    total = c * float(np.sum(w * g2))
    amp = np.abs(v)
    pos = amp > 0.0
    # divide the components separately: complex/real division in numpy goes
    # through full complex division and costs an ulp even when v is real
    denom = np.where(pos, amp, 1.0)
    u = np.where(pos, v.real / denom + 1j * (v.imag / denom), 0.0)
    prod = np.conj(u) * g
    a2 = np.where(pos, prod.real ** 2, g2)
    b2 = np.where(pos, prod.imag ** 2, 0.0)
    shape_part = c * float(np.sum(w * a2))
    flow_part = c * float(np.sum(w * b2))
    assert abs(total - flow_part - shape_part) <= 1e-10 * max(abs(total), 1e-300), \
        "kinetic split lost exactness"
    return total, flow_part, shape_part


_LOCAL_OPERATORS = ("position", "momentum", "kinetic", "potential", "current")


def local_operator_mean(psi, operator: str, grid: Grid1D = None,
                        units: UnitSystem = SI_ELECTRON, potential=None,
                        node_fraction: float = NODE_DENSITY_FRACTION) -> LocalMean:
    """Local mean field of an operator and its density-weighted average.

    The field is Re[psi* A psi]/rho, flagged and carry-filled at nodes; the
    scalar mean integrates Re[psi* A psi] over trusted points only, and the
    probability mass at flagged points is reported as excluded_mass. For
    "current" the field is J(x) = v * R^2 itself (not a per-particle ratio)
    and the mean is its plain integral.

    potential: PotentialSpec or per-point array, required by "potential".
    """
    if operator not in _LOCAL_OPERATORS:
        raise ValueError(f"unsupported local operator {operator!r}; "
                         f"expected one of {_LOCAL_OPERATORS}")
    v, grid = _field_and_grid(psi, grid)
    rho = (np.conj(v) * v).real
    peak = float(rho.max())
    valid = rho >= node_fraction * peak if peak > 0.0 else np.zeros(grid.n, bool)
    w = _weights(grid)
    excluded = float(np.sum(w[~valid] * rho[~valid]))

    if operator == "potential":
        if potential is None:
            raise ValueError("the potential operator needs the potential itself")
        vals = potential.evaluate(grid) if isinstance(potential, PotentialSpec) \
            else np.asarray(potential, dtype=float)
        _check_shape(vals, grid)
        mean = float(np.sum(w[valid] * rho[valid] * vals[valid]))
        return LocalMean("potential", vals, ~valid, mean, 0.0, excluded)

    if operator == "position":
        sandwich = (np.conj(v) * grid.x * v)
    elif operator == "momentum":
        sandwich = np.conj(v) * (-1j * units.hbar) * gradient(v, grid)
    elif operator == "kinetic":
        sandwich = np.conj(v) * (-(units.hbar ** 2) / (2.0 * units.mass)) \
            * laplacian(v, grid)
    else:  # current
        jj = (units.hbar / units.mass) * np.imag(np.conj(v) * gradient(v, grid))
        mean = float(np.sum(w[valid] * jj[valid]))
        return LocalMean("current", jj, ~valid, mean, 0.0, excluded)

    re = sandwich.real
    mean = float(np.sum(w[valid] * re[valid]))
    imag = float(np.sum(w[valid] * sandwich.imag[valid]))
    vals = np.divide(re, rho, out=np.zeros(grid.n), where=valid)
    vals = _nearest_valid_fill(vals, valid)
    return LocalMean(operator, vals, ~valid, mean, imag, excluded)


# ---------------------------------------------------------------------------
# dwell time


def _region_mass(density, grid, lo, hi) -> float:
    below_hi = left_probability(density, grid, hi)
    below_lo = left_probability(density, grid, lo)
    return float(below_hi - below_lo)


def _residence_times(ensemble: TrajectoryEnsemble, lo: float, hi: float) -> np.ndarray:
    """Per-trajectory time spent inside [lo, hi], linear between samples."""
    t = ensemble.times
    x = ensemble.positions
    tau = np.zeros(x.shape[1])
    for j in range(t.size - 1):
        h = t[j + 1] - t[j]
        xa, xb = x[j], x[j + 1]
        dxj = xb - xa
        flat = dxj == 0.0
        safe = np.where(flat, 1.0, dxj)
        s1 = (lo - xa) / safe
        s2 = (hi - xa) / safe
        s_lo = np.minimum(s1, s2)
        s_hi = np.maximum(s1, s2)
        frac = np.clip(s_hi, 0.0, 1.0) - np.clip(s_lo, 0.0, 1.0)
        frac = np.where(flat, ((xa >= lo) & (xa <= hi)).astype(float), frac)
        tau += h * np.maximum(frac, 0.0)
    return tau


def dwell_time(snapshots, region, grid: Grid1D = None,
               ensemble: TrajectoryEnsemble = None,
               decay_fraction: float = 1e-6,
               agreement_rtol: float = 0.02) -> ObservableReport:
    """Average time the probability (or the particles) spend inside a region.

    Density form: the trapezoid time integral over snapshots of the in-region
    probability mass (computed with sub-cell resolution at the region edges).
    Trajectory form: the ensemble mean of per-trajectory residence times,
    accumulated over every entry into the region.

    The density form equals the operator reading for this observable, so it
    fills both the orthodox and the density slot.

    Parameters
    ----------
    snapshots : EvolveResult or sequence of snapshots (each with .t and .psi)
    region : (lo, hi) in metres
    ensemble : TrajectoryEnsemble, optional
        enables the trajectory reading

    Raises
    ------
    InconclusiveRunError
        the in-region mass has not decayed below decay_fraction of its peak
        by the final snapshot, so the time integral is still growing
    """
    snaps = getattr(snapshots, "snapshots", snapshots)
    lo, hi = float(region[0]), float(region[1])
    if hi <= lo:
        raise ValueError("region must have hi > lo")
    if grid is None:
        grid = snaps[0].psi.grid
    times = np.array([s.t for s in snaps], dtype=float)
    masses = np.array([_region_mass(s.psi.density, grid, lo, hi) for s in snaps])
    peak = float(masses.max())
    if peak > 0.0 and masses[-1] > decay_fraction * peak:
        raise InconclusiveRunError(
            f"in-region probability is still {masses[-1] / peak:.3e} of its peak "
            f"at the final snapshot; extend the run until it decays below "
            f"{decay_fraction:g}")
    dens_val = float(np.trapezoid(masses, times))
    ens_val = None
    tol = {"orthodox_vs_density": 0.0}
    if ensemble is not None:
        ens_val = float(_residence_times(ensemble, lo, hi).mean())
        tol["density_vs_ensemble"] = agreement_rtol * max(abs(dens_val), abs(ens_val))
    return ObservableReport(name="dwell-time", unit="s", orthodox_value=dens_val,
                            bohmian_density_value=dens_val,
                            trajectory_ensemble_value=ens_val, tolerances=tol)
