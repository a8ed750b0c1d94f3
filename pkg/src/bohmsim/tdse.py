"""Explicit time propagation of 1D wave functions.

Central-time finite-difference stepping: the next time level is the level
before last plus a kinetic stencil and a potential kick applied to the
current one. The scheme is conditionally stable, so runs are gated on the
dimensionless stability factor unless explicitly overridden. Also provides
the closed-form spreading Gaussian used to start a propagation from two
analytic time levels, and an optional cubic self-interaction term
(condensate mean field) folded into the potential each step.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from bohmsim.core import (
    ComplexField,
    Grid1D,
    PotentialSpec,
    SI_ELECTRON,
    UnitSystem,
    norm,
)

STABILITY_GATE = 0.25


class StabilityError(RuntimeError):
    """Run refused or aborted by the explicit scheme's stability check."""

    def __init__(self, message: str, factor: float):
        super().__init__(message)
        self.factor = factor


@dataclass(frozen=True)
class TdseConfig:
    """Stepping parameters. steps counts time intervals advanced."""

    dt: float
    steps: int
    nonlinearity_g: float = 0.0  # J*m; 0 disables the cubic term
    snapshot_stride: int = 1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be at least 1")


@dataclass(frozen=True)
class GaussianParams:
    """Minimum-uncertainty packet: width a, center x0, carrier kc, born at t1."""

    a: float
    x0: float
    kc: float
    t1: float = 0.0

    def __post_init__(self):
        if self.a <= 0.0:
            raise ValueError("dispersion parameter a must be positive")


@dataclass(frozen=True)
class Snapshot:
    step: int
    t: float
    psi: ComplexField
    norm: float
    norm_drift: float


@dataclass(frozen=True)
class EvolveResult:
    """Snapshot stream plus run metadata."""

    snapshots: tuple
    bootstrap: str  # "analytic-pair" or "forward-euler"
    stability: float

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]

    def stack(self) -> tuple[np.ndarray, np.ndarray]:
        """Times (nt,) and values (nt, n) as contiguous arrays."""
        times = np.array([s.t for s in self.snapshots])
        vals = np.array([s.psi.values for s in self.snapshots])
        return times, vals


def gaussian_packet(p: GaussianParams, t: float, grid: Grid1D,
                    units: UnitSystem = SI_ELECTRON) -> ComplexField:
    """Evaluate the freely spreading Gaussian at absolute time t.

    The packet is referenced to its birth time t1; the width grows with
    elapsed time while the norm stays exactly one. Emits a truncation
    warning (with the measured norm deficit) when the grid covers less
    than six amplitude standard deviations on either side of the center.
    """
    hbar, m = units.hbar, units.mass
    tau = t - p.t1
    a2 = p.a * p.a
    spread = a2 + 2j * hbar * tau / m
    mod4 = a2 * a2 + 4.0 * (hbar * tau / m) ** 2  # |spread|^2
    theta = 0.5 * np.arctan(2.0 * hbar * tau / (m * a2))
    phi = -theta - hbar * p.kc ** 2 * tau / (2.0 * m)
    x = grid.x
    center = p.x0 + hbar * p.kc * tau / m
    vals = ((2.0 * a2 / np.pi) ** 0.25 / mod4 ** 0.25
            * np.exp(1j * (phi + p.kc * (x - p.x0)))
            * np.exp(-((x - center) ** 2) / spread))
    field = ComplexField(grid, vals)
    sigma_amp = np.sqrt(a2 / 2.0 + 2.0 * (hbar * tau / (m * p.a)) ** 2)
    if center - 6 * sigma_amp < x[0] or center + 6 * sigma_amp > x[-1]:
        deficit = 1.0 - norm(field)
        if deficit > 1e-12:  # geometric trigger alone can be rounding noise
            warnings.warn(
                f"grid truncates the packet support; norm deficit {deficit:.3e}",
                stacklevel=2)
    return field


def stability_factor(cfg: TdseConfig, grid: Grid1D,
                     units: UnitSystem = SI_ELECTRON) -> float:
    """Dimensionless explicit-scheme factor hbar*dt/(m*dx^2)."""
    return units.hbar * cfg.dt / (units.mass * grid.dx ** 2)


def _hard_wall_stencil(curr: np.ndarray) -> np.ndarray:
    out = np.empty_like(curr)
    out[1:-1] = curr[2:] - 2.0 * curr[1:-1] + curr[:-2]
    out[0] = curr[1] - 2.0 * curr[0]      # zero ghost beyond the wall
    out[-1] = curr[-2] - 2.0 * curr[-1]
    return out


def _advance(prev: np.ndarray, curr: np.ndarray, V: np.ndarray,
             kin: complex, pot: float, g: float) -> np.ndarray:
    Veff = V + g * np.abs(curr) ** 2 if g != 0.0 else V
    return prev + kin * _hard_wall_stencil(curr) - 1j * pot * Veff * curr


def _resolve_static(potential, grid: Grid1D):
    """Returns (static array or None, callable or None)."""
    if potential is None:
        return np.zeros(grid.n), None
    if isinstance(potential, PotentialSpec):
        return potential.evaluate(grid), None
    if callable(potential):
        return None, potential
    arr = np.asarray(potential, dtype=float)
    if arr.shape != (grid.n,):
        raise ValueError("potential table does not match the grid")
    return arr, None


def step_explicit(psi_prev: ComplexField, psi_curr: ComplexField, potential,
                  cfg: TdseConfig, units: UnitSystem = SI_ELECTRON) -> ComplexField:
    """One recursion application; inputs untouched, instability raises."""
    grid = psi_curr.grid
    if psi_prev.grid != grid:
        raise ValueError("time levels must share one grid")
    static, timedep = _resolve_static(potential, grid)
    if timedep is not None:
        raise TypeError("single steps need a static potential; "
                        "evaluate the time-dependent one yourself")
    V = static
    kin = 1j * units.hbar * cfg.dt / (units.mass * grid.dx ** 2)
    pot = 2.0 * cfg.dt / units.hbar
    nxt = _advance(psi_prev.values, psi_curr.values, V, kin, pot,
                   cfg.nonlinearity_g)
    if not np.all(np.isfinite(nxt)):
        f = stability_factor(cfg, grid, units)
        raise StabilityError(
            f"explicit step produced non-finite values (stability factor {f:.4g})", f)
    return ComplexField(grid, nxt)


def evolve(initial, potential, cfg: TdseConfig, grid: Grid1D = None,
           units: UnitSystem = SI_ELECTRON,
           override_stability: bool = False, t_start: float = 0.0) -> EvolveResult:
    """Propagate an initial state and stream snapshots.

    Parameters
    ----------
    initial : GaussianParams | sequence of GaussianParams | ComplexField
        Analytic packets start from two exact time levels (each packet
        evolves freely over the first interval). A bare field starts with
        one half-accuracy forward-Euler bootstrap step, flagged in the
        result metadata.
    potential : None | PotentialSpec | ndarray | callable t -> ndarray
    cfg : TdseConfig
    grid : Grid1D
        required for analytic starts; inferred from a field start
    override_stability : bool
        run even when the stability factor exceeds the gate
    t_start : float
        timestamp of a field start (analytic starts begin at their t1)

    Returns
    -------
    EvolveResult
        snapshots every snapshot_stride steps (step 0 and the final step
        always included), each carrying the measured norm and its drift.
    """
    hbar, m = units.hbar, units.mass
    packets = None
    if isinstance(initial, GaussianParams):
        packets = [initial]
    elif isinstance(initial, (list, tuple)) and initial and \
            all(isinstance(p, GaussianParams) for p in initial):
        packets = list(initial)

    if packets is not None:
        if grid is None:
            raise ValueError("analytic starts need an explicit grid")
        t_start = packets[0].t1
        lvl0 = np.zeros(grid.n, dtype=complex)
        lvl1 = np.zeros(grid.n, dtype=complex)
        for p in packets:
            lvl0 += gaussian_packet(p, t_start, grid, units).values
            lvl1 += gaussian_packet(p, t_start + cfg.dt, grid, units).values
        scale = 1.0 / np.sqrt(norm(lvl0, grid))
        lvl0, lvl1 = lvl0 * scale, lvl1 * scale
        bootstrap = "analytic-pair"
    elif isinstance(initial, ComplexField):
        grid = initial.grid
        lvl0 = initial.values.copy()
        lvl1 = None
        bootstrap = "forward-euler"
    else:
        raise TypeError("initial must be GaussianParams, a sequence of them, "
                        "or a ComplexField")

    factor = stability_factor(cfg, grid, units)
    if factor > STABILITY_GATE and not override_stability:
        raise StabilityError(
            f"stability factor {factor:.4g} exceeds the gate {STABILITY_GATE}; "
            "pass override_stability to run anyway", factor)

    static, timedep = _resolve_static(potential, grid)
    kin = 1j * hbar * cfg.dt / (m * grid.dx ** 2)
    pot = 2.0 * cfg.dt / hbar

    def V_at(t):
        return static if timedep is None else np.asarray(timedep(t), dtype=float)

    norm0 = norm(lvl0, grid)
    snaps = []

    def record(step, values):
        nv = norm(values, grid)
        snaps.append(Snapshot(step=step, t=t_start + step * cfg.dt,
                              psi=ComplexField(grid, values),
                              norm=nv, norm_drift=nv - norm0))

    record(0, lvl0)
    if cfg.steps == 0:
        return EvolveResult(tuple(snaps), bootstrap, factor)

    if lvl1 is None:
        # forward-Euler bootstrap: first-order in dt, leapfrog takes over after
        V0 = V_at(t_start)
        Veff = V0 + cfg.nonlinearity_g * np.abs(lvl0) ** 2 \
            if cfg.nonlinearity_g != 0.0 else V0
        lvl1 = lvl0 + 0.5 * kin * _hard_wall_stencil(lvl0) \
            - 0.5j * pot * Veff * lvl0

    prev, curr = lvl0, lvl1
    if 1 % cfg.snapshot_stride == 0 or cfg.steps == 1:
        record(1, curr)
    for j in range(1, cfg.steps):
        nxt = _advance(prev, curr, V_at(t_start + j * cfg.dt), kin, pot,
                       cfg.nonlinearity_g)
        if not np.all(np.isfinite(nxt)):
            raise StabilityError(
                f"propagation diverged at step {j + 1} "
                f"(stability factor {factor:.4g})", factor)
        prev, curr = curr, nxt
        if (j + 1) % cfg.snapshot_stride == 0 or j + 1 == cfg.steps:
            record(j + 1, curr)
    return EvolveResult(tuple(snaps), bootstrap, factor)
