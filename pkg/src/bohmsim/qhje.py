"""Wave-function-free propagation in the hydrodynamic (amplitude/action) form.

Two synthetic propagators that never touch a complex wave field directly:

* a moving-frame scheme whose mesh points are the flow trajectories
  themselves, advanced by an explicit cascade (positions first, then action
  and amplitude from rates on the old mesh, then velocity from the new one);
* a fixed-grid explicit scheme in log-amplitude/action variables, which
  stays well conditioned where the amplitude is exponentially small.

A classical mode drops the shape-dependent (quantum) force, at which point
every element follows its own characteristic independently of the rest of
the ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    SI_ELECTRON,
    Grid1D,
    ComplexField,
    PolarField,
    PotentialSpec,
    UnitSystem,
    _readonly,
    gradient,
)
from .tdse import StabilityError
from .trajectories import TrajectoryEnsemble


class StepSizeError(RuntimeError):
    """The step broke element ordering (or a derivative window degenerated)."""


class CausticError(RuntimeError):
    """Element crossing that halving cannot remove; carries the time stamp."""

    def __init__(self, time: float, message: str = None):
        self.time = float(time)
        super().__init__(message or f"element ordering lost at t={time:.6e} s")


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class FluidElementSet:
    """Flow elements carrying position, action, amplitude, and velocity.

    Positions are strictly increasing. Derivative-based updates additionally
    need at least seven elements (the interpolation window); the classical
    characteristic mode works down to a single element.
    """

    positions: np.ndarray
    action: np.ndarray
    amplitude: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("positions", "action", "amplitude", "velocity"):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != 1 or a.size == 0:
                raise ValueError(f"{name} must be a non-empty 1D array")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite values")
            arrays[name] = a
        n = arrays["positions"].size
        if any(a.size != n for a in arrays.values()):
            raise ValueError("element arrays must share one length")
        if np.any(np.diff(arrays["positions"]) <= 0.0):
            raise ValueError("element positions must be strictly increasing")
        if np.any(arrays["amplitude"] < 0.0):
            raise ValueError("amplitude must be non-negative")
        for name, a in arrays.items():
            object.__setattr__(self, name, _readonly(a))

    def __len__(self) -> int:
        return self.positions.size


@dataclass(frozen=True)
class ElementSnapshot:
    step: int
    t: float
    elements: FluidElementSet


@dataclass(frozen=True)
class LagrangianResult:
    """Element snapshots plus an early-termination stamp (None if completed)."""

    snapshots: tuple
    terminated_at: float = None

    @property
    def final(self) -> ElementSnapshot:
        return self.snapshots[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])

    def position_stack(self) -> np.ndarray:
        return np.stack([s.elements.positions for s in self.snapshots])

    def velocity_stack(self) -> np.ndarray:
        return np.stack([s.elements.velocity for s in self.snapshots])

    def as_ensemble(self, grid: Grid1D, source: str = "lagrangian-qhje"
                    ) -> TrajectoryEnsemble:
        return TrajectoryEnsemble(grid=grid, times=self.times,
                                  positions=self.position_stack(),
                                  velocities=self.velocity_stack(),
                                  ids=np.arange(len(self.final.elements)),
                                  source=source)


@dataclass(frozen=True)
class LogPolarField:
    """Fixed-grid pair (log-amplitude, action); the log keeps tails finite."""

    grid: Grid1D
    log_amplitude: np.ndarray
    action: np.ndarray

    def __post_init__(self):
        c = np.array(self.log_amplitude, dtype=float)
        s = np.array(self.action, dtype=float)
        if c.shape != (self.grid.n,) or s.shape != (self.grid.n,):
            raise ValueError("field length does not match the grid")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
            raise ValueError("log-amplitude and action must be finite")
        object.__setattr__(self, "log_amplitude", _readonly(c))
        object.__setattr__(self, "action", _readonly(s))

    @classmethod
    def from_polar(cls, polar: PolarField) -> "LogPolarField":
        if np.any(polar.amplitude <= 0.0):
            raise ValueError("log form needs strictly positive amplitude")
        return cls(polar.grid, np.log(polar.amplitude), polar.action)

    def to_complex(self, units: UnitSystem = SI_ELECTRON) -> ComplexField:
        return ComplexField(self.grid, np.exp(
            self.log_amplitude + 1j * self.action / units.hbar))


@dataclass(frozen=True)
class LogPolarSnapshot:
    step: int
    t: float
    field: LogPolarField


@dataclass(frozen=True)
class LogPolarResult:
    snapshots: tuple

    @property
    def final(self) -> LogPolarSnapshot:
        return self.snapshots[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots])


@dataclass(frozen=True)
class QhjeConfig:
    """Shared stepping knobs for the hydrodynamic propagators."""

    dt: float
    steps: int
    snapshot_stride: int = 1
    retry_cap: int = 20  # halvings tried before an ordering break is terminal

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.snapshot_stride < 1:
            raise ValueError("snapshot_stride must be at least 1")
        if self.retry_cap < 0:
            raise ValueError("retry_cap must be non-negative")


@dataclass(frozen=True)
class ClassicalResult:
    """Classical-mode trajectories; caustic_time is set when stopped early."""

    ensemble: TrajectoryEnsemble
    elements: FluidElementSet
    caustic_time: float = None


# ---------------------------------------------------------------------------
# scattered derivatives


def scattered_derivative(values, positions, order: int,
                         degree: int = 4, window: int = 7) -> np.ndarray:
    """Derivative of scattered samples by local moving least squares.

    Each point gets a degree-`degree` polynomial fit over its `window`
    nearest neighbours (a contiguous run, since the points are ordered) and
    the fit is differentiated analytically at the point itself. Exact for
    polynomials up to the fit degree.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    first, second = _mls_derivatives(values, positions, degree, window)
    return first if order == 1 else second


def _mls_derivatives(values, positions, degree: int, window: int):
    """Both derivative orders from one batch of window fits."""
    x = np.asarray(positions, dtype=float)
    n = x.size
    if x.ndim != 1:
        raise ValueError("positions must be a 1D array")
    if n < window:
        raise ValueError(f"need at least {window} points")
    d = np.diff(x)
    if np.any(d == 0.0):
        raise StepSizeError("degenerate interpolation window: coincident points")
    if np.any(d < 0.0):
        raise ValueError("positions must be increasing")

    # nearest `window` neighbours of an ordered point set form a contiguous
    # run; pick the candidate start minimizing the farthest-end distance
    starts = np.clip(np.arange(n)[:, None] - np.arange(window)[None, :],
                     0, n - window)
    reach = np.maximum(x[:, None] - x[starts],
                       x[starts + window - 1] - x[:, None])
    st = starts[np.arange(n), np.argmin(reach, axis=1)]
    idx = st[:, None] + np.arange(window)[None, :]

    xi = x[idx] - x[:, None]
    scale = np.abs(xi).max(axis=1)
    z = xi / scale[:, None]
    powers = np.arange(degree + 1)
    design = z[..., None] ** powers  # (n, window, degree+1)
    gram = design.transpose(0, 2, 1) @ design

    ys = np.atleast_2d(np.asarray(values, dtype=float))
    if ys.shape[-1] != n:
        raise ValueError("values and positions must share the point count")
    rhs = design.transpose(0, 2, 1) @ ys[..., idx].transpose(1, 2, 0)
    try:
        coef = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise StepSizeError(f"degenerate interpolation window: {exc}") from None
    first = (coef[:, 1, :] / scale[:, None]).T
    second = (2.0 * coef[:, 2, :] / (scale * scale)[:, None]).T
    if np.asarray(values).ndim == 1:
        return first[0], second[0]
    return first, second


# ---------------------------------------------------------------------------
# potentials at arbitrary (off-grid) points


def _value_at(potential, x: np.ndarray, grid: Grid1D = None) -> np.ndarray:
    if potential is None:
        return np.zeros_like(x)
    if callable(potential) and not isinstance(potential, PotentialSpec):
        return np.asarray(potential(x), dtype=float)
    if not isinstance(potential, PotentialSpec):
        raise TypeError("potential must be None, a PotentialSpec, or callable")
    if potential.kind == "flat":
        return np.full_like(x, potential.value)
    if potential.kind == "harmonic":
        return 0.5 * potential.spring_constant * (x - potential.center) ** 2
    if potential.kind == "piecewise-rectangular":
        v = np.zeros_like(x)
        for a, b, h in potential.segments:
            v[(x >= a) & (x <= b)] += h
        return v
    if grid is None:
        raise TypeError("a tabulated potential needs its grid to be sampled "
                        "off-mesh")
    return np.interp(x, grid.x, potential.table)


def _force_field(potential, grid: Grid1D):
    """Classical force -dV/dx as a callable of position."""
    if potential is None:
        return lambda x: np.zeros_like(x)
    if callable(potential) and not isinstance(potential, PotentialSpec):
        h = 1e-7 * grid.dx + 1e-18
        return lambda x: -(np.asarray(potential(x + h)) -
                           np.asarray(potential(x - h))) / (2.0 * h)
    if not isinstance(potential, PotentialSpec):
        raise TypeError("potential must be None, a PotentialSpec, or callable")
    if potential.kind == "flat":
        return lambda x: np.zeros_like(x)
    if potential.kind == "harmonic":
        k, c = potential.spring_constant, potential.center
        return lambda x: -k * (x - c)
    if potential.kind == "piecewise-rectangular":
        # zero almost everywhere; hard edges carry no finite force sample
        return lambda x: np.zeros_like(x)
    dv = np.gradient(potential.table, grid.dx)
    return lambda x: -np.interp(x, grid.x, dv)


# ---------------------------------------------------------------------------
# element seeding


def elements_from_polar(polar: PolarField, count: int = None, positions=None,
                        units: UnitSystem = SI_ELECTRON) -> FluidElementSet:
    """Seed flow elements from a gridded amplitude/action pair.

    Without explicit positions, elements sit at the density quantile
    midpoints (k+0.5)/count: the deterministic stratified version of
    density-proportional seeding, which keeps spacings smooth for the
    derivative windows.
    """
    grid = polar.grid
    if positions is None:
        if count is None or count < 1:
            raise ValueError("need a positive count or explicit positions")
        rho = polar.amplitude ** 2
        cdf = np.zeros(grid.n)
        np.cumsum(0.5 * (rho[1:] + rho[:-1]) * grid.dx, out=cdf[1:])
        if cdf[-1] <= 0.0:
            raise ValueError("density is identically zero")
        cdf /= cdf[-1]
        targets = (np.arange(count) + 0.5) / count
        positions = np.interp(targets, cdf, grid.x)
    positions = np.asarray(positions, dtype=float)
    vel_field = gradient(polar.action, grid) / units.mass
    return FluidElementSet(
        positions=positions,
        action=np.interp(positions, grid.x, polar.action),
        amplitude=np.interp(positions, grid.x, polar.amplitude),
        velocity=np.interp(positions, grid.x, vel_field),
    )


# ---------------------------------------------------------------------------
# the moving-frame cascade


def _cascade(elems: FluidElementSet, potential, dt: float, units: UnitSystem,
             quantum: bool, grid: Grid1D = None) -> FluidElementSet:
    m = units.mass
    x, s, r, v = elems.positions, elems.action, elems.amplitude, elems.velocity
    new_x = x + dt * v
    if np.any(np.diff(new_x) <= 0.0):
        raise StepSizeError("element ordering lost")
    kinetic = 0.5 * m * v * v
    if quantum:
        if np.any(r <= 0.0):
            raise ValueError("the shape term needs strictly positive amplitude")
        # R''/R through the log: the fits are exact on log-quadratic
        # (Gaussian) amplitude and immune to the tail dynamic range
        slope_c, curv_c = _mls_derivatives(np.log(r), x, 4, 7)
        shape = (units.hbar ** 2 / (2.0 * m)) * (curv_c + slope_c * slope_c)
    else:
        shape = 0.0
    new_s = s + dt * (kinetic + shape - _value_at(potential, x, grid))
    new_r = r - dt * (r * scattered_derivative(s, x, 2)) / (2.0 * m)
    if quantum and np.any(new_r <= 0.0):
        # an expanding flow drained more amplitude than the element carried;
        # a shorter step keeps the transport update positive
        raise StepSizeError("amplitude transport overshot zero")
    new_v = scattered_derivative(new_s, new_x, 1) / m
    return FluidElementSet(new_x, new_s, new_r, new_v)


def lagrangian_step(elems: FluidElementSet, potential, dt: float,
                    units: UnitSystem = SI_ELECTRON, quantum: bool = True,
                    retry_cap: int = 20, grid: Grid1D = None
                    ) -> FluidElementSet:
    """One explicit step of the moving-frame hydrodynamic cascade.

    Positions advance first with the current velocity; action and amplitude
    are updated from rates on the old mesh (kinetic + shape - potential for
    the action, compression for the amplitude); the velocity is then the
    scattered action derivative on the new mesh. quantum=False zeroes the
    shape term, leaving the classical Hamilton-Jacobi cascade.

    An ordering break triggers substep halving, up to retry_cap halvings;
    exhaustion raises StepSizeError.
    """
    if len(elems) < 7:
        raise ValueError("the derivative windows need at least 7 elements")
    last_exc = None
    for depth in range(retry_cap + 1):
        nsub = 2 ** depth
        out = elems
        try:
            for _ in range(nsub):
                out = _cascade(out, potential, dt / nsub, units, quantum, grid)
            return out
        except StepSizeError as exc:
            last_exc = exc
    raise StepSizeError(
        f"ordering still breaks after {retry_cap} halvings: {last_exc}")


def lagrangian_evolve(elems: FluidElementSet, potential, cfg: QhjeConfig,
                      units: UnitSystem = SI_ELECTRON, quantum: bool = True,
                      grid: Grid1D = None) -> LagrangianResult:
    """Drive the cascade for cfg.steps, keeping every stride-th snapshot.

    A persistent ordering break (element crossing) ends the run early; the
    result then carries the failed step's end time in terminated_at and the
    snapshots stop at the last valid state.
    """
    snaps = [ElementSnapshot(0, 0.0, elems)]
    cur = elems
    terminated_at = None
    for j in range(1, cfg.steps + 1):
        try:
            cur = lagrangian_step(cur, potential, cfg.dt, units,
                                  quantum=quantum, retry_cap=cfg.retry_cap,
                                  grid=grid)
        except StepSizeError:
            terminated_at = j * cfg.dt
            if snaps[-1].step != j - 1:
                snaps.append(ElementSnapshot(j - 1, (j - 1) * cfg.dt, cur))
            break
        if j % cfg.snapshot_stride == 0 or j == cfg.steps:
            snaps.append(ElementSnapshot(j, j * cfg.dt, cur))
    return LagrangianResult(tuple(snaps), terminated_at)


# ---------------------------------------------------------------------------
# fixed-grid explicit scheme in log variables


def _edge_copy_laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / (dx * dx)
    out[0] = out[1]  # log fields do not vanish at the box edge, so no
    out[-1] = out[-2]  # hard-wall ghosts; copying is exact for parabolas
    return out


def eulerian_logpolar_step(f: LogPolarField, potential, dt: float,
                           units: UnitSystem = SI_ELECTRON) -> LogPolarField:
    """One forward-Euler update of the coupled log-amplitude/action pair.

    d(logR)/dt = -(lap S + 2 grad S . grad C) / 2m
    dS/dt      = -(grad S)^2 / 2m + (hbar^2/2m)(lap C + (grad C)^2) - V
    """
    grid = f.grid
    m, hbar = units.mass, units.hbar
    c, s = f.log_amplitude, f.action
    gs = np.gradient(s, grid.dx, edge_order=2)
    gc = np.gradient(c, grid.dx, edge_order=2)
    ls = _edge_copy_laplacian(s, grid.dx)
    lc = _edge_copy_laplacian(c, grid.dx)
    vv = _value_at(potential, grid.x, grid)
    with np.errstate(over="ignore", invalid="ignore"):
        new_c = c + dt * (-(ls + 2.0 * gs * gc) / (2.0 * m))
        new_s = s + dt * (-(gs * gs) / (2.0 * m)
                          + (hbar * hbar / (2.0 * m)) * (lc + gc * gc) - vv)
    if not (np.all(np.isfinite(new_c)) and np.all(np.isfinite(new_s))):
        raise StabilityError("log-form update produced non-finite values",
                             dt * hbar / (m * grid.dx * grid.dx))
    return LogPolarField(grid, new_c, new_s)


def eulerian_logpolar_evolve(f: LogPolarField, potential, cfg: QhjeConfig,
                             units: UnitSystem = SI_ELECTRON) -> LogPolarResult:
    snaps = [LogPolarSnapshot(0, 0.0, f)]
    cur = f
    for j in range(1, cfg.steps + 1):
        cur = eulerian_logpolar_step(cur, potential, cfg.dt, units)
        if j % cfg.snapshot_stride == 0 or j == cfg.steps:
            snaps.append(LogPolarSnapshot(j, j * cfg.dt, cur))
    return LogPolarResult(tuple(snaps))


# ---------------------------------------------------------------------------
# classical mode


def _classical_rates(x, v, s, force, potential, grid, m):
    return v, force(x) / m, 0.5 * m * v * v - _value_at(potential, x, grid)


def _classical_rk4(x, v, s, force, potential, grid, m, dt):
    k1 = _classical_rates(x, v, s, force, potential, grid, m)
    k2 = _classical_rates(x + 0.5 * dt * k1[0], v + 0.5 * dt * k1[1], s,
                          force, potential, grid, m)
    k3 = _classical_rates(x + 0.5 * dt * k2[0], v + 0.5 * dt * k2[1], s,
                          force, potential, grid, m)
    k4 = _classical_rates(x + dt * k3[0], v + dt * k3[1], s,
                          force, potential, grid, m)
    x2 = x + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    v2 = v + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    s2 = s + dt / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
    return x2, v2, s2


def classical_ensemble_evolve(initial: PolarField, potential, cfg: QhjeConfig,
                              count: int = None, positions=None,
                              units: UnitSystem = SI_ELECTRON
                              ) -> ClassicalResult:
    """Classical-mode flow: every element on its own characteristic.

    With the shape term dropped, the action equation decouples element from
    element, so each one is integrated independently (position and velocity
    under the classical force, action as the accumulated kinetic - potential
    rate). Identical initial position and velocity therefore give the
    identical path whatever the rest of the ensemble looks like.

    Amplitude rides along by the compression rate from the scattered
    velocity derivative when there are at least 7 elements, else it is
    carried unchanged.

    Element crossing means the single-valued action sheet has folded; if
    substep halving cannot remove it the run stops early with caustic_time
    set to the failed step's end time.
    """
    grid = initial.grid
    m = units.mass
    elems0 = elements_from_polar(initial, count=count, positions=positions,
                                 units=units)
    force = _force_field(potential, grid)
    x, v = elems0.positions.copy(), elems0.velocity.copy()
    s, r = elems0.action.copy(), elems0.amplitude.copy()
    n = x.size
    rec_t, rec_x, rec_v = [0.0], [x.copy()], [v.copy()]
    caustic_time = None
    for j in range(1, cfg.steps + 1):
        ok = False
        for depth in range(cfg.retry_cap + 1):
            nsub = 2 ** depth
            xs, vs, ss = x, v, s
            for _ in range(nsub):
                xs, vs, ss = _classical_rk4(xs, vs, ss, force, potential,
                                            grid, m, cfg.dt / nsub)
                if n > 1 and np.any(np.diff(xs) <= 0.0):
                    break
            else:
                ok = True
            if ok:
                break
        if not ok:
            caustic_time = j * cfg.dt
            break
        if n >= 7:
            r = r * np.exp(-0.5 * cfg.dt * scattered_derivative(v, x, 1))
        x, v, s = xs, vs, ss
        if j % cfg.snapshot_stride == 0 or j == cfg.steps:
            rec_t.append(j * cfg.dt)
            rec_x.append(x.copy())
            rec_v.append(v.copy())
    ensemble = TrajectoryEnsemble(
        grid=grid, times=np.array(rec_t), positions=np.stack(rec_x),
        velocities=np.stack(rec_v), ids=np.arange(n),
        source="classical-characteristics")
    elements = FluidElementSet(x, s, r, v)
    return ClassicalResult(ensemble, elements, caustic_time)
