"""Multi-particle dynamics: exact two-particle propagation and the
coupled conditional-wave algorithm.

The exact route propagates the full two-particle wave on a configuration
grid (five-point kinetic stencil, same central-time recursion as the 1D
propagator) and integrates Bohmian position pairs in the per-axis guidance
field. It is the oracle the approximate route is judged against.

The approximate route carries one single-particle wave per particle (or an
N x N matrix of them when identical-particle exchange matters), freezing
every other particle at its current Bohmian position to build the potential
each wave feels. Purely time-dependent potential terms only rotate a wave's
global phase and are dropped: guidance velocities never see them. With
exchange, the wave that guides particle a is assembled as a determinant
expansion with row a evaluated on the grid and every other row at the
corresponding frozen position.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import constants

from bohmsim.core import (
    ComplexField,
    Grid1D,
    Grid2D,
    SI_ELECTRON,
    UnitSystem,
    laplacian,
    norm,
)
from bohmsim.tdse import (
    STABILITY_GATE,
    StabilityError,
    TdseConfig,
    _advance,
    _hard_wall_stencil,
    _resolve_static,
)
from bohmsim.trajectories import NODE_DENSITY_FRACTION, current_density

COULOMB_STRENGTH = constants.e ** 2 / (4.0 * np.pi * constants.epsilon_0)  # J*m

_SYMMETRIES = ("none", "antisymmetric", "symmetric")
_DESK_LIMIT = 512


# ---------------------------------------------------------------------------
# pair interactions


@dataclass(frozen=True)
class InteractionSpec:
    """Pair potential between point particles, evaluated along one axis.

    kind "softened-coulomb" uses strength / sqrt(r^2 + softening^2); the
    softening length stands in for transverse confinement of a physically
    three-dimensional device. kind "tabulated-pair" interpolates an energy
    table over separation, clamped at both ends.
    """

    kind: str = "softened-coulomb"
    strength: float = None
    softening: float = None
    table: tuple = None

    def __post_init__(self):
        if self.kind == "softened-coulomb":
            if self.strength is None:
                object.__setattr__(self, "strength", COULOMB_STRENGTH)
            if self.softening is None or self.softening <= 0.0:
                raise ValueError("softening length must be positive")
        elif self.kind == "tabulated-pair":
            if self.table is None:
                raise ValueError("tabulated-pair needs a table")
            sep = np.asarray(self.table[0], dtype=float)
            val = np.asarray(self.table[1], dtype=float)
            if sep.ndim != 1 or sep.shape != val.shape or sep.size < 2:
                raise ValueError("table must be two equal 1D arrays")
            if np.any(np.diff(sep) <= 0.0) or sep[0] < 0.0:
                raise ValueError("separations must increase from >= 0")
            if not (np.all(np.isfinite(sep)) and np.all(np.isfinite(val))):
                raise ValueError("table entries must be finite")
            object.__setattr__(self, "table", (sep, val))
        else:
            raise ValueError(f"unknown interaction kind {self.kind!r}")

    @classmethod
    def coulomb(cls, softening: float,
                strength: float = COULOMB_STRENGTH) -> "InteractionSpec":
        return cls(kind="softened-coulomb", strength=strength,
                   softening=softening)

    @classmethod
    def tabulated_pair(cls, separations, energies) -> "InteractionSpec":
        return cls(kind="tabulated-pair", table=(separations, energies))


def softened_coulomb(x, other_positions, spec: InteractionSpec) -> np.ndarray:
    """Summed softened pair repulsion felt along x from the listed partners."""
    if spec.kind != "softened-coulomb":
        raise ValueError("spec is not a softened-coulomb interaction")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for xk in np.atleast_1d(np.asarray(other_positions, dtype=float)):
        out += spec.strength / np.sqrt((x - xk) ** 2 + spec.softening ** 2)
    return out


def interaction_field(x, other_positions, spec) -> np.ndarray:
    """Pair potential along x; None means non-interacting."""
    x = np.asarray(x, dtype=float)
    if spec is None:
        return np.zeros_like(x)
    if spec.kind == "softened-coulomb":
        return softened_coulomb(x, other_positions, spec)
    sep, val = spec.table
    out = np.zeros_like(x)
    for xk in np.atleast_1d(np.asarray(other_positions, dtype=float)):
        out += np.interp(np.abs(x - xk), sep, val)
    return out


def pair_interaction_matrix(grid: Grid2D, spec) -> np.ndarray:
    """U(|x1 - x2|) on the configuration grid, for composing the exact V."""
    x1, x2 = grid.meshgrid()
    if spec is None:
        return np.zeros(grid.shape)
    if spec.kind == "softened-coulomb":
        return spec.strength / np.sqrt((x1 - x2) ** 2 + spec.softening ** 2)
    sep, val = spec.table
    return np.interp(np.abs(x1 - x2), sep, val)


def separable_potential(grid: Grid2D, spec0, spec1) -> np.ndarray:
    """V1(x1) + V2(x2) broadcast over the configuration grid."""
    v0 = np.zeros(grid.axis0.n) if spec0 is None else spec0.evaluate(grid.axis0)
    v1 = np.zeros(grid.axis1.n) if spec1 is None else spec1.evaluate(grid.axis1)
    return v0[:, None] + v1[None, :]


# ---------------------------------------------------------------------------
# exact two-particle propagation (the oracle)


@dataclass(frozen=True)
class Snapshot2D:
    step: int
    t: float
    psi: ComplexField
    norm: float
    norm_drift: float


@dataclass(frozen=True)
class TwoParticleResult:
    """Snapshot stream plus per-step Bohmian pair paths."""

    snapshots: tuple
    pair_times: np.ndarray        # (steps+1,)
    pair_positions: np.ndarray    # (steps+1, P, 2); empty P when no pairs
    pair_velocities: np.ndarray
    bootstrap: str
    stability: float

    @property
    def final(self) -> Snapshot2D:
        return self.snapshots[-1]


def product_state(f: ComplexField, g: ComplexField) -> ComplexField:
    """Normalized tensor product on the combined configuration grid."""
    grid = Grid2D(f.grid, g.grid)
    vals = np.outer(f.values, g.values)
    return ComplexField(grid, vals / np.sqrt(norm(vals, grid)))


def antisymmetrized_state(f: ComplexField, g: ComplexField) -> ComplexField:
    """Normalized f(x1)g(x2) - g(x1)f(x2); rejects (near-)identical packets."""
    grid = Grid2D(f.grid, g.grid)
    vals = np.outer(f.values, g.values) - np.outer(g.values, f.values)
    nv = norm(vals, grid)
    scale = norm(np.outer(f.values, g.values), grid)
    if nv <= 1e-24 * scale:
        raise ValueError("identical packets antisymmetrize to zero")
    return ComplexField(grid, vals / np.sqrt(nv))


def stability_factor_2d(cfg: TdseConfig, grid: Grid2D,
                        units: UnitSystem = SI_ELECTRON) -> float:
    """hbar*dt/m * (1/dx0^2 + 1/dx1^2); reduces to the 1D factor on one axis."""
    return units.hbar * cfg.dt / units.mass \
        * (1.0 / grid.axis0.dx ** 2 + 1.0 / grid.axis1.dx ** 2)


def _corner_velocity(vals: np.ndarray, grid: Grid2D, i: int, j: int,
                     units: UnitSystem) -> tuple:
    """Guidance components at one interior node, central differences."""
    c = np.conj(vals[i, j])
    d0 = (vals[i + 1, j] - vals[i - 1, j]) / (2.0 * grid.axis0.dx)
    d1 = (vals[i, j + 1] - vals[i, j - 1]) / (2.0 * grid.axis1.dx)
    rho = vals[i, j].real ** 2 + vals[i, j].imag ** 2
    pref = units.hbar / units.mass
    return pref * (c * d0).imag / rho, pref * (c * d1).imag / rho, rho


def _pair_velocity(vals: np.ndarray, grid: Grid2D, pos: np.ndarray,
                   peak: float, prev: np.ndarray,
                   units: UnitSystem) -> tuple:
    """Bilinear guidance velocity at one configuration point.

    Corners with density under the node floor are dropped and the weights
    renormalized; with no trusted corner the previous velocity carries over
    and the event is reported.
    """
    g0, g1 = grid.axis0, grid.axis1
    i = int(np.clip(np.floor((pos[0] - g0.x0) / g0.dx), 1, g0.n - 3))
    j = int(np.clip(np.floor((pos[1] - g1.x0) / g1.dx), 1, g1.n - 3))
    fx = np.clip((pos[0] - g0.x[i]) / g0.dx, 0.0, 1.0)
    fy = np.clip((pos[1] - g1.x[j]) / g1.dx, 0.0, 1.0)
    weights = ((1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy)
    corners = ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1))
    floor = NODE_DENSITY_FRACTION * peak
    acc = np.zeros(2)
    wsum = 0.0
    for w, (ci, cj) in zip(weights, corners):
        v0, v1, rho = _corner_velocity(vals, grid, ci, cj, units)
        if rho >= floor:
            acc += w * np.array([v0, v1])
            wsum += w
    if wsum <= 0.0:
        return prev.copy(), True
    return acc / wsum, False


def exact_two_particle_evolve(initial: ComplexField, potential,
                              cfg: TdseConfig, pairs=None,
                              units: UnitSystem = SI_ELECTRON,
                              override_stability: bool = False) -> TwoParticleResult:
    """Propagate a two-particle wave and integrate Bohmian pairs in it.

    potential is a static 2D array over the configuration grid (or None);
    compose it from separable_potential and pair_interaction_matrix. Pairs
    advance by a two-stage step: predictor in the current field, corrector
    averaged with the advanced field.
    """
    grid = initial.grid
    if not isinstance(grid, Grid2D):
        raise ValueError("exact propagation needs a two-axis grid")
    if max(grid.shape) > _DESK_LIMIT:
        raise ValueError(f"grid exceeds the desk-scale limit {_DESK_LIMIT}")
    if potential is None:
        V = np.zeros(grid.shape)
    else:
        V = np.asarray(potential, dtype=float)
        if V.shape != grid.shape:
            raise ValueError("potential table does not match the grid")
    factor = stability_factor_2d(cfg, grid, units)
    if factor > STABILITY_GATE and not override_stability:
        raise StabilityError(
            f"stability factor {factor:.4g} exceeds the gate {STABILITY_GATE}; "
            "pass override_stability to run anyway", factor)

    hbar, m = units.hbar, units.mass
    kfac = 1j * hbar * cfg.dt / m       # multiplies the scaled laplacian
    pot = 2.0 * cfg.dt / hbar

    pair_pos = np.empty((cfg.steps + 1, 0, 2))
    pair_vel = np.empty((cfg.steps + 1, 0, 2))
    tracking = pairs is not None and len(pairs) > 0
    if tracking:
        cur_pos = np.array(pairs, dtype=float).reshape(-1, 2)
        cur_vel = np.zeros_like(cur_pos)
        pair_pos = np.empty((cfg.steps + 1, len(cur_pos), 2))
        pair_vel = np.empty((cfg.steps + 1, len(cur_pos), 2))
        pair_pos[0] = cur_pos

    lvl0 = initial.values
    norm0 = norm(lvl0, grid)
    snaps = []

    def record(step, values):
        nv = norm(values, grid)
        snaps.append(Snapshot2D(step=step, t=step * cfg.dt,
                                psi=ComplexField(grid, values),
                                norm=nv, norm_drift=nv - norm0))

    def advance(prev, curr, half=False):
        scale = 0.5 if half else 1.0
        nxt = prev + scale * kfac * laplacian(curr, grid) \
            - scale * 1j * pot * V * curr
        if not np.all(np.isfinite(nxt)):
            raise StabilityError(
                f"two-particle propagation diverged (stability factor "
                f"{factor:.4g})", factor)
        return nxt

    def push_pairs(step, curr, nxt):
        nonlocal cur_pos, cur_vel
        peak_c = float((curr.real ** 2 + curr.imag ** 2).max())
        peak_n = float((nxt.real ** 2 + nxt.imag ** 2).max())
        for p in range(len(cur_pos)):
            v0, carried = _pair_velocity(curr, grid, cur_pos[p], peak_c,
                                         cur_vel[p], units)
            probe = cur_pos[p] + cfg.dt * v0
            v1, _ = _pair_velocity(nxt, grid, probe, peak_n, v0, units)
            cur_pos[p] = cur_pos[p] + 0.5 * cfg.dt * (v0 + v1)
            cur_vel[p] = v1
        pair_pos[step] = cur_pos
        pair_vel[step] = cur_vel

    record(0, lvl0)
    if tracking:
        peak0 = float((lvl0.real ** 2 + lvl0.imag ** 2).max())
        for p in range(len(cur_pos)):
            cur_vel[p], _ = _pair_velocity(lvl0, grid, cur_pos[p], peak0,
                                           cur_vel[p], units)
        pair_vel[0] = cur_vel
    if cfg.steps == 0:
        return TwoParticleResult(tuple(snaps), np.zeros(1), pair_pos,
                                 pair_vel, "forward-euler", factor)

    lvl1 = advance(lvl0, lvl0, half=True)   # forward-Euler bootstrap
    if tracking:
        push_pairs(1, lvl0, lvl1)
    prev, curr = lvl0, lvl1
    if 1 % cfg.snapshot_stride == 0 or cfg.steps == 1:
        record(1, curr)
    for j in range(1, cfg.steps):
        nxt = advance(prev, curr)
        if tracking:
            push_pairs(j + 1, curr, nxt)
        prev, curr = curr, nxt
        if (j + 1) % cfg.snapshot_stride == 0 or j + 1 == cfg.steps:
            record(j + 1, curr)
    times = np.arange(cfg.steps + 1) * cfg.dt
    return TwoParticleResult(tuple(snaps), times, pair_pos, pair_vel,
                             "forward-euler", factor)


def velocity_components(psi: ComplexField,
                        units: UnitSystem = SI_ELECTRON) -> tuple:
    """Full per-axis guidance fields (v1, v2, trusted mask) on a 2D grid."""
    grid = psi.grid
    dens = np.abs(psi.values) ** 2
    trusted = dens >= NODE_DENSITY_FRACTION * dens.max()
    out = []
    for axis in (0, 1):
        jk = current_density(psi.values, grid, units, axis=axis)
        out.append(np.divide(jk, dens, out=np.zeros(grid.shape),
                             where=trusted))
    return out[0], out[1], trusted


def continuity_residual(f_prev: ComplexField, f_curr: ComplexField,
                        f_next: ComplexField, dt: float,
                        units: UnitSystem = SI_ELECTRON) -> float:
    """Max interior |d rho/dt + div J| from three consecutive time levels."""
    grid = f_curr.grid
    rho_dot = (np.abs(f_next.values) ** 2 - np.abs(f_prev.values) ** 2) \
        / (2.0 * dt)
    div = np.gradient(current_density(f_curr.values, grid, units, axis=0),
                      grid.axis0.dx, axis=0, edge_order=1) \
        + np.gradient(current_density(f_curr.values, grid, units, axis=1),
                      grid.axis1.dx, axis=1, edge_order=1)
    return float(np.abs((rho_dot + div)[1:-1, 1:-1]).max())


# ---------------------------------------------------------------------------
# conditional single-particle waves


@dataclass(frozen=True)
class ManyBodyState:
    """N coupled single-particle waves plus the Bohmian positions.

    waves is a flat length-N tuple of ComplexField (no exchange) or an
    N x N nested tuple (exchange): row index picks the potential the wave
    evolves under, column index the initial packet. previous_waves holds
    the earlier time level of the central-time recursion; None means the
    next step bootstraps with a half-accuracy Euler stage. velocities are
    the last guidance values, kept as the carry fallback at nodes.
    """

    grid: Grid1D
    waves: tuple
    positions: np.ndarray
    symmetry: str = "none"
    velocities: np.ndarray = None
    previous_waves: tuple = None
    carry_count: int = 0
    time: float = 0.0

    def __post_init__(self):
        if self.symmetry not in _SYMMETRIES:
            raise ValueError(f"symmetry must be one of {_SYMMETRIES}")
        pos = np.array(self.positions, dtype=float)
        n = pos.size
        waves = tuple(self.waves)
        if self.exchange:
            waves = tuple(tuple(row) for row in waves)
            if len(waves) != n or any(len(row) != n for row in waves):
                raise ValueError("exchange mode requires a square wave matrix")
            flat = [w for row in waves for w in row]
        else:
            if len(waves) != n:
                raise ValueError("one wave per particle is required")
            flat = list(waves)
        for w in flat:
            if not isinstance(w, ComplexField) or w.grid != self.grid:
                raise ValueError("waves must be fields on the shared grid")
        x = self.grid.x
        if np.any(pos < x[0]) or np.any(pos > x[-1]):
            raise ValueError("positions must lie inside the grid")
        vel = np.zeros(n) if self.velocities is None \
            else np.array(self.velocities, dtype=float)
        if vel.shape != (n,):
            raise ValueError("velocities must match the particle count")
        pos.setflags(write=False)
        vel.setflags(write=False)
        object.__setattr__(self, "waves", waves)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)

    @property
    def exchange(self) -> bool:
        return bool(self.waves) and isinstance(self.waves[0], (tuple, list))

    @property
    def n_particles(self) -> int:
        return self.positions.size

    @classmethod
    def from_fields(cls, fields, positions, symmetry: str = "none"):
        fields = tuple(fields)
        return cls(grid=fields[0].grid, waves=fields, positions=positions,
                   symmetry=symmetry)

    @classmethod
    def exchange_from_fields(cls, fields, positions):
        """N x N start: every row holds the same N initial packets."""
        fields = tuple(fields)
        n = len(fields)
        return cls(grid=fields[0].grid, waves=tuple(fields for _ in range(n)),
                   positions=positions, symmetry="antisymmetric")


def _velocity_at(values: np.ndarray, grid: Grid1D, x: float, prev_v: float,
                 units: UnitSystem) -> tuple:
    """Guidance velocity at x with the node-carry rule; (value, carried)."""
    dens = values.real ** 2 + values.imag ** 2
    peak = float(dens.max())
    if peak == 0.0:
        return prev_v, True
    trusted = dens >= NODE_DENSITY_FRACTION * peak
    idx = np.flatnonzero(trusted)
    if idx.size == 0:
        return prev_v, True

    def node_velocity(i):
        if not trusted[i]:
            # nearest trusted index, leftward ties
            k = np.searchsorted(idx, i)
            left = idx[max(k - 1, 0)]
            right = idx[min(k, idx.size - 1)]
            i = left if abs(i - left) <= abs(right - i) else right
        i = min(max(i, 1), grid.n - 2)
        d = (values[i + 1] - values[i - 1]) / (2.0 * grid.dx)
        rho = dens[i]
        return units.hbar / units.mass * (np.conj(values[i]) * d).imag / rho

    i0 = int(np.clip(np.floor((x - grid.x0) / grid.dx), 0, grid.n - 2))
    va, vb = node_velocity(i0), node_velocity(i0 + 1)
    f = np.clip((x - grid.x[i0]) / grid.dx, 0.0, 1.0)
    return (1.0 - f) * va + f * vb, False


def _external(potential, grid: Grid1D) -> np.ndarray:
    static, timedep = _resolve_static(potential, grid)
    if timedep is not None:
        raise TypeError("conditional steps need a static external potential")
    return static


def _advance_wave(prev, curr, V, grid, dt, units):
    kin = 1j * units.hbar * dt / (units.mass * grid.dx ** 2)
    pot = 2.0 * dt / units.hbar
    if prev is None:
        # Euler bootstrap, half coefficients, one level only
        nxt = curr + 0.5 * kin * _hard_wall_stencil(curr) \
            - 0.5j * pot * V * curr
    else:
        nxt = _advance(prev, curr, V, kin, pot, 0.0)
    if not np.all(np.isfinite(nxt)):
        f = units.hbar * dt / (units.mass * grid.dx ** 2)
        raise StabilityError(
            f"conditional wave diverged (stability factor {f:.4g})", f)
    return nxt


def conditional_step_no_exchange(state: ManyBodyState, interaction, dt: float,
                                 units: UnitSystem = SI_ELECTRON,
                                 potential=None) -> ManyBodyState:
    """Advance every wave under its frozen-partner potential, then move
    all positions with velocities from their own wave."""
    if state.exchange:
        raise ValueError("state carries an exchange matrix; "
                         "use conditional_step_exchange")
    grid = state.grid
    ext = _external(potential, grid)
    n = state.n_particles
    olds = [w.values for w in state.waves]
    prevs = [None] * n if state.previous_waves is None \
        else [w.values for w in state.previous_waves]

    news = []
    for a in range(n):
        others = np.delete(state.positions, a)
        U = ext + interaction_field(grid.x, others, interaction)
        news.append(_advance_wave(prevs[a], olds[a], U, grid, dt, units))

    pos = state.positions.copy()
    vel = state.velocities.copy()
    carried = state.carry_count
    for a in range(n):
        v0, c0 = _velocity_at(olds[a], grid, pos[a], vel[a], units)
        probe = pos[a] + dt * v0
        v1, c1 = _velocity_at(news[a], grid, probe, v0, units)
        pos[a] += 0.5 * dt * (v0 + v1)
        vel[a] = v1
        carried += int(c0) + int(c1)
    np.clip(pos, grid.x[0], grid.x[-1], out=pos)

    return ManyBodyState(
        grid=grid, waves=tuple(ComplexField(grid, w) for w in news),
        positions=pos, symmetry=state.symmetry, velocities=vel,
        previous_waves=state.waves, carry_count=carried,
        time=state.time + dt)


def assemble_exchange_wave(waves, positions, index: int,
                           grid: Grid1D = None) -> ComplexField:
    """Guiding wave for one particle from the wave matrix.

    Row `index` enters evaluated on the grid; every other row is collapsed
    to its particle's frozen position. The expansion over columns uses the
    signed minors of the resulting numeric matrix, so exchanging two frozen
    positions flips the assembled wave's sign whenever their rows hold the
    same wave family.
    """
    waves = tuple(tuple(row) for row in waves)
    n = len(waves)
    if grid is None:
        grid = waves[0][0].grid
    positions = np.asarray(positions, dtype=float)
    B = np.zeros((n, n), dtype=complex)
    for i in range(n):
        if i == index:
            continue
        for h in range(n):
            v = waves[i][h].values
            B[i, h] = np.interp(positions[i], grid.x, v.real) \
                + 1j * np.interp(positions[i], grid.x, v.imag)
    rest = [i for i in range(n) if i != index]
    out = np.zeros(grid.n, dtype=complex)
    for h in range(n):
        cols = [c for c in range(n) if c != h]
        minor = B[np.ix_(rest, cols)]
        cof = (-1.0) ** (index + h) * (np.linalg.det(minor)
                                       if minor.size else 1.0)
        out += cof * waves[index][h].values
    return ComplexField(grid, out)


def _reject_degenerate(state: ManyBodyState) -> None:
    n = state.n_particles
    for i in range(n):
        for k in range(i + 1, n):
            if state.positions[i] != state.positions[k]:
                continue
            same = all(np.array_equal(state.waves[a][i].values,
                                      state.waves[a][k].values)
                       for a in range(n))
            if same:
                raise ValueError(
                    "identical packets at identical positions make the "
                    "determinant vanish; the configuration is excluded")


def conditional_step_exchange(state: ManyBodyState, interaction, dt: float,
                              units: UnitSystem = SI_ELECTRON,
                              potential=None) -> ManyBodyState:
    """Advance the wave matrix row by row, reassemble each particle's
    guiding determinant, then move the positions."""
    if not state.exchange:
        raise ValueError("state carries no exchange matrix; "
                         "use conditional_step_no_exchange")
    if state.symmetry != "antisymmetric":
        raise ValueError("exchange stepping requires antisymmetric symmetry")
    _reject_degenerate(state)
    grid = state.grid
    ext = _external(potential, grid)
    n = state.n_particles
    olds = [[w.values for w in row] for row in state.waves]
    prevs = [[None] * n for _ in range(n)] if state.previous_waves is None \
        else [[w.values for w in row] for row in state.previous_waves]

    news = []
    kept = []  # previous level, rescaled in lockstep with the new one
    for a in range(n):
        others = np.delete(state.positions, a)
        U = ext + interaction_field(grid.x, others, interaction)
        row_new, row_prev = [], []
        for h in range(n):
            nxt = _advance_wave(prevs[a][h], olds[a][h], U, grid, dt, units)
            # rescale both recursion levels together: the recursion is
            # linear, and guidance never sees the overall scale
            scale = 1.0 / np.sqrt(norm(nxt, grid))
            row_new.append(nxt * scale)
            row_prev.append(olds[a][h] * scale)
        news.append(row_new)
        kept.append(row_prev)

    old_fields = state.waves
    new_fields = tuple(tuple(ComplexField(grid, w) for w in row)
                       for row in news)

    pos = state.positions.copy()
    vel = state.velocities.copy()
    carried = state.carry_count
    for a in range(n):
        phi0 = assemble_exchange_wave(old_fields, state.positions, a, grid)
        v0, c0 = _velocity_at(phi0.values, grid, pos[a], vel[a], units)
        phi1 = assemble_exchange_wave(new_fields, state.positions, a, grid)
        probe = pos[a] + dt * v0
        v1, c1 = _velocity_at(phi1.values, grid, probe, v0, units)
        pos[a] += 0.5 * dt * (v0 + v1)
        vel[a] = v1
        carried += int(c0) + int(c1)
    np.clip(pos, grid.x[0], grid.x[-1], out=pos)

    return ManyBodyState(
        grid=grid, waves=new_fields, positions=pos, symmetry=state.symmetry,
        velocities=vel,
        previous_waves=tuple(tuple(ComplexField(grid, w) for w in row)
                             for row in kept),
        carry_count=carried, time=state.time + dt)


@dataclass(frozen=True)
class ConditionalResult:
    """Per-step trajectories plus stride-sampled states."""

    states: tuple
    times: np.ndarray          # (steps+1,)
    trajectories: np.ndarray   # (steps+1, N)
    velocities: np.ndarray
    carry_count: int

    @property
    def final(self) -> ManyBodyState:
        return self.states[-1]


def conditional_evolve(state: ManyBodyState, interaction, cfg: TdseConfig,
                       units: UnitSystem = SI_ELECTRON, potential=None,
                       override_stability: bool = False) -> ConditionalResult:
    """Drive the per-step conditional updates over a whole run."""
    if cfg.nonlinearity_g != 0.0:
        raise ValueError("conditional waves are linear; nonlinearity_g "
                         "is not supported here")
    factor = units.hbar * cfg.dt / (units.mass * state.grid.dx ** 2)
    if factor > STABILITY_GATE and not override_stability:
        raise StabilityError(
            f"stability factor {factor:.4g} exceeds the gate {STABILITY_GATE}; "
            "pass override_stability to run anyway", factor)
    step = conditional_step_exchange if state.exchange \
        else conditional_step_no_exchange
    traj = np.empty((cfg.steps + 1, state.n_particles))
    vels = np.empty_like(traj)
    traj[0], vels[0] = state.positions, state.velocities
    states = [state]
    cur = state
    for j in range(1, cfg.steps + 1):
        cur = step(cur, interaction, cfg.dt, units, potential)
        traj[j], vels[j] = cur.positions, cur.velocities
        if j % cfg.snapshot_stride == 0 or j == cfg.steps:
            states.append(cur)
    times = np.arange(cfg.steps + 1) * cfg.dt + state.time
    return ConditionalResult(tuple(states), times, traj, vels,
                             cur.carry_count)
