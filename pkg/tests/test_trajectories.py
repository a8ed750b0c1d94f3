"""Velocity-field and trajectory-integration checks against closed forms."""

import numpy as np
import pytest
from scipy import constants

from bohmsim.core import (
    ComplexField,
    Grid1D,
    GridMismatchError,
    PolarField,
    gradient,
    sample_quantum_equilibrium,
    to_polar,
)
from bohmsim.tdse import GaussianParams, TdseConfig, evolve, gaussian_packet
from bohmsim.trajectories import (
    VelocityFrame,
    bohmian_velocity,
    current_density,
    integrate_trajectories,
    left_probability,
    quantum_potential,
    velocity_frames,
    velocity_from_phase,
)

HBAR = constants.hbar
ME = constants.m_e


def uniform_frame(grid, speed, t):
    return VelocityFrame(time=t, grid=grid, velocity=np.full(grid.n, speed),
                         density=np.ones(grid.n),
                         node_mask=np.zeros(grid.n, dtype=bool))


# ---------------------------------------------------------------------------
# current density


def test_current_plane_wave_matches_hbar_k_over_m():
    k = 1e8
    grid = Grid1D(x0=0.0, dx=1e-12, n=301)  # k*dx = 1e-4
    psi = np.exp(1j * k * grid.x)
    jj = current_density(psi, grid)
    assert np.allclose(jj, HBAR * k / ME, rtol=1e-8)


def test_current_of_real_field_is_exactly_zero():
    grid = Grid1D(x0=-5e-9, dx=1e-11, n=1001)
    psi = np.exp(-grid.x ** 2 / (2 * (1e-9) ** 2)) + 0j
    assert np.all(current_density(psi, grid) == 0.0)


def test_current_integral_matches_mean_velocity():
    # Ehrenfest: integral of J equals d<x>/dt = hbar*kc/m for a free packet
    grid = Grid1D.from_extent(-8e-8, 8e-8, 1601)
    kc = 5e8
    for t in (0.0, 1e-14, 3e-14):
        psi = gaussian_packet(GaussianParams(a=1e-8, x0=0.0, kc=kc), t, grid)
        rate = np.trapezoid(current_density(psi, grid), dx=grid.dx)
        assert abs(rate - HBAR * kc / ME) < 1e-3 * HBAR * kc / ME


# ---------------------------------------------------------------------------
# guidance velocity


def test_velocity_of_plane_wave():
    k = 1e8
    grid = Grid1D(x0=0.0, dx=1e-12, n=301)
    frame = bohmian_velocity(np.exp(1j * k * grid.x), grid)
    assert np.allclose(frame.velocity, HBAR * k / ME, rtol=1e-8)
    assert not frame.node_mask.any()


def test_velocity_of_real_eigenstate_is_zero():
    L = 1e-8
    grid = Grid1D.from_extent(0.0, L, 501)
    frame = bohmian_velocity(np.sin(np.pi * grid.x / L) + 0j, grid)
    assert np.all(frame.velocity == 0.0)
    assert frame.node_mask[0] and frame.node_mask[-1]
    assert not frame.node_mask[1:-1].any()


def test_velocity_of_spreading_packet_is_linear_in_x():
    a, t = 8e-9, 1.5e-13
    grid = Grid1D.from_extent(-4e-8, 4e-8, 801)
    psi = gaussian_packet(GaussianParams(a=a, x0=0.0, kc=0.0), t, grid)
    frame = bohmian_velocity(psi, grid)
    sigma2 = a * a / 4.0 + (HBAR * t / (ME * a)) ** 2
    v_exact = grid.x * (HBAR / (ME * a)) ** 2 * t / sigma2
    band = np.abs(grid.x) <= 2.0 * np.sqrt(sigma2)
    dev = np.abs(frame.velocity - v_exact)[band].max()
    assert dev < 1e-3 * np.abs(v_exact[band]).max()


def test_velocity_carries_through_interior_node():
    k = 2e8
    grid = Grid1D(x0=-5e-9, dx=2.5e-11, n=401)  # x=0 lands on index 200
    psi = grid.x * np.exp(-grid.x ** 2 / (2 * (2e-9) ** 2)) * np.exp(1j * k * grid.x)
    frame = bohmian_velocity(psi, grid)
    c = 200
    assert abs(grid.x[c]) < 1e-20
    assert frame.node_mask[c]
    assert np.isfinite(frame.velocity).all()
    assert frame.velocity[c] == frame.velocity[c - 1]  # leftward tie rule


def test_velocity_of_null_field_is_masked_zero():
    grid = Grid1D(x0=0.0, dx=1e-10, n=32)
    frame = bohmian_velocity(np.zeros(32, dtype=complex), grid)
    assert np.all(frame.velocity == 0.0)
    assert frame.node_mask.all()


def test_phase_velocity_of_linear_action():
    k = 1e8
    grid = Grid1D(x0=0.0, dx=1e-11, n=501)  # k*dx = 1e-3
    polar = PolarField(grid=grid, amplitude=np.ones(501), action=HBAR * k * grid.x)
    frame = velocity_from_phase(polar)
    assert np.allclose(frame.velocity, HBAR * k / ME, rtol=1e-6)


def test_velocity_definitions_agree_on_propagated_field():
    # the two guidance readings must match far below the 1e-6 gate
    grid = Grid1D.from_extent(-3e-8, 3e-8, 601)
    dt = 0.1 * ME * grid.dx ** 2 / HBAR
    run = evolve(GaussianParams(a=5e-9, x0=-5e-9, kc=4e8), None,
                 TdseConfig(dt=dt, steps=500, snapshot_stride=500), grid=grid)
    psi = run.final.psi
    vb = bohmian_velocity(psi, grid)
    vp = velocity_from_phase(to_polar(psi))
    good = psi.density > 1e-6 * psi.density.max()
    dev = np.abs(vb.velocity - vp.velocity)[good]
    assert dev.max() < 1e-8 * np.abs(vb.velocity[good]).max()


# ---------------------------------------------------------------------------
# quantum potential


def test_quantum_potential_of_uniform_amplitude_is_zero():
    grid = Grid1D(x0=0.0, dx=1e-10, n=64)
    q, mask = quantum_potential(np.ones(64), grid)
    assert np.all(q == 0.0)
    assert list(np.flatnonzero(mask)) == [0, 1, 62, 63]


def test_quantum_potential_of_box_eigenstate_is_constant():
    L, n_mode = 8e-9, 3
    grid = Grid1D.from_extent(0.0, L, 1601)
    k = n_mode * np.pi / L
    q, mask = quantum_potential(np.abs(np.sin(k * grid.x)), grid)
    expected = HBAR ** 2 * k ** 2 / (2.0 * ME)
    good = ~mask
    assert good.sum() > 1500
    assert np.allclose(q[good], expected, rtol=1e-6)


def test_quantum_potential_gaussian_closed_form():
    s = 1e-9
    grid = Grid1D.from_extent(-5 * s, 5 * s, 1001)  # dx = s/100
    amp = np.exp(-grid.x ** 2 / (2 * s * s))
    q, mask = quantum_potential(amp, grid)
    q_exact = (HBAR ** 2 / (2 * ME)) * (1.0 / s ** 2 - grid.x ** 2 / s ** 4)
    good = ~mask
    dev = np.abs(q - q_exact)[good].max()
    assert dev < 1e-6 * np.abs(q_exact).max()


def test_quantum_potential_accepts_polar_field():
    s = 2e-9
    grid = Grid1D.from_extent(-1e-8, 1e-8, 801)
    psi = ComplexField(grid, np.exp(-grid.x ** 2 / (2 * s * s)) * np.exp(1j * 0.3))
    q_from_polar, _ = quantum_potential(to_polar(psi), grid)
    q_from_amp, _ = quantum_potential(np.abs(psi.values), grid)
    assert np.allclose(q_from_polar, q_from_amp, rtol=0, atol=1e-40)


# ---------------------------------------------------------------------------
# integration mechanics


def test_constant_field_advects_exactly():
    grid = Grid1D.from_extent(0.0, 1e-6, 201)
    c = 1e5
    frames = [uniform_frame(grid, c, t) for t in (0.0, 1e-14, 2.5e-14)]
    ens = integrate_trajectories(frames, [1e-7, 4e-7])
    expected = np.add.outer(np.array([0.0, 1e-14, 2.5e-14]) * c,
                            np.array([1e-7, 4e-7]))
    assert np.allclose(ens.positions, expected, rtol=1e-12)
    assert np.allclose(ens.velocities, c)
    assert ens.boundary_hits == 0


def test_zero_field_keeps_positions_fixed():
    grid = Grid1D.from_extent(0.0, 1e-8, 101)
    frames = [uniform_frame(grid, 0.0, t) for t in (0.0, 1e-15, 2e-15)]
    ens = integrate_trajectories(frames, [2e-9, 7e-9])
    assert np.all(ens.positions == ens.positions[0])


def test_single_frame_is_a_passthrough():
    grid = Grid1D.from_extent(0.0, 1e-8, 101)
    ens = integrate_trajectories([uniform_frame(grid, 3e4, 0.0)], [5e-9])
    assert ens.positions.shape == (1, 1)
    assert ens.positions[0, 0] == 5e-9


def test_linear_field_gives_exponential_growth():
    lam = 1e13
    grid = Grid1D.from_extent(0.0, 1e-6, 101)
    frames = [VelocityFrame(time=j * 1e-15, grid=grid, velocity=lam * grid.x,
                            density=np.ones(grid.n),
                            node_mask=np.zeros(grid.n, dtype=bool))
              for j in range(11)]
    x0 = np.array([1e-7, 3e-7])
    ens = integrate_trajectories(frames, x0)
    assert np.allclose(ens.positions[-1], x0 * np.exp(lam * 1e-14), rtol=1e-9)


def test_frame_gap_beyond_budget_is_a_configuration_error():
    grid = Grid1D.from_extent(0.0, 1e-8, 11)
    frames = [uniform_frame(grid, 0.0, 0.0), uniform_frame(grid, 0.0, 1e-14)]
    with pytest.raises(ValueError, match="budget"):
        integrate_trajectories(frames, [5e-9], max_step=1e-18,
                               max_substeps_per_frame=100)


def test_wall_clamp_is_counted():
    grid = Grid1D.from_extent(0.0, 1e-8, 101)
    frames = [uniform_frame(grid, 1e5, 0.0), uniform_frame(grid, 1e5, 1e-12)]
    ens = integrate_trajectories(frames, [9e-9])
    assert ens.positions[-1, 0] == grid.x[-1]
    assert ens.boundary_hits >= 1


def test_seed_outside_grid_is_rejected():
    grid = Grid1D.from_extent(0.0, 1e-8, 11)
    with pytest.raises(ValueError, match="inside"):
        integrate_trajectories([uniform_frame(grid, 0.0, 0.0)], [2e-8])


def test_mismatched_frame_grids_are_rejected():
    g1 = Grid1D.from_extent(0.0, 1e-8, 11)
    g2 = Grid1D.from_extent(0.0, 2e-8, 11)
    with pytest.raises(GridMismatchError):
        integrate_trajectories([uniform_frame(g1, 0.0, 0.0),
                                uniform_frame(g2, 0.0, 1e-15)], [5e-9])


def test_non_increasing_frame_times_are_rejected():
    grid = Grid1D.from_extent(0.0, 1e-8, 11)
    with pytest.raises(ValueError, match="increase"):
        integrate_trajectories([uniform_frame(grid, 0.0, 1e-15),
                                uniform_frame(grid, 0.0, 0.0)], [5e-9])


def test_ensemble_accessors():
    grid = Grid1D.from_extent(0.0, 1e-8, 101)
    frames = [uniform_frame(grid, 1e4, t) for t in (0.0, 1e-15)]
    ens = integrate_trajectories(frames, [2e-9, 5e-9], ids=[7, 3],
                                 seed=11, source="unit-test")
    assert len(ens) == 2 and ens.seed == 11 and ens.source == "unit-test"
    tr = ens.trajectory(1)
    assert tr.id == 3
    assert np.array_equal(tr.positions, ens.positions[:, 1])
    assert [t.id for t in ens] == [7, 3]
    with pytest.raises(ValueError, match="unique"):
        integrate_trajectories(frames, [2e-9, 5e-9], ids=[4, 4])


# ---------------------------------------------------------------------------
# ensemble statistics on a propagated packet


@pytest.fixture(scope="module")
def packet_run():
    grid = Grid1D.from_extent(-6e-8, 6e-8, 1201)
    dt = 0.1 * ME * grid.dx ** 2 / HBAR
    run = evolve(GaussianParams(a=6e-9, x0=-1e-8, kc=1.5e9), None,
                 TdseConfig(dt=dt, steps=2000, snapshot_stride=20), grid=grid)
    frames = velocity_frames(run, grid)
    starts = sample_quantum_equilibrium(frames[0].density, grid, 2000, seed=7)
    ens = integrate_trajectories(frames, starts, seed=7)
    return grid, frames, ens


def ks_distance(positions, density, grid):
    order = np.sort(positions)
    total = left_probability(density, grid, grid.x[-1])
    cdf = left_probability(density, grid, order) / total
    m = order.size
    hi = np.abs(cdf - np.arange(1, m + 1) / m).max()
    lo = np.abs(cdf - np.arange(0, m) / m).max()
    return max(hi, lo)


def test_equilibrium_ensemble_tracks_density(packet_run):
    grid, frames, ens = packet_run
    for row in (0, 50, 100):
        ks = ks_distance(ens.positions[row], frames[row].density, grid)
        assert ks < 0.05


def test_trajectories_never_cross(packet_run):
    grid, frames, ens = packet_run
    order = np.argsort(ens.positions[0])
    ranked = ens.positions[:, order]
    assert np.all(np.diff(ranked, axis=1) > 0.0)


def test_left_probability_constant_along_trajectories(packet_run):
    grid, frames, ens = packet_run
    rows = range(0, len(frames), 10)
    base = None
    for row in rows:
        total = left_probability(frames[row].density, grid, grid.x[-1])
        pl = left_probability(frames[row].density, grid, ens.positions[row]) / total
        if base is None:
            base = pl
        else:
            assert np.abs(pl - base).max() < 5e-3


def test_trailing_packet_reverses_before_the_barrier():
    # double-packet run onto a double barrier: part of the trailing packet
    # turns back through collision with reflected leaders, never touching
    # the barrier itself
    from bohmsim.core import PotentialSpec

    eV = 1.602176634e-19
    grid = Grid1D.from_extent(-4e-8, 4e-8, 801)
    barrier_start = 2.0e-8
    pot = PotentialSpec.barriers([(barrier_start, 2.2e-8, 0.3 * eV),
                                  (2.9e-8, 3.1e-8, 0.3 * eV)])
    dt = 0.2 * ME * grid.dx ** 2 / HBAR
    packets = [GaussianParams(a=4e-9, x0=-8e-9, kc=7e8),
               GaussianParams(a=4e-9, x0=-2.2e-8, kc=7e8)]
    run = evolve(packets, pot, TdseConfig(dt=dt, steps=32000, snapshot_stride=320),
                 grid=grid)
    frames = velocity_frames(run, grid)
    starts = sample_quantum_equilibrium(frames[0].density, grid, 600, seed=3)
    ens = integrate_trajectories(frames, starts, seed=3)
    trailing = ens.positions[0] < -1.5e-8
    assert trailing.sum() > 100
    never_reached = ens.positions.max(axis=0) < barrier_start
    turned_back = ens.velocities[-1] < 0.0
    assert np.count_nonzero(trailing & never_reached & turned_back) > 0


def test_acceleration_matches_quantum_force():
    # Newton-like reading: m dv/dt = -d(V+Q)/dx with V = 0 here
    a = 8e-9
    grid = Grid1D.from_extent(-4e-8, 4e-8, 801)
    times = np.arange(26) * 4e-15
    frames, forces = [], []
    for t in times:
        psi = gaussian_packet(GaussianParams(a=a, x0=0.0, kc=0.0), t, grid)
        frames.append(bohmian_velocity(psi, grid, t=t))
        q, _ = quantum_potential(np.abs(psi.values), grid)
        forces.append(-gradient(q, grid))
    ens = integrate_trajectories(frames, [-5e-9, -2e-9, 1e-9, 4e-9])
    accel = (ens.velocities[2:] - ens.velocities[:-2]) / (times[2] - times[0])
    sampled = np.empty_like(accel)
    for j in range(1, len(times) - 1):
        sampled[j - 1] = np.interp(ens.positions[j], grid.x, forces[j])
    scale = np.abs(sampled).max()
    assert np.abs(ME * accel - sampled).max() < 0.05 * scale


# ---------------------------------------------------------------------------
# left probability


def test_left_probability_uniform_density():
    grid = Grid1D.from_extent(0.0, 10.0, 101)
    rho = np.ones(101)
    pts = np.array([0.0, 0.37, 5.55, 9.99, 10.0])
    assert np.allclose(left_probability(rho, grid, pts), pts, atol=1e-12)


def test_left_probability_linear_density_is_exact():
    grid = Grid1D.from_extent(0.0, 4.0, 41)
    rho = grid.x.copy()
    pts = np.array([0.05, 1.23, 3.999])
    assert np.allclose(left_probability(rho, grid, pts), pts ** 2 / 2.0, rtol=1e-12)


def test_left_probability_gaussian_matches_erf():
    from scipy.special import erf
    s = 1.0
    grid = Grid1D.from_extent(-8.0, 8.0, 3201)
    rho = np.exp(-grid.x ** 2 / (2 * s * s)) / (s * np.sqrt(2 * np.pi))
    pts = np.array([-2.0, -0.3, 0.0, 1.7])
    exact = 0.5 * (1.0 + erf(pts / (s * np.sqrt(2.0))))
    assert np.allclose(left_probability(rho, grid, pts), exact, atol=1e-8)


def test_left_probability_clamps_outside_positions():
    grid = Grid1D.from_extent(0.0, 1.0, 11)
    rho = np.ones(11)
    assert left_probability(rho, grid, -5.0) == 0.0
    assert abs(left_probability(rho, grid, 7.0) - 1.0) < 1e-12


def test_velocity_frames_helper_matches_snapshots():
    grid = Grid1D.from_extent(-2e-8, 2e-8, 401)
    dt = 0.1 * ME * grid.dx ** 2 / HBAR
    run = evolve(GaussianParams(a=4e-9, x0=0.0, kc=0.0), None,
                 TdseConfig(dt=dt, steps=40, snapshot_stride=10), grid=grid)
    frames = velocity_frames(run, grid)
    assert len(frames) == len(run.snapshots)
    assert all(f.time == s.t for f, s in zip(frames, run.snapshots))
