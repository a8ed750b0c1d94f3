"""Coupled-particle dynamics: exact 2D oracle and the conditional-wave closure."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import constants

from bohmsim.core import Grid1D, PotentialSpec, norm
from bohmsim.manybody import (
    COULOMB_STRENGTH,
    InteractionSpec,
    ManyBodyState,
    antisymmetrized_state,
    assemble_exchange_wave,
    conditional_evolve,
    continuity_residual,
    exact_two_particle_evolve,
    interaction_field,
    pair_interaction_matrix,
    product_state,
    separable_potential,
    softened_coulomb,
    stability_factor_2d,
    velocity_components,
)
from bohmsim.tdse import GaussianParams, StabilityError, TdseConfig, evolve, gaussian_packet
from conftest import BARRIER_EXIT, PACKET_WIDTH, barrier_potential

HB = constants.hbar
ME = constants.m_e
EV = constants.electron_volt


def wide_grid(n=96, half=40e-9):
    return Grid1D.from_extent(-half, half, n)


def slow_pair(grid, a=7e-9):
    # low wavenumbers keep the leapfrog dispersion defect far below the
    # product-preservation budget; width chosen so the tails clear the box
    one = gaussian_packet(GaussianParams(a=a, x0=-10e-9, kc=1e8), 0.0, grid)
    two = gaussian_packet(GaussianParams(a=a, x0=+10e-9, kc=-8e7), 0.0, grid)
    return one, two


def cfg_for(grid, steps, factor_1d=0.1, stride=None):
    dt = factor_1d * ME * grid.dx * grid.dx / HB
    return TdseConfig(dt=dt, steps=steps,
                      snapshot_stride=stride if stride else steps)


# --- pair potentials -------------------------------------------------------


def test_coulomb_strength_default():
    spec = InteractionSpec.coulomb(softening=1e-9)
    assert spec.strength == pytest.approx(2.307e-28, rel=1e-3)
    assert spec.strength == COULOMB_STRENGTH


def test_softened_coulomb_vanishes_at_huge_softening():
    x = np.linspace(-50e-9, 50e-9, 101)
    u = softened_coulomb(x, [0.0], InteractionSpec.coulomb(softening=1.0))
    assert u.max() <= COULOMB_STRENGTH  # strength / 1 m bound
    assert u.max() < 1e-27              # ~1e-9 eV: gone on device scales


def test_softened_coulomb_mirror_symmetric_pair():
    spec = InteractionSpec.coulomb(softening=3e-9)
    x = np.array([-9e-9, -4e-9, 0.0, 4e-9, 9e-9])
    u = softened_coulomb(x, [-6e-9, 6e-9], spec)
    # (x-d)^2 and squared mirror arguments coincide bitwise, and the two
    # partner terms add in either order to the same float
    assert np.array_equal(u, u[::-1])


def test_softened_coulomb_three_body_additivity():
    spec = InteractionSpec.coulomb(softening=2e-9)
    x = np.linspace(-20e-9, 20e-9, 41)
    partners = [-7e-9, 11e-9]
    joint = softened_coulomb(x, partners, spec)
    split = softened_coulomb(x, partners[:1], spec) \
        + softened_coulomb(x, partners[1:], spec)
    assert np.array_equal(joint, split)


@settings(max_examples=40, deadline=None)
@given(s_nm=st.floats(0.5, 50.0),
       partners=st.lists(st.floats(-20.0, 20.0), min_size=1, max_size=3))
def test_softened_coulomb_bounded_and_order_free(s_nm, partners):
    spec = InteractionSpec.coulomb(softening=s_nm * 1e-9)
    x = np.linspace(-25e-9, 25e-9, 21)
    u = softened_coulomb(x, np.array(partners) * 1e-9, spec)
    cap = len(partners) * spec.strength / spec.softening
    assert np.all(u > 0.0)
    assert u.max() <= cap * (1.0 + 1e-12)
    shuffled = softened_coulomb(x, np.array(partners[::-1]) * 1e-9, spec)
    np.testing.assert_allclose(shuffled, u, rtol=1e-12)


def test_tabulated_interaction_interpolates_and_clamps():
    spec = InteractionSpec.tabulated_pair([0.0, 1e-9, 2e-9],
                                          [4e-21, 2e-21, 1e-21])
    u = interaction_field(np.array([0.0, 0.5e-9, 5e-9]), [0.0], spec)
    assert u[0] == pytest.approx(4e-21)
    assert u[1] == pytest.approx(3e-21)
    assert u[2] == pytest.approx(1e-21)  # clamped beyond the table


def test_no_interaction_gives_zero_field():
    u = interaction_field(np.linspace(-1e-9, 1e-9, 7), [0.5e-9], None)
    assert np.array_equal(u, np.zeros(7))


def test_interaction_spec_validation():
    with pytest.raises(ValueError, match="softening"):
        InteractionSpec.coulomb(softening=0.0)
    with pytest.raises(ValueError, match="softening"):
        InteractionSpec(kind="softened-coulomb")
    with pytest.raises(ValueError, match="equal 1D"):
        InteractionSpec.tabulated_pair([0.0, 1.0], [1.0])
    with pytest.raises(ValueError, match="increase"):
        InteractionSpec.tabulated_pair([1.0, 0.5], [1.0, 2.0])
    with pytest.raises(ValueError, match="increase"):
        InteractionSpec.tabulated_pair([-1.0, 1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="finite"):
        InteractionSpec.tabulated_pair([0.0, 1.0], [1.0, np.inf])
    with pytest.raises(ValueError, match="kind"):
        InteractionSpec(kind="yukawa")


# --- state container -------------------------------------------------------


def test_state_rejects_position_outside_grid():
    grid = wide_grid()
    one, two = slow_pair(grid)
    with pytest.raises(ValueError, match="inside the grid"):
        ManyBodyState.from_fields([one, two],
                                  positions=np.array([0.0, 90e-9]))


def test_state_rejects_wave_count_mismatch():
    grid = wide_grid()
    one, two = slow_pair(grid)
    with pytest.raises(ValueError, match="one wave per particle"):
        ManyBodyState.from_fields([one, two], positions=np.array([0.0]))


def test_state_rejects_ragged_exchange_matrix():
    grid = wide_grid()
    one, two = slow_pair(grid)
    with pytest.raises(ValueError, match="square"):
        ManyBodyState(grid=grid, waves=((one, two), (one,)),
                      positions=np.array([-1e-9, 1e-9]),
                      symmetry="antisymmetric")


def test_state_rejects_unknown_symmetry():
    grid = wide_grid()
    one, two = slow_pair(grid)
    with pytest.raises(ValueError, match="symmetry"):
        ManyBodyState.from_fields([one, two],
                                  positions=np.array([-1e-9, 1e-9]),
                                  symmetry="bosonic-ish")


def test_exchange_rows_start_identical():
    grid = wide_grid()
    one, two = slow_pair(grid)
    state = ManyBodyState.exchange_from_fields(
        [one, two], positions=np.array([-10e-9, 10e-9]))
    assert state.exchange and state.n_particles == 2
    for row in state.waves:
        assert row[0] is one and row[1] is two


# --- exact two-particle oracle --------------------------------------------


def test_two_particle_grid_size_cap():
    grid = Grid1D.from_extent(-40e-9, 40e-9, 600)
    one = gaussian_packet(GaussianParams(a=8e-9, x0=0.0, kc=0.0), 0.0, grid)
    psi0 = product_state(one, one)
    with pytest.raises(ValueError, match="512"):
        exact_two_particle_evolve(psi0, None, cfg_for(grid, 1))


def test_two_particle_stability_gate_and_override():
    grid = Grid1D.from_extent(-40e-9, 40e-9, 48)
    one, two = slow_pair(grid)
    psi0 = product_state(one, two)
    cfg = cfg_for(grid, 5, factor_1d=0.15)  # 2D factor 0.30
    assert stability_factor_2d(cfg, psi0.grid) == pytest.approx(0.30)
    with pytest.raises(StabilityError) as err:
        exact_two_particle_evolve(psi0, None, cfg)
    assert err.value.factor == pytest.approx(0.30)
    result = exact_two_particle_evolve(psi0, None, cfg,
                                       override_stability=True)
    assert np.isfinite(result.final.norm_drift)


def test_product_form_survives_separable_barriers():
    grid = wide_grid()
    one, two = slow_pair(grid)
    left = PotentialSpec.barriers([(-6e-9, -3e-9, 3e-4 * EV)])
    right = PotentialSpec.barriers([(2e-9, 5e-9, 2e-4 * EV)])
    psi0 = product_state(one, two)
    v2 = separable_potential(psi0.grid, left, right)
    cfg = cfg_for(grid, 600)
    joint = exact_two_particle_evolve(psi0, v2, cfg)
    alone1 = evolve(one, left, cfg).final.psi.values
    alone2 = evolve(two, right, cfg).final.psi.values
    alone1 = alone1 / np.sqrt(norm(one))
    alone2 = alone2 / np.sqrt(norm(two))
    dev = np.abs(joint.final.psi.values - np.outer(alone1, alone2)).max()
    assert dev < 1e-4 * np.abs(joint.final.psi.values).max()
    assert len(joint.snapshots) == 2  # step 0 and the final step


def test_antisymmetry_survives_symmetric_interaction():
    grid = wide_grid()
    one = gaussian_packet(GaussianParams(a=6e-9, x0=-12e-9, kc=3e8), 0.0, grid)
    two = gaussian_packet(GaussianParams(a=6e-9, x0=12e-9, kc=-3e8), 0.0, grid)
    psi0 = antisymmetrized_state(one, two)
    v2 = pair_interaction_matrix(psi0.grid,
                                 InteractionSpec.coulomb(softening=5e-9))
    result = exact_two_particle_evolve(psi0, v2, cfg_for(grid, 400))
    final = result.final.psi.values
    assert np.abs(final + final.T).max() < 1e-6 * np.abs(final).max()


def test_norm_drift_stays_small_at_low_stability_factor():
    grid = wide_grid()
    one, two = slow_pair(grid)
    psi0 = product_state(one, two)
    # pair strength cut well below the packet energy: full-strength Coulomb
    # would blast these slow packets into under-resolved wavenumbers
    gentle = InteractionSpec.coulomb(softening=20e-9,
                                     strength=COULOMB_STRENGTH / 500.0)
    v2 = separable_potential(psi0.grid,
                             PotentialSpec.barriers([(-2e-9, 2e-9, 5e-4 * EV)]),
                             None) \
        + pair_interaction_matrix(psi0.grid, gentle)
    cfg = cfg_for(grid, 3000, factor_1d=0.025, stride=500)  # 2D factor 0.05
    result = exact_two_particle_evolve(psi0, v2, cfg)
    assert max(abs(s.norm_drift) for s in result.snapshots) < 1e-4


def test_continuity_residual_refines_at_second_order():
    # halving dx and quartering dt should cut the residual ~4x; demand > 2.5
    def residual(n, steps):
        grid = Grid1D.from_extent(-40e-9, 40e-9, n)
        one = gaussian_packet(GaussianParams(a=8e-9, x0=-5e-9, kc=1.2e8),
                              0.0, grid)
        two = gaussian_packet(GaussianParams(a=8e-9, x0=6e-9, kc=-1e8),
                              0.0, grid)
        psi0 = product_state(one, two)
        v2 = pair_interaction_matrix(psi0.grid,
                                     InteractionSpec.coulomb(softening=12e-9))
        cfg = cfg_for(grid, steps, factor_1d=0.05, stride=1)
        result = exact_two_particle_evolve(psi0, v2, cfg)
        mid = steps // 2
        trio = [result.snapshots[mid - 1].psi, result.snapshots[mid].psi,
                result.snapshots[mid + 1].psi]
        return continuity_residual(*trio, dt=cfg.dt)

    coarse = residual(64, 40)
    fine = residual(128, 160)  # same physical midpoint time
    assert coarse / fine > 2.5


def test_velocity_components_recover_packet_momenta():
    grid = wide_grid(n=192)
    one = gaussian_packet(GaussianParams(a=7e-9, x0=-10e-9, kc=2e8), 0.0, grid)
    two = gaussian_packet(GaussianParams(a=7e-9, x0=10e-9, kc=-1.5e8), 0.0, grid)
    psi0 = product_state(one, two)
    v1, v2, trusted = velocity_components(psi0)
    xx, yy = psi0.grid.meshgrid()
    core = trusted & (np.abs(xx + 10e-9) < 4e-9) & (np.abs(yy - 10e-9) < 4e-9)
    assert np.allclose(v1[core], HB * 2e8 / ME, rtol=1e-2)
    assert np.allclose(v2[core], -HB * 1.5e8 / ME, rtol=1e-2)


# --- conditional waves without exchange ------------------------------------


def test_zero_interaction_reproduces_single_particle_runs():
    grid = wide_grid()
    one, two = slow_pair(grid)
    wall = PotentialSpec.barriers([(-1e-9, 1e-9, 4e-4 * EV)])
    cfg = cfg_for(grid, 500)
    pair = conditional_evolve(
        ManyBodyState.from_fields([one, two],
                                  positions=np.array([-10e-9, 10e-9])),
        None, cfg, potential=wall)
    for wave, packet in zip(pair.final.waves, (one, two)):
        alone = evolve(packet, wall, cfg).final.psi.values
        dev = np.abs(wave.values - alone).max()
        assert dev < 1e-10 * np.abs(alone).max()
    for column, x0 in ((0, -10e-9), (1, 10e-9)):
        solo = conditional_evolve(
            ManyBodyState.from_fields([(one, two)[column]],
                                      positions=np.array([x0])),
            None, cfg, potential=wall)
        assert np.array_equal(pair.trajectories[:, column],
                              solo.trajectories[:, 0])


def test_flat_interaction_is_global_phase_only():
    # a separation-independent pair energy may rotate the wave's phase but
    # must leave amplitudes, velocities and trajectories alone
    grid = Grid1D.from_extent(-60e-9, 60e-9, 256)
    one = gaussian_packet(GaussianParams(a=4e-9, x0=-25e-9, kc=6e8), 0.0, grid)
    two = gaussian_packet(GaussianParams(a=4e-9, x0=15e-9, kc=6e8), 0.0, grid)
    positions = np.array([-25e-9, 15e-9])
    cfg = cfg_for(grid, 900, factor_1d=0.12)
    flat = InteractionSpec.tabulated_pair([0.0, 1.0], [1e-3 * EV, 1e-3 * EV])
    base = conditional_evolve(
        ManyBodyState.from_fields([one, two], positions=positions), None, cfg)
    lifted = conditional_evolve(
        ManyBodyState.from_fields([one, two], positions=positions), flat, cfg)
    w0 = base.final.waves[0].values
    w1 = lifted.final.waves[0].values
    scale = np.abs(w0).max()
    assert np.abs(w1 - w0).max() > 0.2 * scale          # the phase moved
    assert np.abs(np.abs(w1) - np.abs(w0)).max() < 1e-3 * scale
    vscale = np.abs(base.velocities).max()
    assert np.abs(lifted.velocities - base.velocities).max() < 1e-4 * vscale
    assert np.abs(lifted.trajectories - base.trajectories).max() < 1e-12


def test_weak_coupling_tracks_exact_pair_trajectories(weak_coupling_runs):
    cond = weak_coupling_runs["cond"]
    oracle = weak_coupling_runs["oracle"]
    rms = np.sqrt(np.mean(
        (oracle.pair_positions[:, 0, :] - cond.trajectories) ** 2, axis=0))
    assert np.all(rms < 0.05 * PACKET_WIDTH)
    assert cond.carry_count == 0


def test_strong_coupling_flips_follower_outcome(strong_coupling_runs):
    free = strong_coupling_runs["free"]
    cond = strong_coupling_runs["cond"]
    oracle = strong_coupling_runs["oracle"]
    free_crossed = free.trajectories[-1, 1] > BARRIER_EXIT
    cond_crossed = cond.trajectories[-1, 1] > BARRIER_EXIT
    oracle_crossed = oracle.pair_positions[-1, 0, 1] > BARRIER_EXIT
    assert not free_crossed
    assert cond_crossed
    assert cond_crossed == oracle_crossed
    grid = strong_coupling_runs["grid"]
    assert np.all(np.abs(cond.trajectories) <= grid.x[-1])


# --- conditional waves with exchange ----------------------------------------


def test_exchange_tracks_antisymmetrized_oracle(exchange_runs):
    cond = exchange_runs["cond"]
    oracle = exchange_runs["oracle"]
    rms = np.sqrt(np.mean(
        (oracle.pair_positions[:, 0, :] - cond.trajectories) ** 2, axis=0))
    assert np.all(rms < 0.05 * PACKET_WIDTH)


def test_exchange_label_swap_relabels_trajectories(weak_coupling_runs,
                                                   exchange_runs):
    lead, follow = weak_coupling_runs["packets"]
    start = weak_coupling_runs["start"]
    cfg = weak_coupling_runs["cfg"]
    interaction = weak_coupling_runs["interaction"]
    swapped_state = ManyBodyState.exchange_from_fields(
        [follow, lead], positions=start[::-1])
    swapped = conditional_evolve(swapped_state, interaction, cfg,
                                 potential=barrier_potential())
    dev = np.abs(swapped.trajectories[:, ::-1]
                 - exchange_runs["cond"].trajectories).max()
    assert dev < 1e-12


def test_exchange_matches_plain_conditional_when_separated():
    # non-overlapping packets: the determinant is diagonal-dominated and
    # exchange terms are exponentially dead
    grid = Grid1D.from_extent(-60e-9, 60e-9, 256)
    one = gaussian_packet(GaussianParams(a=4e-9, x0=-25e-9, kc=6e8), 0.0, grid)
    two = gaussian_packet(GaussianParams(a=4e-9, x0=15e-9, kc=6e8), 0.0, grid)
    positions = np.array([-25e-9, 15e-9])
    cfg = cfg_for(grid, 900, factor_1d=0.12)
    spec = InteractionSpec.coulomb(softening=5e-9)
    plain = conditional_evolve(
        ManyBodyState.from_fields([one, two], positions=positions), spec, cfg)
    fancy = conditional_evolve(
        ManyBodyState.exchange_from_fields([one, two], positions=positions),
        spec, cfg)
    dev = np.abs(plain.trajectories - fancy.trajectories).max()
    assert dev < 0.01 * PACKET_WIDTH


def test_identical_packets_at_same_position_rejected():
    grid = wide_grid()
    one, _ = slow_pair(grid)
    state = ManyBodyState.exchange_from_fields(
        [one, one], positions=np.array([-10e-9, -10e-9]))
    with pytest.raises(ValueError, match="excluded"):
        conditional_evolve(state, None, cfg_for(grid, 5))


def test_assembled_wave_flips_sign_when_frozen_pair_swapped():
    grid = Grid1D.from_extent(-40e-9, 40e-9, 128)
    packets = [gaussian_packet(GaussianParams(a=4e-9, x0=x0, kc=kc), 0.0, grid)
               for x0, kc in ((-15e-9, 5e8), (0.0, -3e8), (15e-9, 1e8))]
    positions = np.array([-15e-9, 0.0, 15e-9])
    state = ManyBodyState.exchange_from_fields(packets, positions=positions)
    phi = assemble_exchange_wave(state.waves, positions, 0)
    swapped = positions.copy()
    swapped[[1, 2]] = swapped[[2, 1]]
    phi_swapped = assemble_exchange_wave(state.waves, swapped, 0)
    flip = np.abs(phi_swapped.values + phi.values).max()
    assert flip < 1e-12 * np.abs(phi.values).max()
