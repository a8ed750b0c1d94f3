"""Session fixtures for the coupled-scattering runs shared with the acceptance suite.

The 2D oracle propagations dominate the suite's wall time, so each scenario is
computed once per session and reused by every test that grades against it.
"""
import numpy as np
import pytest
from scipy import constants

from bohmsim.core import Grid1D, PotentialSpec
from bohmsim.manybody import (
    InteractionSpec,
    ManyBodyState,
    antisymmetrized_state,
    conditional_evolve,
    exact_two_particle_evolve,
    pair_interaction_matrix,
    product_state,
    separable_potential,
)
from bohmsim.tdse import GaussianParams, TdseConfig, gaussian_packet

HB = constants.hbar
ME = constants.m_e
EV = constants.electron_volt

# shared scattering stage: one 0.025 eV barrier on [0, 2.5] nm
PACKET_WIDTH = 4e-9
BARRIER_SEGMENTS = [(0.0, 2.5e-9, 0.025 * EV)]
BARRIER_EXIT = 2.5e-9
RUN_TIME = 3.0e-13


def barrier_potential():
    return PotentialSpec.barriers(BARRIER_SEGMENTS)


def scattering_stage(half_width, n):
    """Grid plus a leapfrog config at 2D stability factor 0.24."""
    grid = Grid1D.from_extent(-half_width, half_width, n)
    dt = 0.12 * ME * grid.dx * grid.dx / HB
    steps = int(round(RUN_TIME / dt))
    return grid, TdseConfig(dt=dt, steps=steps, snapshot_stride=steps)


def pair_oracle(lead, follow, start, interaction, cfg, assemble=product_state):
    psi0 = assemble(lead, follow)
    v2 = separable_potential(psi0.grid, barrier_potential(), barrier_potential())
    v2 = v2 + pair_interaction_matrix(psi0.grid, interaction)
    return exact_two_particle_evolve(psi0, v2, cfg, pairs=[tuple(start)])


@pytest.fixture(scope="session")
def weak_coupling_runs():
    """Two packets behind a barrier, Coulomb softening 400 nm (near-free pair)."""
    grid, cfg = scattering_stage(40e-9, 256)
    lead = gaussian_packet(GaussianParams(a=PACKET_WIDTH, x0=-16e-9, kc=9e8), 0.0, grid)
    follow = gaussian_packet(GaussianParams(a=PACKET_WIDTH, x0=-22e-9, kc=6.5e8), 0.0, grid)
    start = np.array([-16e-9, -22e-9])
    interaction = InteractionSpec.coulomb(softening=4e-7)
    state = ManyBodyState.from_fields([lead, follow], positions=start)
    cond = conditional_evolve(state, interaction, cfg, potential=barrier_potential())
    oracle = pair_oracle(lead, follow, start, interaction, cfg)
    return {"cond": cond, "oracle": oracle, "packets": (lead, follow), "start": start,
            "interaction": interaction, "cfg": cfg}


@pytest.fixture(scope="session")
def strong_coupling_runs():
    """Fast packet chasing a slow one into the barrier, softening 2.5 nm.

    Alone, the slow packet reflects.  With the repulsion switched on it picks
    up enough energy from the approaching partner to cross.
    """
    grid, cfg = scattering_stage(50e-9, 320)
    chaser = gaussian_packet(GaussianParams(a=PACKET_WIDTH, x0=-30e-9, kc=9e8), 0.0, grid)
    slow = gaussian_packet(GaussianParams(a=PACKET_WIDTH, x0=-12e-9, kc=6e8), 0.0, grid)
    start = np.array([-30e-9, -12e-9])
    interaction = InteractionSpec.coulomb(softening=2.5e-9)
    free = conditional_evolve(ManyBodyState.from_fields([chaser, slow], positions=start),
                              None, cfg, potential=barrier_potential())
    cond = conditional_evolve(ManyBodyState.from_fields([chaser, slow], positions=start),
                              interaction, cfg, potential=barrier_potential())
    oracle = pair_oracle(chaser, slow, start, interaction, cfg)
    return {"free": free, "cond": cond, "oracle": oracle, "grid": grid}


@pytest.fixture(scope="session")
def exchange_runs(weak_coupling_runs):
    """Same stage as the weak-coupling pair, antisymmetrized."""
    lead, follow = weak_coupling_runs["packets"]
    start = weak_coupling_runs["start"]
    interaction = weak_coupling_runs["interaction"]
    cfg = weak_coupling_runs["cfg"]
    state = ManyBodyState.exchange_from_fields([lead, follow], positions=start)
    cond = conditional_evolve(state, interaction, cfg, potential=barrier_potential())
    oracle = pair_oracle(lead, follow, start, interaction, cfg,
                         assemble=antisymmetrized_state)
    return {"cond": cond, "oracle": oracle}
