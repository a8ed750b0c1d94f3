"""Time-independent solvers.

Bound states come from diagonalizing the real symmetric tridiagonal
finite-difference Hamiltonian with hard walls at the box ends. Scattering
states come from a fourth-order three-point sweep (Numerov) seeded in the
transmitted lead and matched to incoming-plus-reflected plane waves in the
incident lead, yielding r(k) and t(k).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from bohmsim.core import (
    ComplexField,
    Grid1D,
    PotentialSpec,
    SI_ELECTRON,
    UnitSystem,
)

INCIDENT_AMPLITUDE = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class EigenSolution:
    """One bound level: energy in Joules, real normalized wave on the grid."""

    energy: float
    wavefunction: np.ndarray
    grid: Grid1D

    def as_field(self) -> ComplexField:
        return ComplexField(self.grid, self.wavefunction.astype(complex))


@dataclass(frozen=True)
class ScatteringSolution:
    """Stationary scattering state at one energy.

    The stored field is (incident + r*reflected) in the left lead and
    t*transmitted in the right lead, with incident amplitude 1/sqrt(2*pi).
    """

    energy: float
    k: float
    r: complex
    t: complex
    interior: ComplexField

    @property
    def transmission(self) -> float:
        return abs(self.t) ** 2

    @property
    def reflection(self) -> float:
        return abs(self.r) ** 2


@dataclass(frozen=True)
class TransmissionScan:
    energies: np.ndarray
    transmission: np.ndarray
    reflection: np.ndarray
    resonance_indices: tuple  # strict interior local maxima of |t|^2

    def rows(self):
        return list(zip(self.energies.tolist(), self.transmission.tolist(),
                        self.reflection.tolist()))


def _as_potential_array(V, grid: Grid1D) -> np.ndarray:
    if isinstance(V, PotentialSpec):
        return V.evaluate(grid)
    arr = np.asarray(V, dtype=float)
    if arr.shape != (grid.n,):
        raise ValueError("potential table does not match the grid")
    return arr


def bound_states(V, grid: Grid1D, units: UnitSystem = SI_ELECTRON,
                 count: int = 1) -> list[EigenSolution]:
    """Lowest `count` eigenpairs with hard walls at both box ends.

    The wave is pinned to zero at the first and last grid point, so the
    eigenproblem lives on the n-2 interior points and is symmetric
    tridiagonal. Eigenvectors are real, trapezoid-normalized, and sign-fixed
    so the first appreciable interior value is positive.
    """
    if not 1 <= count <= grid.n - 2:
        raise ValueError(f"count must be within 1..{grid.n - 2}")
    Varr = _as_potential_array(V, grid)
    hbar2m = units.hbar ** 2 / (2.0 * units.mass * grid.dx ** 2)
    diag = 2.0 * hbar2m + Varr[1:-1]
    off = np.full(grid.n - 3, -hbar2m)
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    out = []
    for idx in range(count):
        phi = np.zeros(grid.n)
        phi[1:-1] = v[:, idx]
        phi /= np.sqrt(np.trapezoid(phi * phi, dx=grid.dx))
        lead = np.flatnonzero(np.abs(phi) > 1e-12 * np.abs(phi).max())[0]
        if phi[lead] < 0.0:
            phi = -phi
        out.append(EigenSolution(energy=float(w[idx]), wavefunction=phi, grid=grid))
    return out


def _numerov_core(f: np.ndarray, seed_last, seed_prev, dx: float) -> np.ndarray:
    """Right-to-left three-point sweep for phi'' = f*phi, batched over rows."""
    c = dx * dx / 12.0
    den = 1.0 - c * f
    if np.any(np.abs(den) < 1e-12):
        raise ValueError("sweep denominator vanished; reduce the grid step")
    nbatch, n = f.shape
    phi = np.empty((nbatch, n), dtype=complex)
    phi[:, -1] = seed_last
    phi[:, -2] = seed_prev
    for k in range(n - 2, 0, -1):
        phi[:, k - 1] = ((2.0 + 10.0 * c * f[:, k]) * phi[:, k]
                         - den[:, k + 1] * phi[:, k + 1]) / den[:, k - 1]
    return phi


def numerov_sweep(f, seed_last, seed_second_last, grid: Grid1D) -> np.ndarray:
    """Integrate phi'' = f*phi from the right edge to the left edge.

    Seeds are the values at the last and second-to-last grid points. Complex
    seeds give a complex field. The sweep direction keeps the leftward-growing
    branch numerically dominant in forbidden regions.
    """
    farr = np.asarray(f, dtype=float)
    if farr.shape != (grid.n,):
        raise ValueError("coefficient field does not match the grid")
    return _numerov_core(farr[None, :], np.complex128(seed_last),
                         np.complex128(seed_second_last), grid.dx)[0]


def _check_leads(Varr: np.ndarray) -> float:
    scale = np.abs(Varr).max() + 1e-300
    flat_left = abs(Varr[0] - Varr[1]) <= 1e-12 * scale
    flat_right = abs(Varr[-1] - Varr[-2]) <= 1e-12 * scale
    equal = abs(Varr[0] - Varr[-1]) <= 1e-12 * scale
    if not (flat_left and flat_right and equal):
        raise ValueError("scattering needs flat, equal-height leads at both edges")
    return float(Varr[0])


def scattering_state(V, E: float, grid: Grid1D,
                     units: UnitSystem = SI_ELECTRON) -> ScatteringSolution:
    """Stationary state for a left-incident wave at energy E (Joules).

    Seeds the sweep in the right lead with a unit transmitted wave, sweeps
    left, then solves the two-point match against incident-plus-reflected
    forms; the whole field is rescaled so the incident amplitude equals
    1/sqrt(2*pi).
    """
    Varr = _as_potential_array(V, grid)
    v_lead = _check_leads(Varr)
    if E <= v_lead:
        raise ValueError("energy must lie above the lead level for a traveling wave")
    scan = _scattering_batch(Varr, np.array([E]), grid, units)
    return scan[0]


def _scattering_batch(Varr: np.ndarray, energies: np.ndarray, grid: Grid1D,
                      units: UnitSystem) -> list[ScatteringSolution]:
    hbar, m = units.hbar, units.mass
    v_lead = _check_leads(Varr)
    if np.any(energies <= v_lead):
        raise ValueError("energy must lie above the lead level for a traveling wave")
    ks = np.sqrt(2.0 * m * (energies - v_lead)) / hbar
    f = (2.0 * m / hbar ** 2) * (Varr[None, :] - energies[:, None])
    x = grid.x
    phi = _numerov_core(f, np.exp(1j * ks * x[-1]), np.exp(1j * ks * x[-2]), grid.dx)
    # two-point match on the left lead: phi = A e^{ikx} + B e^{-ikx}
    e0p, e0m = np.exp(1j * ks * x[0]), np.exp(-1j * ks * x[0])
    e1p, e1m = np.exp(1j * ks * x[1]), np.exp(-1j * ks * x[1])
    det = e0p * e1m - e0m * e1p
    A = (phi[:, 0] * e1m - phi[:, 1] * e0m) / det
    B = (phi[:, 1] * e0p - phi[:, 0] * e1p) / det
    out = []
    for row in range(energies.size):
        a, b = A[row], B[row]
        field = phi[row] / (a / INCIDENT_AMPLITUDE)
        out.append(ScatteringSolution(
            energy=float(energies[row]), k=float(ks[row]),
            r=complex(b / a), t=complex(1.0 / a),
            interior=ComplexField(grid, field)))
    return out


def transmission_scan(V, energies, grid: Grid1D,
                      units: UnitSystem = SI_ELECTRON) -> TransmissionScan:
    """|t|^2 and |r|^2 over a list of energies, resonances flagged.

    Output rows follow the input energy order; resonance_indices marks
    strict interior local maxima of the transmission sequence.
    """
    earr = np.asarray(list(energies), dtype=float)
    Varr = _as_potential_array(V, grid)
    sols = _scattering_batch(Varr, earr, grid, units)
    T = np.array([s.transmission for s in sols])
    R = np.array([s.reflection for s in sols])
    tol = 1e-12  # rounding-level wiggles are not resonances
    peaks = tuple(int(i) for i in range(1, earr.size - 1)
                  if T[i] > T[i - 1] + tol and T[i] > T[i + 1] + tol)
    return TransmissionScan(energies=earr, transmission=T, reflection=R,
                            resonance_indices=peaks)
