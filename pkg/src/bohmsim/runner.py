"""Run orchestration: solve a parsed scenario and emit plot-ready artifacts.

Every run writes one directory: CSV data files, an observables JSON, and a
manifest listing each file with row count and SHA-256 so downstream scripts
can verify what they read. All emitted numbers are SI; floats are serialized
as their shortest round-trip decimal, which makes reruns byte-comparable.
"""
import csv
import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
from scipy import constants

from . import __version__
from .core import (
    ComplexField,
    Grid1D,
    PolarField,
    PotentialSpec,
    UnitSystem,
    norm,
    sample_quantum_equilibrium,
    to_polar,
)
from .manybody import (
    COULOMB_STRENGTH,
    InteractionSpec,
    ManyBodyState,
    antisymmetrized_state,
    assemble_exchange_wave,
    conditional_evolve,
    exact_two_particle_evolve,
    pair_interaction_matrix,
    product_state,
    separable_potential,
    stability_factor_2d,
)
from .observables import (
    InconclusiveRunError,
    mean_kinetic,
    mean_momentum,
    mean_position,
)
from .qhje import (
    LogPolarField,
    QhjeConfig,
    elements_from_polar,
    eulerian_logpolar_evolve,
    lagrangian_evolve,
)
from .scenario import ScenarioConfig
from .tdse import GaussianParams, TdseConfig, evolve, gaussian_packet
from .tise import bound_states, transmission_scan
from .trajectories import (
    bohmian_velocity,
    integrate_trajectories,
    quantum_potential,
    velocity_frames,
    velocity_from_phase,
)

FIELD_HEADER = ("t", "x", "re", "im", "density", "velocity", "Q")
TRAJECTORY_HEADER = ("traj_id", "t", "x", "v")
EIGENSTATE_HEADER = ("state", "energy", "x", "re", "im", "density")
SCAN_HEADER = ("energy", "transmission", "reflection", "flux_sum")

# RK sub-step cap for ensemble integration, in solver time steps. Snapshot
# gaps are usually hundreds of steps; one RK step per gap loses the
# non-crossing property near interference nodes.
TRAJECTORY_SUBSTEP = 25


def _fmt(value) -> str:
    """Shortest decimal that round-trips the float (or the int verbatim)."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def emit_csv(path, header, rows) -> int:
    """Write one CSV file; returns the number of data rows."""
    count = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
            count += 1
    return count


def emit_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass(frozen=True)
class RunResult:
    directory: Path
    manifest: dict


# --- scenario -> solver inputs ----------------------------------------------


def _build_grid(cfg: ScenarioConfig) -> Grid1D:
    return Grid1D.from_extent(cfg.grid_min, cfg.grid_max, cfg.grid_points)


def _build_units(cfg: ScenarioConfig) -> UnitSystem:
    return UnitSystem(mass=cfg.mass)


def _build_potential(cfg: ScenarioConfig, units: UnitSystem):
    pot = cfg.potential
    if pot["kind"] == "flat":
        return None
    if pot["kind"] == "barriers":
        return PotentialSpec.barriers(pot["segments"])
    omega = pot["quantum"] / units.hbar
    return PotentialSpec.harmonic_from_omega(pot["center"], omega, units)


def _packet(spec: dict, grid: Grid1D, units: UnitSystem) -> ComplexField:
    params = GaussianParams(a=spec["width"], x0=spec["center"],
                            kc=spec["wavenumber"])
    return gaussian_packet(params, 0.0, grid, units)


def _well_eigenstate(index: int, length: float, center: float,
                     grid: Grid1D) -> ComplexField:
    lo = center - 0.5 * length
    inside = (grid.x >= lo) & (grid.x <= lo + length)
    values = np.zeros(grid.n, dtype=complex)
    values[inside] = np.sin(index * np.pi * (grid.x[inside] - lo) / length)
    field = ComplexField(grid, values)
    total = norm(field, grid)
    if total <= 0.0:
        raise ValueError("the well does not overlap the grid")
    return ComplexField(grid, values / np.sqrt(total))


def _single_wave_initial(cfg: ScenarioConfig, grid: Grid1D,
                         units: UnitSystem, potential) -> ComplexField:
    spec = cfg.initial
    if spec["kind"] == "gaussian":
        return _packet(spec, grid, units)
    if spec["kind"] == "two-gaussian":
        one = _packet(spec["first"], grid, units).values
        two = _packet(spec["second"], grid, units).values
        mixed = one + np.exp(1j * spec["relative_phase"]) * two
        field = ComplexField(grid, mixed)
        return ComplexField(grid, mixed / np.sqrt(norm(field, grid)))
    if spec["kind"] == "eigenstate-of":
        if spec["well_length"] is not None:
            return _well_eigenstate(spec["index"], spec["well_length"],
                                    spec["center"], grid)
        levels = bound_states(potential if potential is not None
                              else PotentialSpec.flat(0.0),
                              grid, units, count=spec["index"])
        return levels[spec["index"] - 1].as_field()
    raise ValueError(f"no single-wave builder for '{spec['kind']}'")


def _polar_initial(cfg: ScenarioConfig, grid: Grid1D,
                   units: UnitSystem) -> PolarField:
    spec = cfg.initial
    if spec["kind"] == "gaussian":
        return to_polar(_packet(spec, grid, units), units)
    xi = grid.x - spec["center"]
    amplitude = np.exp(-(xi / spec["width"]) ** 2)
    action = units.mass * (spec["velocity"] * xi
                           - 0.5 * spec["focus_rate"] * xi * xi)
    return PolarField(grid, amplitude, action)


def _interaction(cfg: ScenarioConfig):
    strength = cfg.solver["pair_strength"]
    if strength == 0.0:
        return None
    return InteractionSpec.coulomb(softening=cfg.solver["softening"],
                                   strength=strength * COULOMB_STRENGTH)


def _report_dict(report) -> dict:
    return {"name": report.name, "unit": report.unit,
            "orthodox": report.orthodox_value,
            "bohmian_density": report.bohmian_density_value,
            "trajectory_ensemble": report.trajectory_ensemble_value,
            "tolerances": report.tolerances,
            "agreement": report.agreement()}


def _field_rows(t, grid, values, frame, amplitude, units):
    q, _ = quantum_potential(amplitude, grid, units)
    for i in range(grid.n):
        yield (t, grid.x[i], values[i].real, values[i].imag,
               frame.density[i], frame.velocity[i], q[i])


def _ensemble_rows(times, positions, velocities, ids):
    for k, traj_id in enumerate(ids):
        for j, t in enumerate(times):
            yield (int(traj_id), t, positions[j, k], velocities[j, k])


# --- per-solver runs ---------------------------------------------------------


def _run_tdse(cfg, grid, units, potential, seed):
    tcfg = TdseConfig(dt=cfg.resolved_dt(units.hbar), steps=cfg.solver["steps"],
                      nonlinearity_g=cfg.solver["nonlinearity"],
                      snapshot_stride=cfg.solver["stride"])
    psi0 = _single_wave_initial(cfg, grid, units, potential)
    result = evolve(psi0, potential, tcfg, grid, units,
                    override_stability=cfg.override_stability)
    frames = velocity_frames(result, grid, units)
    carries = int(sum(int(f.node_mask.sum()) for f in frames))

    files = {}
    if cfg.outputs["fields"]:
        rows = []
        for snap, frame in zip(result.snapshots, frames):
            rows.extend(_field_rows(snap.t, grid, snap.psi.values, frame,
                                    np.abs(snap.psi.values), units))
        files["fields.csv"] = (FIELD_HEADER, rows)

    ensemble = None
    hits = 0
    if cfg.outputs["trajectories"]:
        rows = []
        if cfg.ensemble_size > 0:
            starts = sample_quantum_equilibrium(frames[0].density, grid,
                                                cfg.ensemble_size, seed)
            ensemble = integrate_trajectories(
                frames, np.sort(starts), seed=seed, source=cfg.name,
                max_step=TRAJECTORY_SUBSTEP * tcfg.dt)
            hits = ensemble.boundary_hits
            rows = _ensemble_rows(ensemble.times, ensemble.positions,
                                  ensemble.velocities, ensemble.ids)
        files["trajectories.csv"] = (TRAJECTORY_HEADER, rows)

    observables = {"norm_drift": result.final.norm_drift,
                   "bootstrap": result.bootstrap}
    if cfg.outputs["observables"]:
        psi_final = result.final.psi
        total, flow, shape = mean_kinetic(psi_final, grid, units)
        observables["reports"] = [
            _report_dict(mean_position(psi_final, ensemble, grid)),
            _report_dict(mean_momentum(psi_final, ensemble, grid, units)),
        ]
        observables["kinetic_J"] = {"total": total, "flow_part": flow,
                                    "shape_part": shape}
    return files, observables, result.stability, carries, hits


def _run_tise_bound(cfg, grid, units, potential):
    if potential is None:
        potential = PotentialSpec.flat(0.0)
    levels = bound_states(potential, grid, units, count=cfg.solver["levels"])
    if not levels:
        raise InconclusiveRunError("no bound states found on this grid")
    rows = []
    for idx, level in enumerate(levels, start=1):
        for i in range(grid.n):
            value = level.wavefunction[i]
            rows.append((idx, level.energy, grid.x[i], value, 0.0,
                         value * value))
    files = {"eigenstates.csv": (EIGENSTATE_HEADER, rows)}
    observables = {"eigenvalues_J": [level.energy for level in levels]}
    return files, observables, None, 0, 0


def _run_tise_scatter(cfg, grid, units, potential):
    scan = cfg.outputs["scan"]
    energies = np.arange(scan["min"], scan["max"] + 0.5 * scan["step"],
                         scan["step"])
    energies = energies[energies > 0.0]
    if energies.size == 0:
        raise InconclusiveRunError("transmission scan has no positive "
                                   "energies")
    if potential is None:
        potential = PotentialSpec.flat(0.0)
    result = transmission_scan(potential, energies, grid, units)
    rows = [(e, t, r, t + r) for e, t, r
            in zip(result.energies, result.transmission, result.reflection)]
    files = {"scan.csv": (SCAN_HEADER, rows)}
    observables = {
        "resonance_energies_J":
            [float(result.energies[i]) for i in result.resonance_indices],
        "unitarity_max_defect":
            float(np.abs(result.transmission + result.reflection - 1.0).max()),
    }
    return files, observables, None, 0, 0


def _run_qhje_lagrangian(cfg, grid, units, potential):
    polar = _polar_initial(cfg, grid, units)
    elements = elements_from_polar(polar, count=cfg.solver["elements"],
                                   units=units)
    qcfg = QhjeConfig(dt=cfg.resolved_dt(units.hbar),
                      steps=cfg.solver["steps"],
                      snapshot_stride=cfg.solver["stride"],
                      retry_cap=cfg.solver["retry_cap"])
    result = lagrangian_evolve(elements, potential, qcfg, units)
    ensemble = result.as_ensemble(grid, source=cfg.name)
    files = {}
    if cfg.outputs["fields"]:
        files["fields.csv"] = (FIELD_HEADER, [])
    if cfg.outputs["trajectories"]:
        files["trajectories.csv"] = (TRAJECTORY_HEADER, _ensemble_rows(
            ensemble.times, ensemble.positions, ensemble.velocities,
            ensemble.ids))
    observables = {"caustic_time": result.terminated_at,
                   "elements": len(result.final.elements)}
    return files, observables, None, 0, 0


def _run_qhje_eulerian(cfg, grid, units, potential):
    polar = _polar_initial(cfg, grid, units)
    logfield = LogPolarField.from_polar(polar)
    qcfg = QhjeConfig(dt=cfg.resolved_dt(units.hbar),
                      steps=cfg.solver["steps"],
                      snapshot_stride=cfg.solver["stride"])
    result = eulerian_logpolar_evolve(logfield, potential, qcfg, units)
    carries = 0
    files = {}
    if cfg.outputs["fields"]:
        rows = []
        for snap in result.snapshots:
            amplitude = np.exp(snap.field.log_amplitude)
            frame = velocity_from_phase(
                PolarField(grid, amplitude, snap.field.action), units,
                t=snap.t)
            carries += int(frame.node_mask.sum())
            psi = snap.field.to_complex(units)
            rows.extend(_field_rows(snap.t, grid, psi.values, frame,
                                    amplitude, units))
        files["fields.csv"] = (FIELD_HEADER, rows)
    if cfg.outputs["trajectories"]:
        files["trajectories.csv"] = (TRAJECTORY_HEADER, [])
    observables = {"final_time": float(result.final.t)}
    return files, observables, None, carries, 0


def _two_packets(cfg, grid, units):
    first = _packet(cfg.initial["first"], grid, units)
    second = _packet(cfg.initial["second"], grid, units)
    return first, second


def _run_manybody_exact(cfg, grid, units, potential):
    first, second = _two_packets(cfg, grid, units)
    assemble = antisymmetrized_state \
        if cfg.initial["symmetry"] == "antisymmetrized" else product_state
    psi0 = assemble(first, second)
    v2 = separable_potential(psi0.grid, potential, potential)
    interaction = _interaction(cfg)
    if interaction is not None:
        v2 = v2 + pair_interaction_matrix(psi0.grid, interaction)
    tcfg = TdseConfig(dt=cfg.resolved_dt(units.hbar),
                      steps=cfg.solver["steps"],
                      snapshot_stride=cfg.solver["stride"])
    start = (cfg.initial["first"]["center"], cfg.initial["second"]["center"])
    result = exact_two_particle_evolve(psi0, v2, tcfg, pairs=[start],
                                       units=units,
                                       override_stability=cfg.override_stability)
    files = {}
    if cfg.outputs["fields"]:
        files["fields.csv"] = (FIELD_HEADER, [])
    if cfg.outputs["trajectories"]:
        positions = result.pair_positions[:, 0, :]
        velocities = result.pair_velocities[:, 0, :]
        files["trajectories.csv"] = (TRAJECTORY_HEADER, _ensemble_rows(
            result.pair_times, positions, velocities, (0, 1)))
    observables = {"norm_drift": result.final.norm_drift,
                   "symmetry": cfg.initial["symmetry"]}
    return files, observables, stability_factor_2d(tcfg, psi0.grid, units), 0, 0


def _run_manybody_conditional(cfg, grid, units, potential):
    first, second = _two_packets(cfg, grid, units)
    start = np.array([cfg.initial["first"]["center"],
                      cfg.initial["second"]["center"]])
    exchange = cfg.solver["kind"].endswith("exchange")
    if exchange:
        state = ManyBodyState.exchange_from_fields([first, second],
                                                   positions=start)
    else:
        state = ManyBodyState.from_fields([first, second], positions=start)
    tcfg = TdseConfig(dt=cfg.resolved_dt(units.hbar),
                      steps=cfg.solver["steps"],
                      snapshot_stride=cfg.solver["stride"])
    result = conditional_evolve(state, _interaction(cfg), tcfg, units,
                                potential=potential,
                                override_stability=cfg.override_stability)
    files = {}
    carries = result.carry_count
    if cfg.outputs["fields"]:
        for a in range(state.n_particles):
            rows = []
            for stored in result.states:
                if stored.exchange:
                    wave = assemble_exchange_wave(stored.waves,
                                                  stored.positions, a)
                else:
                    wave = stored.waves[a]
                frame = bohmian_velocity(wave.values, grid, units,
                                         t=stored.time)
                rows.extend(_field_rows(stored.time, grid, wave.values,
                                        frame, np.abs(wave.values), units))
            files[f"fields-p{a + 1}.csv"] = (FIELD_HEADER, rows)
    if cfg.outputs["trajectories"]:
        files["trajectories.csv"] = (TRAJECTORY_HEADER, _ensemble_rows(
            result.times, result.trajectories, result.velocities,
            range(state.n_particles)))
    observables = {"node_carries": carries,
                   "exchange": exchange,
                   "final_positions_m": [float(x) for x
                                         in result.trajectories[-1]]}
    factor = units.hbar * tcfg.dt / (units.mass * grid.dx ** 2)
    return files, observables, factor, carries, 0


# --- entry point -------------------------------------------------------------


def run_scenario(cfg: ScenarioConfig, out_dir, seed: int = None,
                 override_stability: bool = False) -> RunResult:
    """Execute one scenario and write its artifact directory."""
    if seed is None:
        seed = cfg.seed
    if override_stability:
        cfg = dataclasses.replace(cfg, override_stability=True)
    grid = _build_grid(cfg)
    units = _build_units(cfg)
    potential = _build_potential(cfg, units)

    kind = cfg.solver["kind"]
    if kind == "tdse":
        bundle = _run_tdse(cfg, grid, units, potential, seed)
    elif kind == "tise-bound":
        bundle = _run_tise_bound(cfg, grid, units, potential)
    elif kind == "tise-scatter":
        bundle = _run_tise_scatter(cfg, grid, units, potential)
    elif kind == "qhje-lagrangian":
        bundle = _run_qhje_lagrangian(cfg, grid, units, potential)
    elif kind == "qhje-eulerian":
        bundle = _run_qhje_eulerian(cfg, grid, units, potential)
    elif kind == "manybody-exact":
        bundle = _run_manybody_exact(cfg, grid, units, potential)
    else:
        bundle = _run_manybody_conditional(cfg, grid, units, potential)
    files, observables, factor, carries, hits = bundle

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    listing = {}
    for name, (header, rows) in files.items():
        path = out_dir / name
        count = emit_csv(path, header, rows)
        listing[name] = {"rows": count, "sha256": _sha256(path)}
    if cfg.outputs["observables"]:
        path = out_dir / "observables.json"
        emit_json(path, observables)
        listing["observables.json"] = {"rows": None, "sha256": _sha256(path)}

    manifest = {
        "scenario": cfg.as_dict(),
        "seed": seed,
        "solver_kind": kind,
        "stability_factor": factor,
        "counters": {"node_carries": int(carries),
                     "boundary_hits": int(hits)},
        "versions": {"bohmsim": __version__,
                     "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "files": listing,
    }
    emit_json(out_dir / "manifest.json", manifest)
    return RunResult(directory=out_dir, manifest=manifest)
