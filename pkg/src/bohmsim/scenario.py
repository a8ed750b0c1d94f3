"""Scenario files: sectioned key = value text resolved into an SI run config.

The format is deliberately small. Sections in square brackets, one
``key = value`` per line, ``#`` starts a comment. The [units] section fixes
the length/energy/time units every later number is written in; everything is
converted to SI at parse time. Unknown sections or keys are rejected with
the offending line number, as are solver/initial-state combinations that no
runner path accepts.
"""
from dataclasses import dataclass, field
from scipy import constants

from .tdse import STABILITY_GATE

_EV = constants.electron_volt

LENGTH_UNITS = {"m": 1.0, "nm": 1e-9, "angstrom": 1e-10, "a": 1e-10}
ENERGY_UNITS = {"j": 1.0, "ev": _EV, "mev": 1e-3 * _EV}
TIME_UNITS = {"s": 1.0, "fs": 1e-15, "ps": 1e-12}

SOLVER_KINDS = ("tdse", "tise-bound", "tise-scatter", "qhje-lagrangian",
                "qhje-eulerian", "manybody-exact", "manybody-conditional",
                "manybody-conditional-exchange")
INITIAL_KINDS = ("gaussian", "two-gaussian", "eigenstate-of", "polar-fields",
                 "two-particle")
POTENTIAL_KINDS = ("flat", "barriers", "harmonic")

# which initial-state kinds each solver accepts; None marks "no [initial]
# section at all" (the stationary solvers build their own states)
_COMPATIBLE = {
    "tdse": ("gaussian", "two-gaussian", "eigenstate-of"),
    "tise-bound": (None,),
    "tise-scatter": (None,),
    "qhje-lagrangian": ("gaussian", "polar-fields"),
    "qhje-eulerian": ("gaussian", "polar-fields"),
    "manybody-exact": ("two-particle",),
    "manybody-conditional": ("two-particle",),
    "manybody-conditional-exchange": ("two-particle",),
}

# registry of every key a section may contain
_KNOWN_KEYS = {
    "units": {"length", "energy", "time", "mass"},
    "grid": {"min", "max", "points", "spacing"},
    "potential": {"kind", "segments", "quantum", "center"},
    "initial": {"kind", "width", "center", "wavenumber", "energy",
                "width2", "center2", "wavenumber2", "energy2",
                "relative-phase", "index", "well-length", "velocity",
                "focus-rate", "symmetry"},
    "solver": {"kind", "dt", "steps", "snapshot-stride", "nonlinearity",
               "elements", "levels", "softening", "pair-strength",
               "retry-cap", "override-stability"},
    "ensemble": {"size", "seed"},
    "outputs": {"fields", "trajectories", "observables",
                "scan-min", "scan-max", "scan-step"},
}

_DESK_LIMIT_2D = 512  # mirrors the two-particle propagator's grid cap


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario text; carries the source line."""

    def __init__(self, message: str, line: int = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved run description; every number is SI."""

    name: str
    mass: float                 # kg
    grid_min: float
    grid_max: float
    grid_points: int
    potential: dict             # kind + SI parameters
    initial: dict               # kind + SI parameters, or None
    solver: dict                # kind, dt (None = auto), steps, stride, ...
    ensemble_size: int
    seed: int
    outputs: dict               # fields/trajectories/observables bools, scan
    override_stability: bool = False
    _lines: dict = field(default_factory=dict, repr=False, compare=False)

    def as_dict(self) -> dict:
        """JSON-ready copy, embedded verbatim in every run manifest."""
        potential = dict(self.potential)
        if "segments" in potential:
            potential["segments"] = [list(s) for s in potential["segments"]]
        return {
            "name": self.name,
            "mass_kg": self.mass,
            "grid": {"min_m": self.grid_min, "max_m": self.grid_max,
                     "points": self.grid_points},
            "potential": potential,
            "initial": dict(self.initial) if self.initial else None,
            "solver": dict(self.solver),
            "ensemble": {"size": self.ensemble_size, "seed": self.seed},
            "outputs": dict(self.outputs),
            "override_stability": self.override_stability,
        }

    def resolved_dt(self, hbar: float = constants.hbar) -> float:
        """The solver dt, with 'auto' meaning half the stability gate."""
        dt = self.solver.get("dt")
        if dt is not None:
            return dt
        dx = (self.grid_max - self.grid_min) / (self.grid_points - 1)
        factor = 0.5 * STABILITY_GATE
        if self.solver["kind"] == "manybody-exact":
            factor *= 0.5  # the 2D factor doubles on a square grid
        return factor * self.mass * dx * dx / hbar


def _strip(line: str) -> str:
    cut = line.find("#")
    return (line if cut < 0 else line[:cut]).strip()


def _scan_entries(text: str):
    """Yield (section, key, value, lineno); reject anything off-format."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip(raw)
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _KNOWN_KEYS:
                raise ScenarioError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ScenarioError("expected 'key = value'", lineno)
        if section is None:
            raise ScenarioError("key outside any [section]", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.lower()
        if key not in _KNOWN_KEYS[section]:
            raise ScenarioError(
                f"unknown key '{key}' in section [{section}]", lineno)
        if not value:
            raise ScenarioError(f"key '{key}' has no value", lineno)
        yield section, key, value, lineno


class _Entries:
    """Parsed (section, key) table with typed, line-aware accessors."""

    def __init__(self, text: str):
        self.data = {}
        for section, key, value, lineno in _scan_entries(text):
            self.data[(section, key)] = (value, lineno)

    def has_section(self, section: str) -> bool:
        return any(s == section for s, _ in self.data)

    def line(self, section: str, key: str, default: int = None) -> int:
        entry = self.data.get((section, key))
        return entry[1] if entry else default

    def raw(self, section: str, key: str, default=None) -> str:
        entry = self.data.get((section, key))
        return entry[0] if entry else default

    def _typed(self, section, key, default, caster, kindname):
        entry = self.data.get((section, key))
        if entry is None:
            return default
        value, lineno = entry
        try:
            return caster(value)
        except (ValueError, TypeError):
            raise ScenarioError(
                f"'{key}' must be {kindname}, got '{value}'", lineno) from None

    def number(self, section, key, default=None, scale=1.0):
        out = self._typed(section, key, None, float, "a number")
        return default if out is None else out * scale

    def integer(self, section, key, default=None):
        def cast(v):
            f = float(v)
            if f != int(f):
                raise ValueError
            return int(f)
        return self._typed(section, key, default, cast, "an integer")

    def boolean(self, section, key, default=None):
        def cast(v):
            table = {"true": True, "yes": True, "on": True,
                     "false": False, "no": False, "off": False}
            if v.lower() not in table:
                raise ValueError
            return table[v.lower()]
        return self._typed(section, key, default, cast, "a boolean")

    def choice(self, section, key, allowed, default=None):
        entry = self.data.get((section, key))
        if entry is None:
            return default
        value, lineno = entry
        value = value.lower()
        if value not in allowed:
            raise ScenarioError(
                f"'{key}' must be one of {', '.join(allowed)}; "
                f"got '{value}'", lineno)
        return value


def _unit(entries: _Entries, key: str, table: dict, default: float) -> float:
    raw = entries.raw("units", key)
    if raw is None:
        return default
    name = raw.lower()
    if name not in table:
        raise ScenarioError(
            f"unknown {key} unit '{raw}' (use {', '.join(sorted(table))})",
            entries.line("units", key))
    return table[name]


def _segments(entries: _Entries, lu: float, eu: float):
    raw = entries.raw("potential", "segments")
    lineno = entries.line("potential", "segments")
    if raw is None:
        raise ScenarioError("potential kind 'barriers' needs 'segments'",
                            entries.line("potential", "kind"))
    out = []
    for chunk in raw.split(";"):
        parts = chunk.split()
        if len(parts) != 3:
            raise ScenarioError(
                "each segment is 'start stop height', separated by ';'",
                lineno)
        try:
            a, b, h = (float(p) for p in parts)
        except ValueError:
            raise ScenarioError(f"bad segment numbers '{chunk.strip()}'",
                                lineno) from None
        out.append((a * lu, b * lu, h * eu))
    return out


def _initial_spec(entries: _Entries, lu: float, eu: float, tu: float,
                  mass: float) -> dict:
    if not entries.has_section("initial"):
        return None
    kind = entries.choice("initial", "kind", INITIAL_KINDS)
    if kind is None:
        raise ScenarioError("section [initial] needs a 'kind'")
    spec = {"kind": kind}

    def packet(suffix=""):
        width = entries.number("initial", "width" + suffix, scale=lu)
        if width is None:
            raise ScenarioError(f"'{kind}' needs 'width{suffix}'",
                                entries.line("initial", "kind"))
        center = entries.number("initial", "center" + suffix, 0.0, scale=lu)
        k = entries.number("initial", "wavenumber" + suffix, scale=1.0 / lu)
        energy = entries.number("initial", "energy" + suffix, scale=eu)
        if k is not None and energy is not None:
            raise ScenarioError(
                "give 'wavenumber' or 'energy', not both",
                entries.line("initial", "energy" + suffix))
        if k is None:
            if energy is None:
                k = 0.0
            else:
                k = (2.0 * mass * energy) ** 0.5 / constants.hbar
        return {"width": width, "center": center, "wavenumber": k}

    if kind == "gaussian":
        spec.update(packet())
    elif kind == "two-gaussian":
        spec["first"] = packet()
        spec["second"] = packet("2")
        spec["relative_phase"] = entries.number("initial", "relative-phase",
                                                0.0)
    elif kind == "eigenstate-of":
        index = entries.integer("initial", "index", 1)
        if index < 1:
            raise ScenarioError("'index' counts levels from 1",
                                entries.line("initial", "index"))
        spec["index"] = index
        well = entries.number("initial", "well-length", scale=lu)
        spec["well_length"] = well  # None: diagonalize the run potential
        spec["center"] = entries.number("initial", "center", 0.0, scale=lu)
    elif kind == "polar-fields":
        spec["width"] = entries.number("initial", "width", scale=lu)
        if spec["width"] is None:
            raise ScenarioError("'polar-fields' needs 'width'",
                                entries.line("initial", "kind"))
        spec["center"] = entries.number("initial", "center", 0.0, scale=lu)
        spec["velocity"] = entries.number("initial", "velocity", 0.0,
                                          scale=lu / tu)
        spec["focus_rate"] = entries.number("initial", "focus-rate", 0.0,
                                            scale=1.0 / tu)
    else:  # two-particle
        spec["first"] = packet()
        spec["second"] = packet("2")
        spec["symmetry"] = entries.choice(
            "initial", "symmetry", ("product", "antisymmetrized"), "product")
    return spec


def _solver_spec(entries: _Entries, eu: float, lu: float, tu: float) -> dict:
    kind = entries.choice("solver", "kind", SOLVER_KINDS)
    if kind is None:
        raise ScenarioError("section [solver] with a 'kind' is required")
    steps = entries.integer("solver", "steps", 1000)
    if steps < 0:
        raise ScenarioError("'steps' must be non-negative",
                            entries.line("solver", "steps"))
    stride = entries.integer("solver", "snapshot-stride",
                             max(1, steps // 10))
    if stride < 1:
        raise ScenarioError("'snapshot-stride' must be at least 1",
                            entries.line("solver", "snapshot-stride"))
    dt = entries.number("solver", "dt", scale=tu)  # None means auto
    if dt is not None and dt <= 0.0:
        raise ScenarioError("'dt' must be positive",
                            entries.line("solver", "dt"))
    spec = {"kind": kind, "dt": dt, "steps": steps, "stride": stride,
            "nonlinearity": entries.number("solver", "nonlinearity", 0.0,
                                           scale=eu * lu),
            "elements": entries.integer("solver", "elements", 61),
            "levels": entries.integer("solver", "levels", 5),
            "retry_cap": entries.integer("solver", "retry-cap", 20),
            "softening": entries.number("solver", "softening", scale=lu),
            "pair_strength": entries.number("solver", "pair-strength", 1.0)}
    if spec["elements"] < 1:
        raise ScenarioError("'elements' must be positive",
                            entries.line("solver", "elements"))
    if spec["levels"] < 1:
        raise ScenarioError("'levels' must be positive",
                            entries.line("solver", "levels"))
    return spec


def parse_scenario(text: str, name: str = "scenario") -> ScenarioConfig:
    """Parse scenario text into a fully resolved SI configuration."""
    entries = _Entries(text)

    lu = _unit(entries, "length", LENGTH_UNITS, 1e-9)
    eu = _unit(entries, "energy", ENERGY_UNITS, _EV)
    tu = _unit(entries, "time", TIME_UNITS, 1e-15)
    mass = entries.number("units", "mass", 1.0) * constants.m_e
    if mass <= 0.0:
        raise ScenarioError("'mass' must be positive",
                            entries.line("units", "mass"))

    gmin = entries.number("grid", "min", scale=lu)
    gmax = entries.number("grid", "max", scale=lu)
    if gmin is None or gmax is None:
        raise ScenarioError("section [grid] needs 'min' and 'max'")
    if gmax <= gmin:
        raise ScenarioError("'max' must exceed 'min'",
                            entries.line("grid", "max"))
    points = entries.integer("grid", "points")
    spacing = entries.number("grid", "spacing", scale=lu)
    if points is not None and spacing is not None:
        raise ScenarioError("give 'points' or 'spacing', not both",
                            entries.line("grid", "spacing"))
    if points is None:
        spacing = 1e-10 if spacing is None else spacing  # default 1 angstrom
        points = int(round((gmax - gmin) / spacing)) + 1
    if points < 2:
        raise ScenarioError("grid needs at least 2 points",
                            entries.line("grid", "points"))

    pot_kind = entries.choice("potential", "kind", POTENTIAL_KINDS, "flat")
    potential = {"kind": pot_kind}
    if pot_kind == "barriers":
        potential["segments"] = _segments(entries, lu, eu)
    elif pot_kind == "harmonic":
        quantum = entries.number("potential", "quantum", scale=eu)
        if quantum is None or quantum <= 0.0:
            raise ScenarioError(
                "harmonic potential needs a positive 'quantum' (hbar*omega)",
                entries.line("potential", "kind"))
        potential["quantum"] = quantum
        potential["center"] = entries.number("potential", "center", 0.0,
                                             scale=lu)

    initial = _initial_spec(entries, lu, eu, tu, mass)
    solver = _solver_spec(entries, eu, lu, tu)

    kind_line = entries.line("solver", "kind")
    allowed = _COMPATIBLE[solver["kind"]]
    have = initial["kind"] if initial else None
    if have not in allowed:
        wanted = ", ".join(str(a) for a in allowed)
        raise ScenarioError(
            f"solver '{solver['kind']}' cannot start from initial state "
            f"'{have}' (accepts: {wanted})", kind_line)
    if solver["kind"].startswith("manybody") and points > _DESK_LIMIT_2D:
        raise ScenarioError(
            f"{points} grid points exceed the two-particle desk limit "
            f"{_DESK_LIMIT_2D}", entries.line("grid", "points", kind_line))
    if solver["kind"] == "tise-scatter" or solver["kind"].startswith("manybody"):
        if solver["nonlinearity"] != 0.0:
            raise ScenarioError(
                "'nonlinearity' only applies to the tdse solver",
                entries.line("solver", "nonlinearity"))
    if solver["kind"].startswith("manybody") and solver["softening"] is None \
            and solver["pair_strength"] != 0.0:
        raise ScenarioError(
            "coupled runs need 'softening' (or pair-strength = 0)", kind_line)
    if solver["kind"] == "manybody-conditional-exchange" \
            and initial["symmetry"] != "antisymmetrized":
        raise ScenarioError(
            "exchange runs need symmetry = antisymmetrized",
            entries.line("initial", "symmetry", kind_line))
    if solver["kind"] == "manybody-conditional" \
            and initial["symmetry"] == "antisymmetrized":
        raise ScenarioError(
            "antisymmetrized pairs need kind = manybody-conditional-exchange",
            entries.line("initial", "symmetry", kind_line))

    size = entries.integer("ensemble", "size", 0)
    if size < 0:
        raise ScenarioError("'size' must be non-negative",
                            entries.line("ensemble", "size"))
    seed = entries.integer("ensemble", "seed", 7)

    scan = None
    smin = entries.number("outputs", "scan-min", scale=eu)
    smax = entries.number("outputs", "scan-max", scale=eu)
    sstep = entries.number("outputs", "scan-step", scale=eu)
    if any(v is not None for v in (smin, smax, sstep)):
        if None in (smin, smax, sstep):
            raise ScenarioError(
                "a scan needs scan-min, scan-max and scan-step together",
                entries.line("outputs", "scan-min",
                             entries.line("outputs", "scan-max",
                                          entries.line("outputs", "scan-step"))))
        if sstep <= 0.0 or smax <= smin:
            raise ScenarioError("scan range must be increasing with a "
                                "positive step",
                                entries.line("outputs", "scan-step"))
        scan = {"min": smin, "max": smax, "step": sstep}
    if solver["kind"] == "tise-scatter" and scan is None:
        raise ScenarioError("tise-scatter needs scan-min/scan-max/scan-step "
                            "in [outputs]", kind_line)

    outputs = {
        "fields": entries.boolean("outputs", "fields", True),
        "trajectories": entries.boolean("outputs", "trajectories", True),
        "observables": entries.boolean("outputs", "observables", True),
        "scan": scan,
    }

    override = entries.boolean("solver", "override-stability", False)

    lines = {key: lineno for key, (_, lineno) in entries.data.items()}
    return ScenarioConfig(name=name, mass=mass, grid_min=gmin, grid_max=gmax,
                          grid_points=points, potential=potential,
                          initial=initial, solver=solver, ensemble_size=size,
                          seed=seed, outputs=outputs,
                          override_stability=override, _lines=lines)
