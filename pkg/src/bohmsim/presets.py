"""Built-in reference scenarios, runnable by name from the command line.

Each preset is a complete scenario text; `bohmsim presets show <name>`
prints it, and `bohmsim run <name>` executes it. They double as format
examples for writing new scenario files.
"""

PRESETS = {
    "free-gaussian": """\
# spreading wavepacket on a flat potential: the baseline propagation demo
[units]
length = nm
energy = eV
time = fs

[grid]
min = -60
max = 60
points = 480

[potential]
kind = flat

[initial]
kind = gaussian
width = 5
center = -20
wavenumber = 0.5     # 1/nm; drifts right while it spreads

[solver]
kind = tdse
steps = 6000
snapshot-stride = 600

[ensemble]
size = 24
seed = 7
""",
    "rtd-scattering": """\
# resonant tunneling double barrier in GaAs: packet partly tunnels the stack
[units]
length = nm
energy = eV
time = fs
mass = 0.067         # conduction-band effective mass, electron masses

[grid]
min = -60
max = 100
points = 641

[potential]
kind = barriers
segments = 20 22 0.3; 29 31 0.3    # 2 nm walls around a 7 nm well

[initial]
kind = gaussian
width = 8
center = -5
energy = 0.05        # near the lowest quasi-bound level of the well

[solver]
kind = tdse
steps = 35400
snapshot-stride = 3540

[ensemble]
size = 24
seed = 7
""",
    "double-barrier-two-packet": """\
# two packets launched apart inside a deep double-barrier well; they bounce
# off the walls and interfere, and no trajectory ever crosses its neighbor
[units]
length = nm
energy = eV
time = fs

[grid]
min = -40
max = 40
points = 320

[potential]
kind = barriers
segments = -12 -10 0.5; 10 12 0.5

[initial]
kind = two-gaussian
width = 3
center = -5
wavenumber = 0.3
width2 = 3
center2 = 5
wavenumber2 = -0.3
relative-phase = 0

[solver]
kind = tdse
steps = 8000
snapshot-stride = 800

[ensemble]
size = 24
seed = 7
""",
    "momentum-measurement": """\
# time-of-flight momentum reading: release a box eigenstate and let the two
# momentum lobes separate; late trajectory velocities cluster at +-n*pi*hbar/(m*L)
[units]
length = nm
energy = eV
time = fs

[grid]
min = -160
max = 160
points = 1024

[potential]
kind = flat

[initial]
kind = eigenstate-of
index = 4
well-length = 20
center = 0

[solver]
kind = tdse
steps = 13700
snapshot-stride = 1370

[ensemble]
size = 200
seed = 7
""",
    "sequential-measurement": """\
# two position checks in sequence: a packet splits on a barrier, and no
# trajectory that has crossed to the transmitted side ever returns
[units]
length = nm
energy = eV
time = fs

[grid]
min = -50
max = 50
points = 400

[potential]
kind = barriers
segments = 0 2 0.3

[initial]
kind = gaussian
width = 4
center = -15
energy = 0.25        # just under the barrier top: both outcomes populated

[solver]
kind = tdse
steps = 2100
snapshot-stride = 210

[ensemble]
size = 64
seed = 7
""",
    "two-particle-coulomb": """\
# two electrons approach through a triple-barrier stack while repelling each
# other; solved with coupled conditional waves, one trajectory per particle
[units]
length = nm
energy = eV
time = fs

[grid]
min = -30
max = 30
points = 192

[potential]
kind = barriers
segments = -8 -6 0.0012; -1 1 0.0012; 6 8 0.0012

[initial]
kind = two-particle
width = 3
center = -13
wavenumber = 0.2
width2 = 3
center2 = 13
wavenumber2 = -0.2
symmetry = product

[solver]
kind = manybody-conditional
steps = 8400
snapshot-stride = 840
softening = 2
pair-strength = 0.05   # scaled-down repulsion keeps the kick resolvable
""",
}


def preset_names():
    return sorted(PRESETS)


def preset_text(name: str) -> str:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: "
                       + ", ".join(preset_names())) from None
