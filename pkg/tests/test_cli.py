"""Command-line behavior: dispatch, exit codes, and output locations."""
import csv
import json

import pytest

from bohmsim.cli import main
from bohmsim.presets import preset_names

QUICK = """
[grid]
min = -14
max = 14
points = 141

[initial]
kind = gaussian
width = 2
center = -4
wavenumber = 0.5

[solver]
kind = tdse
steps = 200
snapshot-stride = 100

[ensemble]
size = 6
"""


@pytest.fixture
def quick_file(tmp_path):
    path = tmp_path / "quick.scn"
    path.write_text(QUICK)
    return path


def test_run_scenario_file(quick_file, tmp_path, capsys):
    out = tmp_path / "artifacts"
    assert main(["run", str(quick_file), "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == str(out)
    names = {p.name for p in out.iterdir()}
    assert names == {"fields.csv", "trajectories.csv", "observables.json",
                     "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"]["name"] == "quick"


def test_default_output_root_comes_from_the_environment(
        quick_file, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BOHMSIM_OUT", str(tmp_path / "root"))
    assert main(["run", str(quick_file)]) == 0
    printed = capsys.readouterr().out.strip()
    assert printed == str(tmp_path / "root" / "quick-seed7")
    assert (tmp_path / "root" / "quick-seed7" / "manifest.json").exists()


def test_seed_flag_renames_the_run_directory(quick_file, tmp_path,
                                             monkeypatch, capsys):
    monkeypatch.setenv("BOHMSIM_OUT", str(tmp_path / "root"))
    assert main(["run", str(quick_file), "--seed", "42"]) == 0
    out = capsys.readouterr().out.strip()
    assert out.endswith("quick-seed42")
    man = json.loads((tmp_path / "root" / "quick-seed42" /
                      "manifest.json").read_text())
    assert man["seed"] == 42


def test_parse_problem_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.scn"
    bad.write_text("[grid]\nmin = 0\nmax = -5\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err


def test_missing_scenario_exits_2(tmp_path, capsys):
    assert main(["run", "no-such-thing", "--out", str(tmp_path / "o")]) == 2
    assert "preset" in capsys.readouterr().err


def test_stability_gate_exits_3_and_override_passes(quick_file, tmp_path,
                                                    capsys):
    hot = tmp_path / "hot.scn"
    # factor ~0.30: past the 0.25 gate, still short of hard blow-up
    hot.write_text(QUICK.replace("kind = tdse", "kind = tdse\ndt = 0.104"))
    assert main(["run", str(hot), "--out", str(tmp_path / "o1")]) == 3
    assert "stability" in capsys.readouterr().err
    assert main(["run", str(hot), "--out", str(tmp_path / "o2"),
                 "--override-stability"]) == 0


def test_inconclusive_run_exits_4(tmp_path, capsys):
    text = """
[grid]
min = -10
max = 10
points = 101

[solver]
kind = tise-scatter

[outputs]
scan-min = -0.5
scan-max = -0.1
scan-step = 0.1
"""
    scn = tmp_path / "below.scn"
    scn.write_text(text)
    assert main(["run", str(scn), "--out", str(tmp_path / "o")]) == 4
    assert "inconclusive" in capsys.readouterr().err


def test_presets_list_names_every_builtin(capsys):
    assert main(["presets", "list"]) == 0
    listed = capsys.readouterr().out.split()
    assert listed == preset_names()
    assert "free-gaussian" in listed
    assert "two-particle-coulomb" in listed


def test_presets_show_prints_parseable_text(capsys):
    assert main(["presets", "show", "rtd-scattering"]) == 0
    text = capsys.readouterr().out
    assert "[solver]" in text and "kind = tdse" in text
    from bohmsim.scenario import parse_scenario
    assert parse_scenario(text).mass == pytest.approx(0.067 * 9.1093837139e-31)


def test_presets_show_unknown_exits_2(capsys):
    assert main(["presets", "show", "nope"]) == 2
    assert "unknown preset" in capsys.readouterr().err


def test_scan_transmission_reuses_the_scenario_potential(tmp_path, capsys):
    barrier = tmp_path / "barrier.scn"
    barrier.write_text(QUICK.replace(
        "[initial]", "[potential]\nkind = barriers\nsegments = -1 1 0.2\n\n[initial]"))
    out = tmp_path / "scan"
    code = main(["scan-transmission", str(barrier), "--emin", "0.02",
                 "--emax", "0.3", "--de", "0.02", "--out", str(out)])
    assert code == 0
    with open(out / "scan.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["energy", "transmission", "reflection", "flux_sum"]
    assert len(rows) - 1 == 15
    tvals = [float(r[1]) for r in rows[1:]]
    assert tvals == sorted(tvals)  # single barrier: monotone below the top
    man = json.loads((out / "manifest.json").read_text())
    assert man["solver_kind"] == "tise-scatter"
    assert man["scenario"]["name"] == "barrier-scan"


def test_scan_transmission_rejects_bad_range(quick_file, tmp_path, capsys):
    code = main(["scan-transmission", str(quick_file), "--emin", "0.3",
                 "--emax", "0.1", "--de", "0.02", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "increasing" in capsys.readouterr().err


def test_threads_flag_does_not_change_bytes(quick_file, tmp_path):
    assert main(["run", str(quick_file), "--out", str(tmp_path / "t1"),
                 "--threads", "1"]) == 0
    assert main(["run", str(quick_file), "--out", str(tmp_path / "t2"),
                 "--threads", "3"]) == 0
    for name in ("fields.csv", "trajectories.csv", "observables.json",
                 "manifest.json"):
        assert (tmp_path / "t1" / name).read_bytes() \
            == (tmp_path / "t2" / name).read_bytes(), name
