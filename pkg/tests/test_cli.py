import json
import shutil
import subprocess
import sys

import pytest

from hfsched import fixture_path
from hfsched.cli import EXIT_CANTCREAT, EXIT_DATA, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_NOINPUT, EXIT_OK, EXIT_USAGE, main

CYCLIC = """\
schema: hfsched/1
name: loop
activities:
  - {id: A, duration: 1}
  - {id: B, duration: 1}
arcs:
  - [A, B]
  - [B, A]
"""


@pytest.fixture
def proj():
    return str(fixture_path())


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_validate(capsys, proj, tmp_path):
    code, out, _ = run(capsys, "validate", proj)
    assert code == EXIT_OK and out.startswith("ok: 8 activities, 6 arcs, 1 pools (renewable)")
    bad = tmp_path / "loop.proj"
    bad.write_text(CYCLIC)
    code, out, err = run(capsys, "validate", str(bad))
    assert code == EXIT_INVALID and "cycle" in out + err
    code, _, _ = run(capsys, "solve", str(bad))
    assert code == EXIT_INVALID


def test_parse_error_and_missing_file(capsys, tmp_path):
    bad = tmp_path / "bad.proj"
    bad.write_text("schema: hfsched/1\nactivities:\n  - {id: A, duration: x}\n")
    code, _, err = run(capsys, "validate", str(bad))
    assert code == EXIT_DATA and "line 3" in err
    code, _, _ = run(capsys, "solve", str(tmp_path / "absent.proj"))
    assert code == EXIT_NOINPUT


def test_usage_errors(capsys, proj, monkeypatch):
    with pytest.raises(SystemExit) as info:
        main(["solve", proj, "--threads", "0"])
    assert info.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == EXIT_USAGE
    code, _, err = run(capsys, "solve", proj, "--capacity", "R9=3")
    assert code == EXIT_USAGE and "R9" in err
    monkeypatch.setenv("HFSCHED_THREADS", "many")
    assert run(capsys, "solve", proj)[0] == EXIT_USAGE


def test_solve_both(capsys, proj):
    code, out, _ = run(capsys, "solve", proj)
    assert code == EXIT_OK and out.strip() == "rcpsp=15 hfnmcf=15 equivalent=true"


def test_solve_nonrenewable_override(capsys, proj):
    code, out, _ = run(capsys, "solve", proj, "--variant", "nonrenewable", "--capacity", "R1=25",
                       "--formulation", "hfnmcf")
    assert code == EXIT_OK and out.strip() == "hfnmcf=13"


def test_solve_infeasible_horizon(capsys, proj):
    code, out, _ = run(capsys, "solve", proj, "--horizon", "3")
    assert code == EXIT_INFEASIBLE
    code, out, _ = run(capsys, "solve", proj, "--horizon", "14", "--formulation", "rcpsp")
    assert code == EXIT_INFEASIBLE and out.strip() == "rcpsp=infeasible"


def test_solve_writes_result_and_lp(capsys, proj, tmp_path):
    out_path = tmp_path / "r.json"
    code, _, err = run(capsys, "-v", "solve", proj, "-o", str(out_path), "--lp-dir", str(tmp_path / "lp"))
    assert code == EXIT_OK and "makespan 15" in err
    doc = json.loads(out_path.read_text())
    assert doc["summary"] == {"rcpsp": 16, "hfnmcf": 16, "equivalent": True,
                              "checks": {"objective": True, "rcpsp-in-hfnmcf": True, "hfnmcf-in-rcpsp": True}}
    assert sorted(p.name for p in (tmp_path / "lp").iterdir()) == ["demeulemeester.hfnmcf.lp", "demeulemeester.rcpsp.lp"]
    code, _, _ = run(capsys, "solve", proj, "-o", str(tmp_path))
    assert code == EXIT_CANTCREAT


def test_transform_formats(capsys, proj, tmp_path):
    code, out, _ = run(capsys, "transform", proj, "--format", "dot")
    assert code == EXIT_OK and out.count("color=red") == 8
    code, out, _ = run(capsys, "transform", proj, "--format", "doc", "--variant", "nonrenewable", "--capacity", "R1=25")
    doc = json.loads(out)
    assert doc["m_plus"][1] == [0] * 9 and doc["initial_marking"][:2] == [3, 25]
    code, out, _ = run(capsys, "transform", proj, "-o", str(tmp_path / "net.txt"))
    assert "places 10 transitions 9" in out and (tmp_path / "net.txt").exists()


def test_psplib_input(capsys):
    code, out, _ = run(capsys, "solve", str(fixture_path("tiny.sm")), "--formulation", "rcpsp")
    assert code == EXIT_OK and out.strip() == "rcpsp=7"


@pytest.fixture
def results(capsys, proj, tmp_path):
    plan = tmp_path / "plan.json"
    assert main(["solve", proj, "--formulation", "rcpsp", "-o", str(plan)]) == EXIT_OK
    capsys.readouterr()
    return plan


def test_report_table(capsys, results):
    code, out, _ = run(capsys, "report", str(results), "table", "--format", "csv")
    rows = [r.split(",") for r in out.splitlines()]
    assert rows[-2][1:] == ["Per period", "0", "6", "6", "7", "7", "7", "7", "7", "8", "8", "8", "8", "8", "8", "7", "7"]
    code, out, _ = run(capsys, "report", str(results), "table")
    assert code == EXIT_OK and "Cumulative" in out


def test_report_slack(capsys, results):
    code, out, _ = run(capsys, "report", str(results), "slack", "--format", "csv")
    waits = {tuple(r.split(",")[:2]): int(r.split(",")[2]) for r in out.splitlines()[1:]}
    assert {k: v for k, v in waits.items() if v} == {("A", "C"): 2, ("D", "F"): 3, ("D", "G"): 5, ("F", "__finish__"): 2}


def test_report_eva(capsys, results, tmp_path):
    doc = json.loads(results.read_text())
    for act in doc["activities"].values():
        act["start"] += 1
    doc["finish_start"] += 1
    late = tmp_path / "late.json"
    late.write_text(json.dumps(doc))
    code, out, _ = run(capsys, "report", str(results), "eva", "--actual", str(late), "--as-of", "14", "--format", "csv")
    assert code == EXIT_OK and out.splitlines()[1] == "14,4,6,-2,2/3"
    values = tmp_path / "v.yaml"
    values.write_text("A: 1\nD: 2.5\n")
    code, out, _ = run(capsys, "report", str(results), "eva", "--values", str(values), "--as-of", "5")
    assert "EV 7/2" in out
    code, _, _ = run(capsys, "report", str(results), "table", "--as-of", "3")
    assert code == EXIT_USAGE


@pytest.mark.skipif(shutil.which("hfsched") is None, reason="console script not installed")
def test_console_script(proj):
    proc = subprocess.run(["hfsched", "solve", proj], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "rcpsp=15 hfnmcf=15 equivalent=true"


def test_module_entry(proj):
    proc = subprocess.run([sys.executable, "-m", "hfsched.cli", "validate", proj], capture_output=True, text=True)
    assert proc.returncode == 0


def test_result_carries_certificates(capsys, proj, tmp_path):
    out_path = tmp_path / "r.json"
    assert run(capsys, "solve", proj, "-o", str(out_path))[0] == EXIT_OK
    certs = json.loads(out_path.read_text())["certificates"]
    assert [c["formulation"] for c in certs] == ["rcpsp", "hfnmcf"]
    assert all(c["violations"] == [] and c["objective"] == 16 for c in certs)


def test_instance_options_feed_the_solver(capsys, proj, tmp_path):
    text = fixture_path().read_text().replace("options: {horizon: 18}", "options: {horizon: 18, node_limit: 1}")
    limited = tmp_path / "limited.proj"
    limited.write_text(text)
    code, out, err = run(capsys, "solve", str(limited), "--formulation", "rcpsp")
    assert code == EXIT_INFEASIBLE and "without a schedule" in err
    # the flag overrides the instance option
    code, out, _ = run(capsys, "solve", str(limited), "--formulation", "rcpsp", "--node-limit", "1000000")
    assert code == EXIT_OK and out.strip() == "rcpsp=15"


def test_commands_replay_through_the_library(capsys, proj, tmp_path):
    from hfsched import load_instance, schedule_table, solve_network
    from hfsched.analysis import slack_times
    from hfsched.ingest import dumps_results, results_document
    from hfsched.transform import build_operand_net, describe

    out_path = tmp_path / "cli.json"
    assert run(capsys, "solve", proj, "--formulation", "hfnmcf", "-o", str(out_path))[0] == EXIT_OK
    doc = load_instance(proj)
    sched, traj, _ = solve_network(doc.network, "hfnmcf", doc.options["horizon"])
    cli_doc = json.loads(out_path.read_text())
    lib_doc = json.loads(dumps_results(results_document(sched, traj, doc.network)))
    assert {k: cli_doc[k] for k in lib_doc} == lib_doc

    _, out, _ = run(capsys, "transform", proj)
    assert out == describe(build_operand_net(doc.network))
    _, out, _ = run(capsys, "report", str(out_path), "table")
    assert out == "\n".join(t.to_text() for t in schedule_table(traj, doc.network))
    _, out, _ = run(capsys, "report", str(out_path), "slack")
    assert out == slack_times(sched.starts, doc.network, traj).render()
