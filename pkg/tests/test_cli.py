import io
import pathlib
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlpersist import cli
from dlpersist.bench import BenchConfig, run_bench
from dlpersist.backend import ConnectionRegistry
from dlpersist.database import Database
from dlpersist.errors import CommandError

ROOT = pathlib.Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "scripts"))
import replay_sessions  # noqa: E402

SESSIONS = sorted((ROOT / "scripts" / "sessions").glob("*.des"))

words = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_0123456789", min_size=1, max_size=8).filter(
    lambda w: w[0].isalpha())
payload = st.text(alphabet="abcXYZ(),.:- '_019", min_size=1, max_size=20).map(str.strip).filter(bool)

commands = st.one_of(
    payload.filter(lambda t: not t.startswith(("/", ":-", "%"))).map(cli.Query),
    payload.map(lambda t: cli.Directive(":-" + t)),
    payload.map(cli.AssertRule), payload.map(cli.RetractRule), payload.map(cli.DropAssertion),
    st.one_of(st.none(), words).map(cli.DbSchema), words.map(cli.OpenDb), words.map(cli.CloseDb),
    st.just(cli.SetOptimization()),
    st.builds(cli.SetOptimization, words, st.booleans()),
    st.booleans().map(cli.Statistics), words.map(cli.Consult),
    st.one_of(st.none(), words).map(cli.Listing),
    st.builds(cli.Sql, words, payload), st.just(cli.Help()), st.just(cli.Quit()),
)


@given(commands)
@settings(max_examples=400)
def test_command_round_trip(cmd):
    assert cli.parse_command(cli.render_command(cmd)) == cmd


def test_blank_and_comment_lines():
    assert cli.parse_command("   ") is None
    assert cli.parse_command("% note") is None


def test_unknown_command():
    with pytest.raises(CommandError, match="/frobnicate"):
        cli.parse_command("/frobnicate now")
    s = cli.Session(Database(ConnectionRegistry.default()))
    assert s.execute("/frobnicate")[0].startswith("Error: Unknown command /frobnicate")
    s.db.close()


@pytest.mark.parametrize("path", SESSIONS, ids=lambda p: p.stem)
def test_session_transcripts(path):
    golden = ROOT / "tests" / "golden" / f"{path.stem}.txt"
    assert replay_sessions.transcript(path) == golden.read_text(encoding="utf-8")


def _run(lines):
    out = io.StringIO()
    s = cli.Session(Database(ConnectionRegistry.default()))
    try:
        cli.repl(lines, s, out, prompt=False)
    finally:
        s.db.close()
    return out.getvalue()


def test_batch_matches_interactive(tmp_path):
    script = tmp_path / "s.des"
    script.write_text("/assert p(2)\n/assert p(1)\n/assert p(1)\np(X)\n/retract p(1)\np(X)\n")
    interactive = _run(script.read_text().splitlines(keepends=True))
    batch = subprocess.run([sys.executable, "-m", "dlpersist", "--script", str(script)],
                           capture_output=True, text=True, check=True).stdout
    assert batch == interactive == "{ p(1), p(2) }\n{ p(2) }\n"


def test_answers_are_sorted_and_distinct():
    out = _run(["/assert q(b,2)\n", "/assert q(a,10)\n", "/assert q(a,9)\n", "/assert q(a,9)\n", "q(X,Y)\n"])
    assert out == "{ q(a,9), q(a,10), q(b,2) }\n"


def test_empty_local_schema():
    assert _run(["/dbschema $des\n"]) == "Database: $des\n"


def test_quit_stops_the_session():
    assert _run(["/quit\n", "/assert p(1)\n", "p(X)\n"]) == ""


def test_statistics_and_optimization_commands():
    out = _run(["/optimization\n", "/optimization nonrecursive_cache off\n", "/statistics\n"])
    assert "nonrecursive_cache: on" in out and "Optimization nonrecursive_cache is off" in out
    assert "iterations: 0" in out


def test_missing_registry_file_exits_with_error(tmp_path):
    r = subprocess.run([sys.executable, "-m", "dlpersist", "--db", str(tmp_path / "none.ini")],
                       capture_output=True, text=True, input="")
    assert r.returncode == 2 and "not found" in r.stderr


def test_bench_with_no_tuples():
    report = run_bench(BenchConfig(n=0, reps=1))
    assert report.checks[("insert", "persistent")] == 0
    assert report.checks[("join", "memory")] == 0


def test_bench_report_shape(tmp_path):
    report = run_bench(BenchConfig(n=20, reps=3))
    text = report.render()
    assert "in-memory" in text and "mysql native" in text and "mysql persistent" in text
    assert report.checks[("join", "native")] == 400
    assert report.checks[("lifecycle", "restored")] == 20
    for s in ("insert", "select", "join"):
        assert report.ratio((s, "persistent"), (s, "memory")) is not None
    lines = report.csv().splitlines()
    assert lines[0] == "scenario,target,mean_ms" and len(lines) == 1 + 3 * 3 + 2
