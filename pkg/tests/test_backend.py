import pathlib
import re
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlpersist.backend import ConnectionConfig, ConnectionRegistry, sql_type_to_column
from dlpersist.errors import BackendError, UnknownConnectionError

SRC = pathlib.Path(__file__).resolve().parents[1] / "src" / "dlpersist"


@pytest.fixture
def handle():
    reg = ConnectionRegistry([ConnectionConfig("t", "sqlite", ":memory:", "mysql")])
    h = reg.open("t")
    h.exec_update("CREATE TABLE t(a INTEGER, b VARCHAR(20))")
    yield h
    reg.close_all()


def test_registry_from_file(tmp_path):
    ini = tmp_path / "conn.ini"
    ini.write_text("[mysql]\nkind = sqlite\nlocation = data/m.db\ndialect = mysql\n"
                   "[acc]\nlocation = :memory:\ndialect = access\n")
    reg = ConnectionRegistry.from_file(str(ini))
    assert reg.names() == ["mysql", "acc"]
    assert reg.configs["mysql"].location == str(tmp_path / "data" / "m.db")
    assert reg.configs["acc"].dialect == "access"


def test_unknown_connection_names_the_registry(tmp_path):
    ini = tmp_path / "conn.ini"
    ini.write_text("[mysql]\nlocation = :memory:\n")
    reg = ConnectionRegistry.from_file(str(ini))
    with pytest.raises(UnknownConnectionError, match="conn.ini"):
        reg.open("oracle")


def test_missing_registry_file(tmp_path):
    with pytest.raises(BackendError):
        ConnectionRegistry.from_file(str(tmp_path / "nope.ini"))


def test_open_is_reference_counted():
    reg = ConnectionRegistry([ConnectionConfig("t", "sqlite", ":memory:", "ansi")])
    a, b = reg.open("t"), reg.open("t")
    assert a is b and a.refcount == 2
    a.close()
    assert not b.closed
    b.close()
    assert b.closed
    with pytest.raises(BackendError):
        b.exec_update("CREATE TABLE x(a INTEGER)")


def test_update_counts(handle):
    assert handle.exec_update("INSERT INTO t VALUES(1,'a')") == 1
    assert handle.exec_update("INSERT INTO t VALUES(2,'b')") == 1
    assert handle.exec_update("DELETE FROM t WHERE 1=0") == 0
    assert handle.exec_update("UPDATE t SET b='z'") == 2
    assert handle.exec_update("CREATE TABLE u(a INTEGER)") == 0


def test_malformed_sql_carries_the_statement(handle):
    with pytest.raises(BackendError) as e:
        handle.exec_update("INSERT INTO nowhere VALUES(1)")
    assert e.value.sql == "INSERT INTO nowhere VALUES(1)"
    with pytest.raises(BackendError):
        handle.query_fetch("SELEC * FROM t")


def test_cursor_delivers_rows_then_end(handle):
    for i in range(3):
        handle.exec_update(f"INSERT INTO t VALUES({i},'x')")
    cur = handle.query_fetch("SELECT a FROM t ORDER BY a")
    assert [cur.fetch_row() for _ in range(3)] == [(0,), (1,), (2,)]
    assert cur.fetch_row() is None
    assert cur.closed
    with pytest.raises(BackendError):
        cur.fetch_row()


def test_interleaved_cursors(handle):
    for i in range(4):
        handle.exec_update(f"INSERT INTO t VALUES({i},'x')")
    c1 = handle.query_fetch("SELECT a FROM t ORDER BY a")
    c2 = handle.query_fetch("SELECT a FROM t ORDER BY a DESC")
    got = [(c1.fetch_row(), c2.fetch_row()) for _ in range(4)]
    assert got == [((0,), (3,)), ((1,), (2,)), ((2,), (1,)), ((3,), (0,))]


@given(st.lists(st.tuples(st.integers(-5, 5), st.sampled_from(("a", "b", "o'k"))), max_size=15))
@settings(max_examples=60)
def test_cursor_rows_match_fetch_all(rows):
    reg = ConnectionRegistry([ConnectionConfig("t", "sqlite", ":memory:", "mysql")])
    h = reg.open("t")
    try:
        h.exec_update("CREATE TABLE t(a INTEGER, b VARCHAR(20))")
        for a, b in rows:
            h.exec_update("INSERT INTO t VALUES({},'{}')".format(a, b.replace("'", "''")))
        streamed = list(h.query_fetch("SELECT * FROM t"))
        assert sorted(streamed) == sorted(h.query_fetch("SELECT * FROM t").fetch_all()) == sorted(rows)
    finally:
        reg.close_all()


def test_transaction_rolls_back(handle):
    with pytest.raises(BackendError):
        with handle.transaction():
            handle.exec_update("INSERT INTO t VALUES(1,'a')")
            handle.exec_update("INSERT INTO nowhere VALUES(1)")
    assert handle.query_fetch("SELECT * FROM t").fetch_all() == []
    with handle.transaction():
        with handle.transaction():
            handle.exec_update("INSERT INTO t VALUES(1,'a')")
    assert handle.query_fetch("SELECT * FROM t").fetch_all() == [(1, "a")]


def test_introspection(handle):
    handle.exec_update("CREATE TABLE p_des_table(x INTEGER, y VARCHAR(10))")
    handle.exec_update("CREATE TABLE p_des_metadata(seq INTEGER, rule_text TEXT)")
    handle.exec_update("CREATE VIEW p(x,y) AS SELECT * FROM p_des_table")
    rels = {r.name: r for r in handle.list_relations()}
    assert rels["t"].kind == "table" and rels["t"].columns == ("a", "b")
    assert str(rels["t"].schema) == "t(a:int,b:string(20))"
    assert rels["p"].role == "persistence_view" and rels["p"].schema is not None
    assert rels["p_des_table"].role == "persistence_table"
    assert rels["p_des_metadata"].role == "persistence_metadata"


def test_dual_table_is_hidden():
    reg = ConnectionRegistry([ConnectionConfig("a", "sqlite", ":memory:", "access")])
    h = reg.open("a")
    try:
        assert h.list_relations() == []
        assert h.query_fetch("SELECT 1 FROM [dual]").fetch_all() == [(1,)]
    finally:
        reg.close_all()


@pytest.mark.parametrize("decl,kind", [
    ("INTEGER", "int"), ("VARCHAR(20)", "string"), ("FLOAT", "float"), ("TEXT", "string"), ("BLOB", None),
])
def test_sql_types_map_back(decl, kind):
    t = sql_type_to_column(decl)
    assert (t.kind if t else None) == kind


def test_trig_functions_are_available(handle):
    assert handle.query_fetch("SELECT sin(0), cos(0), abs(-2)").fetch_all() == [(0.0, 1.0, 2)]


def test_committed_data_survives_the_process(tmp_path):
    db = tmp_path / "store.db"
    ini = tmp_path / "conn.ini"
    ini.write_text(f"[m]\nlocation = {db}\ndialect = mysql\n")
    write = (
        "from dlpersist.backend import ConnectionRegistry\n"
        f"h = ConnectionRegistry.from_file({str(ini)!r}).open('m')\n"
        "h.exec_update('CREATE TABLE t(a INTEGER)')\n"
        "h.exec_update('INSERT INTO t VALUES(7)')\n"
        "import os; os._exit(0)\n"  # no orderly close
    )
    subprocess.run([sys.executable, "-c", write], check=True)
    h = ConnectionRegistry.from_file(str(ini)).open("m")
    try:
        assert h.query_fetch("SELECT a FROM t").fetch_all() == [(7,)]
    finally:
        h.close()


def test_sql_text_is_built_only_by_the_compiler_and_drivers():
    pattern = re.compile(r"""["'](SELECT|INSERT|CREATE|DROP|DELETE|UPDATE)\s""")
    offenders = []
    for path in SRC.glob("*.py"):
        if path.name in ("dl2sql.py", "backend.py"):
            continue
        for n, line in enumerate(path.read_text().splitlines(), 1):
            if pattern.search(line):
                offenders.append(f"{path.name}:{n}: {line.strip()}")
    assert offenders == []
