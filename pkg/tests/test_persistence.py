import pytest

from dlpersist.backend import ConnectionConfig, ConnectionRegistry
from dlpersist.database import Database
from dlpersist.engine import Goal
from dlpersist.errors import BackendError, PersistenceError, TypeConsistencyError
from dlpersist.syntax import PredSpec, canonical_text, parse_clause, parse_rule

from criteria import program_state
from family import PROGRAM, with_fathers


def spec(text):
    name, arity = text.split("/")
    return PredSpec(name, int(arity))


@pytest.fixture
def db():
    d = Database(ConnectionRegistry.default())
    with_fathers(d)
    d.open_db("mysql")
    d.consult(PROGRAM)
    yield d
    d.close()


def answers(db, text):
    return db.query(text)[1]


def test_persisting_ancestor_persists_its_callees(db):
    before = answers(db, "ancestor(X,carolIII)")
    report = db.persist(spec("ancestor/2"))
    assert report.persisted == [("mother", 2), ("parent", 2), ("ancestor", 2)]
    assert len(report.warnings) == 1 and "Recursive rule" in report.warnings[0]
    h = db.connection("mysql")
    names = {r.name for r in h.list_relations()}
    for p in ("mother", "parent", "ancestor"):
        assert {p, f"{p}_des_table", f"{p}_des_metadata"} <= names
    assert "father_des_table" not in names
    assert answers(db, "ancestor(X,carolIII)") == before
    assert answers(db, "ancestor(X,amy)") == [("grace", "amy"), ("tom", "amy")]


def test_metadata_holds_every_rule(db):
    db.persist(spec("ancestor/2"))
    h = db.connection("mysql")
    rows = h.query_fetch("SELECT * FROM `ancestor_des_metadata` ORDER BY seq").fetch_all()
    assert rows == [(1, "ancestor(A,B):-parent(A,B)."), (2, "ancestor(A,B):-parent(A,C),ancestor(C,B).")]
    assert h.query_fetch("SELECT * FROM `parent_des_metadata` ORDER BY seq").fetch_all() == [
        (1, "parent(A,B):-father(A,B)."), (2, "parent(A,B):-mother(A,B).")]
    assert len(h.query_fetch("SELECT * FROM `mother_des_table`").fetch_all()) == 4


def test_view_is_queried_for_persistent_answers(db):
    db.persist(spec("ancestor/2"))
    h = db.connection("mysql")
    n = h.queries
    db.solve(Goal(("mother", 2), (None, "amy")))
    assert h.queries > n


def test_fact_assertion_goes_to_the_table(db):
    db.persist(spec("mother/2"))
    db.assert_rule(parse_rule("mother(eve,grace)."))
    h = db.connection("mysql")
    assert ("eve", "grace") in h.query_fetch("SELECT * FROM `mother_des_table`").fetch_all()
    assert ("eve", "amy") in answers(db, "ancestor(X,amy)")
    db.retract_rule(parse_rule("mother(eve,grace)."))
    assert ("eve", "grace") not in h.query_fetch("SELECT * FROM `mother_des_table`").fetch_all()


def test_retract_rule_of_a_persistent_predicate(db):
    db.persist(spec("parent/2"))
    db.retract_rule(parse_rule("parent(X,Y) :- father(X,Y)."))
    h = db.connection("mysql")
    assert h.query_fetch("SELECT * FROM `parent_des_metadata`").fetch_all() == [(2, "parent(A,B):-mother(A,B).")]
    assert answers(db, "parent(tom,X)") == []


def test_asserted_rule_is_added_to_the_view(db):
    db.persist(spec("parent/2"))
    db.assert_rule(parse_rule("parent(X,Y) :- mother(Y,X)."))
    assert ("amy", "grace") in answers(db, "parent(amy,Y)")
    h = db.connection("mysql")
    assert len(h.query_fetch("SELECT * FROM `parent_des_metadata`").fetch_all()) == 3


def test_drop_restores_the_local_program(db):
    before = program_state(db)
    want = answers(db, "ancestor(X,carolIII)")
    db.persist(spec("ancestor/2"))
    for p in ("ancestor/2", "parent/2", "mother/2"):
        db.drop_persistence(spec(p))
    assert program_state(db) == before
    assert answers(db, "ancestor(X,carolIII)") == want
    names = {r.name for r in db.connection("mysql").list_relations()}
    assert names == {"father"}


def test_dropping_a_callee_keeps_callers_working(db):
    db.persist(spec("ancestor/2"))
    want = answers(db, "ancestor(X,carolIII)")
    db.drop_persistence(spec("mother/2"))
    assert answers(db, "ancestor(X,carolIII)") == want
    assert ("mother", 2) in db.facts


def test_one_connection_per_predicate(db):
    db.persist(spec("mother/2"), "mysql")
    with pytest.raises(PersistenceError, match="only one"):
        db.persist(spec("mother/2"), "access")
    assert db.persist(spec("mother/2"), "mysql").infos[0].endswith("already persistent in mysql.")


def test_name_collision_with_an_unrelated_relation(db):
    db.connection("mysql").exec_update("CREATE TABLE mother_des_table(x INTEGER)")
    before = program_state(db)
    with pytest.raises(PersistenceError, match="already exists"):
        db.persist(spec("ancestor/2"))
    assert program_state(db) == before and not db.records


def test_undefined_callee_is_an_error():
    db = Database(ConnectionRegistry.default())
    db.consult(":-type(p(a:int)).\np(X) :- q(X).")
    with pytest.raises(PersistenceError, match="q/1"):
        db.persist(spec("p/1"), "mysql")
    db.consult(":-type(q(a:int)).")
    db.persist(spec("p/1"), "mysql")
    assert set(db.records) == {("p", 1), ("q", 1)}
    db.close()


def test_propositional_predicates_are_rejected():
    db = Database(ConnectionRegistry.default())
    db.consult("p.")
    with pytest.raises(PersistenceError, match="Propositional"):
        db.persist(PredSpec("p", 0), "mysql")
    db.close()


def test_empty_typed_predicate():
    db = Database(ConnectionRegistry.default())
    db.persist(parse_clause(":-persistent(e(a:int,b:string))").spec, "mysql")
    assert answers(db, "e(X,Y)") == []
    db.assert_rule(parse_rule("e(1,x)."))
    assert answers(db, "e(X,Y)") == [(1, "x")]
    with pytest.raises(TypeConsistencyError):
        db.assert_rule(parse_rule("e(x,1)."))
    db.close()


def test_type_conflict_between_rule_and_declaration(db):
    db.persist(spec("mother/2"))
    with pytest.raises(TypeConsistencyError):
        db.assert_rule(parse_rule("mother(1,2)."))


def _file_registry(tmp_path):
    ini = tmp_path / "conn.ini"
    ini.write_text(f"[mysql]\nlocation = {tmp_path / 'm.db'}\ndialect = mysql\n")
    return ConnectionRegistry.from_file(str(ini))


def test_restore_in_a_new_session(tmp_path):
    first = Database(_file_registry(tmp_path))
    with_fathers(first)
    first.open_db("mysql")
    first.consult(PROGRAM)
    first.persist(spec("ancestor/2"))
    want = answers(first, "ancestor(X,carolIII)")
    first.close()

    second = Database(_file_registry(tmp_path))
    second.open_db("mysql")
    second.consult("mother(eve,grace).")
    report = second.persist(spec("ancestor/2"))
    assert ("ancestor", 2) in report.restored
    assert set(second.records) == {("ancestor", 2), ("parent", 2), ("mother", 2)}
    assert ("mother", 2) not in second.facts
    got = answers(second, "ancestor(X,carolIII)")
    assert set(got) == set(want) | {("eve", "carolIII")}
    second.close()


def test_restore_with_mismatched_declaration(tmp_path):
    first = Database(_file_registry(tmp_path))
    first.consult(":-type(p(a:int)).\np(1).")
    first.persist(spec("p/1"), "mysql")
    first.close()
    second = Database(_file_registry(tmp_path))
    second.consult(":-type(p(a:string)).")
    with pytest.raises(TypeConsistencyError):
        second.persist(spec("p/1"), "mysql")
    second.close()


def test_migration_moves_the_predicate(db):
    db.persist(spec("mother/2"), "mysql")
    want = answers(db, "ancestor(X,carolIII)")
    db.migrate(spec("mother/2"), "mysql", "access")
    assert db.records[("mother", 2)].connection == "access"
    assert db.connection("mysql").relation("mother_des_table") is None
    assert db.connection("access").relation("mother_des_table") is not None
    assert answers(db, "ancestor(X,carolIII)") == want
    with pytest.raises(PersistenceError):
        db.migrate(spec("mother/2"), "access", "access")


def test_local_rules_survive_a_round_trip():
    db = Database(ConnectionRegistry.default())
    db.consult(":-type(edge(a:int,b:int)).\nedge(1,2).\nedge(2,3).\n"
               "path(X,Y) :- edge(X,Y).\npath(X,Y) :- path(X,Z), edge(Z,Y).")
    want = answers(db, "path(X,Y)")
    db.persist(spec("path/2"), "mysql")
    rec = db.records[("path", 2)]
    assert [canonical_text(r) for r in rec.local_rules] == ["path(A,B):-path(A,C),edge(C,B)."]
    assert answers(db, "path(X,Y)") == want
    db.migrate(spec("path/2"), "mysql", "access")
    assert answers(db, "path(X,Y)") == want == [(1, 2), (1, 3), (2, 3)]
    db.close()


def test_persist_is_atomic_on_backend_failure(db, monkeypatch):
    before = program_state(db)
    h = db.connection("mysql")
    real = h.exec_update
    calls = []

    def flaky(sql):
        calls.append(sql)
        if len(calls) == 5:
            raise BackendError("injected failure", sql)
        return real(sql)

    monkeypatch.setattr(h, "exec_update", flaky)
    with pytest.raises(BackendError):
        db.persist(spec("ancestor/2"))
    monkeypatch.setattr(h, "exec_update", real)
    assert program_state(db) == before and not db.records
    assert {r.name for r in h.list_relations()} == {"father"}
    db.persist(spec("ancestor/2"))
    assert len(db.records) == 3


def test_no_open_database():
    db = Database(ConnectionRegistry([ConnectionConfig("m", "sqlite", ":memory:", "mysql")]))
    db.consult("p(1).")
    with pytest.raises(PersistenceError, match="No external database"):
        db.persist(spec("p/1"))
    db.close()
