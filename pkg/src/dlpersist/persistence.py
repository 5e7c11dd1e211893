"""Persistence lifecycle: persist, restore, update routing, drop and migrate.

A persistent predicate ``p`` owns three objects on its connection: the
table ``p_des_table`` with its facts, the metadata table ``p_des_metadata``
with the canonical text of every intensional rule, and the view ``p`` that
unions the table with the rules the database can compute by itself.  Rules the
database cannot compute stay in the local residue of the record and are
solved by the engine next to the view rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .catalog import DEFAULT_STRING_SIZE, PredicateSchema, build_pdg, check_tuple, infer_types, is_safe, pred_label
from .dl2sql import (
    Col, Comparison, CreateTable, CreateView, Delete, DropTable, DropView, InsertValues,
    Lit, Select, classify_rule, column_equalities, dl_to_sql, metadata_name, render_sql, table_name,
)
from .errors import DESError, PersistenceError, SafetyError, TypeConsistencyError
from .syntax import ColumnType, PredSpec, body_atoms, canonical_text, normalize, parse_rule

logger = logging.getLogger(__name__)

METADATA_COLUMNS = (("seq", ColumnType("int")), ("rule_text", "text"))


@dataclass
class PersistenceRecord:
    pred: tuple  # (name, arity)
    connection: str
    schema: PredicateSchema
    rules: list = field(default_factory=list)  # every intensional rule, metadata order
    classes: list = field(default_factory=list)  # RuleClass per rule, None until classified
    view_sql: str | None = None

    @property
    def table_name(self):
        return table_name(self.pred[0])

    @property
    def view_name(self):
        return self.pred[0]

    @property
    def metadata_name(self):
        return metadata_name(self.pred[0])

    @property
    def local_rules(self):
        return [r for r, c in zip(self.rules, self.classes) if c is None or not c.translatable]

    @property
    def translatable_rules(self):
        return [r for r, c in zip(self.rules, self.classes) if c is not None and c.translatable]

    def __copy__(self):
        return PersistenceRecord(self.pred, self.connection, self.schema,
                                 list(self.rules), list(self.classes), self.view_sql)


@dataclass
class PersistReport:
    persisted: list = field(default_factory=list)
    restored: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    infos: list = field(default_factory=list)

    def messages(self):
        return self.warnings + self.infos


def format_warning(rule, rclass):
    if rclass.kind == "local_recursive":
        head = "Warning: Recursive rule cannot be transferred to external database"
    else:
        head = f"Warning: Rule cannot be transferred to external database ({rclass.reason})"
    return f"{head}\n  (kept in local database for its processing):\n{rule}"


# ---------------------------------------------------------------- helpers


def _target_connection(db, connection):
    name = connection or db.current
    if name is None or name == "$des":
        raise PersistenceError("No external database is open; give a connection name")
    return name, db.connection(name)


def _sql(handle, node):
    return handle.exec_update(render_sql(node, handle.dialect))


def _is_restorable(handle, pred):
    return (handle.relation(table_name(pred)) is not None
            and handle.relation(metadata_name(pred)) is not None)


def _raw_relation(db, handle, key):
    """A plain relation on ``handle`` that backs ``key`` and is not persistence-owned."""
    rel = handle.relation(key[0])
    if rel is None or rel.arity != key[1] or rel.role == "persistence_view":
        return None
    return rel


def _read_metadata(handle, pred):
    d = handle.dialect
    sql = render_sql(Select(((Col(None, "rule_text"), None),), ((metadata_name(pred), None),),
                            order_by=(Col(None, "seq"),)), d)
    with handle.query_fetch(sql) as cur:
        return [parse_rule(row[0]) for row in cur]


def _fetch_table(handle, pred):
    sql = render_sql(Select(None, ((table_name(pred), None),)), handle.dialect)
    with handle.query_fetch(sql) as cur:
        return [tuple(r) for r in cur]


def _insert_metadata(handle, rec, rule, seq):
    _sql(handle, InsertValues(rec.metadata_name, (seq, canonical_text(rule))))


def _spec_schema(spec):
    if spec.columns is None or any(t is None for _, t in spec.columns):
        return None
    return PredicateSchema.from_spec(spec)


def _check_spec_against(spec, schema):
    if spec.columns is None:
        return
    for (name, ctype), (cname, ctype2) in zip(spec.columns, schema.columns):
        if ctype is not None and not ctype.same_kind(ctype2):
            raise TypeConsistencyError(
                f"Schema mismatch for {pred_label(spec.key)}: {spec} does not match stored {schema}")


def _schema_for(db, key, spec):
    """Schema of a local predicate about to be persisted."""
    declared = db.catalog.get(key)
    given = _spec_schema(spec) if spec is not None else None
    if given is not None and declared is not None and not given.same_types(declared):
        raise TypeConsistencyError(
            f"Assertion {spec} conflicts with the declared type {declared}")
    known = db.known_schemas()
    if given is not None:
        known[key] = given
    rules = db.typing_rules()
    # callers constrain argument types too, so infer over the whole program
    inferred = infer_types({key} | set(rules), rules, known, require=False)
    if key in inferred:
        schema = inferred[key]
    elif not rules.get(key):
        schema = PredicateSchema(key[0], tuple(
            (f"a{i + 1}", ColumnType("string", DEFAULT_STRING_SIZE)) for i in range(key[1])))
    else:
        schema = infer_types({key}, rules, known)[key]  # raises naming the untyped argument
    if spec is not None and spec.columns is not None:
        cols = tuple((n, t) for (n, _), (_, t) in zip(spec.columns, schema.columns))
        schema = PredicateSchema(key[0], cols)
    return schema


# ---------------------------------------------------------------- persist


def persist(db, spec, connection=None):
    key = spec.key
    if spec.arity == 0:
        raise PersistenceError("Propositional (0-ary) predicates cannot be made persistent")
    conn, handle = _target_connection(db, connection)
    report = PersistReport()
    rec = db.records.get(key)
    if rec is not None:
        if rec.connection != conn:
            raise PersistenceError(
                f"{pred_label(key)} is already persistent in {rec.connection}; "
                f"a predicate can be persistent in only one database")
        _check_spec_against(spec, rec.schema)
        report.infos.append(f"Info: Predicate {pred_label(key)} is already persistent in {conn}.")
        return report
    snap = db.snapshot()
    try:
        with handle.transaction():
            _ensure(db, handle, key, spec, report, set(), explicit=True)
            resync(db, handle, report)
    except Exception:
        db.restore_snapshot(snap)
        raise
    db.invalidate()
    return report


def _ensure(db, handle, key, spec, report, visiting, explicit=False):
    """Make ``key`` computable on ``handle`` following the four-callee rule."""
    if key in visiting:
        return
    visiting.add(key)
    if key in db.records:
        return
    if _is_restorable(handle, key[0]):
        _restore(db, handle, key, spec, report, visiting)
        return
    if not explicit:
        if _raw_relation(db, handle, key) is not None:
            return
        if key not in db.rules and key not in db.facts and db.catalog.get(key) is None:
            if db.raw_relation(key) is not None:
                return  # owned by another connection: rules using it stay local
            raise PersistenceError(
                f"Predicate {pred_label(key)} is neither defined nor declared; "
                f"define it or declare its type before persisting its callers")
    if key[1] == 0:
        raise PersistenceError(
            f"Propositional (0-ary) predicate {key[0]} cannot be made persistent")
    for name in (key[0], table_name(key[0]), metadata_name(key[0])):
        if handle.relation(name) is not None:
            raise PersistenceError(
                f"Cannot make {pred_label(key)} persistent: relation {name} already exists "
                f"in {handle.name} and is not a persistence object")
    for rule in db.rules.get(key, ()):
        for atom, _ in body_atoms(rule):
            _ensure(db, handle, atom.key, None, report, visiting)
    _persist_local(db, handle, key, spec, report)


def _persist_local(db, handle, key, spec, report):
    schema = _schema_for(db, key, spec)
    rules = list(db.rules.get(key, ()))
    for rule in rules:
        safety = is_safe(rule)
        if not safety:
            raise SafetyError(f"Unsafe rule {rule} (unbound: {', '.join(safety.unbound)})")
    store = db.facts.get(key)
    rows = list(store) if store is not None else []
    for row in rows:
        check_tuple(schema, row)
    _sql(handle, CreateTable(table_name(key[0]), schema.columns))
    for row in rows:
        _sql(handle, InsertValues(table_name(key[0]), row))
    _sql(handle, CreateTable(metadata_name(key[0]), METADATA_COLUMNS))
    rec = PersistenceRecord(key, handle.name, schema, rules, [None] * len(rules))
    for seq, rule in enumerate(rules, 1):
        _insert_metadata(handle, rec, rule, seq)
    db.records[key] = rec
    db.facts.pop(key, None)
    db.rules.pop(key, None)
    db.invalidate()
    report.persisted.append(key)
    report.infos.append(f"Info: Predicate {pred_label(key)} made persistent.")


def _restore(db, handle, key, spec, report, visiting):
    table = handle.relation(table_name(key[0]))
    if table.schema is None or table.arity != key[1]:
        raise PersistenceError(
            f"Stored objects for {pred_label(key)} in {handle.name} do not match its arity")
    schema = PredicateSchema(key[0], table.schema.columns)
    if spec is not None:
        _check_spec_against(spec, schema)
    declared = db.catalog.get(key)
    if declared is not None and not declared.same_types(schema):
        raise TypeConsistencyError(
            f"Declared type {declared} does not match stored schema {schema}")
    rules = _read_metadata(handle, key[0])
    rec = PersistenceRecord(key, handle.name, schema, rules, [None] * len(rules))
    db.records[key] = rec
    db.invalidate()
    for rule in rules:
        for atom, _ in body_atoms(rule):
            _ensure(db, handle, atom.key, None, report, visiting)
    known = {canonical_text(r) for r in rules}
    store = db.facts.pop(key, None)
    for row in store or ():
        check_tuple(schema, row)
        _sql(handle, InsertValues(rec.table_name, row))
    for rule in db.rules.pop(key, []):
        text = canonical_text(rule)
        if text in known:
            continue
        known.add(text)
        rec.rules.append(rule)
        rec.classes.append(None)
        _insert_metadata(handle, rec, rule, len(rec.rules))
    infer_types({key}, db.typing_rules(), db.known_schemas())
    db.invalidate()
    report.restored.append(key)
    report.infos.append(f"Info: Predicate {pred_label(key)} restored from {handle.name}.")


# ---------------------------------------------------------------- views


def resync(db, handle, report):
    """Reclassify every persistent predicate of ``handle`` and refresh stale views."""
    recs = {k: r for k, r in db.records.items() if r.connection == handle.name}
    if not recs:
        return
    rules = list(db.rules_everywhere())
    pdg = build_pdg(rules, recs)
    comps = pdg.component_map()
    ok = {}

    def pred_ok(key):
        if key in ok:
            return ok[key]
        if key in db.records:
            return False  # other connection, or same component (handled as recursion)
        if key in db.rules or key in db.facts:
            return False
        return _raw_relation(db, handle, key) is not None

    def columns_of(key):
        rec = db.records.get(key)
        if rec is not None:
            return rec.schema.column_names
        return handle.relation(key[0]).columns

    d = handle.dialect
    changed = []
    for comp in pdg.sccs():
        for key in sorted(comp):
            rec = recs.get(key)
            if rec is None:
                continue
            classes = [classify_rule(r, pdg, d.functions, pred_ok, comps) for r in rec.rules]
            for rule, new, old in zip(rec.rules, classes, rec.classes):
                if not new.translatable and (old is None or old.translatable):
                    report.warnings.append(format_warning(rule, new))
            rec.classes = classes
            ok[key] = all(c.translatable for c in classes)
            query = dl_to_sql(key, rec.translatable_rules, columns_of)
            view_sql = render_sql(CreateView(rec.view_name, rec.schema.column_names, query), d)
            if view_sql != rec.view_sql:
                changed.append((rec, view_sql))
    for rec, _ in reversed(changed):
        rel = handle.relation(rec.view_name)
        if rel is not None and rel.kind == "view":
            _sql(handle, DropView(rec.view_name))
    for rec, view_sql in changed:
        handle.exec_update(view_sql)
        rec.view_sql = view_sql
    if changed:
        db.invalidate()


def _resync_all(db, report, key=None):
    """Refresh every connection whose views could observe a change to ``key``."""
    for name, handle in list(db.connections.items()):
        if handle.closed or not any(r.connection == name for r in db.records.values()):
            continue
        if key is not None and key not in db.records and _raw_relation(db, handle, key) is None:
            continue
        with handle.transaction():
            resync(db, handle, report)


# ---------------------------------------------------------------- updates


def _rules_of(rule):
    rules = normalize(rule)
    for r in rules:
        if r.is_fact:
            if not r.head.is_ground():
                raise SafetyError(f"Unsafe fact {r}: facts must be ground")
        else:
            safety = is_safe(r)
            if not safety:
                raise SafetyError(f"Unsafe rule {r} (unbound: {', '.join(safety.unbound)})")
    return rules


def _typecheck_local(db, rule):
    key = rule.key
    schema = db.schema_of(key)
    if rule.is_fact:
        if schema is not None:
            check_tuple(schema, tuple(a.value for a in rule.head.args))
        return
    rules = db.typing_rules()
    rules.setdefault(key, [])
    rules[key] = list(rules[key]) + [rule]
    infer_types({key}, rules, db.known_schemas(), require=False)


def assert_rule(db, rule):
    messages = []
    report = PersistReport()
    for r in _rules_of(rule):
        key = r.key
        rec = db.records.get(key)
        if rec is None:
            _typecheck_local(db, r)
            if r.is_fact and db.raw_relation(key) is not None:
                messages.append(
                    f"Warning: {pred_label(key)} is an external relation that is not persistent; "
                    f"the fact is only loaded in the local database.")
            db.add_local(r)
            db.invalidate()
            if db.raw_relation(key) is not None:
                _resync_all(db, report, key)
            continue
        handle = db.connection(rec.connection)
        if r.is_fact:
            row = tuple(a.value for a in r.head.args)
            check_tuple(rec.schema, row)
            _sql(handle, InsertValues(rec.table_name, row))
            db.invalidate()
            continue
        _typecheck_local(db, r)
        snap = db.snapshot()
        try:
            with handle.transaction():
                for atom, _ in body_atoms(r):
                    _ensure(db, handle, atom.key, None, report, {key})
                rec = db.records[key]
                rec.rules.append(r)
                rec.classes.append(None)
                _insert_metadata(handle, rec, r, _next_seq(handle, rec))
                resync(db, handle, report)
        except Exception:
            db.restore_snapshot(snap)
            raise
        db.invalidate()
    return messages + report.messages()


def _next_seq(handle, rec):
    sql = render_sql(Select(((Col(None, "seq"), None),), ((rec.metadata_name, None),)), handle.dialect)
    with handle.query_fetch(sql) as cur:
        seqs = [row[0] for row in cur]
    return max(seqs, default=0) + 1


def retract_rule(db, rule):
    messages = []
    report = PersistReport()
    for r in normalize(rule):
        key = r.key
        rec = db.records.get(key)
        removed = 0
        if r.is_fact and r.head.is_ground():
            row = tuple(a.value for a in r.head.args)
            if rec is not None:
                handle = db.connection(rec.connection)
                removed = _sql(handle, Delete(rec.table_name,
                                              column_equalities(row, rec.schema.column_names)))
            else:
                store = db.facts.get(key)
                removed = store.remove_all(row) if store is not None else 0
        else:
            text = canonical_text(r)
            if rec is not None:
                idx = [i for i, x in enumerate(rec.rules) if canonical_text(x) == text]
                if idx:
                    handle = db.connection(rec.connection)
                    snap = db.snapshot()
                    try:
                        with handle.transaction():
                            for i in reversed(idx):
                                del rec.rules[i]
                                del rec.classes[i]
                            _sql(handle, Delete(rec.metadata_name,
                                                Comparison("=", Col(None, "rule_text"), Lit(text))))
                            resync(db, handle, report)
                    except Exception:
                        db.restore_snapshot(snap)
                        raise
                    removed = len(idx)
            else:
                local = db.rules.get(key, [])
                kept = [x for x in local if canonical_text(x) != text]
                removed = len(local) - len(kept)
                if removed:
                    db.rules[key] = kept
                    if not kept:
                        del db.rules[key]
        if removed:
            db.invalidate()
            if rec is None and db.raw_relation(key) is not None:
                _resync_all(db, report, key)
        else:
            messages.append(f"Info: Nothing to retract for {r}")
    return messages + report.messages()


# ---------------------------------------------------------------- drop and migrate


def drop_persistence(db, spec, connection=None):
    key = spec.key
    rec = db.records.get(key)
    if rec is None:
        raise PersistenceError(f"{pred_label(key)} is not persistent")
    if connection is not None and connection != rec.connection:
        raise PersistenceError(f"{pred_label(key)} is persistent in {rec.connection}, not {connection}")
    _check_spec_against(spec, rec.schema)
    handle = db.connection(rec.connection)
    report = PersistReport()
    snap = db.snapshot()
    try:
        with handle.transaction():
            for name in (rec.table_name, rec.metadata_name, rec.view_name):
                if handle.relation(name) is None:
                    raise PersistenceError(
                        f"Backing object {name} of {pred_label(key)} is missing in {handle.name}")
            rows = _fetch_table(handle, key[0])
            rules = _read_metadata(handle, key[0])
            _drop_dependent_views(db, handle, key)
            _sql(handle, DropView(rec.view_name))
            _sql(handle, DropTable(rec.table_name))
            _sql(handle, DropTable(rec.metadata_name))
            del db.records[key]
            if db.catalog.get(key) is None:
                db.catalog.declared[key] = rec.schema
            from .database import FactStore
            if rows:
                db.facts[key] = FactStore(rows)
            if rules:
                db.rules[key] = rules
            db.invalidate()
            resync(db, handle, report)
    except Exception:
        db.restore_snapshot(snap)
        raise
    db.invalidate()
    report.infos.append(f"Info: Persistence of {pred_label(key)} dropped from {handle.name}.")
    return report


def _drop_dependent_views(db, handle, key):
    """Drop views of persistent callers of ``key`` (callers first); resync recreates them."""
    recs = {k: r for k, r in db.records.items() if r.connection == handle.name and k != key}
    if not recs:
        return
    pdg = build_pdg(db.rules_everywhere(), recs)
    callers = {c for c in recs if key in pdg.reachable(c)}
    for comp in reversed(pdg.sccs()):
        for k in sorted(comp, reverse=True):
            if k in callers:
                rec = recs[k]
                rel = handle.relation(rec.view_name)
                if rel is not None and rel.kind == "view":
                    _sql(handle, DropView(rec.view_name))
                rec.view_sql = None


def migrate(db, spec, source, target):
    if source == target:
        raise PersistenceError("Migration needs two distinct connections")
    rec = db.records.get(spec.key)
    if rec is None or rec.connection != source:
        raise PersistenceError(f"{pred_label(spec.key)} is not persistent in {source}")
    if target not in db.registry:
        raise DESError(f"Unknown connection {target!r}")
    full = PredSpec(spec.name, spec.arity, rec.schema.columns)
    src = db.connection(source)
    snap = db.snapshot()
    report = PersistReport()
    try:
        with src.transaction():
            first = drop_persistence(db, spec, source)
            second = persist(db, full, target)
    except Exception:
        db.restore_snapshot(snap)
        raise
    for part in (first, second):
        report.warnings.extend(part.warnings)
        report.infos.extend(part.infos)
    return report
