"""Deductive database state: local program, catalog, connections, persistence records."""

from __future__ import annotations

import copy
from collections import defaultdict

from . import persistence
from .backend import ConnectionRegistry
from .catalog import Catalog, PredicateSchema, build_pdg, is_safe, pred_label
from .engine import Engine, Goal
from .errors import BackendError, DESError, PersistenceError, SafetyError, TypeConsistencyError
from .syntax import (
    Atom, Const, PersistenceAssertion, Pos, Rule, TypeDeclaration, literal_vars, normalize,
    parse_program, parse_query,
)

LOCAL_DB = "$des"


class FactStore:
    """Local ground tuples of one predicate with lazily built per-column indexes."""

    def __init__(self, rows=()):
        self.rows = list(rows)
        self._index = {}

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def add(self, row):
        self.rows.append(tuple(row))
        self._index = {}

    def remove_all(self, row):
        row = tuple(row)
        before = len(self.rows)
        self.rows = [r for r in self.rows if r != row]
        self._index = {}
        return before - len(self.rows)

    def match(self, pattern):
        bound = [(i, v) for i, v in enumerate(pattern) if v is not None]
        if not bound:
            return list(self.rows)
        i, v = bound[0]
        idx = self._index.get(i)
        if idx is None:
            idx = defaultdict(list)
            for r in self.rows:
                idx[r[i]].append(r)
            self._index[i] = idx
        rows = idx.get(v, ())
        rest = bound[1:]
        if not rest:
            return list(rows)
        return [r for r in rows if all(r[j] == w for j, w in rest)]


class Database:
    def __init__(self, registry=None):
        self.registry = registry or ConnectionRegistry.default()
        self.catalog = Catalog()
        self.facts = {}   # key -> FactStore
        self.rules = {}   # key -> [normalized Rule]
        self.records = {}  # key -> PersistenceRecord
        self.connections = {}  # name -> ConnectionHandle
        self.current = LOCAL_DB
        self.version = 0
        self.engine = Engine(self)

    # ------------------------------------------------------------ connections

    def open_db(self, name):
        if name == LOCAL_DB:
            self.current = LOCAL_DB
            return None
        handle = self.connection(name)
        self.current = name
        return handle

    def close_db(self, name):
        handle = self.connections.get(name)
        if handle is None:
            raise BackendError(f"connection {name} is not open")
        if any(r.connection == name for r in self.records.values()):
            raise PersistenceError(f"connection {name} holds persistent predicates")
        del self.connections[name]
        handle.close()
        if self.current == name:
            self.current = LOCAL_DB
        self.invalidate()

    def connection(self, name):
        handle = self.connections.get(name)
        if handle is None or handle.closed:
            handle = self.registry.open(name)
            self.connections[name] = handle
            self.invalidate()
        return handle

    def close(self):
        for h in list(self.connections.values()):
            h.close()
        self.connections.clear()

    def external_relations(self):
        """Visible external relations by key; the current connection wins ties."""
        out = {}
        names = list(self.connections)
        if self.current in self.connections:
            names.remove(self.current)
            names.insert(0, self.current)
        for name in names:
            for rel in self.connections[name].list_relations():
                out.setdefault(rel.key, (name, rel))
        return out

    def raw_relation(self, key):
        """External relation backing ``key`` when it is not a persistent predicate."""
        if key in self.records:
            return None
        return self.external_relations().get(key)

    # ------------------------------------------------------------ program access

    def local_rules(self, key):
        rec = self.records.get(key)
        if rec is not None:
            return rec.local_rules
        return self.rules.get(key, [])

    def local_facts(self, key):
        return self.facts.get(key)

    def schema_of(self, key):
        rec = self.records.get(key)
        if rec is not None:
            return rec.schema
        declared = self.catalog.get(key)
        if declared is not None:
            return declared
        ext = self.raw_relation(key)
        if ext is not None:
            return ext[1].schema
        return None

    def known_schemas(self):
        known = {}
        for key, (_, rel) in self.external_relations().items():
            if rel.schema is not None:
                known[key] = rel.schema
        known.update(self.catalog.declared)
        for key, rec in self.records.items():
            known[key] = rec.schema
        return known

    def typing_rules(self):
        """Rules (with facts as unit clauses) per predicate for type inference."""
        out = defaultdict(list)
        for key, rules in self.rules.items():
            out[key].extend(rules)
        for key, store in self.facts.items():
            out[key].extend(Rule(Atom(key[0], tuple(Const(v) for v in row))) for row in store)
        for key, rec in self.records.items():
            out[key].extend(rec.rules)
        return dict(out)

    def all_local_rules(self):
        for key in set(self.rules) | set(self.records):
            yield from self.local_rules(key)

    def rules_everywhere(self):
        """Local rules plus every intensional rule of persistent predicates."""
        for rules in self.rules.values():
            yield from rules
        for rec in self.records.values():
            yield from rec.rules

    def predicates(self):
        keys = set(self.rules) | set(self.facts) | set(self.records) | set(self.catalog.declared)
        keys |= set(self.external_relations())
        return sorted(keys)

    def pdg(self):
        keys = set(self.facts) | set(self.records) | set(self.external_relations())
        return build_pdg(self.all_local_rules(), keys)

    def invalidate(self):
        self.version += 1
        self.engine.invalidate()

    # ------------------------------------------------------------ snapshots

    def snapshot(self):
        return (
            dict(self.catalog.declared),
            {k: FactStore(v.rows) for k, v in self.facts.items()},
            {k: list(v) for k, v in self.rules.items()},
            {k: copy.copy(v) for k, v in self.records.items()},
        )

    def restore_snapshot(self, snap):
        declared, facts, rules, records = snap
        self.catalog.declared = declared
        self.facts = facts
        self.rules = rules
        self.records = records
        self.invalidate()

    # ------------------------------------------------------------ updates

    def declare_type(self, schema):
        if schema.key in self.records and not self.records[schema.key].schema.same_types(schema):
            raise TypeConsistencyError(
                f"{pred_label(schema.key)} is persistent with schema {self.records[schema.key].schema}")
        self.catalog.declare_type(schema, self.typing_rules(), self.known_schemas())

    def assert_rule(self, rule):
        """Add a rule or fact; returns user messages."""
        return persistence.assert_rule(self, rule)

    def retract_rule(self, rule):
        return persistence.retract_rule(self, rule)

    def add_local(self, rule):
        if rule.is_fact:
            self.facts.setdefault(rule.key, FactStore()).add(a.value for a in rule.head.args)
        else:
            self.rules.setdefault(rule.key, []).append(rule)

    def persist(self, spec, connection=None):
        return persistence.persist(self, spec, connection)

    def drop_persistence(self, spec, connection=None):
        return persistence.drop_persistence(self, spec, connection)

    def migrate(self, spec, source, target):
        return persistence.migrate(self, spec, source, target)

    def load_item(self, item):
        """Process one parsed program item; returns user messages."""
        if isinstance(item, Rule):
            return self.assert_rule(item)
        if isinstance(item, TypeDeclaration):
            self.declare_type(PredicateSchema.from_spec(item.spec))
            return []
        if isinstance(item, PersistenceAssertion):
            return self.persist(item.spec, item.connection).messages()
        raise DESError(f"cannot load {item!r}")

    def consult(self, text):
        messages = []
        for item in parse_program(text):
            messages.extend(self.load_item(item))
        return messages

    # ------------------------------------------------------------ queries

    def solve(self, goal):
        return self.engine.solve(goal)

    def query(self, text, sort=True):
        """Solve a query text; returns (display name, answers sorted unless ``sort`` is off)."""
        order = sort_tuples if sort else list
        groups = parse_query(text)
        lits = [l for g in groups for l in g[0]] if all(len(g) == 1 for g in groups) else None
        if lits is not None and len(lits) == 1 and isinstance(lits[0], Pos):
            atom = lits[0].atom
            pattern, checks = _goal_pattern(atom)
            rows = self.solve(Goal(atom.key, pattern))
            rows = [r for r in rows if all(r[i] == r[j] for i, j in checks)]
            return atom.pred, order(rows)
        variables = []
        for g in groups:
            for alt in g:
                for lit in alt:
                    for v in literal_vars(lit):
                        if v not in variables and not v.name.startswith("_"):
                            variables.append(v)
        head = Atom("$answer", tuple(variables))
        temp = Rule(head, groups)
        if not is_safe(temp):
            raise SafetyError(f"Unsafe query: {', '.join(is_safe(temp).unbound)} not bound")
        rows = self.engine.solve_temporary(normalize(temp), Goal(("$answer", len(variables)), (None,) * len(variables)))
        return "answer", order(rows)


def _goal_pattern(atom):
    pattern, checks, first = [], [], {}
    for i, arg in enumerate(atom.args):
        if isinstance(arg, Const):
            pattern.append(arg.value)
        else:
            pattern.append(None)
            if arg in first:
                checks.append((first[arg], i))
            else:
                first[arg] = i
    return tuple(pattern), checks


def _sort_key(value):
    if isinstance(value, (int, float)):
        return (0, value, "")
    return (1, 0, value)


def sort_tuples(rows):
    return sorted(set(rows), key=lambda r: tuple(_sort_key(v) for v in r))
