"""Tabled, top-down-driven bottom-up fixpoint solver.

A call (predicate plus a bound/free argument pattern) is solved by iterating
over the calls it reaches until no new answers show up.  Answers live in one
table per predicate; a call's answers are that table filtered by its pattern.
Clauses come from local rules and facts and from external relations, which
are fetched with one filtered ``SELECT`` per call.
"""

from __future__ import annotations

import math
from operator import itemgetter
from collections import defaultdict
from dataclasses import dataclass, field

from .catalog import PredicateDependencyGraph, build_pdg, pred_label, stratify
from .dl2sql import Select, column_equalities, render_sql
from .errors import BackendError, DESError, SafetyError
from .syntax import Atom, Cmp, Const, Func, Is, Neg, Pos, Rule, Var, term_vars

OPTIMIZATIONS = ("complete_computations", "extensional_fetch", "nonrecursive_cache")
COUNTERS = ("iterations", "fetches", "resolutions", "linear_passes")


@dataclass(frozen=True)
class Goal:
    key: tuple  # (name, arity)
    pattern: tuple  # constant or None (free) per position

    def __post_init__(self):
        if len(self.pattern) != self.key[1]:
            raise ValueError(f"pattern length {len(self.pattern)} does not match {pred_label(self.key)}")

    @classmethod
    def free(cls, key):
        return cls(key, (None,) * key[1])

    @property
    def is_ground(self):
        return None not in self.pattern

    def __str__(self):
        args = ",".join("_" if v is None else repr(v) for v in self.pattern)
        return f"{self.key[0]}({args})" if self.key[1] else self.key[0]


def covers(general, specific):
    """True when pattern ``general`` subsumes ``specific`` position-wise."""
    return all(g is None or g == s for g, s in zip(general, specific))


def matches(row, pattern):
    return all(p is None or p == v for p, v in zip(pattern, row))


class CallTable:
    """Registry of completed calls, keeping only the most general patterns."""

    def __init__(self):
        self.ground = set()
        self.general = defaultdict(list)

    def __len__(self):
        return len(self.ground) + sum(len(v) for v in self.general.values())

    def subsumes(self, goal):
        if goal in self.ground:
            return True
        return any(covers(p, goal.pattern) for p in self.general.get(goal.key, ()))

    def add(self, goal):
        if self.subsumes(goal):
            return
        if goal.is_ground:
            self.ground.add(goal)
            return
        kept = [p for p in self.general[goal.key] if not covers(goal.pattern, p)]
        kept.append(goal.pattern)
        self.general[goal.key] = kept

    def clear(self):
        self.ground.clear()
        self.general.clear()


class AnswerTable:
    """Answers per predicate, with per-column indexes built on first bound lookup."""

    def __init__(self):
        self.tuples = defaultdict(set)
        self.size = 0
        self.written = set()  # predicates that received tuples in the last query
        self._index = {}  # (key, column) -> value -> [rows]

    def add(self, key, rows):
        table = self.tuples[key]
        new = [r for r in set(rows) if r not in table]
        if new:
            table.update(new)
            self.size += len(new)
            self.written.add(key)
            for i in range(key[1]):
                idx = self._index.get((key, i))
                if idx is not None:
                    for r in new:
                        idx[r[i]].append(r)
        return len(new)

    def lookup(self, goal):
        key = goal.key
        table = self.tuples.get(key, ())
        bound = [(i, v) for i, v in enumerate(goal.pattern) if v is not None]
        if not bound:
            return list(table)
        i, v = bound[0]
        idx = self._index.get((key, i))
        if idx is None:
            idx = self._index[(key, i)] = defaultdict(list)
            for r in table:
                idx[r[i]].append(r)
        rows = idx.get(v, ())
        if len(bound) == 1:
            return list(rows)
        rest = bound[1:]
        return [r for r in rows if all(r[j] == w for j, w in rest)]

    def discard(self, key):
        self.size -= len(self.tuples.pop(key, ()))
        for i in range(key[1]):
            self._index.pop((key, i), None)

    def predicates(self):
        return {k for k, v in self.tuples.items() if v}

    def clear(self):
        self.tuples.clear()
        self._index.clear()
        self.size = 0


@dataclass
class ExternalSource:
    handle: object
    relation: str
    columns: tuple


@dataclass
class Source:
    rules: list
    facts: object = None  # FactStore
    external: ExternalSource | None = None

    @property
    def extensional(self):
        return not self.rules


@dataclass
class _Context:
    evaluated: set = field(default_factory=set)
    calls: set = field(default_factory=set)
    fetched: dict = field(default_factory=dict)


def build_filter_query(goal, schema, dialect, relation=None):
    """``SELECT *`` over the relation with one equality per bound position."""
    columns = schema.column_names if hasattr(schema, "column_names") else tuple(schema)
    bound = [(c, v) for c, v in zip(columns, goal.pattern) if v is not None]
    where = column_equalities([v for _, v in bound], [c for c, _ in bound]) if bound else None
    return render_sql(Select(None, ((relation or goal.key[0], None),), where), dialect)


def eval_term(term, env):
    """Evaluate an arithmetic term; raises ArithmeticError on failure."""
    if isinstance(term, Var):
        return env[term.name]
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Func):
        args = [eval_term(a, env) for a in term.args]
        try:
            if term.name == "abs":
                return abs(args[0])
            return getattr(math, term.name)(*args)
        except (ValueError, OverflowError) as e:
            raise ArithmeticError(str(e)) from e
    left, right = eval_term(term.left, env), eval_term(term.right, env)
    if isinstance(left, str) or isinstance(right, str):
        raise ArithmeticError("arithmetic on a string")
    if term.op == "+":
        return left + right
    if term.op == "-":
        return left - right
    if term.op == "*":
        return left * right
    if right == 0:
        raise ArithmeticError("division by zero")
    return left / right


def _order_key(v):
    return (1, v) if isinstance(v, str) else (0, v)


def compare(op, left, right):
    if op == "=":
        return left == right
    if op == "\\=":
        return left != right
    a, b = _order_key(left), _order_key(right)
    if a[0] != b[0]:
        a, b = a[0], b[0]
    return {"<": a < b, "=<": a <= b, ">": a > b, ">=": a >= b}[op]


class Engine:
    def __init__(self, db):
        self.db = db
        self.flags = {name: True for name in OPTIMIZATIONS}
        self.answers = AnswerTable()
        self.calls = CallTable()
        self.counters = dict.fromkeys(COUNTERS, 0)
        self.temp_rules = {}
        self._sources = {}
        self._graph = None
        self._checked = {}

    # ------------------------------------------------------------ control

    def set_optimization(self, name, on):
        if name not in self.flags:
            raise DESError(f"Unknown optimization {name!r}; expected one of {', '.join(OPTIMIZATIONS)}")
        self.flags[name] = bool(on)
        self.clear_tables()

    def reset_counters(self):
        self.counters = dict.fromkeys(COUNTERS, 0)

    def clear_tables(self):
        self.answers.clear()
        self.calls.clear()

    def invalidate(self):
        """Program or external state changed: drop every derived structure."""
        self.clear_tables()
        self._sources.clear()
        self._graph = None
        self._checked.clear()

    # ------------------------------------------------------------ sources

    def source(self, key):
        src = self._sources.get(key)
        if src is None:
            src = self._sources[key] = self._build_source(key)
        return src

    def _build_source(self, key):
        db = self.db
        rules = list(db.local_rules(key)) + self.temp_rules.get(key, [])
        external = None
        rec = db.records.get(key)
        if rec is not None:
            external = ExternalSource(db.connections[rec.connection], rec.view_name, rec.schema.column_names)
        else:
            raw = db.raw_relation(key)
            if raw is not None:
                conn, rel = raw
                external = ExternalSource(db.connections[conn], rel.name, rel.columns)
        return Source(rules, db.local_facts(key), external)

    def clause_sources(self, goal=None):
        """Clauses answering ``goal``: local rules, local facts and external rows as unit clauses.

        With ``goal`` None every external relation is enumerated.
        """
        if goal is None:
            for key, (conn, rel) in sorted(self.db.external_relations().items()):
                ext = ExternalSource(self.db.connections[conn], rel.name, rel.columns)
                for row in self._fetch(ext, Goal.free(key)):
                    yield _unit(key[0], row)
            return
        src = self.source(goal.key)
        for rule in src.rules:
            if _head_unifies(rule.head, goal.pattern):
                yield rule
        if src.facts is not None:
            for row in src.facts.match(goal.pattern):
                yield _unit(goal.key[0], row)
        if src.external is not None:
            for row in self._fetch(src.external, goal):
                yield _unit(goal.key[0], row)

    def _fetch(self, ext, goal):
        sql = build_filter_query(goal, ext.columns, ext.handle.dialect, ext.relation)
        self.counters["fetches"] += 1
        try:
            with ext.handle.query_fetch(sql) as cur:
                return [tuple(r) for r in cur]
        except BackendError:
            self.invalidate()
            raise

    # ------------------------------------------------------------ analysis

    def graph(self):
        if self._graph is None:
            rules = list(self.db.all_local_rules())
            for rs in self.temp_rules.values():
                rules.extend(rs)
            self._graph = build_pdg(rules)
        return self._graph

    def _analyse(self, key):
        """Check stratification of the relevant program; returns whether it is acyclic."""
        hit = self._checked.get(key)
        if hit is not None:
            return hit
        g = self.graph()
        reach = g.reachable(key)
        sub = PredicateDependencyGraph(
            set(reach), {e: n for e, n in g.edges.items() if e[0] in reach})
        stratify(sub)
        acyclic = all(len(c) == 1 for c in sub.sccs()) and not any(a == b for a, b in sub.edges)
        self._checked[key] = acyclic
        return acyclic

    # ------------------------------------------------------------ solving

    def solve(self, goal):
        """Answers of ``goal`` as a set of ground tuples."""
        if not self._known(goal.key):
            raise DESError(f"Unknown predicate {pred_label(goal.key)}")
        self._begin_query()
        try:
            return set(self._solve_complete(goal))
        except BackendError:
            self.invalidate()
            raise

    def solve_temporary(self, rules, goal):
        """Solve ``goal`` with extra rules visible for this query only."""
        for rule in rules:
            self.temp_rules.setdefault(rule.key, []).append(rule)
        self._sources.pop(goal.key, None)
        self._graph = None
        self._checked.clear()
        try:
            self._begin_query()
            return set(self._solve_complete(goal))
        finally:
            self.temp_rules.clear()
            self._sources.pop(goal.key, None)
            self._graph = None
            self._checked.clear()
            self.answers.discard(goal.key)
            self.calls.general.pop(goal.key, None)
            self.calls.ground = {g for g in self.calls.ground if g.key != goal.key}

    def _known(self, key):
        db = self.db
        if key in self.temp_rules or key in db.records or key in db.rules or key in db.facts:
            return True
        if db.catalog.get(key) is not None or db.raw_relation(key) is not None:
            return True
        return key in self.graph().nodes

    def _begin_query(self):
        self.answers.written = set()
        if not self.flags["complete_computations"]:
            self.clear_tables()

    def _solve_complete(self, goal):
        if self.calls.subsumes(goal):
            return self.answers.lookup(goal)
        src = self.source(goal.key)
        acyclic = self._analyse(goal.key)
        if self.flags["extensional_fetch"] and src.extensional:
            return self._linear(goal, src)
        if self.flags["nonrecursive_cache"] and acyclic:
            return self._single_pass(goal)
        return self._fixpoint(goal)

    def _linear(self, goal, src):
        self.counters["linear_passes"] += 1
        rows = set(self._base_rows(goal, src, None))
        self.answers.add(goal.key, rows)
        self.calls.add(goal)
        return list(rows)

    def _base_rows(self, goal, src, fetched):
        rows = []
        if src.facts is not None:
            rows.extend(src.facts.match(goal.pattern))
        if src.external is not None:
            ext = fetched.get(goal) if fetched is not None else None
            if ext is None:
                ext = self._fetch(src.external, goal)
                if fetched is not None:
                    fetched[goal] = ext
            rows.extend(ext)
        self.counters["resolutions"] += len(rows)
        return rows

    def _fixpoint(self, goal):
        ctx = _Context()

        def sub(call):
            if self.calls.subsumes(call):
                return self.answers.lookup(call)
            src = self.source(call.key)
            if self.flags["extensional_fetch"] and src.extensional:
                return self._linear(call, src)
            if call not in ctx.evaluated:
                ctx.evaluated.add(call)
                ctx.calls.add(call)
                self.answers.add(call.key, self._eval_call(call, src, sub, self._negated, ctx.fetched))
            return self.answers.lookup(call)

        while True:
            self.counters["iterations"] += 1
            before = self.answers.size
            ctx.evaluated = set()
            sub(goal)
            if self.answers.size == before:
                break
        for call in ctx.calls:
            self.calls.add(call)
        return self.answers.lookup(goal)

    def _negated(self, goal):
        return bool(self._solve_complete(goal))

    def _single_pass(self, goal):
        """Non-recursive goal: one pass with a transient memo; only the goal is tabled."""
        self.counters["iterations"] += 1
        memo = {}
        general = defaultdict(list)
        fetched = {}

        def sub(call):
            if self.calls.subsumes(call):
                return self.answers.lookup(call)
            rows = memo.get(call)
            if rows is not None:
                return rows
            for pattern, prows in general.get(call.key, ()):
                if covers(pattern, call.pattern):
                    return [r for r in prows if matches(r, call.pattern)]
            src = self.source(call.key)
            if src.extensional and self.flags["extensional_fetch"]:
                self.counters["linear_passes"] += 1
            rows = list(set(self._eval_call(call, src, sub, neg, fetched)))
            memo[call] = rows
            if not call.is_ground:
                general[call.key].append((call.pattern, rows))
            return rows

        def neg(call):
            return bool(sub(call))

        rows = sub(goal)
        self.answers.add(goal.key, rows)
        self.calls.add(goal)
        return rows

    def _eval_call(self, goal, src, sub, neg, fetched):
        out = set(self._base_rows(goal, src, fetched))
        for rule in src.rules:
            self.counters["resolutions"] += 1
            for row in self._fire(rule, goal.pattern, sub, neg):
                out.add(row)
        return out

    # ------------------------------------------------------------ rule bodies

    def _fire(self, rule, pattern, sub, neg):
        env = {}
        for arg, value in zip(rule.head.args, pattern):
            if value is None:
                continue
            if isinstance(arg, Const):
                if arg.value != value:
                    return
            elif arg.name in env:
                if env[arg.name] != value:
                    return
            else:
                env[arg.name] = value
        head = rule.head.args
        if head and all(isinstance(a, Var) for a in head):
            get = itemgetter(*(a.name for a in head))
            project = get if len(head) > 1 else (lambda e: (get(e),))
        else:
            def project(e):
                return tuple(a.value if isinstance(a, Const) else e[a.name] for a in head)
        check = any(v is not None for v in pattern)
        for e in self._body(list(rule.literals), env, sub, neg):
            row = project(e)
            if not check or matches(row, pattern):
                yield row

    def _body(self, lits, env, sub, neg):
        if not lits:
            yield env
            return
        for i, lit in enumerate(lits):
            if not isinstance(lit, Pos) and _ready(lit, env):
                rest = lits[:i] + lits[i + 1:]
                e = self._builtin(lit, env, neg)
                if e is not None:
                    yield from self._body(rest, e, sub, neg)
                return
        for i, lit in enumerate(lits):
            if isinstance(lit, Pos):
                break
        else:
            raise SafetyError("Unsafe rule body: a built-in has unbound variables")
        rest = lits[:i] + lits[i + 1:]
        args = lit.atom.args
        pattern = tuple(a.value if isinstance(a, Const) else env.get(a.name) for a in args)
        # rows already match the bound positions; only fresh variables need work
        assign, repeats, first = [], [], {}
        for j, a in enumerate(args):
            if isinstance(a, Var) and a.name not in env:
                if a.name in first:
                    repeats.append((first[a.name], j))
                else:
                    first[a.name] = j
                    assign.append((a.name, j))
        rows = sub(Goal(lit.atom.key, pattern))
        if not assign:
            if rows:
                yield from self._body(rest, env, sub, neg)
            return
        # one scratch environment per level; consumers finish with it before the next row
        e = dict(env)
        for row in rows:
            if repeats and any(row[j] != row[k] for j, k in repeats):
                continue
            for a, j in assign:
                e[a] = row[j]
            if rest:
                yield from self._body(rest, e, sub, neg)
            else:
                yield e

    def _builtin(self, lit, env, neg):
        """Returns the extended environment, or None on failure."""
        if isinstance(lit, Neg):
            pattern = tuple(a.value if isinstance(a, Const) else env[a.name] for a in lit.atom.args)
            return None if neg(Goal(lit.atom.key, pattern)) else env
        try:
            if isinstance(lit, Cmp):
                return env if compare(lit.op, eval_term(lit.left, env), eval_term(lit.right, env)) else None
            value = eval_term(lit.expr, env)
        except ArithmeticError:
            return None
        name = lit.var.name
        if name in env:
            return env if env[name] == value else None
        e = dict(env)
        e[name] = value
        return e


def _ready(lit, env):
    if isinstance(lit, Is):
        return all(v.name in env for v in term_vars(lit.expr))
    if isinstance(lit, Cmp):
        return all(v.name in env for v in term_vars(lit.left)) and all(v.name in env for v in term_vars(lit.right))
    return all(v.name in env for a in lit.atom.args for v in term_vars(a))


def _head_unifies(head, pattern):
    seen = {}
    for arg, value in zip(head.args, pattern):
        if value is None:
            continue
        if isinstance(arg, Const) and arg.value != value:
            return False
        if isinstance(arg, Var):
            if seen.get(arg, value) != value:
                return False
            seen[arg] = value
    return True


def _unit(pred, row):
    return Rule(Atom(pred, tuple(Const(v) for v in row)))
