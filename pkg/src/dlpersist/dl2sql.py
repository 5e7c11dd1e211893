"""Datalog to SQL compilation.

Rules that are safe, non-recursive and drawn from the supported fragment
(positive atoms with variable/constant arguments, negated atoms, comparisons,
``is`` with arithmetic) are compiled into a backend-neutral SQL tree which is
rendered per dialect.  Every SQL statement the system sends is produced by
:func:`render_sql`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .errors import CompileError
from .syntax import Arith, Cmp, Const, Func, Is, Neg, Pos, Rule, Var, functions_used

# ---------------------------------------------------------------- SQL tree


@dataclass(frozen=True)
class Col:
    alias: str | None
    column: str


@dataclass(frozen=True)
class Lit:
    value: Union[int, float, str]


@dataclass(frozen=True)
class Bin:
    op: str
    left: "SqlExpr"
    right: "SqlExpr"


@dataclass(frozen=True)
class Fn:
    name: str
    args: tuple


SqlExpr = Union[Col, Lit, Bin, Fn]


@dataclass(frozen=True)
class Comparison:
    op: str  # = <> < <= > >=
    left: SqlExpr
    right: SqlExpr


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class NotExists:
    query: "Select"


@dataclass(frozen=True)
class TrueCond:
    pass


SqlCond = Union[Comparison, And, NotExists, TrueCond]


@dataclass(frozen=True)
class Select:
    projections: tuple | None  # ((expr, alias | None), ...); None renders as *
    from_: tuple  # ((relation, alias | None), ...)
    where: SqlCond | None = None
    order_by: tuple = ()


@dataclass(frozen=True)
class FromlessSelect:
    projections: tuple
    where: SqlCond | None = None


@dataclass(frozen=True)
class UnionAll:
    branches: tuple


SqlQuery = Union[Select, FromlessSelect, UnionAll]


@dataclass(frozen=True)
class CreateTable:
    name: str
    columns: tuple  # ((name, ColumnType or "text"), ...)


@dataclass(frozen=True)
class CreateView:
    name: str
    columns: tuple
    query: SqlQuery


@dataclass(frozen=True)
class InsertValues:
    table: str
    values: tuple


@dataclass(frozen=True)
class Delete:
    table: str
    where: SqlCond | None = None


@dataclass(frozen=True)
class DropTable:
    name: str


@dataclass(frozen=True)
class DropView:
    name: str


def conjoin(conds):
    conds = tuple(conds)
    if not conds:
        return None
    return conds[0] if len(conds) == 1 else And(conds)


def column_equalities(values, columns, alias=None):
    return conjoin(Comparison("=", Col(alias, c), Lit(v)) for c, v in zip(columns, values))


# ---------------------------------------------------------------- classification


@dataclass(frozen=True)
class RuleClass:
    kind: str  # translatable | local_recursive | local_unsupported
    reason: str = ""

    @property
    def translatable(self):
        return self.kind == "translatable"


TRANSLATABLE = RuleClass("translatable")
LOCAL_RECURSIVE = RuleClass("local_recursive", "recursive rule")


def classify_rule(rule, pdg, functions=None, pred_ok=None, components=None):
    """Decide where ``rule`` is computed.

    ``functions`` is the target dialect's supported function set (None means
    no restriction).  ``pred_ok(key)`` tells whether a body predicate's full
    meaning is available inside the target database.
    """
    comps = components if components is not None else pdg.component_map()
    head_comp = comps.get(rule.key, frozenset({rule.key}))
    lits = rule.literals
    for lit in lits:
        if isinstance(lit, (Pos, Neg)) and (lit.atom.key == rule.key or lit.atom.key in head_comp):
            return LOCAL_RECURSIVE
    if rule.head.is_propositional:
        return RuleClass("local_unsupported", "propositional head")
    for lit in lits:
        if isinstance(lit, (Pos, Neg)) and lit.atom.is_propositional:
            return RuleClass("local_unsupported", "propositional body atom")
    if functions is not None:
        missing = sorted(functions_used(rule) - set(functions))
        if missing:
            return RuleClass("local_unsupported",
                             f"function {', '.join(missing)} not supported by the database")
    if pred_ok is not None:
        for lit in lits:
            if isinstance(lit, (Pos, Neg)) and not pred_ok(lit.atom.key):
                return RuleClass(
                    "local_unsupported",
                    f"{lit.atom.pred}/{len(lit.atom.args)} is not computed by the database")
    return TRANSLATABLE


# ---------------------------------------------------------------- translation

_CMP_SQL = {"=": "=", "\\=": "<>", "<": "<", "=<": "<=", ">": ">", ">=": ">="}


def _columns(columns_of, key):
    cols = columns_of(key) if callable(columns_of) else columns_of.get(key)
    if cols is None:
        raise CompileError(f"unknown schema for {key[0]}/{key[1]}")
    return tuple(cols)


def dx_translate(rule: Rule, columns_of) -> SqlQuery:
    """Compile one normalized, safe, non-recursive rule into a SELECT."""
    lits = rule.literals
    env = {}
    conds = []
    guards = []
    from_ = []
    n = 0

    def expr(term):
        if isinstance(term, Var):
            if term not in env:
                raise CompileError(f"unsafe rule: variable {term.name} is not bound")
            return env[term]
        if isinstance(term, Const):
            return Lit(term.value)
        if isinstance(term, Func):
            return Fn(term.name, tuple(expr(a) for a in term.args))
        left, right = expr(term.left), expr(term.right)
        if term.op == "/":
            guards.append(Comparison("<>", right, Lit(0)))
            return Bin("/", Bin("*", Lit(1.0), left), right)
        return Bin(term.op, left, right)

    for lit in lits:
        if not isinstance(lit, Pos):
            continue
        n += 1
        alias = f"rel{n}"
        from_.append((lit.atom.pred, alias))
        for col, arg in zip(_columns(columns_of, lit.atom.key), lit.atom.args):
            ref = Col(alias, col)
            if isinstance(arg, Var):
                if arg in env:
                    conds.append(Comparison("=", env[arg], ref))
                else:
                    env[arg] = ref
            else:
                conds.append(Comparison("=", ref, Lit(arg.value)))

    pending = [lit for lit in lits if isinstance(lit, Is)]
    while pending:
        ready = [lit for lit in pending
                 if all(v in env for v in _vars(lit.expr))]
        if not ready:
            raise CompileError("unsafe rule: 'is' operands are not bound")
        lit = ready[0]
        pending.remove(lit)
        value = expr(lit.expr)
        if lit.var in env:
            conds.append(Comparison("=", env[lit.var], value))
        else:
            env[lit.var] = value

    for lit in lits:
        if isinstance(lit, Cmp):
            conds.append(Comparison(_CMP_SQL[lit.op], expr(lit.left), expr(lit.right)))

    for lit in lits:
        if not isinstance(lit, Neg):
            continue
        n += 1
        alias = f"rel{n}"
        sub = []
        for col, arg in zip(_columns(columns_of, lit.atom.key), lit.atom.args):
            sub.append(Comparison("=", Col(alias, col), expr(arg)))
        conds.append(NotExists(Select(None, ((lit.atom.pred, alias),), conjoin(sub))))

    projections = tuple((expr(a), None) for a in rule.head.args)
    where = conjoin(guards + conds)
    if not from_:
        return FromlessSelect(projections, where)
    return Select(projections, tuple(from_), where)


def _vars(term):
    if isinstance(term, Var):
        yield term
    elif isinstance(term, Arith):
        yield from _vars(term.left)
        yield from _vars(term.right)
    elif isinstance(term, Func):
        for a in term.args:
            yield from _vars(a)


def translate_fact(fact: Rule) -> FromlessSelect:
    if not fact.is_fact or not fact.head.is_ground():
        raise CompileError(f"not a ground fact: {fact}")
    if fact.head.is_propositional:
        raise CompileError("propositional facts have no SQL counterpart")
    return FromlessSelect(tuple((Lit(a.value), None) for a in fact.head.args))


def table_name(pred):
    return f"{pred}_des_table"


def metadata_name(pred):
    return f"{pred}_des_metadata"


def dl_to_sql(key, rules, columns_of) -> SqlQuery:
    """View body: the fact table, then one branch per translatable rule.

    Rule branches come newest first, so a freshly asserted rule lands right
    after the table branch.
    """
    base = Select(None, ((table_name(key[0]), None),))
    branches = [base] + [dx_translate(r, columns_of) for r in reversed(list(rules))]
    return base if len(branches) == 1 else UnionAll(tuple(branches))


# ---------------------------------------------------------------- rendering


def _literal(value, dialect, in_arith=False):
    if isinstance(value, bool):
        raise CompileError("booleans have no SQL literal")
    if isinstance(value, (int, float)):
        text = repr(value)
        if in_arith and value < 0:
            return f"({text})"
        return text
    return "'" + value.replace("'", "''") + "'"


def _expr(e, d, in_arith=False):
    if isinstance(e, Col):
        if e.alias is None:
            return d.quote(e.column)
        return f"{d.quote(e.alias)}.{d.quote(e.column)}"
    if isinstance(e, Lit):
        return _literal(e.value, d, in_arith)
    if isinstance(e, Fn):
        sql_name = d.functions.get(e.name)
        if sql_name is None:
            raise CompileError(f"function {e.name} is not supported by dialect {d.name}")
        return f"{sql_name}({','.join(_expr(a, d) for a in e.args)})"
    return f"({_expr(e.left, d, True)}{e.op}{_expr(e.right, d, True)})"


def _cond(c, d):
    if isinstance(c, Comparison):
        return f"{_expr(c.left, d)}{c.op}{_expr(c.right, d)}"
    if isinstance(c, And):
        return " AND ".join(_cond(i, d) for i in c.items)
    if isinstance(c, NotExists):
        return f"NOT EXISTS ({_query(c.query, d)})"
    return "1=1"


def _query(q, d):
    if isinstance(q, Select):
        if q.projections is None:
            proj = "*"
        else:
            proj = ",".join(_expr(e, d) + (f" AS {d.quote(a)}" if a else "")
                            for e, a in q.projections)
        frm = ",".join(d.quote(r) + (f" AS {d.quote(a)}" if a else "") for r, a in q.from_)
        text = f"SELECT {proj} FROM {frm}"
        if q.where is not None:
            text += f" WHERE {_cond(q.where, d)}"
        if q.order_by:
            text += " ORDER BY " + ",".join(_expr(e, d) for e in q.order_by)
        return text
    if isinstance(q, FromlessSelect):
        text = "SELECT " + ",".join(_expr(e, d) for e, _ in q.projections)
        if d.requires_dual:
            text += f" FROM {d.quote(d.dual_table)}"
        if q.where is not None:
            text += f" WHERE {_cond(q.where, d)}"
        return text
    if isinstance(q, UnionAll):
        return " UNION ALL ".join(_query(b, d) for b in q.branches)
    raise CompileError(f"not a query: {q!r}")


def _type_name(t, d):
    if t == "text":
        return d.type_names["text"]
    return d.type_name(t)


def render_sql(node, dialect) -> str:
    """Render a query or statement as SQL text for ``dialect``."""
    d = dialect
    if isinstance(node, (Select, FromlessSelect, UnionAll)):
        return _query(node, d)
    if isinstance(node, CreateView):
        head = f"CREATE VIEW {d.quote(node.name)}({','.join(d.quote(c) for c in node.columns)}) AS"
        branches = node.query.branches if isinstance(node.query, UnionAll) else (node.query,)
        body = " UNION ALL\n".join("  " + _query(b, d) for b in branches)
        return f"{head}\n{body};"
    if isinstance(node, CreateTable):
        cols = ",".join(f"{d.quote(c)} {_type_name(t, d)}" for c, t in node.columns)
        return f"CREATE TABLE {d.quote(node.name)}({cols})"
    if isinstance(node, InsertValues):
        return f"INSERT INTO {d.quote(node.table)} VALUES({','.join(_literal(v, d) for v in node.values)})"
    if isinstance(node, Delete):
        text = f"DELETE FROM {d.quote(node.table)}"
        if node.where is not None:
            text += f" WHERE {_cond(node.where, d)}"
        return text
    if isinstance(node, DropTable):
        return f"DROP TABLE {d.quote(node.name)}"
    if isinstance(node, DropView):
        return f"DROP VIEW {d.quote(node.name)}"
    raise CompileError(f"cannot render {node!r}")
