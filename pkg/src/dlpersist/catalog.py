"""Predicate schemas, type inference, dependency graphs, stratification and safety."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .errors import StratificationError, TypeConsistencyError
from .syntax import (
    Cmp, ColumnType, Const, Func, Is, Neg, Pos, PredSpec, Var, body_atoms, normalize, render_rule,
    term_vars,
)

DEFAULT_STRING_SIZE = 200
FLOAT_FUNCTIONS = frozenset({"sin", "cos", "tan"})


def pred_label(key):
    return f"{key[0]}/{key[1]}"


@dataclass(frozen=True)
class PredicateSchema:
    name: str
    columns: tuple  # ((arg_name, ColumnType), ...)

    def __post_init__(self):
        if not self.columns:
            raise ValueError("a schema needs at least one column")
        names = [n for n, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate argument names in schema of {self.name}")

    @property
    def arity(self):
        return len(self.columns)

    @property
    def key(self):
        return (self.name, self.arity)

    @property
    def column_names(self):
        return tuple(n for n, _ in self.columns)

    @property
    def types(self):
        return tuple(t for _, t in self.columns)

    @classmethod
    def from_spec(cls, spec: PredSpec):
        if spec.columns is None or any(t is None for _, t in spec.columns):
            raise TypeConsistencyError(f"schema of {spec} is not fully typed")
        return cls(spec.name, tuple(spec.columns))

    def same_types(self, other):
        return self.arity == other.arity and all(
            a.same_kind(b) for a, b in zip(self.types, other.types))

    def __str__(self):
        return f"{self.name}({','.join(f'{n}:{t}' for n, t in self.columns)})"


def value_type(value):
    if isinstance(value, bool):
        raise TypeConsistencyError("booleans are not supported constants")
    if isinstance(value, int):
        return ColumnType("int")
    if isinstance(value, float):
        return ColumnType("float")
    return ColumnType("string")


def check_tuple(schema, values):
    """Raise unless ``values`` conforms to ``schema`` column by column."""
    if len(values) != schema.arity:
        raise TypeConsistencyError(f"arity mismatch for {pred_label(schema.key)}")
    for i, (v, (name, ctype)) in enumerate(zip(values, schema.columns), 1):
        if value_type(v).kind != ctype.kind:
            raise TypeConsistencyError(
                f"Type mismatch: argument {i} ({name}) of {schema.name} expects {ctype.kind}, "
                f"got {v!r}")


# ---------------------------------------------------------------- inference


class _UnionFind:
    def __init__(self):
        self.parent = {}
        self.kind = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def kind_of(self, x):
        return self.kind.get(self.find(x))

    def set_kind(self, x, kind, where):
        r = self.find(x)
        old = self.kind.get(r)
        if old is None:
            self.kind[r] = kind
        elif old != kind:
            raise TypeConsistencyError(f"Type mismatch {where}: expected {old}, found {kind}")

    def union(self, a, b, where):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        ka, kb = self.kind.get(ra), self.kind.get(rb)
        if ka is not None and kb is not None and ka != kb:
            raise TypeConsistencyError(f"Type mismatch {where}: expected {ka}, found {kb}")
        self.parent[rb] = ra
        if ka is None and kb is not None:
            self.kind[ra] = kb


def _closure(targets, rules):
    seen, stack = set(), list(targets)
    while stack:
        k = stack.pop()
        if k in seen:
            continue
        seen.add(k)
        for r in rules.get(k, ()):
            for atom, _ in body_atoms(r):
                stack.append(atom.key)
    return seen


def infer_types(targets, rules, known, require=True):
    """Infer schemas for ``targets`` and every predicate they depend on.

    ``rules`` maps predicate keys to their rules (facts included); ``known``
    maps keys to schemas that are fixed (declarations, external relations,
    persistent predicates).  Returns a dict with a schema for each predicate
    of the dependency closure that could be typed.  With ``require`` set an
    untypable target raises.
    """
    preds = _closure(targets, rules)
    uf = _UnionFind()
    for key in preds:
        schema = known.get(key)
        if schema is not None:
            for i, t in enumerate(schema.types):
                uf.set_kind(("slot", key, i), t.kind, f"in schema of {pred_label(key)}")

    pending = []
    for key in sorted(preds):
        for ri, rule in enumerate(rules.get(key, ())):
            text = render_rule(rule)
            tag = ("rule", key, ri)

            def bind(atom, where):
                for i, arg in enumerate(atom.args):
                    slot = ("slot", atom.key, i)
                    place = f"at argument {i + 1} of {pred_label(atom.key)} in '{text}' {where}"
                    if isinstance(arg, Var):
                        uf.union(slot, (tag, arg.name), place)
                    else:
                        uf.set_kind(slot, value_type(arg.value).kind, place)

            bind(rule.head, "(head)")
            for alt_rule in normalize(rule):
                for lit in alt_rule.literals:
                    if isinstance(lit, (Pos, Neg)):
                        bind(lit.atom, "(body)")
                    elif isinstance(lit, Is):
                        pending.append((tag, text, lit.var, lit.expr))
                    else:
                        pending.append((tag, text, None, lit))

    def expr_kind(tag, text, term):
        if isinstance(term, Const):
            return value_type(term.value).kind
        if isinstance(term, Var):
            return uf.kind_of((tag, term.name))
        if isinstance(term, Func):
            kinds = [expr_kind(tag, text, a) for a in term.args]
            if any(k == "string" for k in kinds):
                raise TypeConsistencyError(f"Type mismatch in '{text}': {term.name} needs numbers")
            if term.name in FLOAT_FUNCTIONS:
                return "float"
            return None if None in kinds else kinds[0]
        kl, kr = expr_kind(tag, text, term.left), expr_kind(tag, text, term.right)
        if "string" in (kl, kr):
            raise TypeConsistencyError(f"Type mismatch in '{text}': arithmetic on a string")
        if term.op == "/":
            return "float"
        if kl is None or kr is None:
            return None
        return "float" if "float" in (kl, kr) else "int"

    progress = True
    while progress:
        progress = False
        for tag, text, var, item in pending:
            if var is None:
                continue
            kind = expr_kind(tag, text, item)
            if kind is not None and uf.kind_of((tag, var.name)) is None:
                uf.set_kind((tag, var.name), kind, f"in '{text}'")
                progress = True
            elif kind is not None:
                uf.set_kind((tag, var.name), kind, f"at 'is' in '{text}'")
    for tag, text, var, item in pending:
        if var is None:
            kl, kr = expr_kind(tag, text, item.left), expr_kind(tag, text, item.right)
            if kl and kr and (kl == "string") != (kr == "string"):
                raise TypeConsistencyError(
                    f"Type mismatch in comparison of '{text}': {kl} vs {kr}")

    out = {}
    for key in preds:
        if key[1] == 0:
            continue
        schema = known.get(key)
        if schema is not None:
            out[key] = schema
            continue
        kinds = [uf.kind_of(("slot", key, i)) for i in range(key[1])]
        if None in kinds:
            if require and key in targets:
                missing = kinds.index(None) + 1
                raise TypeConsistencyError(
                    f"Cannot infer the type of argument {missing} of {pred_label(key)}; "
                    f"declare its type")
            continue
        cols = tuple(
            (f"a{i + 1}", ColumnType(k, DEFAULT_STRING_SIZE if k == "string" else None))
            for i, k in enumerate(kinds))
        out[key] = PredicateSchema(key[0], cols)
    return out


class Catalog:
    """Declared predicate types."""

    def __init__(self):
        self.declared = {}

    def get(self, key):
        return self.declared.get(key)

    def declare_type(self, schema, rules=None, known=None):
        """Record a declaration after checking it against the loaded program.

        ``rules`` (key -> rules, facts included) and ``known`` (key -> fixed
        schemas) describe the current database for the consistency check.
        """
        old = self.declared.get(schema.key)
        if old == schema:
            return
        if old is not None:
            raise TypeConsistencyError(
                f"Conflicting type declaration for {pred_label(schema.key)}: "
                f"already declared as {old}")
        rules = rules or {}
        known = dict(known or {})
        prev_known = known.get(schema.key)
        if prev_known is not None and not prev_known.same_types(schema):
            raise TypeConsistencyError(
                f"Conflicting type declaration for {pred_label(schema.key)}: "
                f"it is already typed as {prev_known}")
        for rule in rules.get(schema.key, ()):
            if rule.is_fact:
                check_tuple(schema, tuple(a.value for a in rule.head.args))
        known[schema.key] = schema
        callers = {k for k, rs in rules.items()
                   if any(a.key == schema.key for r in rs for a, _ in body_atoms(r))}
        infer_types({schema.key} | callers, rules, known, require=False)
        self.declared[schema.key] = schema

    def remove(self, key):
        self.declared.pop(key, None)


# ---------------------------------------------------------------- dependency graph


@dataclass
class PredicateDependencyGraph:
    nodes: set = field(default_factory=set)
    edges: dict = field(default_factory=dict)  # (caller, callee) -> negative?

    def callees(self, key):
        return [b for (a, b) in self.edges if a == key]

    def is_extensional(self, key):
        return not any(a == key for (a, _) in self.edges)

    def successors(self):
        succ = defaultdict(list)
        for (a, b) in self.edges:
            succ[a].append(b)
        return succ

    def reachable(self, key):
        succ = self.successors()
        seen, stack = {key}, [key]
        while stack:
            for b in succ.get(stack.pop(), ()):
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return seen

    def sccs(self):
        """Strongly connected components, callees before callers."""
        succ = self.successors()
        index, low, on_stack, stack, out = {}, {}, set(), [], []
        counter = [0]

        def visit(v):
            work = [(v, iter(succ.get(v, ())))]
            index[v] = low[v] = counter[0]
            counter[0] += 1
            stack.append(v)
            on_stack.add(v)
            while work:
                node, it = work[-1]
                advanced = False
                for w in it:
                    if w not in index:
                        index[w] = low[w] = counter[0]
                        counter[0] += 1
                        stack.append(w)
                        on_stack.add(w)
                        work.append((w, iter(succ.get(w, ()))))
                        advanced = True
                        break
                    if w in on_stack:
                        low[node] = min(low[node], index[w])
                if advanced:
                    continue
                work.pop()
                if work:
                    parent = work[-1][0]
                    low[parent] = min(low[parent], low[node])
                if low[node] == index[node]:
                    comp = set()
                    while True:
                        w = stack.pop()
                        on_stack.discard(w)
                        comp.add(w)
                        if w == node:
                            break
                    out.append(frozenset(comp))

        for v in sorted(self.nodes):
            if v not in index:
                visit(v)
        return out

    def component_map(self):
        return {v: comp for comp in self.sccs() for v in comp}


def build_pdg(rules, externals=()):
    """Dependency graph of ``rules`` (an iterable of rules) plus extra nodes."""
    g = PredicateDependencyGraph()
    g.nodes.update(externals)
    for rule in rules:
        g.nodes.add(rule.key)
        for atom, negated in body_atoms(rule):
            g.nodes.add(atom.key)
            edge = (rule.key, atom.key)
            g.edges[edge] = g.edges.get(edge, False) or negated
    return g


def stratify(pdg):
    """Minimal stratum numbers (starting at 1), or raise on a negative cycle."""
    comps = pdg.sccs()
    comp_of = {v: c for c in comps for v in c}
    for (a, b), neg in pdg.edges.items():
        if neg and comp_of[a] is comp_of[b]:
            raise StratificationError(
                f"Program is not stratifiable: {pred_label(a)} depends negatively on "
                f"{pred_label(b)} through a cycle")
    stratum = {}
    succ = defaultdict(list)
    for (a, b), neg in pdg.edges.items():
        succ[a].append((b, neg))
    for comp in comps:  # callees come first
        s = 1
        for v in comp:
            for b, neg in succ.get(v, ()):
                if b in comp:
                    continue
                s = max(s, stratum[b] + (1 if neg else 0))
        for v in comp:
            stratum[v] = s
    return stratum


def is_recursive(key, pdg):
    succ = pdg.successors()
    seen, stack = set(), list(succ.get(key, ()))
    while stack:
        v = stack.pop()
        if v == key:
            return True
        if v not in seen:
            seen.add(v)
            stack.extend(succ.get(v, ()))
    return False


# ---------------------------------------------------------------- safety


@dataclass(frozen=True)
class SafetyReport:
    safe: bool
    unbound: tuple = ()

    def __bool__(self):
        return self.safe


def bound_variables(literals):
    """Variables bound by positive atoms, extended through ``is`` chains."""
    bound = set()
    for lit in literals:
        if isinstance(lit, Pos):
            bound.update(v for a in lit.atom.args for v in term_vars(a))
    changed = True
    while changed:
        changed = False
        for lit in literals:
            if isinstance(lit, Is) and lit.var not in bound:
                if all(v in bound for v in term_vars(lit.expr)):
                    bound.add(lit.var)
                    changed = True
    return bound


def is_safe(rule):
    unbound = []
    for alt in normalize(rule):
        lits = alt.literals
        bound = bound_variables(lits)
        needed = [v for a in alt.head.args for v in term_vars(a)]
        for lit in lits:
            if isinstance(lit, Neg):
                needed.extend(v for a in lit.atom.args for v in term_vars(a))
            elif isinstance(lit, Cmp):
                needed.extend(term_vars(lit.left))
                needed.extend(term_vars(lit.right))
            elif isinstance(lit, Is):
                needed.append(lit.var)
                needed.extend(term_vars(lit.expr))
        for v in needed:
            if v not in bound and v.name not in unbound:
                unbound.append(v.name)
    return SafetyReport(not unbound, tuple(unbound))
