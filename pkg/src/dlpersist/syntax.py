"""Datalog abstract syntax, parser and renderers.

Bodies are kept in a small "conjunction of disjunctions" form: a rule body is a
tuple of groups, each group is a tuple of alternatives, and each alternative is
a tuple of literals.  A group with a single alternative is always split into
one group per literal, so a disjunction-free body is simply a tuple of
singleton groups.  This keeps structural equality meaningful after parsing.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import ParseError

FUNCTIONS = frozenset({"sin", "cos", "tan", "abs"})
ARITH_OPS = ("+", "-", "*", "/")
CMP_OPS = ("=", "\\=", "<", "=<", ">", ">=")
KEYWORDS = frozenset({"not", "is"})


# ---------------------------------------------------------------- terms


@dataclass(frozen=True)
class Var:
    name: str

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Const:
    value: Union[int, float, str]

    def __str__(self):
        return render_value(self.value)


@dataclass(frozen=True)
class Arith:
    op: str
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Func:
    name: str
    args: tuple

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise ValueError(f"unknown arithmetic function {self.name}")


Term = Union[Var, Const, Arith, Func]


@dataclass(frozen=True)
class Atom:
    pred: str
    args: tuple = ()

    @property
    def key(self):
        return (self.pred, len(self.args))

    @property
    def is_propositional(self):
        return not self.args

    def is_ground(self):
        return all(isinstance(a, Const) for a in self.args)


# ---------------------------------------------------------------- literals


@dataclass(frozen=True)
class Pos:
    atom: Atom


@dataclass(frozen=True)
class Neg:
    atom: Atom


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Term
    right: Term


@dataclass(frozen=True)
class Is:
    var: Var
    expr: Term


Literal = Union[Pos, Neg, Cmp, Is]


@dataclass(frozen=True)
class Rule:
    head: Atom
    body: tuple = ()

    @classmethod
    def from_literals(cls, head, literals):
        return cls(head, tuple(((lit,),) for lit in literals))

    @property
    def key(self):
        return self.head.key

    @property
    def is_fact(self):
        return not self.body

    @property
    def is_normalized(self):
        return all(len(group) == 1 for group in self.body)

    @property
    def literals(self):
        """Body literals of a normalized rule, in source order."""
        if not self.is_normalized:
            raise ValueError("rule has disjunctions; normalize it first")
        return tuple(lit for group in self.body for lit in group[0])

    def __str__(self):
        return render_rule(self)


# ---------------------------------------------------------------- schemas


@dataclass(frozen=True)
class ColumnType:
    kind: str  # int | float | string
    size: int | None = None

    def __str__(self):
        if self.kind == "string" and self.size is not None:
            return f"string({self.size})"
        return self.kind

    def same_kind(self, other):
        return self.kind == other.kind


@dataclass(frozen=True)
class PredSpec:
    """``name/arity`` or ``name(arg:type, ...)`` as written in an assertion."""

    name: str
    arity: int
    columns: tuple | None = None  # ((arg_name, ColumnType | None), ...)

    @property
    def key(self):
        return (self.name, self.arity)

    def __str__(self):
        if self.columns is None:
            return f"{self.name}/{self.arity}"
        cols = ",".join(n if t is None else f"{n}:{t}" for n, t in self.columns)
        return f"{self.name}({cols})"


@dataclass(frozen=True)
class TypeDeclaration:
    spec: PredSpec


@dataclass(frozen=True)
class PersistenceAssertion:
    spec: PredSpec
    connection: str | None = None

    def __str__(self):
        if self.connection is None:
            return f":-persistent({self.spec})"
        return f":-persistent({self.spec},{self.connection})"


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>%[^\n]*)
  | (?P<num>\d+\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<str>'(?:[^']|'')*')
  | (?P<op>:-|=<|>=|\\=|[=<>+\-*/(),;.:])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text):
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        chunk = m.group()
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            line_start = pos + chunk.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------- parser


class _Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0
        self._anon = itertools.count(1)

    # token helpers
    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, offset=1):
        return self.tokens[min(self.i + offset, len(self.tokens) - 1)]

    def error(self, message, tok=None):
        tok = tok or self.tok
        return ParseError(message, tok.line, tok.col)

    def at(self, text):
        return self.tok.kind == "op" and self.tok.text == text

    def accept(self, text):
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            raise self.error(f"expected {text!r} but found {found!r}")

    def at_end(self):
        return self.tok.kind == "eof"

    # clauses
    def program(self):
        items = []
        while not self.at_end():
            items.append(self.clause())
            self.expect(".")
        return items

    def clause(self):
        if self.accept(":-"):
            return self.directive()
        head = self.atom()
        if self.accept(":-"):
            return Rule(head, self.body())
        return Rule(head)

    def directive(self):
        tok = self.tok
        if tok.kind != "name":
            raise self.error("expected a directive name")
        self.i += 1
        if tok.text == "type":
            self.expect("(")
            spec = self.pred_spec()
            self.expect(")")
            if spec.columns is None:
                raise self.error("a type declaration needs a schema", tok)
            return TypeDeclaration(spec)
        if tok.text == "persistent":
            self.expect("(")
            spec = self.pred_spec()
            connection = None
            if self.accept(","):
                connection = self.connection_name()
            self.expect(")")
            if spec.arity == 0:
                raise self.error("propositional predicates cannot be made persistent", tok)
            return PersistenceAssertion(spec, connection)
        raise self.error(f"unknown directive {tok.text!r}", tok)

    def connection_name(self):
        tok = self.tok
        if tok.kind in ("name", "var"):
            self.i += 1
            return tok.text
        if tok.kind == "str":
            self.i += 1
            return _unquote(tok.text)
        raise self.error("expected a connection name")

    def pred_spec(self):
        tok = self.tok
        if tok.kind != "name":
            raise self.error("expected a predicate name")
        self.i += 1
        if self.accept("/"):
            num = self.tok
            if num.kind != "num" or not num.text.isdigit():
                raise self.error("expected an arity")
            self.i += 1
            return PredSpec(tok.text, int(num.text))
        columns = []
        if self.accept("("):
            while True:
                arg = self.tok
                if arg.kind not in ("name", "var"):
                    raise self.error("expected an argument name")
                self.i += 1
                ctype = self.column_type() if self.accept(":") else None
                columns.append((arg.text, ctype))
                if not self.accept(","):
                    break
            self.expect(")")
        return PredSpec(tok.text, len(columns), tuple(columns))

    def column_type(self):
        tok = self.tok
        if tok.kind != "name":
            raise self.error("expected a type name")
        self.i += 1
        name = tok.text
        size = None
        if self.accept("("):
            num = self.tok
            if num.kind != "num" or not num.text.isdigit():
                raise self.error("expected a string length")
            self.i += 1
            size = int(num.text)
            self.expect(")")
        kind = {"int": "int", "integer": "int", "float": "float", "real": "float",
                "string": "string", "varchar": "string"}.get(name)
        if kind is None:
            raise self.error(f"unknown type {name!r}", tok)
        if size is not None and kind != "string":
            raise self.error(f"type {name} takes no length", tok)
        return ColumnType(kind, size)

    # bodies
    def body(self):
        return _to_groups(self.disjunction())

    def disjunction(self):
        branches = [self.conjunction()]
        while self.accept(";"):
            branches.append(self.conjunction())
        return ("or", branches) if len(branches) > 1 else branches[0]

    def conjunction(self):
        items = [self.body_item()]
        while self.accept(","):
            items.append(self.body_item())
        return ("and", items) if len(items) > 1 else items[0]

    def body_item(self):
        if self.at("("):
            # "(X+1) > Y" is a literal; "(p ; q)" is a group
            start = self.i
            try:
                lit = self.literal()
                if isinstance(lit, (Cmp, Is)):
                    return ("lit", lit)
            except ParseError:
                pass
            self.i = start
            self.i += 1
            inner = self.disjunction()
            self.expect(")")
            return inner
        return ("lit", self.literal())

    def literal(self):
        tok = self.tok
        if tok.kind == "name" and tok.text == "not":
            self.i += 1
            if self.accept("("):
                atom = self.atom()
                self.expect(")")
            else:
                atom = self.atom()
            return Neg(atom)
        start = self.i
        left = self.expr()
        if self.tok.kind == "op" and self.tok.text in CMP_OPS:
            op = self.tok.text
            self.i += 1
            return Cmp(op, self.as_term(left), self.as_term(self.expr()))
        if self.tok.kind == "name" and self.tok.text == "is":
            if not isinstance(left, Var):
                raise self.error("left side of 'is' must be a variable", tok)
            self.i += 1
            return Is(left, self.as_term(self.expr()))
        self.i = start
        return Pos(self.atom())

    def atom(self):
        tok = self.tok
        if tok.kind != "name" or tok.text in KEYWORDS:
            raise self.error("expected a predicate")
        self.i += 1
        args = []
        if self.accept("("):
            while True:
                args.append(self.atom_arg())
                if not self.accept(","):
                    break
            self.expect(")")
        return Atom(tok.text, tuple(args))

    def atom_arg(self):
        tok = self.tok
        if tok.kind == "var":
            self.i += 1
            return self.variable(tok.text)
        return Const(self.constant())

    def variable(self, name):
        if name == "_":
            return Var(f"_{next(self._anon)}")
        return Var(name)

    def constant(self):
        tok = self.tok
        negative = False
        if self.at("-") and self.peek().kind == "num":
            negative = True
            self.i += 1
            tok = self.tok
        if tok.kind == "num":
            self.i += 1
            value = _number(tok.text)
            return -value if negative else value
        if tok.kind == "name" and not negative:
            self.i += 1
            return tok.text
        if tok.kind == "str" and not negative:
            self.i += 1
            return _unquote(tok.text)
        raise self.error("expected a variable or a constant")

    # arithmetic: raw parse, converted with as_term
    def expr(self):
        left = self.product()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            left = Arith(op, left, self.product())
        return left

    def product(self):
        left = self.primary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.tok.text
            self.i += 1
            left = Arith(op, left, self.primary())
        return left

    def primary(self):
        tok = self.tok
        if self.at("("):
            self.i += 1
            inner = self.expr()
            self.expect(")")
            return inner
        if tok.kind == "var":
            self.i += 1
            return self.variable(tok.text)
        if tok.kind == "name" and self.peek().kind == "op" and self.peek().text == "(":
            self.i += 2
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            return ("call", tok, tuple(args))
        return Const(self.constant())

    def as_term(self, raw):
        if isinstance(raw, tuple) and raw[0] == "call":
            _, tok, args = raw
            if tok.text not in FUNCTIONS:
                raise self.error(f"unknown arithmetic function {tok.text!r}", tok)
            return Func(tok.text, tuple(self.as_term(a) for a in args))
        if isinstance(raw, Arith):
            return Arith(raw.op, self.as_term(raw.left), self.as_term(raw.right))
        return raw


def _number(text):
    if re.fullmatch(r"\d+", text):
        return int(text)
    return float(text)


def _unquote(text):
    return text[1:-1].replace("''", "'")


def _dnf(node):
    """Alternatives (tuples of literals) of a raw body node."""
    kind = node[0]
    if kind == "lit":
        return [(node[1],)]
    if kind == "or":
        return [alt for branch in node[1] for alt in _dnf(branch)]
    alts = [()]
    for item in node[1]:
        alts = [a + b for a in alts for b in _dnf(item)]
    return alts


def _to_groups(node):
    kind = node[0]
    if kind == "lit":
        return (((node[1],),),)
    if kind == "and":
        return tuple(g for item in node[1] for g in _to_groups(item))
    alts = tuple(_dnf(node))
    if len(alts) == 1:
        return tuple(((lit,),) for lit in alts[0])
    return (alts,)


def parse_program(text):
    """Parse period-terminated clauses and directives, in source order."""
    return _Parser(text).program()


def parse_clause(text):
    """Parse a single clause; the terminal period is optional."""
    p = _Parser(text)
    item = p.clause()
    p.accept(".")
    if not p.at_end():
        raise p.error("unexpected text after clause")
    return item


def parse_rule(text):
    item = parse_clause(text)
    if not isinstance(item, Rule):
        raise ParseError("expected a rule or a fact")
    return item


def parse_query(text):
    """Parse a query body (``goal, goal, ...``), returning its body groups."""
    p = _Parser(text)
    groups = p.body()
    p.accept(".")
    if not p.at_end():
        raise p.error("unexpected text after query")
    return groups


def parse_assertion(text):
    item = parse_clause(text)
    if not isinstance(item, PersistenceAssertion):
        raise ParseError("expected a persistence assertion")
    return item


# ---------------------------------------------------------------- normalization


def normalize(rule):
    """Expand disjunctions into the equivalent list of disjunction-free rules."""
    if rule.is_normalized:
        return [rule]
    out = []
    for choice in itertools.product(*rule.body):
        lits = [lit for alt in choice for lit in alt]
        out.append(Rule.from_literals(rule.head, lits))
    return out


# ---------------------------------------------------------------- traversal


def term_vars(term) -> Iterator[Var]:
    if isinstance(term, Var):
        yield term
    elif isinstance(term, Arith):
        yield from term_vars(term.left)
        yield from term_vars(term.right)
    elif isinstance(term, Func):
        for a in term.args:
            yield from term_vars(a)


def literal_vars(lit) -> Iterator[Var]:
    if isinstance(lit, (Pos, Neg)):
        for a in lit.atom.args:
            yield from term_vars(a)
    elif isinstance(lit, Cmp):
        yield from term_vars(lit.left)
        yield from term_vars(lit.right)
    elif isinstance(lit, Is):
        yield lit.var
        yield from term_vars(lit.expr)


def rule_vars(rule) -> Iterator[Var]:
    for a in rule.head.args:
        yield from term_vars(a)
    for group in rule.body:
        for alt in group:
            for lit in alt:
                yield from literal_vars(lit)


def body_atoms(rule):
    """(atom, negated) pairs over every alternative of the body."""
    for group in rule.body:
        for alt in group:
            for lit in alt:
                if isinstance(lit, Pos):
                    yield lit.atom, False
                elif isinstance(lit, Neg):
                    yield lit.atom, True


def functions_used(rule):
    found = set()

    def walk(t):
        if isinstance(t, Func):
            found.add(t.name)
            for a in t.args:
                walk(a)
        elif isinstance(t, Arith):
            walk(t.left)
            walk(t.right)

    for group in rule.body:
        for alt in group:
            for lit in alt:
                if isinstance(lit, Cmp):
                    walk(lit.left)
                    walk(lit.right)
                elif isinstance(lit, Is):
                    walk(lit.expr)
    return found


def rename_term(term, mapping):
    if isinstance(term, Var):
        return mapping.get(term, term)
    if isinstance(term, Arith):
        return Arith(term.op, rename_term(term.left, mapping), rename_term(term.right, mapping))
    if isinstance(term, Func):
        return Func(term.name, tuple(rename_term(a, mapping) for a in term.args))
    return term


def rename_literal(lit, mapping):
    if isinstance(lit, Pos):
        return Pos(rename_atom(lit.atom, mapping))
    if isinstance(lit, Neg):
        return Neg(rename_atom(lit.atom, mapping))
    if isinstance(lit, Cmp):
        return Cmp(lit.op, rename_term(lit.left, mapping), rename_term(lit.right, mapping))
    return Is(rename_term(lit.var, mapping), rename_term(lit.expr, mapping))


def rename_atom(atom, mapping):
    return Atom(atom.pred, tuple(rename_term(a, mapping) for a in atom.args))


def rename_rule(rule, mapping):
    body = tuple(
        tuple(tuple(rename_literal(lit, mapping) for lit in alt) for alt in group)
        for group in rule.body
    )
    return Rule(rename_atom(rule.head, mapping), body)


def canonical_var_name(i):
    letter = chr(ord("A") + i % 26)
    return letter if i < 26 else f"{letter}{i // 26}"


def canonicalize(rule):
    """Rename variables A, B, C, ... in order of first occurrence."""
    mapping = {}
    for v in rule_vars(rule):
        if v not in mapping:
            mapping[v] = Var(canonical_var_name(len(mapping)))
    return rename_rule(rule, mapping)


# ---------------------------------------------------------------- rendering

_BARE_ATOM = re.compile(r"[a-z][A-Za-z0-9_]*")
_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def render_value(value):
    if isinstance(value, bool):
        raise TypeError("booleans are not Datalog constants")
    if isinstance(value, (int, float)):
        return repr(value)
    if _BARE_ATOM.fullmatch(value) and value not in KEYWORDS:
        return value
    return "'" + value.replace("'", "''") + "'"


def render_term(term, parent_prec=0, right=False):
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Const):
        text = render_value(term.value)
        if parent_prec and isinstance(term.value, (int, float)) and term.value < 0:
            return f"({text})"
        return text
    if isinstance(term, Func):
        return f"{term.name}({','.join(render_term(a) for a in term.args)})"
    prec = _PRECEDENCE[term.op]
    text = f"{render_term(term.left, prec)}{term.op}{render_term(term.right, prec, True)}"
    if prec < parent_prec or (right and prec == parent_prec):
        return f"({text})"
    return text


def render_atom(atom):
    if not atom.args:
        return atom.pred
    return f"{atom.pred}({','.join(render_term(a) for a in atom.args)})"


def render_literal(lit, compact=False):
    if isinstance(lit, Pos):
        return render_atom(lit.atom)
    if isinstance(lit, Neg):
        return f"not({render_atom(lit.atom)})" if compact else f"not {render_atom(lit.atom)}"
    if isinstance(lit, Cmp):
        sep = "" if compact else " "
        return f"{render_term(lit.left)}{sep}{lit.op}{sep}{render_term(lit.right)}"
    return f"{lit.var.name} is {render_term(lit.expr)}"


def _render_body(rule, compact):
    comma = "," if compact else ", "
    semi = ";" if compact else " ; "
    parts = []
    for group in rule.body:
        alts = [comma.join(render_literal(l, compact) for l in alt) for alt in group]
        if len(alts) == 1:
            parts.append(alts[0])
        elif len(rule.body) == 1:
            parts.append(semi.join(alts))
        else:
            parts.append("(" + semi.join(alts) + ")")
    return comma.join(parts)


def render_rule(rule):
    """Human-oriented rendering with the rule's own variable names."""
    if rule.is_fact:
        return f"{render_atom(rule.head)}."
    return f"{render_atom(rule.head)} :- {_render_body(rule, False)}."


def canonical_text(rule):
    """Single-line, whitespace-free (except around ``is``) canonical form."""
    rule = canonicalize(rule)
    if rule.is_fact:
        return f"{render_atom(rule.head)}."
    return f"{render_atom(rule.head)}:-{_render_body(rule, True)}."


def render_item(item):
    if isinstance(item, Rule):
        return render_rule(item)
    if isinstance(item, TypeDeclaration):
        return f":-type({item.spec})."
    return f"{item}."
