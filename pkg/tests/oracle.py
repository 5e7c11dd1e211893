"""Reference evaluators written independently of the engine.

``naive_model`` computes the stratified model bottom-up, one stratum at a time,
re-firing every rule until nothing changes.  ``derivations`` enumerates every
satisfying substitution of one rule over multiset relations, which is what a
``UNION ALL`` branch returns.
"""

import math

from dlpersist.syntax import Cmp, Const, Func, Is, Neg, Pos, Var


class Undefined(Exception):
    pass


def _value(term, env):
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Var):
        if term.name not in env:
            raise Undefined(term.name)
        return env[term.name]
    if isinstance(term, Func):
        x = _value(term.args[0], env)
        try:
            return {"sin": math.sin, "cos": math.cos, "tan": math.tan, "abs": abs}[term.name](x)
        except (ValueError, OverflowError):
            raise ArithmeticError(term.name)
    a, b = _value(term.left, env), _value(term.right, env)
    if term.op == "+":
        return a + b
    if term.op == "-":
        return a - b
    if term.op == "*":
        return a * b
    if b == 0:
        raise ArithmeticError("div")
    return a / b


def _cmp(op, a, b):
    if op == "=":
        return a == b
    if op == "\\=":
        return a != b
    ka = (isinstance(a, str), a)
    kb = (isinstance(b, str), b)
    if ka[0] != kb[0]:
        ka, kb = ka[0], kb[0]
    return {"<": ka < kb, "=<": ka <= kb, ">": ka > kb, ">=": ka >= kb}[op]


def _unify(args, row, env):
    out = dict(env)
    for a, v in zip(args, row):
        if isinstance(a, Const):
            if a.value != v:
                return None
        elif a.name in out:
            if out[a.name] != v:
                return None
        else:
            out[a.name] = v
    return out


def _substitutions(lits, rel, env=None):
    """Every environment satisfying ``lits``; ``rel(key)`` gives an iterable of rows.

    Positive atoms are joined first, left to right; built-ins run afterwards
    in whatever order their inputs become available.
    """
    envs = [dict(env or {})]
    for lit in lits:
        if isinstance(lit, Pos):
            rows = list(rel(lit.atom.key))
            envs = [e2 for e in envs for row in rows
                    if (e2 := _unify(lit.atom.args, row, e)) is not None]
    pending = [l for l in lits if not isinstance(l, Pos)]
    out = []
    for e in envs:
        todo = list(pending)
        ok = True
        while todo and ok:
            progressed = False
            for lit in list(todo):
                try:
                    if isinstance(lit, Is):
                        v = _value(lit.expr, e)
                        if lit.var.name in e:
                            ok = e[lit.var.name] == v
                        else:
                            e = dict(e)
                            e[lit.var.name] = v
                    elif isinstance(lit, Cmp):
                        ok = _cmp(lit.op, _value(lit.left, e), _value(lit.right, e))
                    else:
                        vals = tuple(_value(a, e) for a in lit.atom.args)
                        ok = vals not in set(map(tuple, rel(lit.atom.key)))
                except Undefined:
                    continue
                except ArithmeticError:
                    ok = False
                todo.remove(lit)
                progressed = True
                if not ok:
                    break
            if not progressed and todo:
                raise ValueError("unsafe rule given to the oracle")
        if ok:
            out.append(e)
    return out


def derivations(rule, rel):
    """Multiset (list) of head rows, one per satisfying substitution."""
    rows = []
    for e in _substitutions(rule.literals, rel):
        rows.append(tuple(_value(a, e) for a in rule.head.args))
    return rows


def strata(rules, preds):
    level = {p: 0 for p in preds}
    for r in rules:
        level.setdefault(r.key, 0)
        for lit in r.literals:
            if isinstance(lit, (Pos, Neg)):
                level.setdefault(lit.atom.key, 0)
    bound = len(level) + 1
    changed = True
    while changed:
        changed = False
        for r in rules:
            for lit in r.literals:
                if isinstance(lit, (Pos, Neg)):
                    need = level[lit.atom.key] + (1 if isinstance(lit, Neg) else 0)
                    if need > level[r.key]:
                        level[r.key] = need
                        changed = True
                        if need > bound:
                            raise ValueError("not stratifiable")
    return level


def naive_model(rules, facts):
    """Stratified model; ``facts`` maps keys to iterables of rows."""
    model = {k: set(map(tuple, v)) for k, v in facts.items()}
    level = strata(rules, model)
    for k in level:
        model.setdefault(k, set())
    for s in sorted(set(level.values())):
        layer = [r for r in rules if level[r.key] == s]
        while True:
            new = False
            for r in layer:
                for row in derivations(r, lambda k: model.get(k, ())):
                    if row not in model[r.key]:
                        model[r.key].add(row)
                        new = True
            if not new:
                break
    return model
