"""Interactive top level and batch driver."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

from .backend import ConnectionRegistry
from .catalog import pred_label
from .database import LOCAL_DB, Database
from .engine import COUNTERS
from .errors import CommandError, DESError
from .syntax import Atom, Const, PersistenceAssertion, Rule, TypeDeclaration, parse_assertion, parse_clause, parse_rule, render_atom

PROMPT = "DES> "

# ---------------------------------------------------------------- commands


@dataclass(frozen=True)
class Query:
    text: str

    def render(self):
        return self.text


@dataclass(frozen=True)
class Directive:
    text: str  # :-type(...) or :-persistent(...)

    def render(self):
        return self.text


@dataclass(frozen=True)
class AssertRule:
    text: str

    def render(self):
        return f"/assert {self.text}"


@dataclass(frozen=True)
class RetractRule:
    text: str

    def render(self):
        return f"/retract {self.text}"


@dataclass(frozen=True)
class DropAssertion:
    text: str

    def render(self):
        return f"/drop_assertion {self.text}"


@dataclass(frozen=True)
class DbSchema:
    connection: str | None = None

    def render(self):
        return "/dbschema" + (f" {self.connection}" if self.connection else "")


@dataclass(frozen=True)
class OpenDb:
    connection: str

    def render(self):
        return f"/open_db {self.connection}"


@dataclass(frozen=True)
class CloseDb:
    connection: str

    def render(self):
        return f"/close_db {self.connection}"


@dataclass(frozen=True)
class SetOptimization:
    name: str | None = None
    on: bool | None = None

    def render(self):
        if self.name is None:
            return "/optimization"
        return f"/optimization {self.name} {'on' if self.on else 'off'}"


@dataclass(frozen=True)
class Statistics:
    reset: bool = False

    def render(self):
        return "/statistics reset" if self.reset else "/statistics"


@dataclass(frozen=True)
class Consult:
    path: str

    def render(self):
        return f"/consult {self.path}"


@dataclass(frozen=True)
class Listing:
    pred: str | None = None

    def render(self):
        return "/listing" + (f" {self.pred}" if self.pred else "")


@dataclass(frozen=True)
class Sql:
    connection: str
    statement: str

    def render(self):
        return f"/sql {self.connection} {self.statement}"


@dataclass(frozen=True)
class Help:
    def render(self):
        return "/help"


@dataclass(frozen=True)
class Quit:
    def render(self):
        return "/quit"


_ARG_COMMANDS = {
    "assert": AssertRule, "retract": RetractRule, "drop_assertion": DropAssertion,
    "open_db": OpenDb, "close_db": CloseDb, "consult": Consult,
}

HELP = """\
Commands:
  <query>                         solve a goal or conjunction, e.g. ancestor(X,amy)
  :-type(p(a:int,b:string)).      declare a predicate type
  :-persistent(p/2[,conn]).       make a predicate persistent
  /assert <rule>                  add a rule or fact
  /retract <rule>                 remove a rule or fact
  /drop_assertion :-persistent(...)   make a predicate non-persistent
  /open_db <conn> | /close_db <conn>
  /dbschema [conn|$des]           list relations and views
  /listing [name[/arity]]         list local rules and facts
  /optimization [name on|off]     toggle complete_computations, extensional_fetch, nonrecursive_cache
  /statistics [reset]             show solver counters
  /sql <conn> <statement>         pass a statement to an external database
  /consult <file>                 load a program
  /help, /quit"""


def parse_command(line):
    """Parse one input line into a command, or None for blank and comment lines."""
    text = line.strip()
    if not text or text.startswith("%"):
        return None
    if text.startswith(":-"):
        return Directive(text)
    if not text.startswith("/"):
        return Query(text)
    word, _, rest = text[1:].partition(" ")
    rest = rest.strip()
    if word in _ARG_COMMANDS:
        if not rest:
            raise CommandError(f"/{word} needs an argument")
        return _ARG_COMMANDS[word](rest)
    if word == "dbschema":
        return DbSchema(rest or None)
    if word == "listing":
        return Listing(rest or None)
    if word == "optimization":
        if not rest:
            return SetOptimization()
        parts = rest.split()
        if len(parts) != 2 or parts[1] not in ("on", "off"):
            raise CommandError("usage: /optimization <name> on|off")
        return SetOptimization(parts[0], parts[1] == "on")
    if word == "statistics":
        if rest not in ("", "reset"):
            raise CommandError("usage: /statistics [reset]")
        return Statistics(rest == "reset")
    if word == "sql":
        conn, _, stmt = rest.partition(" ")
        if not stmt.strip():
            raise CommandError("usage: /sql <connection> <statement>")
        return Sql(conn, stmt.strip())
    if word == "help":
        return Help()
    if word in ("quit", "exit", "halt"):
        return Quit()
    raise CommandError(f"Unknown command /{word}; type /help for the list of commands")


def render_command(cmd):
    return cmd.render()


# ---------------------------------------------------------------- session


def format_answers(pred, rows):
    if not rows:
        return "{}"
    return "{ " + ", ".join(render_atom(Atom(pred, tuple(Const(v) for v in r))) for r in rows) + " }"


class Session:
    """Command dispatcher over one :class:`Database`."""

    def __init__(self, db=None, quiet=False):
        self.db = db or Database()
        self.quiet = quiet
        self.done = False

    def execute(self, line):
        """Run one input line; returns the output lines."""
        try:
            cmd = parse_command(line)
            if cmd is None:
                return []
            out = self.dispatch(cmd)
        except (DESError, OSError) as e:
            out = [f"Error: {e}"]
        if self.quiet:
            out = [m for m in out if not m.startswith("Info:")]
        return out

    def dispatch(self, cmd):
        db = self.db
        if isinstance(cmd, Query):
            pred, rows = db.query(cmd.text)
            return [format_answers(pred, rows)]
        if isinstance(cmd, Directive):
            item = parse_clause(cmd.text)
            if not isinstance(item, (TypeDeclaration, PersistenceAssertion)):
                raise CommandError("expected a directive")
            return db.load_item(item)
        if isinstance(cmd, AssertRule):
            return db.assert_rule(parse_rule(cmd.text))
        if isinstance(cmd, RetractRule):
            return db.retract_rule(parse_rule(cmd.text))
        if isinstance(cmd, DropAssertion):
            a = parse_assertion(cmd.text)
            return db.drop_persistence(a.spec, a.connection).messages()
        if isinstance(cmd, OpenDb):
            db.open_db(cmd.connection)
            return [f"Info: Current database is {cmd.connection}."]
        if isinstance(cmd, CloseDb):
            db.close_db(cmd.connection)
            return [f"Info: Database {cmd.connection} closed."]
        if isinstance(cmd, DbSchema):
            return dbschema(db, cmd.connection)
        if isinstance(cmd, Listing):
            return listing(db, cmd.pred)
        if isinstance(cmd, SetOptimization):
            if cmd.name is None:
                return [f"{n}: {'on' if v else 'off'}" for n, v in db.engine.flags.items()]
            db.engine.set_optimization(cmd.name, cmd.on)
            return [f"Info: Optimization {cmd.name} is {'on' if cmd.on else 'off'}."]
        if isinstance(cmd, Statistics):
            if cmd.reset:
                db.engine.reset_counters()
                return ["Info: Statistics reset."]
            return [f"{n}: {db.engine.counters[n]}" for n in COUNTERS]
        if isinstance(cmd, Sql):
            return run_sql(db, cmd.connection, cmd.statement)
        if isinstance(cmd, Consult):
            with open(cmd.path, encoding="utf-8") as fh:
                return db.consult(fh.read())
        if isinstance(cmd, Help):
            return HELP.splitlines()
        if isinstance(cmd, Quit):
            self.done = True
            return []
        raise CommandError(f"cannot run {cmd!r}")


def run_sql(db, connection, statement):
    handle = db.connection(connection)
    if statement.lstrip().upper().startswith(("SELECT", "WITH")):
        with handle.query_fetch(statement) as cur:
            rows = [tuple(r) for r in cur]
        return [repr(r) for r in rows] or ["(no rows)"]
    count = handle.exec_update(statement)
    db.invalidate()
    return [f"Info: {count} row(s) affected."]


def _schema_text(rel):
    if rel.schema is not None:
        return str(rel.schema)
    return f"{rel.name}({','.join(rel.columns)})"


def dbschema(db, connection=None):
    name = connection or db.current
    if name == LOCAL_DB:
        lines = [f"Database: {LOCAL_DB}"]
        for key in sorted(set(db.rules) | set(db.facts) | set(db.records) | set(db.catalog.declared)):
            rec = db.records.get(key)
            schema = db.schema_of(key)
            text = str(schema) if schema is not None else pred_label(key)
            if rec is not None:
                lines.append(f"  {text}  [persistent in {rec.connection}]")
            else:
                lines.append(f"  {text}")
        views = [r for r in db.records.values() if r.view_sql]
        for rec in sorted(views, key=lambda r: r.pred):
            lines.append("")
            lines.extend(rec.view_sql.splitlines())
        return lines
    if name not in db.connections:
        if name not in db.registry:
            raise CommandError(f"Unknown connection {name!r}")
        raise CommandError(f"Connection {name} is not open")
    handle = db.connections[name]
    lines = [f"Database: {name}"]
    records = {r.view_name: r for r in db.records.values() if r.connection == name}
    for rel in handle.list_relations():
        tag = f"  [{rel.role.replace('_', ' ')}]" if rel.role else ""
        lines.append(f"  {rel.kind} {_schema_text(rel)}{tag}")
        rec = records.get(rel.name)
        if rec is not None and rel.kind == "view" and rec.view_sql:
            lines.extend("    " + l for l in rec.view_sql.splitlines())
    return lines


def listing(db, pred=None):
    name, arity = pred, None
    if pred and "/" in pred:
        name, _, a = pred.partition("/")
        arity = int(a)
    out = []
    for key in sorted(set(db.rules) | set(db.facts) | set(db.records)):
        if name and (key[0] != name or (arity is not None and key[1] != arity)):
            continue
        store = db.facts.get(key)
        for row in store or ():
            out.append(str(Rule(Atom(key[0], tuple(Const(v) for v in row)))))
        rec = db.records.get(key)
        rules = rec.rules if rec is not None else db.rules.get(key, [])
        out.extend(str(r) for r in rules)
    return out


def repl(lines, session, out=sys.stdout, prompt=None, echo=False):
    """Feed ``lines`` to ``session``; returns the exit status.

    ``echo`` writes each input line after the prompt, giving a session transcript.
    """
    if prompt is None:
        prompt = sys.stdin.isatty() and out.isatty()
    it = iter(lines)
    while True:
        if prompt:
            out.write(PROMPT)
            out.flush()
        line = next(it, None)
        if line is None:
            break
        if echo:
            out.write(PROMPT + line.rstrip("\n") + "\n")
        for text in session.execute(line):
            out.write(text + "\n")
        if session.done:
            break
    out.flush()
    return 0


def _interactive_lines():
    while True:
        try:
            line = input()
        except EOFError:
            return
        yield line


# ---------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="dlpersist", description="Datalog with persistent predicates")
    parser.add_argument("--db", help="connection registry file (INI sections: kind, location, dialect)")
    parser.add_argument("--script", help="run the commands of a file instead of reading stdin")
    parser.add_argument("--quiet", action="store_true", help="suppress Info lines")
    parser.add_argument("--echo", action="store_true", help="with --script, print each line after the prompt")
    parser.add_argument("-v", "--verbose", action="store_true", help="log SQL traffic")
    sub = parser.add_subparsers(dest="command")
    b = sub.add_parser("bench", help="run the insert/select/join/lifecycle benchmark")
    b.add_argument("--scenario", action="append", choices=("insert", "select", "join", "lifecycle"))
    b.add_argument("-n", type=int, default=1000)
    b.add_argument("--reps", type=int, default=10)
    b.add_argument("--target", default="mysql", help="persistent backend connection name")
    b.add_argument("--csv", help="also write scenario,target,mean-ms rows to this file")
    return parser


def load_registry(path):
    if path is None:
        return ConnectionRegistry.default()
    if not os.path.exists(path):
        raise DESError(f"connection registry {path} not found")
    return ConnectionRegistry.from_file(path)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        registry = load_registry(args.db)
    except DESError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    if args.command == "bench":
        from .bench import BenchConfig, run_bench
        cfg = BenchConfig(n=args.n, reps=args.reps, target=args.target,
                          scenarios=tuple(args.scenario or ("insert", "select", "join", "lifecycle")))
        try:
            report = run_bench(cfg, registry_factory=lambda: load_registry(args.db))
        except DESError as e:
            print(f"Error: {e}", file=sys.stderr)
            return 2
        print(report.render())
        if args.csv:
            with open(args.csv, "w", encoding="utf-8") as fh:
                fh.write(report.csv())
        return 0
    session = Session(Database(registry), quiet=args.quiet)
    try:
        if args.script:
            try:
                fh = open(args.script, encoding="utf-8")
            except OSError as e:
                print(f"Error: {e}", file=sys.stderr)
                return 2
            with fh:
                return repl(fh, session, prompt=False, echo=args.echo)
        return repl(_interactive_lines(), session)
    finally:
        session.db.close()


if __name__ == "__main__":
    sys.exit(main())
