"""SQL backend drivers, connection registry and per-dialect quirks.

The reference driver is an embedded SQLite store.  SQLite accepts back-quoted,
bracketed and double-quoted identifiers, so the same driver can host every
dialect profile below; what differs is the SQL text the compiler emits.
"""

from __future__ import annotations

import configparser
import logging
import math
import os
import re
import sqlite3
from contextlib import contextmanager
from dataclasses import dataclass, field

from .catalog import PredicateSchema
from .errors import BackendError, UnknownConnectionError
from .syntax import ColumnType

logger = logging.getLogger(__name__)

PERSISTENCE_SUFFIXES = ("_des_table", "_des_metadata")


@dataclass(frozen=True)
class SqlDialect:
    name: str
    identifier_delims: tuple = ('"', '"')
    dual_table: str | None = None  # None: from-less SELECT allowed
    type_names: dict = field(default_factory=dict)
    functions: dict = field(default_factory=dict)

    @property
    def requires_dual(self):
        return self.dual_table is not None

    def quote(self, ident):
        open_, close = self.identifier_delims
        if close in ident:
            raise BackendError(f"identifier {ident!r} contains the delimiter {close!r}")
        return f"{open_}{ident}{close}"

    def type_name(self, ctype: ColumnType):
        base = self.type_names[ctype.kind]
        if ctype.kind == "string":
            return base.format(size=ctype.size or 200)
        return base

    def __hash__(self):
        return hash(self.name)


_TYPES = {"int": "INTEGER", "float": "FLOAT", "string": "VARCHAR({size})", "text": "TEXT"}

DIALECTS = {
    "mysql": SqlDialect(
        "mysql", ("`", "`"), None, _TYPES,
        {"sin": "SIN", "cos": "COS", "tan": "TAN", "abs": "ABS"},
    ),
    "access": SqlDialect(
        "access", ("[", "]"), "dual",
        {"int": "INTEGER", "float": "FLOAT", "string": "VARCHAR({size})", "text": "LONGTEXT"},
        {"abs": "ABS"},
    ),
    "ansi": SqlDialect(
        "ansi", ('"', '"'), None, _TYPES,
        {"sin": "SIN", "cos": "COS", "tan": "TAN", "abs": "ABS"},
    ),
}


def get_dialect(name):
    try:
        return DIALECTS[name]
    except KeyError:
        raise BackendError(f"unknown SQL dialect {name!r}") from None


def sql_type_to_column(declared):
    """Map an introspected SQL type name back to a catalog type."""
    text = (declared or "").strip().upper()
    if not text:
        return None
    m = re.match(r"(?:VAR)?CHAR(?:ACTER)?\s*\((\d+)\)", text)
    if m:
        return ColumnType("string", int(m.group(1)))
    if "INT" in text:
        return ColumnType("int")
    if any(t in text for t in ("FLOAT", "REAL", "DOUBLE", "NUMERIC", "DECIMAL")):
        return ColumnType("float")
    if any(t in text for t in ("CHAR", "TEXT", "CLOB", "STRING")):
        return ColumnType("string")
    return None


# ---------------------------------------------------------------- registry


@dataclass(frozen=True)
class ConnectionConfig:
    name: str
    backend_kind: str
    location: str
    dialect: str


class ConnectionRegistry:
    """Named connection definitions, usually loaded from an INI-style file::

        [mysql]
        kind = sqlite
        location = data/mysql.db
        dialect = mysql
    """

    def __init__(self, configs=(), source="<builtin>"):
        self.source = source
        self.configs = {}
        for c in configs:
            if c.name in self.configs:
                raise BackendError(f"duplicate connection name {c.name!r} in {source}")
            self.configs[c.name] = c
        self._live = {}

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        if not parser.read(path):
            raise BackendError(f"cannot read connection registry {path}")
        base = os.path.dirname(os.path.abspath(path))
        configs = []
        for name in parser.sections():
            sec = parser[name]
            location = sec.get("location", ":memory:")
            if location != ":memory:" and not os.path.isabs(location):
                location = os.path.join(base, location)
            configs.append(ConnectionConfig(
                name, sec.get("kind", "sqlite"), location, sec.get("dialect", "ansi")))
        return cls(configs, source=path)

    @classmethod
    def default(cls):
        """In-memory stand-ins for the two DBMS profiles used in examples."""
        return cls([
            ConnectionConfig("mysql", "sqlite", ":memory:", "mysql"),
            ConnectionConfig("access", "sqlite", ":memory:", "access"),
        ])

    def __contains__(self, name):
        return name in self.configs

    def names(self):
        return list(self.configs)

    def open(self, name):
        """Open (or re-open, reference counted) the named connection."""
        if name not in self.configs:
            raise UnknownConnectionError(
                f"Unknown connection {name!r}; not defined in {self.source}")
        handle = self._live.get(name)
        if handle is None or handle.closed:
            cfg = self.configs[name]
            driver = DRIVERS.get(cfg.backend_kind)
            if driver is None:
                raise BackendError(f"unknown backend kind {cfg.backend_kind!r} for {name}")
            handle = ConnectionHandle(cfg, driver(cfg.location), get_dialect(cfg.dialect))
            self._live[name] = handle
        handle.refcount += 1
        return handle

    def close_all(self):
        for h in self._live.values():
            h.force_close()
        self._live.clear()


# ---------------------------------------------------------------- drivers


@dataclass(frozen=True)
class Relation:
    name: str
    kind: str  # table | view
    columns: tuple
    schema: PredicateSchema | None  # None when a column type is unknown
    role: str | None = None  # persistence_table | persistence_metadata | persistence_view

    @property
    def arity(self):
        return len(self.columns)

    @property
    def key(self):
        return (self.name, len(self.columns))


class SqliteDriver:
    """Embedded reference backend."""

    def __init__(self, location):
        try:
            self.db = sqlite3.connect(location, isolation_level=None, check_same_thread=False)
        except sqlite3.Error as e:
            raise BackendError(f"backend unreachable: {e}") from e
        for name, fn in (("sin", math.sin), ("cos", math.cos), ("tan", math.tan)):
            self.db.create_function(name, 1, _guard(fn), deterministic=True)

    def execute(self, sql):
        cur = self.db.execute(sql)
        return cur.rowcount

    def cursor(self, sql):
        return self.db.execute(sql)

    def begin(self):
        self.db.execute("BEGIN")

    def commit(self):
        self.db.execute("COMMIT")

    def rollback(self):
        self.db.execute("ROLLBACK")

    def relations(self):
        rows = self.db.execute(
            "SELECT name, type FROM sqlite_master WHERE type IN ('table','view') "
            "AND name NOT LIKE 'sqlite_%' ORDER BY name").fetchall()
        out = []
        for name, kind in rows:
            try:
                cols = self.db.execute(f"PRAGMA table_info(\"{name}\")").fetchall()
            except sqlite3.Error:
                cols = []  # a view over a missing relation
            out.append((name, kind, [(c[1], c[2]) for c in cols]))
        return out

    def close(self):
        self.db.close()


def _guard(fn):
    def wrapped(x):
        try:
            return None if x is None else fn(x)
        except (ValueError, OverflowError):
            return None
    return wrapped


DRIVERS = {"sqlite": SqliteDriver}


class RowCursor:
    """Rows of one running query, delivered on demand."""

    def __init__(self, handle, sql, raw):
        self.handle = handle
        self.sql = sql
        self._raw = raw
        self.closed = False

    def fetch_row(self):
        if self.closed:
            raise BackendError("fetch on a closed cursor", self.sql)
        try:
            row = self._raw.fetchone()
        except sqlite3.Error as e:
            self.close()
            raise BackendError(str(e), self.sql) from e
        if row is None:
            self.close()
        return row

    def __iter__(self):
        while True:
            row = self.fetch_row()
            if row is None:
                return
            yield row

    def fetch_all(self):
        return list(self)

    def close(self):
        if not self.closed:
            self.closed = True
            self._raw.close()
            self.handle.open_cursors.discard(self)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ConnectionHandle:
    def __init__(self, config, driver, dialect):
        self.config = config
        self.driver = driver
        self.dialect = dialect
        self.refcount = 0
        self.closed = False
        self.open_cursors = set()
        self.queries = 0
        self.updates = 0
        self._tx_depth = 0
        self._tx_failed = False
        self._relations = None
        if dialect.requires_dual:
            self._ensure_dual()

    @property
    def name(self):
        return self.config.name

    def _ensure_dual(self):
        names = {r[0] for r in self.driver.relations()}
        if self.dialect.dual_table not in names:
            d = self.dialect
            self.driver.execute(f"CREATE TABLE {d.quote(d.dual_table)}({d.quote('dummy')} VARCHAR(1))")
            self.driver.execute(f"INSERT INTO {d.quote(d.dual_table)} VALUES('X')")

    def _check(self):
        if self.closed:
            raise BackendError(f"connection {self.name} is closed")

    def exec_update(self, sql):
        """Run DDL or DML; returns the affected-row count (0 for DDL)."""
        self._check()
        self.updates += 1
        logger.debug("%s update: %s", self.name, sql)
        try:
            count = self.driver.execute(sql)
        except sqlite3.Error as e:
            raise BackendError(str(e), sql) from e
        if re.match(r"\s*(CREATE|DROP|ALTER)\b", sql, re.I):
            self._relations = None
        return max(count, 0)

    def query_fetch(self, sql):
        self._check()
        self.queries += 1
        logger.debug("%s query: %s", self.name, sql)
        try:
            raw = self.driver.cursor(sql)
        except sqlite3.Error as e:
            raise BackendError(str(e), sql) from e
        cur = RowCursor(self, sql, raw)
        self.open_cursors.add(cur)
        return cur

    @contextmanager
    def transaction(self):
        """Atomic scope; nested scopes join the outermost one."""
        self._check()
        outer = self._tx_depth == 0
        if outer:
            self.driver.begin()
            self._tx_failed = False
        self._tx_depth += 1
        try:
            yield self
        except BaseException:
            self._tx_failed = True
            raise
        finally:
            self._tx_depth -= 1
            if outer:
                self._relations = None
                if self._tx_failed:
                    self.driver.rollback()
                else:
                    self.driver.commit()

    def list_relations(self):
        self._check()
        if self._relations is None:
            self._relations = self._introspect()
        return list(self._relations)

    def _introspect(self):
        raw = [r for r in self.driver.relations() if r[0] != self.dialect.dual_table]
        names = {r[0] for r in raw}
        by_name = {r[0]: r for r in raw}
        out = []
        for name, kind, cols in raw:
            role = None
            if name.endswith("_des_table"):
                role = "persistence_table"
            elif name.endswith("_des_metadata"):
                role = "persistence_metadata"
            elif kind == "view" and f"{name}_des_table" in names and f"{name}_des_metadata" in names:
                role = "persistence_view"
                cols = [(c, t) for (c, _), (_, t) in zip(cols, by_name[f"{name}_des_table"][2])]
            schema = None
            types = [sql_type_to_column(t) for _, t in cols]
            if cols and None not in types:
                try:
                    schema = PredicateSchema(name, tuple(
                        (c, t) for (c, _), t in zip(cols, types)))
                except ValueError:
                    schema = None
            out.append(Relation(name, kind, tuple(c for c, _ in cols), schema, role))
        return out

    def relation(self, name):
        for r in self.list_relations():
            if r.name == name:
                return r
        return None

    def close(self):
        self.refcount -= 1
        if self.refcount <= 0:
            self.force_close()

    def force_close(self):
        if not self.closed:
            for cur in list(self.open_cursors):
                cur.close()
            self.driver.close()
            self.closed = True
