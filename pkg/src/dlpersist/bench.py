"""Insert / select / autojoin / lifecycle timings for in-memory, native SQL and persistent runs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from statistics import mean

from .backend import ConnectionRegistry
from .database import Database
from .dl2sql import Col, Comparison, CreateTable, DropTable, DropView, InsertValues, Lit, Select, render_sql
from .errors import DESError
from .syntax import Atom, ColumnType, Const, PredSpec, Rule, parse_rule

SCENARIOS = ("insert", "select", "join", "lifecycle")
TABLE1 = ("insert", "select", "join")


@dataclass(frozen=True)
class BenchConfig:
    n: int = 1000
    reps: int = 10
    target: str = "mysql"
    scenarios: tuple = SCENARIOS


def trimmed_mean(samples):
    """Mean after discarding one maximum and one minimum (when there are enough runs)."""
    s = sorted(samples)
    if len(s) > 2:
        s = s[1:-1]
    return mean(s) if s else 0.0


@dataclass
class BenchReport:
    config: BenchConfig
    times: dict = field(default_factory=dict)  # (scenario, column) -> mean ms
    checks: dict = field(default_factory=dict)  # (scenario, column) -> observed count

    def ratio(self, num, den):
        a, b = self.times.get(num), self.times.get(den)
        if a is None or not b:
            return None
        return a / b

    def render(self):
        c = self.config
        t = c.target
        fmt_r = lambda r: "-" if r is None else f"{r:.2f}"
        lines = [f"Query timings. Mean of {c.reps} runs without max and min, n={c.n} (ms)", ""]
        cols = [s for s in TABLE1 if s in c.scenarios]
        if cols:
            head = f"{'System':<22}" + "".join(f"{s.capitalize() + '_n':>22}" for s in cols)
            lines.append(head)
            lines.append(f"{'in-memory':<22}" + "".join(
                f"{self.times[(s, 'memory')]:>22.2f}" for s in cols))
            lines.append(f"{t + ' native':<22}" + "".join(
                f"{self.times[(s, 'native')]:>12.2f}{'(' + fmt_r(self.ratio((s, 'native'), (s, 'memory'))) + ')':>10}"
                for s in cols))
            lines.append("")
            lines.append(f"{'System':<22}" + "".join(f"{s.capitalize() + '_p':>22}" for s in cols))
            cells = []
            for s in cols:
                r1 = fmt_r(self.ratio((s, "persistent"), (s, "memory")))
                r2 = fmt_r(self.ratio((s, "persistent"), (s, "native")))
                cells.append(f"{self.times[(s, 'persistent')]:>10.2f} {'(' + r1 + '◇' + r2 + ')':>11}")
            lines.append(f"{t + ' persistent':<22}" + "".join(cells))
        if "lifecycle" in c.scenarios:
            lines += ["", "Persistence lifecycle. Creating and removing persistence (ms)", "",
                      f"{'System':<22}{'Create':>12}{'Drop':>12}",
                      f"{t:<22}{self.times[('lifecycle', 'create')]:>12.2f}"
                      f"{self.times[('lifecycle', 'drop')]:>12.2f}"]
        if self.checks:
            lines += ["", "Checks: " + ", ".join(
                f"{s}/{col}={v}" for (s, col), v in sorted(self.checks.items()))]
        return "\n".join(lines)

    def csv(self):
        rows = ["scenario,target,mean_ms"]
        for (s, col), v in sorted(self.times.items()):
            target = "local" if col == "memory" else f"{self.config.target}:{col}"
            rows.append(f"{s},{target},{v:.3f}")
        return "\n".join(rows) + "\n"


class BenchError(DESError):
    pass


# ---------------------------------------------------------------- runs


def _fresh(registry_factory, target=None):
    db = Database(registry_factory())
    if target is not None:
        db.open_db(target)
        _cleanup(db.connections[target])
    return db


def _cleanup(handle):
    d = handle.dialect
    for name in ("t", "t_des_table", "t_des_metadata"):
        rel = handle.relation(name)
        if rel is not None:
            handle.exec_update(render_sql(DropView(name) if rel.kind == "view" else DropTable(name), d))


def _load_local(db, n):
    for i in range(1, n + 1):
        db.add_local(Rule(Atom("t", (Const(i),))))
    db.invalidate()


def _assert_all(db, n):
    for i in range(1, n + 1):
        db.assert_rule(parse_rule(f"t({i})"))
    return n


def _persist_t(db, target):
    db.persist(PredSpec("t", 1, (("a", ColumnType("int")),)), target)


def _timed(fn):
    start = time.perf_counter()
    value = fn()
    return (time.perf_counter() - start) * 1000.0, value


def _memory(scenario, n, factory):
    db = _fresh(factory)
    try:
        if scenario == "insert":
            return _timed(lambda: _assert_all(db, n))
        _load_local(db, n)
        if scenario == "select":
            return _timed(lambda: sum(len(db.query(f"t({i})", sort=False)[1]) for i in range(1, n + 1)))
        return _timed(lambda: len(db.query("t(X),t(Y)", sort=False)[1]))
    finally:
        db.close()


def _native(scenario, n, factory, target):
    db = _fresh(factory, target)
    h = db.connections[target]
    d = h.dialect
    try:
        h.exec_update(render_sql(CreateTable("t", (("a", ColumnType("int")),)), d))
        if scenario == "insert":
            return _timed(lambda: sum(h.exec_update(render_sql(InsertValues("t", (i,)), d))
                                      for i in range(1, n + 1)))
        for i in range(1, n + 1):
            h.exec_update(render_sql(InsertValues("t", (i,)), d))
        if scenario == "select":
            def run():
                hits = 0
                for i in range(1, n + 1):
                    sql = render_sql(Select(((Col(None, "a"), None),), (("t", None),),
                                            Comparison("=", Col(None, "a"), Lit(i))), d)
                    with h.query_fetch(sql) as cur:
                        hits += len(cur.fetch_all())
                return hits
            return _timed(run)
        sql = render_sql(Select(None, (("t", "t1"), ("t", "t2"))), d)

        def join():
            with h.query_fetch(sql) as cur:
                return sum(1 for _ in cur)
        return _timed(join)
    finally:
        _cleanup(h)
        db.close()


def _persistent(scenario, n, factory, target):
    db = _fresh(factory, target)
    try:
        _persist_t(db, target)
        if scenario == "insert":
            return _timed(lambda: _assert_all(db, n))
        _assert_all(db, n)
        if scenario == "select":
            return _timed(lambda: sum(len(db.query(f"t({i})", sort=False)[1]) for i in range(1, n + 1)))
        return _timed(lambda: len(db.query("t(X),t(Y)", sort=False)[1]))
    finally:
        _cleanup(db.connections[target])
        db.close()


def _lifecycle(n, factory, target):
    db = _fresh(factory, target)
    try:
        _load_local(db, n)
        create, _ = _timed(lambda: _persist_t(db, target))
        drop, _ = _timed(lambda: db.drop_persistence(PredSpec("t", 1), target))
        restored = len(db.facts.get(("t", 1)) or ())
        return create, drop, restored
    finally:
        _cleanup(db.connections[target])
        db.close()


def _expect(name, got, want):
    if got != want:
        raise BenchError(f"{name}: expected {want} tuples, got {got}")
    return got


def run_bench(config, registry_factory=ConnectionRegistry.default):
    report = BenchReport(config)
    n = config.n
    if config.target not in registry_factory():
        raise BenchError(f"target {config.target!r} is not a registered connection")
    want = {"insert": n, "select": n, "join": n * n}
    for scenario in config.scenarios:
        if scenario == "lifecycle":
            creates, drops = [], []
            for _ in range(config.reps):
                c, d, restored = _lifecycle(n, registry_factory, config.target)
                _expect("lifecycle", restored, n)
                creates.append(c)
                drops.append(d)
            report.times[("lifecycle", "create")] = trimmed_mean(creates)
            report.times[("lifecycle", "drop")] = trimmed_mean(drops)
            report.checks[("lifecycle", "restored")] = n
            continue
        runs = {
            "memory": lambda: _memory(scenario, n, registry_factory),
            "native": lambda: _native(scenario, n, registry_factory, config.target),
            "persistent": lambda: _persistent(scenario, n, registry_factory, config.target),
        }
        for column, run in runs.items():
            samples = []
            for _ in range(config.reps):
                ms, count = run()
                _expect(f"{scenario}/{column}", count, want[scenario])
                samples.append(ms)
            report.times[(scenario, column)] = trimmed_mean(samples)
            report.checks[(scenario, column)] = want[scenario]
    return report
