"""Replay the bundled session scripts and print (or check) their transcripts.

    python scripts/replay_sessions.py            # print every transcript
    python scripts/replay_sessions.py --check    # compare with tests/golden/*.txt
    python scripts/replay_sessions.py --write    # refresh the golden files
"""

import argparse
import io
import pathlib
import sys

from dlpersist.backend import ConnectionRegistry
from dlpersist.cli import Session, repl
from dlpersist.database import Database

ROOT = pathlib.Path(__file__).resolve().parent.parent
SESSIONS = ROOT / "scripts" / "sessions"
GOLDEN = ROOT / "tests" / "golden"


def transcript(path):
    out = io.StringIO()
    session = Session(Database(ConnectionRegistry.default()))
    try:
        with open(path, encoding="utf-8") as fh:
            repl(fh, session, out, prompt=False, echo=True)
    finally:
        session.db.close()
    return out.getvalue()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    mode = ap.add_mutually_exclusive_group()
    mode.add_argument("--check", action="store_true")
    mode.add_argument("--write", action="store_true")
    ap.add_argument("names", nargs="*", help="session names (default: all)")
    args = ap.parse_args(argv)
    paths = sorted(SESSIONS.glob("*.des"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    status = 0
    for path in paths:
        text = transcript(path)
        golden = GOLDEN / f"{path.stem}.txt"
        if args.write:
            GOLDEN.mkdir(parents=True, exist_ok=True)
            golden.write_text(text, encoding="utf-8")
            print(f"wrote {golden.relative_to(ROOT)}")
        elif args.check:
            ok = golden.exists() and golden.read_text(encoding="utf-8") == text
            print(f"{'ok' if ok else 'DIFFERS'}  {path.stem}")
            status |= not ok
        else:
            print(f"# {path.stem}\n{text}")
    return status


if __name__ == "__main__":
    sys.exit(main())
