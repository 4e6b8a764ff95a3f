"""Atomic output directories and small CSV/JSON writers."""

from __future__ import annotations

import contextlib
import csv
import json
import os
import shutil
import tempfile
from pathlib import Path


FAULT_ENV = "ESPRIOR_INJECT_FAULT"


class InjectedFault(RuntimeError):
    """Raised by the testing hook that simulates a crash before commit."""


class StagedOutput:
    """Files are written under a hidden staging directory and moved into
    ``final`` only when the ``with`` block exits cleanly."""

    def __init__(self, final):
        self.final = Path(final)
        self.final.parent.mkdir(parents=True, exist_ok=True)
        self.stage = Path(tempfile.mkdtemp(prefix=f".{self.final.name}.", dir=self.final.parent))
        self.names = []

    def path(self, name):
        self.names.append(name)
        return self.stage / name

    def write_text(self, name, text):
        self.path(name).write_text(text)

    def write_bytes(self, name, data):
        self.path(name).write_bytes(data)

    def write_json(self, name, obj):
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_rows(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def commit(self):
        if not self.final.exists():
            # fresh target: one rename publishes the whole directory
            os.rename(self.stage, self.final)
            return
        for name in dict.fromkeys(self.names):
            os.replace(self.stage / name, self.final / name)
        shutil.rmtree(self.stage, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.stage, ignore_errors=True)


@contextlib.contextmanager
def staged_output(final):
    out = StagedOutput(final)
    try:
        yield out
        fault = os.environ.get(FAULT_ENV)
        if fault and fault in out.names:
            raise InjectedFault(f"injected fault after writing {fault}")
    except BaseException:
        out.abort()
        raise
    out.commit()


def fmt(x):
    """Canonical cell formatting: 17 significant digits, empty for None."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, (int,)):
        return str(x)
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)
