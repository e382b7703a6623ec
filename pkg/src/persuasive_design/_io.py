"""Atomic file output shared by the exporters."""
import csv
import io
import json
import os
import tempfile
from pathlib import Path

SCHEMA_VERSION = 1


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload):
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    return atomic_write_text(path, json.dumps(body, indent=2, sort_keys=False, allow_nan=True) + "\n")


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
