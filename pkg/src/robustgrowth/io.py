"""Atomic file output, deterministic JSON/CSV serialisation and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__


class ConfigError(ValueError):
    """Unreadable or malformed input document."""


def _clean(obj):
    """Convert numpy scalars and arrays to plain Python; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text: sorted keys, shortest round-trip floats, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def atomic_write(path, data) -> Path:
    """Write ``data`` (str or bytes) to ``path`` through a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write(path, dumps(obj))


def format_float(v) -> str:
    return "%.17g" % float(v)


def write_csv(path, header, rows) -> Path:
    """CSV with floats at 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return atomic_write(path, buf.getvalue())


def load_json(path) -> dict:
    """Parse a JSON document; errors name the file, line and column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, argv, config_path=None, seed=None,
                   inputs=(), started=None) -> Path:
    """``manifest.json`` with the command line, input hashes, output hashes and timestamps."""
    out_dir = Path(out_dir)
    outputs = {p.name: sha256_file(p) for p in sorted(out_dir.iterdir())
               if p.is_file() and p.name != "manifest.json" and not p.name.startswith(".")}
    hashes = {str(p): sha256_file(p) for p in inputs if p is not None and Path(p).is_file()}
    now = datetime.now(timezone.utc).isoformat()
    doc = {"command": command, "argv": list(argv),
           "config": None if config_path is None else str(config_path),
           "output_dir": str(out_dir), "seed": seed, "inputs": hashes, "outputs": outputs,
           "versions": {"robustgrowth": __version__, "python": platform.python_version(),
                        "numpy": np.__version__},
           "executable": sys.executable,
           "timestamps": {"started": started or now, "finished": now}}
    return write_json(out_dir / "manifest.json", doc)
