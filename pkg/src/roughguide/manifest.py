"""Run manifests and columnar text output.

Every output file carries the run id in its header.  The run id is the
SHA-256 of the resolved configuration together with the code version, so it
is known before any output exists; the manifest then records a checksum of
every output, which closes the loop without a circular reference.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import __version__


def run_id(resolved_config: dict) -> str:
    blob = json.dumps({"config": resolved_config, "version": __version__}, sort_keys=True,
                      default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_columns(path, columns: dict, header: Optional[dict] = None, rid: Optional[str] = None):
    """Whitespace-separated columns with '#' header lines; floats written with repr
    so that a reload is bit-exact."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[n]) for n in names]
    n = len(arrays[0])
    if any(len(a) != n for a in arrays):
        raise ValueError("columns differ in length")
    lines = []
    if rid is not None:
        lines.append(f"# run_id: {rid}")
    for k, v in (header or {}).items():
        lines.append(f"# {k}: {json.dumps(v, sort_keys=True, default=_jsonable)}")
    lines.append("# columns: " + " ".join(names))
    for i in range(n):
        lines.append(" ".join(_fmt(a[i]) for a in arrays))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_columns(path):
    header, names, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# columns:"):
            names = line.split(":", 1)[1].split()
        elif line.startswith("#"):
            k, _, v = line[1:].partition(":")
            header[k.strip()] = v.strip()
        elif line.strip():
            rows.append([float(x) for x in line.split()])
    data = np.array(rows, dtype=float).reshape(-1, len(names))
    return header, {n: data[:, i] for i, n in enumerate(names)}


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def write_manifest(out_dir, rid: str, resolved_config: dict, derived: dict,
                   outputs: Iterable, command: str):
    out_dir = Path(out_dir)
    files = {}
    for p in outputs:
        p = Path(p)
        files[p.name] = sha256_file(p)
    doc = {"run_id": rid, "command": command, "version": __version__,
           "config": resolved_config, "derived": derived, "outputs": files}
    path = out_dir / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return path
