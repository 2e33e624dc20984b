"""Serialization: system JSON documents, CSV tables, atomic file writes."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DomainError, MissingArtifact
from .lti import make_system

CSV_FMT = "%.15g"


def atomic_write_text(path, text):
    """Write via a temporary file in the same directory, then rename."""
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


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj):
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj):
    return atomic_write_text(path, dumps(obj))


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    return json.loads(path.read_text())


def _matrix_to_list(m):
    return np.asarray(m, dtype=float).tolist()


def _list_to_matrix(rows, shape):
    a = np.array(rows, dtype=float)
    return a.reshape(shape)


def system_to_dict(sys):
    doc = {
        "kind": "continuous",
        "dims": {"n": sys.n, "n_u": sys.n_u, "n_y": sys.n_y},
        "E": _matrix_to_list(sys.E),
        "A": _matrix_to_list(sys.A),
        "B": _matrix_to_list(sys.B),
        "C": _matrix_to_list(sys.C),
    }
    if not sys.strictly_proper:
        doc["D"] = _matrix_to_list(sys.feedthrough())
    return doc


def system_from_dict(doc):
    if doc.get("kind", "continuous") != "continuous":
        raise DomainError(f"expected a continuous system document, got {doc.get('kind')!r}")
    n, nu, ny = doc["dims"]["n"], doc["dims"]["n_u"], doc["dims"]["n_y"]
    E = _list_to_matrix(doc["E"], (n, n))
    A = _list_to_matrix(doc["A"], (n, n))
    B = _list_to_matrix(doc["B"], (n, nu))
    C = _list_to_matrix(doc["C"], (ny, n))
    D = _list_to_matrix(doc["D"], (ny, nu)) if "D" in doc else None
    return make_system(E, A, B, C, D)


def save_system(path, sys):
    return write_json(path, system_to_dict(sys))


def load_system(path):
    return system_from_dict(read_json(path))


def csv_text(header, columns):
    """Comma-separated table with a header row and 15 significant digits."""
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    if cols and len(cols[0]):
        np.savetxt(buf, np.column_stack(cols), delimiter=",", fmt=CSV_FMT)
    return buf.getvalue()


def write_csv(path, header, columns):
    return atomic_write_text(path, csv_text(header, columns))


def read_csv(path):
    """Return ``(header, dict of float columns)``."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, {h: data[:, i] for i, h in enumerate(header)}


def write_frequency_response_csv(path, sys, omega):
    """Frequency response as ``omega_rad_s,re,im``; one file per output-input pair when MIMO."""
    from .lti import freqresp

    omega = np.asarray(omega, dtype=float)
    H = freqresp(sys, 1j * omega)
    path = Path(path)
    written = []
    for i in range(sys.n_y):
        for j in range(sys.n_u):
            target = path if sys.shape == (1, 1) else path.with_name(f"{path.stem}_y{i}u{j}{path.suffix}")
            h = H[:, i, j]
            written.append(write_csv(target, ["omega_rad_s", "re", "im"], [omega, h.real, h.imag]))
    return written


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
