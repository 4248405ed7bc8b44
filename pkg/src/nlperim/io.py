"""Text artifacts: plain PBM (P1) bitmaps with a JSON sidecar, kernel JSON, CSV.

A 2D set is written with array axis 0 as rows.  A 3D set is stacked: the
bitmap has shape (N0 * N1, N2) and the sidecar records the true shape.
"""

import json
import os

import numpy as np

from .gridgeom import GridSet, GridError


def format_pbm(u):
    u = np.asarray(u, dtype=bool)
    if u.ndim != 2:
        raise GridError("PBM bitmaps are 2D")
    rows, cols = u.shape
    lines = ["P1", "%d %d" % (cols, rows)]
    for r in u.astype(np.uint8):
        # keep lines under 70 characters as the format asks
        s = " ".join("1" if x else "0" for x in r)
        while len(s) > 69:
            cut = s.rfind(" ", 0, 70)
            lines.append(s[:cut])
            s = s[cut + 1:]
        lines.append(s)
    return "\n".join(lines) + "\n"


def parse_pbm(text):
    toks = []
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        toks.extend(line.split())
    if not toks or toks[0] != "P1":
        raise GridError("not a plain PBM (P1) file")
    try:
        cols, rows = int(toks[1]), int(toks[2])
    except (IndexError, ValueError):
        raise GridError("malformed PBM header")
    body = "".join(toks[3:])
    if len(body) != rows * cols or set(body) - {"0", "1"}:
        raise GridError("PBM body does not match its size")
    return (np.frombuffer(body.encode(), dtype=np.uint8) == ord("1")).reshape(rows, cols)


def sidecar_path(path):
    return os.path.splitext(path)[0] + ".json"


def write_set(E, path):
    """Write E as PBM plus a JSON sidecar with h, origin and shape."""
    u = E.u
    flat = u.reshape(-1, u.shape[-1]) if u.ndim == 3 else u
    with open(path, "w") as f:
        f.write(format_pbm(flat))
    meta = {"h": E.h, "origin": [float(x) for x in E.origin], "shape": list(u.shape)}
    with open(sidecar_path(path), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def read_set(path, h=None):
    """Read a PBM set; the sidecar (if present) supplies h, origin and 3D shape."""
    with open(path) as f:
        u = parse_pbm(f.read())
    meta = {}
    sc = sidecar_path(path)
    if os.path.exists(sc):
        with open(sc) as f:
            meta = json.load(f)
    shape = meta.get("shape")
    if shape is not None:
        if int(np.prod(shape)) != u.size:
            raise GridError("sidecar shape does not match the bitmap")
        u = u.reshape(shape)
    hh = h if h is not None else meta.get("h", 1.0)
    return GridSet(u, hh, meta.get("origin"))


def write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for r in rows:
            f.write(",".join(_fmt(x) for x in r) + "\n")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return "%d" % x
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
