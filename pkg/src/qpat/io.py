"""Plain-text file formats: CSV tables, 8-bit PGM images and key-value configs.

PGM images store ``round(255 * (v - min) / (max - min))``; the ``min`` and
``max`` used are written to a sidecar ``<image>.range`` file so the values
can be recovered up to quantization. Nodal fields are written with the
``y = 1`` row at the top of the image.

Scenario files are flat ``key = value`` lists with ``#`` comments and a
versioned first line ``# qpat-scenario v1``. Nested entries use dotted keys,
e.g. ``phantom.inclusion.0.lo = -0.55, 0.15``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .experiments import Inclusion, Phantom, Scenario

SCENARIO_HEADER = "# qpat-scenario v1"
MANIFEST_HEADER = "# qpat-manifest v1"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def write_pgm(path, image) -> Path:
    """8-bit binary PGM plus a ``.range`` sidecar holding the value range."""
    path = Path(path)
    img = np.asarray(image, dtype=float)
    lo, hi = float(np.min(img)), float(np.max(img))
    span = hi - lo
    q = np.zeros(img.shape, np.uint8) if span == 0 else np.rint(255.0 * (img - lo) / span).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(q.tobytes())
    with open(path.with_name(path.name + ".range"), "w") as fh:
        fh.write(f"min = {lo!r}\nmax = {hi!r}\n")
    return path


def read_pgm(path):
    """Return ``(pixels, values)``; values are rescaled with the sidecar range if present."""
    path = Path(path)
    raw = path.read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ConfigurationError(f"{path} is not a binary PGM file")
    w, h = map(int, parts[1].split())
    pix = np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
    side = path.with_name(path.name + ".range")
    if side.exists():
        kv = read_key_values(side)
        lo, hi = float(kv["min"]), float(kv["max"])
        return pix, lo + (hi - lo) * pix / 255.0
    return pix, pix.astype(float)


def write_nodal_field(stem, mesh, values, name="value") -> tuple:
    """Write a nodal field as ``<stem>.csv`` (node, x, y, value) and ``<stem>.pgm``."""
    stem = Path(stem)
    values = np.asarray(values, float)
    rows = ((k, float(x), float(y), float(v)) for k, ((x, y), v) in enumerate(zip(mesh.vertices, values)))
    c = write_csv(stem.with_suffix(".csv"), ["node", "x", "y", name], rows)
    p = write_pgm(stem.with_suffix(".pgm"), mesh.as_grid(values)[::-1])
    return c, p


def write_element_field(path, columns: dict) -> Path:
    names = list(columns)
    arrs = [np.asarray(columns[k], float) for k in names]
    rows = ((e, *(float(a[e]) for a in arrs)) for e in range(arrs[0].size))
    return write_csv(path, ["element", *names], rows)


def read_element_field(path) -> dict:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1))
    return {k: data[:, i] for i, k in enumerate(header)}


def read_key_values(path) -> dict:
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{ln}: expected 'key = value'")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def write_key_values(path, items: dict, header: str) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for k, v in items.items():
            fh.write(f"{k} = {v}\n")
    return path


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _pair(t):
    return f"{_fmt(float(t[0]))}, {_fmt(float(t[1]))}"


def scenario_to_dict(sc: Scenario) -> dict:
    d = {
        "name": sc.name,
        "phantom.mu_a": _fmt(sc.phantom.mu_a),
        "phantom.mu_s": _fmt(sc.phantom.mu_s),
    }
    for i, inc in enumerate(sc.phantom.inclusions):
        d[f"phantom.inclusion.{i}.lo"] = _pair(inc.lo)
        d[f"phantom.inclusion.{i}.hi"] = _pair(inc.hi)
        d[f"phantom.inclusion.{i}.mu_a"] = _fmt(inc.mu_a)
        d[f"phantom.inclusion.{i}.mu_s"] = _fmt(inc.mu_s)
    d["linearization.mu_a"] = _fmt(sc.mu_a_star)
    d["linearization.mu_s"] = _fmt(sc.mu_s_star)
    for i, (side, arc) in enumerate(zip(sc.sides, sc.arcs)):
        d[f"illumination.{i}.side"] = side
        d[f"illumination.{i}.arc"] = f"{_fmt(float(arc[0]))}:{_fmt(float(arc[1]))}"
    for key in ("noise", "g", "n_subdiv", "n_theta", "radius", "n_detectors", "n_time",
                "time_horizon", "intensity", "n_iters", "lambda_factor", "seed", "mu_a_bar", "mu_s_bar"):
        d[key] = _fmt(getattr(sc, key))
    return d


_INT_KEYS = {"n_subdiv", "n_theta", "n_detectors", "n_time", "n_iters", "seed"}
_FLOAT_KEYS = {"noise", "g", "radius", "time_horizon", "intensity", "lambda_factor", "mu_a_bar", "mu_s_bar"}


def _floats(s, n, key):
    try:
        vals = [float(x) for x in s.replace(":", ",").split(",")]
    except ValueError:
        raise ConfigurationError(f"invalid numbers for {key!r}: {s!r}") from None
    if len(vals) != n:
        raise ConfigurationError(f"{key!r} needs {n} values, got {s!r}")
    return tuple(vals)


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    try:
        incs = []
        i = 0
        while f"phantom.inclusion.{i}.lo" in d:
            p = f"phantom.inclusion.{i}."
            incs.append(Inclusion(_floats(d.pop(p + "lo"), 2, p + "lo"), _floats(d.pop(p + "hi"), 2, p + "hi"),
                                  float(d.pop(p + "mu_a")), float(d.pop(p + "mu_s"))))
            i += 1
        phantom = Phantom(float(d.pop("phantom.mu_a")), float(d.pop("phantom.mu_s")), tuple(incs))
        sides, arcs = [], []
        i = 0
        while f"illumination.{i}.side" in d:
            sides.append(d.pop(f"illumination.{i}.side"))
            arcs.append(_floats(d.pop(f"illumination.{i}.arc"), 2, f"illumination.{i}.arc"))
            i += 1
        kw = dict(name=d.pop("name", "custom"), phantom=phantom,
                  mu_a_star=float(d.pop("linearization.mu_a")), mu_s_star=float(d.pop("linearization.mu_s")),
                  sides=tuple(sides), arcs=tuple(arcs))
    except KeyError as e:
        raise ConfigurationError(f"missing scenario key {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigurationError(f"invalid scenario value: {e}") from None
    if not sides:
        raise ConfigurationError("scenario defines no illumination")
    for k in list(d):
        try:
            if k in _INT_KEYS:
                kw[k] = int(d.pop(k))
            elif k in _FLOAT_KEYS:
                kw[k] = float(d.pop(k))
        except ValueError as e:
            raise ConfigurationError(f"invalid value for {k!r}: {e}") from None
    if d:
        raise ConfigurationError(f"unknown scenario keys: {sorted(d)}")
    return Scenario(**kw)


def write_scenario(path, sc: Scenario) -> Path:
    return write_key_values(path, scenario_to_dict(sc), SCENARIO_HEADER)


def read_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"scenario file {path} does not exist")
    with open(path) as fh:
        first = fh.readline().strip()
    if first != SCENARIO_HEADER:
        raise ConfigurationError(f"{path}: expected header line {SCENARIO_HEADER!r}")
    return scenario_from_dict(read_key_values(path))


def write_manifest(path, items: dict) -> Path:
    return write_key_values(path, {k: _fmt(v) for k, v in items.items()}, MANIFEST_HEADER)
