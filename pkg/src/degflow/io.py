"""Binary field snapshots, ladder/trajectory directories and report files."""

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .fields import GridSpec, HermitianField, ScalarField, ma_density

MAGIC = b"DFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB")


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


# -- snapshots --------------------------------------------------------------


def _pack_hermitian(H):
    n = H.grid.n
    v = H.values
    cols = [v[..., j, j].real for j in range(n)]
    for j in range(n):
        for k in range(j + 1, n):
            cols += [v[..., j, k].real, v[..., j, k].imag]
    return np.stack(cols, axis=-1)


def _unpack_hermitian(grid, arr):
    n = grid.n
    out = np.zeros(grid.shape + (n, n), dtype=complex)
    for j in range(n):
        out[..., j, j] = arr[..., j]
    c = n
    for j in range(n):
        for k in range(j + 1, n):
            z = arr[..., c] + 1j * arr[..., c + 1]
            out[..., j, k] = z
            out[..., k, j] = np.conj(z)
            c += 2
    return HermitianField(grid, out)


def write_field(path, f):
    """Write a ScalarField or HermitianField snapshot (little-endian)."""
    grid = f.grid
    if isinstance(f, ScalarField):
        kind, data = 0, f.values
    elif isinstance(f, HermitianField):
        kind, data = 1, _pack_hermitian(f)
    else:
        raise TypeError("expected ScalarField or HermitianField")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, grid.n, grid.N, kind))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes(order="C"))


def read_field(path, period=1.0):
    """Read a snapshot; the format carries no period, so it is supplied here."""
    raw = Path(path).read_bytes()
    magic, version, n, N, kind = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a field snapshot (bad magic)")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    grid = GridSpec(n, N, period)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if kind == 0:
        return ScalarField(grid, data.reshape(grid.shape).copy())
    if kind == 1:
        width = n + n * (n - 1)
        return _unpack_hermitian(grid, data.reshape(grid.shape + (width,)))
    raise ValueError(f"{path}: unknown field kind {kind}")


# -- ladders ----------------------------------------------------------------


def write_ladder(directory, ladder):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"J {ladder.J}", f"strict {int(ladder.strict)}",
             "eps " + " ".join(_fmt(e) for e in ladder.eps),
             "constants " + " ".join(_fmt(c) for c in ladder.constants),
             "margins " + " ".join(_fmt(m) for m in ladder.margins)]
    for j, (_, v) in enumerate(ladder.entries):
        write_field(d / f"v_{j:03d}.dfld", v)
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_ladder(directory, period=1.0):
    from .regularize import ApproxLadder

    d = Path(directory)
    meta = {}
    for line in (d / "manifest.txt").read_text().splitlines():
        key, _, rest = line.partition(" ")
        meta[key] = rest.split()
    eps = [float(x) for x in meta["eps"]]
    entries = [(e, read_field(d / f"v_{j:03d}.dfld", period)) for j, e in enumerate(eps)]
    return ApproxLadder(entries, strict=bool(int(meta["strict"][0])),
                        constants=[float(x) for x in meta.get("constants", [])],
                        margins=[float(x) for x in meta.get("margins", [])])


# -- trajectories -----------------------------------------------------------

DIAG_FIELDS = ("t", "dt", "newton", "linear", "min_eig", "residual")


def write_trajectory(directory, traj, config_echo="", fields=True):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"eps {_fmt(traj.eps)}", f"gauge {traj.gauge}",
             "times " + " ".join(_fmt(t) for t in traj.times)]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    if config_echo:
        (d / "config.toml").write_text(config_echo)
    with open(d / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAG_FIELDS)
        for row in traj.diagnostics:
            w.writerow([_fmt(row[k]) for k in DIAG_FIELDS])
    if fields:
        states = [traj.initial] + list(traj.states)
        for i, s in enumerate(states):
            write_field(d / f"u_{i:04d}.dfld", s.u)
            write_field(d / f"g_{i:04d}.dfld", s.gtilde)


def read_trajectory(directory, bg, period=1.0):
    """Rebuild a trajectory; ``u_t`` is recomputed from the stored metric."""
    from .solvers import FlowState, FlowTrajectory

    d = Path(directory)
    meta = {}
    for line in (d / "manifest.txt").read_text().splitlines():
        key, _, rest = line.partition(" ")
        meta[key] = rest.split()
    times = [0.0] + [float(x) for x in meta["times"]]
    log_omega = np.log(bg.Omega.values)
    states = []
    for i, t in enumerate(times):
        u = read_field(d / f"u_{i:04d}.dfld", period)
        g = read_field(d / f"g_{i:04d}.dfld", period)
        with np.errstate(divide="ignore"):
            ut = np.log(ma_density(g).values) - log_omega - u.values
        states.append(FlowState(t, u, ScalarField(u.grid, ut), g))
    eps = float(meta["eps"][0])
    tr = FlowTrajectory(states=states[1:], initial=states[0], eps=eps,
                        gauge=meta.get("gauge", ["u"])[0], bg=bg.with_eps(eps))
    diag = d / "diagnostics.csv"
    if diag.exists():
        with open(diag) as fh:
            tr.diagnostics = [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
            if tr.diagnostics:
                tr.dt_max_used = max(r["dt"] for r in tr.diagnostics)
    return tr


# -- reports ----------------------------------------------------------------

REPORT_FIELDS = ("check", "rung", "t", "value", "margin", "passed")


def write_reports_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in REPORT_FIELDS])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_summary(directory, summary):
    d = Path(directory)
    (d / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    lines = [f"scenario: {summary.get('scenario', '')}", f"exit_code: {summary['exit_code']}"]
    for c in summary["checks"]:
        lines.append(f"{c['status']:<10} {c['name']:<28} constant={_fmt(c.get('constant', ''))}")
    lines.append("exit codes: 0 all passed, 2 config error, 3 hypothesis not satisfied, "
                 "4 bound failed, 5 solver failure")
    (d / "summary.txt").write_text("\n".join(lines) + "\n")


def write_wide_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
