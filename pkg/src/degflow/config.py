"""Scenario files: TOML with sections grid, background, initial, ladder, flow, output, checks."""

import copy
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .fields import GridSpec, ScalarField
from .background import BackgroundFamily, raw_weight, builtin_weight, M_CLAMP, MASK_THRESHOLD
from .solvers import SolverConfig

SCENARIO_DIR = Path(__file__).parent / "scenarios"

DEFAULTS_TEXT = """\
# degflow scenario defaults; every key below may be overridden.
# Potentials are tables {kind = ..., ...} or arrays of such tables (summed).
# kinds: zero, constant{value}, cos_mode{amplitude, k}, sin_mode{amplitude, k},
#        abs_power{amplitude, axis, p, mode}, weight_axis_k{axis, scale, floor},
#        exp_weight{axis}, snapshot{path}

[scenario]
name = "unnamed"
description = ""

[grid]
n = 1
N = 64
period = 1.0

[background]
A0 = 0.0            # scalar (times identity) or row-major n x n list
A1 = 1.0
B_inf = 1.0
psi = {kind = "zero"}
psi1 = {kind = "zero"}
h_inf = {kind = "zero"}
Omega = {kind = "constant", value = 1.0}

[initial]
v = {kind = "zero"}
smooth = true
psh_tol = 1e-8
measure_tags = {}

[ladder]
mode = "smooth"     # smooth | measure | single
J = 4
eps0 = 1.0
eps_ratio = 0.5
r0 = 0.05
r_scale = 0.05      # measure mode: mollification radius per unit eps
strict = false
strict_shift = "harmonic"   # harmonic (1/(j+1)) | geometric (2^-j)
target = {kind = "constant", value = 1.0}   # measure mode only

[flow]
T_end = 0.5
T_max = 2.0
K = 256
gamma = 2.0
dt_min = 1e-12
newton_tol = 1e-13
elliptic_tol = 1e-11
newton_max_iter = 30
pos_margin = 1e-12
linear_tol = 1e-10
c1 = 1.0

[output]
sample_times = []
geometric_samples = 0     # extra samples T_end * 2^-k, k = 1..geometric_samples
dense_windows = []
store_every = 0           # 0: about 32 graded nodes
save_fields = false

[weights]                 # named weights, e.g. [weights.w1] axis = 1, lambda = 0.05, M = 10

# [[checks]] kind = ... ; kinds: upper_u, ut_upper, ut_lower, residual, deg_upper,
# lower, weak_convergence, uniqueness, volume, comparison, shift, gauge, linf, modulus.
# Optional per check: name, expect = "pass" | "hypothesis_fail".
"""

CHECK_KINDS = {
    "upper_u", "ut_upper", "ut_lower", "residual", "deg_upper", "lower", "weak_convergence",
    "uniqueness", "volume", "comparison", "shift", "gauge", "linf", "modulus",
}
POTENTIAL_KINDS = {
    "zero", "constant", "cos_mode", "sin_mode", "abs_power", "weight_axis_k", "exp_weight", "snapshot",
}


def defaults():
    return tomllib.loads(DEFAULTS_TEXT)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("measure_tags",):
            out[k] = _merge(out[k], v) if not _is_potential(v) else copy.deepcopy(v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _is_potential(v):
    return isinstance(v, dict) and "kind" in v


def _line_of(text, section, key):
    """Best-effort 1-based line number of ``key`` inside ``[section]``."""
    if not text:
        return None
    cur = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[\[?([^\]]+)\]\]?", s)
        if m:
            cur = m.group(1).strip()
            continue
        if (cur == section or section is None) and re.match(rf"^{re.escape(key)}\s*=", s):
            return i
    return None


@dataclass
class ScenarioConfig:
    data: dict
    text: str = ""
    path: Path = None
    base_dir: Path = field(default_factory=Path.cwd)

    def error(self, section, key, msg):
        line = _line_of(self.text, section, key)
        where = f"{section}.{key}" if section else key
        loc = f" (line {line})" if line else ""
        return ConfigError(f"{where}{loc}: {msg}", field=where, line=line)

    def get(self, section, key):
        return self.data[section][key]

    @property
    def name(self):
        return self.data["scenario"]["name"]

    # -- builders -----------------------------------------------------------

    def grid(self):
        g = self.data["grid"]
        try:
            return GridSpec(int(g["n"]), int(g["N"]), float(g["period"]))
        except ValueError as exc:
            raise self.error("grid", "N", str(exc)) from None

    def matrix(self, section, key):
        n = int(self.data["grid"]["n"])
        raw = self.data[section][key]
        try:
            m = np.asarray(raw, dtype=float)
            if m.ndim == 0:
                return float(m) * np.eye(n)
            return m.reshape(n, n)
        except (ValueError, TypeError):
            raise self.error(section, key, f"expected a scalar or a {n}x{n} row-major matrix") from None

    def potential(self, spec, grid, section, key):
        return build_potential(spec, grid, self, section, key)

    def background(self, grid=None):
        grid = grid or self.grid()
        b = self.data["background"]
        pot = {k: self.potential(b[k], grid, "background", k) for k in ("psi", "psi1", "h_inf", "Omega")}
        try:
            return BackgroundFamily(grid, self.matrix("background", "A0"), self.matrix("background", "B_inf"),
                                    A1=self.matrix("background", "A1"), psi=pot["psi"], psi1=pot["psi1"],
                                    h_inf=pot["h_inf"], Omega=pot["Omega"])
        except Exception as exc:
            raise self.error("background", "A0", str(exc)) from None

    def solver(self):
        f = self.data["flow"]
        return SolverConfig(K=int(f["K"]), gamma=float(f["gamma"]), dt_min=float(f["dt_min"]),
                            newton_tol=float(f["newton_tol"]), elliptic_tol=float(f["elliptic_tol"]),
                            newton_max_iter=int(f["newton_max_iter"]), pos_margin=float(f["pos_margin"]),
                            linear_tol=float(f["linear_tol"]))

    def sample_times(self):
        o = self.data["output"]
        T = float(self.data["flow"]["T_end"])
        ts = [float(t) for t in o["sample_times"]]
        ts += [T * 2.0 ** (-k) for k in range(1, int(o["geometric_samples"]) + 1)]
        return sorted(set(ts))

    def weight(self, name, grid=None, bg=None):
        grid = grid or self.grid()
        ws = self.data.get("weights", {})
        if name not in ws:
            raise self.error("checks", "weight", f"undefined weight {name!r}")
        w = ws[name]
        om1 = bg.omega1 if bg is not None else None
        return builtin_weight(grid, int(w.get("axis", 1)), lam=float(w.get("lambda", 0.0)),
                              M=float(w.get("M", MASK_THRESHOLD)), clamp=float(w.get("clamp", M_CLAMP)),
                              omega1=om1)

    # -- validation ---------------------------------------------------------

    def validate(self):
        d = self.data
        for sec in ("grid", "background", "initial", "ladder", "flow", "output"):
            if not isinstance(d.get(sec), dict):
                raise self.error(None, sec, "missing section")
        g = d["grid"]
        for key in ("n", "N"):
            if not isinstance(g[key], int) or isinstance(g[key], bool) or g[key] < 1:
                raise self.error("grid", key, "must be a positive integer")
        N = g["N"]
        if N < 8 or N & (N - 1):
            raise self.error("grid", "N", "must be a power of two >= 8")
        if not float(g["period"]) > 0:
            raise self.error("grid", "period", "must be positive")
        for key in ("A0", "A1", "B_inf"):
            self.matrix("background", key)
        for key in ("psi", "psi1", "h_inf", "Omega"):
            _check_potential(self, d["background"][key], "background", key)
        _check_potential(self, d["initial"]["v"], "initial", "v")
        lad = d["ladder"]
        if lad["mode"] not in ("smooth", "measure", "single"):
            raise self.error("ladder", "mode", "must be smooth, measure or single")
        if not isinstance(lad["J"], int) or lad["J"] < 0:
            raise self.error("ladder", "J", "must be an integer >= 0")
        if not float(lad["eps0"]) > 0:
            raise self.error("ladder", "eps0", "must be positive")
        if not 0 < float(lad["eps_ratio"]) < 1:
            raise self.error("ladder", "eps_ratio", "must lie in (0, 1)")
        if lad["strict_shift"] not in ("harmonic", "geometric"):
            raise self.error("ladder", "strict_shift", "must be harmonic or geometric")
        if lad["mode"] == "measure":
            _check_potential(self, lad["target"], "ladder", "target")
        f = d["flow"]
        T_end, T_max = float(f["T_end"]), float(f["T_max"])
        if not T_end > 0:
            raise self.error("flow", "T_end", "must be positive")
        if T_end > T_max:
            raise self.error("flow", "T_end", f"T_end={T_end:g} exceeds T_max={T_max:g}")
        if not isinstance(f["K"], int) or f["K"] < 1:
            raise self.error("flow", "K", "must be a positive integer")
        if not float(f["dt_min"]) > 0:
            raise self.error("flow", "dt_min", "must be positive")
        if not float(f["newton_tol"]) > 0:
            raise self.error("flow", "newton_tol", "must be positive")
        for t in d["output"]["sample_times"]:
            if not 0 < float(t) <= T_end:
                raise self.error("output", "sample_times", f"sample time {t} outside (0, T_end]")
        for w in d["output"]["dense_windows"]:
            if len(w) != 2 or not 0 <= w[0] < w[1] <= T_end:
                raise self.error("output", "dense_windows", f"bad window {w}")
        weights = d.get("weights", {})
        for name, w in weights.items():
            if not isinstance(w, dict):
                raise self.error("weights", name, "must be a table")
            if not 1 <= int(w.get("axis", 1)) <= g["n"]:
                raise self.error(f"weights.{name}", "axis", f"must be in 1..{g['n']}")
        for i, chk in enumerate(d.get("checks", [])):
            kind = chk.get("kind")
            if kind not in CHECK_KINDS:
                raise self.error("checks", "kind", f"check #{i + 1}: unknown kind {kind!r}")
            if "weight" in chk and chk["weight"] not in weights:
                raise self.error("checks", "weight", f"check #{i + 1}: undefined weight {chk['weight']!r}")
            if chk.get("expect", "pass") not in ("pass", "hypothesis_fail"):
                raise self.error("checks", "expect", "must be pass or hypothesis_fail")
            for t in chk.get("tests", []):
                _check_potential(self, t, "checks", "tests")
        return self


def _check_potential(cfg, spec, section, key):
    specs = spec if isinstance(spec, list) else [spec]
    for s in specs:
        if not isinstance(s, dict) or s.get("kind") not in POTENTIAL_KINDS:
            raise cfg.error(section, key, f"unknown potential {s!r}; kinds: {sorted(POTENTIAL_KINDS)}")
        if s["kind"] == "snapshot" and "path" not in s:
            raise cfg.error(section, key, "snapshot needs a path")


def build_potential(spec, grid, cfg=None, section="", key=""):
    """Evaluate a potential spec (table or list of tables, summed) on ``grid``."""
    if isinstance(spec, list):
        out = ScalarField.constant(grid, 0.0)
        for s in spec:
            out = out + build_potential(s, grid, cfg, section, key)
        return out
    kind = spec.get("kind")
    P = grid.period
    if kind == "zero":
        return ScalarField.constant(grid, 0.0)
    if kind == "constant":
        return ScalarField.constant(grid, float(spec.get("value", 0.0)))
    if kind in ("cos_mode", "sin_mode"):
        k = list(spec.get("k", [1] + [0] * (grid.ndim - 1)))
        if len(k) != grid.ndim:
            raise (cfg.error(section, key, f"k needs {grid.ndim} entries") if cfg else ValueError("bad k"))
        phase = sum(2 * np.pi * kk * c / P for kk, c in zip(k, grid.coords()))
        fn = np.cos if kind == "cos_mode" else np.sin
        return ScalarField(grid, float(spec.get("amplitude", 1.0)) * fn(phase))
    if kind == "abs_power":
        x = grid.coords()[int(spec.get("axis", 1)) - 1]
        m = int(spec.get("mode", 1))
        vals = float(spec.get("amplitude", 1.0)) * np.abs(np.sin(2 * np.pi * m * x / P)) ** float(spec.get("p", 3.0))
        return ScalarField(grid, vals)
    if kind == "weight_axis_k":
        raw = raw_weight(grid, int(spec.get("axis", 1)))
        w = np.maximum(raw - raw[np.isfinite(raw)].max(), -float(spec.get("clamp", M_CLAMP)))
        if "floor" in spec:
            w = np.maximum(w, -float(spec["floor"]))
        return ScalarField(grid, float(spec.get("scale", 1.0)) * w)
    if kind == "exp_weight":
        raw = raw_weight(grid, int(spec.get("axis", 1)))
        w = np.maximum(raw - raw[np.isfinite(raw)].max(), -float(spec.get("clamp", M_CLAMP)))
        return ScalarField(grid, np.exp(w) + float(spec.get("offset", 0.0)))
    if kind == "snapshot":
        from .io import read_field

        base = cfg.base_dir if cfg is not None else Path.cwd()
        f = read_field(base / spec["path"], grid.period)
        if f.grid != grid:
            raise (cfg.error(section, key, "snapshot grid does not match [grid]") if cfg
                   else ValueError("snapshot grid mismatch"))
        return f
    raise (cfg.error(section, key, f"unknown potential kind {kind!r}") if cfg else ValueError(kind))


def resolve_path(name):
    """A config path, or the name of a shipped scenario (with or without ``.cfg``)."""
    p = Path(name)
    if p.exists():
        return p
    cand = SCENARIO_DIR / (name if name.endswith(".cfg") else name + ".cfg")
    if cand.exists():
        return cand
    raise ConfigError(f"config {name!r} not found (also looked in shipped scenarios)", field="config", line=None)


def load_config(path, overrides=None):
    p = resolve_path(str(path))
    text = p.read_text()
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"{p}: {exc}", field="syntax", line=int(m.group(1)) if m else None) from None
    data = _merge(defaults(), raw)
    if overrides:
        data = _merge(data, overrides)
    cfg = ScenarioConfig(data, text, p, p.parent)
    return cfg.validate()


def from_dict(raw, base_dir=None):
    cfg = ScenarioConfig(_merge(defaults(), raw), "", None, Path(base_dir or Path.cwd()))
    return cfg.validate()


def shipped_scenarios():
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.cfg"))
