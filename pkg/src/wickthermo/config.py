"""Scenario configuration files.

A configuration is a TOML document holding an array of ``[[scenario]]``
tables.  Each scenario has an ``id``, a ``kind`` and up to six sub-tables:
``geometry``, ``grid``, ``field``, ``states``, ``checks`` and ``output``.
Missing keys take the documented defaults of the scenario kind and unknown
keys are rejected.  Errors name the offending field path and, where it can be
located, the line in the source text.
"""
from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "KIND_DEFAULTS",
    "KIND_CLAIMS",
    "SECTIONS",
    "parse_config",
    "load_config",
    "shipped_config_path",
    "schema_text",
]

SECTIONS = ("geometry", "grid", "field", "states", "checks", "output")

_OUTPUT = {"json": True, "csv": True, "plot": True}

KIND_DEFAULTS: dict[str, dict[str, dict]] = {
    "monotonicity": {
        "geometry": {"type": "torus", "side": 1.0},
        "grid": {"points": 16, "method": "dense"},
        "field": {"mass": 1.0},
        "states": {"beta_min": 0.25, "beta_max": 8.0, "beta_count": 25, "beta_spacing": "log",
                   "reference_beta": 1.0, "tail_beta": 8.0, "ground_limit_beta": 64.0},
        "checks": {"ground_limit_ratio": 1e-3},
        "output": dict(_OUTPUT),
    },
    "calibration": {
        "geometry": {"type": "torus", "side": 1.0},
        "grid": {"refinements": [16, 24, 32]},
        "field": {"mass": 0.05},
        "states": {"betas": [0.1]},
        "checks": {"relative_tolerance": 0.02},
        "output": dict(_OUTPUT),
    },
    "counterexample": {
        "geometry": {"type": "exp_newton", "r_inner": 1.0, "r_outer": 2.0, "shell_mass": 1.0,
                     "profile": "smooth"},
        "grid": {"points": 4000, "r_max": 80.0, "levels": 3, "factor": 2, "rmax_doubling": True},
        "field": {"xi": [0.0, 0.05, 0.1]},
        "states": {"betas": [1.0]},
        "checks": {"sigma_factor": 5.0},
        "output": dict(_OUTPUT),
    },
    "positive_noncompact": {
        "geometry": {"type": "affine_newton", "r_inner": 1.0, "r_outer": 2.0, "shell_mass": 1.0,
                     "profile": "smooth"},
        "grid": {"points": 4000, "r_max": 80.0, "levels": 3, "factor": 2, "rmax_doubling": True},
        "field": {"xi": [0.0, 0.125]},
        "states": {"ground": True, "betas": [1.0, 4.0]},
        "checks": {"sigma_factor": 5.0},
        "output": dict(_OUTPUT),
    },
    "positive_compact": {
        "geometry": {"type": "quartic_shell", "r_inner": 1.0, "r_outer": 2.0, "shell_mass": 1.0,
                     "profile": "smooth"},
        "grid": {"points": 1000, "r_match": 4.0, "levels": 3, "factor": 2, "reference_radius": 200.0},
        "field": {"xi": [0.05, 1.0 / 6.0 - 0.01]},
        "states": {"ground": True, "betas": [2.0]},
        "checks": {"agreement": 0.1},
        "output": dict(_OUTPUT),
    },
    "comparison": {
        "geometry": {"type": "torus", "side": 1.0},
        "grid": {"points": 8},
        "field": {"mass": 1.0},
        "states": {},
        "checks": {"pairs": 100, "psd_tolerance": 1e-10},
        "output": dict(_OUTPUT),
    },
    "reduction_oracle": {
        "geometry": {"type": "torus", "side": 1.0},
        "grid": {"points": 4, "tau_points": [64, 128, 256]},
        "field": {"mass": 1.0},
        "states": {"betas": [2.0], "mode_eigenvalues": [0.01, 0.25, 1.0, 4.0, 100.0],
                   "matsubara_terms": 2000},
        "checks": {"matsubara_tolerance": 1e-10, "min_order_ratio": 3.5},
        "output": dict(_OUTPUT),
    },
    "lapse_scaling": {
        "geometry": {"type": "exp_newton", "r_inner": 1.0, "r_outer": 2.0, "shell_mass": 1.0,
                     "profile": "smooth", "side": 1.0},
        "grid": {"points": 4000, "r_max": 80.0, "torus_points": 8},
        "field": {"xi": [0.0], "mass": 1.0},
        "states": {"betas": [1.0]},
        "checks": {"factors": [0.5, 2.0, 10.0], "residual_tolerance": 1e-10},
        "output": dict(_OUTPUT),
    },
    "ground_minimality": {
        "geometry": {"type": "torus", "side": 1.0},
        "grid": {"points": 8},
        "field": {"mass": 1.0},
        "states": {"perturbed_count": 50},
        "checks": {"psd_tolerance": 1e-10},
        "output": dict(_OUTPUT),
    },
}

KIND_CLAIMS = {
    "monotonicity": "thermal excess of the Wick square decreases strictly in beta, with Lipschitz and tail bounds",
    "calibration": "flat high-temperature Wick square approaches 1/(12 beta^2)",
    "counterexample": "an exponential conformal factor makes the ground-state Wick square negative at the centre",
    "positive_noncompact": "an affine conformal factor keeps the Wick square non-negative at the centre",
    "positive_compact": "the compactified quartic shell keeps the Wick square non-negative at the centre",
    "comparison": "larger potentials give smaller Green kernels, and Green kernels are entrywise positive",
    "reduction_oracle": "the equal-time thermal kernel equals the Matsubara sum and the periodic Euclidean Green function",
    "lapse_scaling": "a constant lapse c rescales the Wick square by c^-2 at inverse temperature c beta",
    "ground_minimality": "occupation-perturbed stationary states dominate the ground state pointwise",
}

_GEOMETRY_TYPES = {
    "monotonicity": ("torus",),
    "calibration": ("torus",),
    "counterexample": ("exp_newton",),
    "positive_noncompact": ("affine_newton",),
    "positive_compact": ("quartic_shell",),
    "comparison": ("torus",),
    "reduction_oracle": ("torus",),
    "lapse_scaling": ("exp_newton", "affine_newton", "unit"),
    "ground_minimality": ("torus",),
}

_XI_RANGES = {
    "counterexample": (0.0, 0.125, True, False, "xi in [0, 1/8)"),
    "positive_noncompact": (0.0, 0.125, True, True, "xi in [0, 1/8]"),
    "positive_compact": (0.0, 1.0 / 6.0, False, False, "scalar curvature coupling xi in (0, 1/6)"),
}

_POSITIVE = {"side", "r_inner", "r_outer", "shell_mass", "r_max", "r_match", "reference_radius",
             "beta_min", "beta_max", "reference_beta", "tail_beta", "ground_limit_beta",
             "ground_limit_ratio", "relative_tolerance", "sigma_factor", "agreement", "psd_tolerance",
             "matsubara_tolerance", "min_order_ratio", "residual_tolerance"}
_COUNTS = {"points": 4, "levels": 1, "factor": 2, "beta_count": 2, "pairs": 1, "perturbed_count": 1,
           "matsubara_terms": 1, "torus_points": 4}


class ConfigError(ValueError):
    """Configuration problem addressed by field path and, when known, line number."""

    def __init__(self, message, path="", line=None):
        self.path = path
        self.line = line
        where = path
        if line is not None:
            where = f"line {line}: {path}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


@dataclass
class ScenarioConfig:
    id: str
    kind: str
    geometry: dict
    grid: dict
    field: dict
    states: dict
    checks: dict
    output: dict
    seed: int = 0
    index: int = 0

    def section(self, name):
        return getattr(self, name)

    def as_dict(self) -> dict:
        d = {"id": self.id, "kind": self.kind, "seed": self.seed}
        for s in SECTIONS:
            d[s] = self.section(s)
        return d

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def claim(self) -> str:
        return KIND_CLAIMS[self.kind]

    def betas(self):
        st = self.states
        if "betas" in st:
            return [float(b) for b in st["betas"]]
        import numpy as np

        if st.get("beta_spacing", "log") == "log":
            return list(np.geomspace(st["beta_min"], st["beta_max"], int(st["beta_count"])))
        return list(np.linspace(st["beta_min"], st["beta_max"], int(st["beta_count"])))


class _Locator:
    """Best-effort mapping from field paths to line numbers in TOML text."""

    def __init__(self, text):
        self.lines = text.splitlines()
        self.starts = [i for i, ln in enumerate(self.lines) if re.match(r"\s*\[\[\s*scenario\s*\]\]", ln)]

    def find(self, index, section, key):
        if index is None:
            for i, ln in enumerate(self.lines):
                if key and re.match(rf"\s*{re.escape(key)}\s*=", ln):
                    return i + 1
            return None
        if index >= len(self.starts):
            return None
        lo = self.starts[index]
        hi = self.starts[index + 1] if index + 1 < len(self.starts) else len(self.lines)
        current = None  # sub-table of the line being scanned
        header = None
        for i in range(lo + 1, hi):
            ln = self.lines[i]
            m = re.match(r"\s*\[\s*scenario\.(\w+)\s*\]", ln)
            if m:
                current = m.group(1)
                if current == section:
                    header = i + 1
                continue
            if current == section and key and re.match(rf"\s*{re.escape(key)}\s*=", ln):
                return i + 1
            if current is None and section and re.match(rf"\s*{section}\s*=", ln):
                return i + 1
        return header if header is not None else lo + 1


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _validate_value(key, value, default, err):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            err(f"expected true or false, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            err(f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            err(f"expected a non-empty list, got {value!r}")
        out = []
        for j, item in enumerate(value):
            if not _is_number(item):
                err(f"entry {j} must be a number, got {item!r}", suffix=f"[{j}]")
            if key in ("betas", "factors", "mode_eigenvalues") and not item > 0:
                err(f"must be positive, got {item!r}", suffix=f"[{j}]")
            if key in ("refinements", "tau_points") and (int(item) != item or item < 4):
                err(f"must be an integer >= 4, got {item!r}", suffix=f"[{j}]")
            out.append(int(item) if isinstance(default[0], int) else float(item))
        return out
    if isinstance(default, int):
        if not _is_number(value) or int(value) != value:
            err(f"expected an integer, got {value!r}")
        value = int(value)
        lo = _COUNTS.get(key)
        if lo is not None and value < lo:
            err(f"must be >= {lo}, got {value}")
        return value
    if not _is_number(value):
        err(f"expected a number, got {value!r}")
    value = float(value)
    if key in _POSITIVE and not value > 0:
        err(f"must be positive, got {value!r}")
    return value


def _check_cross(cfg: ScenarioConfig, err):
    g, gr, st = cfg.geometry, cfg.grid, cfg.states
    if g["type"] not in _GEOMETRY_TYPES[cfg.kind]:
        err(f"geometry type {g['type']!r} is not valid for kind {cfg.kind!r}; "
            f"use one of {list(_GEOMETRY_TYPES[cfg.kind])}", "geometry", "type")
    if "r_outer" in g and not g["r_outer"] > g["r_inner"]:
        err(f"r_outer must exceed r_inner ({g['r_inner']})", "geometry", "r_outer")
    if "profile" in g and g["profile"] not in ("uniform", "smooth"):
        err(f"profile must be 'uniform' or 'smooth', got {g['profile']!r}", "geometry", "profile")
    if "method" in gr and gr["method"] not in ("dense", "fourier"):
        err(f"method must be 'dense' or 'fourier', got {gr['method']!r}", "grid", "method")
    if "beta_spacing" in st and st["beta_spacing"] not in ("log", "linear"):
        err("beta_spacing must be 'log' or 'linear'", "states", "beta_spacing")
    if "beta_max" in st and not st["beta_max"] > st["beta_min"]:
        err("beta_max must exceed beta_min", "states", "beta_max")
    if "levels" in gr and cfg.kind in ("counterexample", "positive_noncompact", "positive_compact") \
            and gr["levels"] < 3:
        err("extrapolation needs at least 3 refinement levels", "grid", "levels")
    if "refinements" in gr and len(gr["refinements"]) < 3:
        err("extrapolation needs at least 3 refinement levels", "grid", "refinements")
    if "tau_points" in gr and len(gr["tau_points"]) < 3:
        err("the tau-refinement envelope needs 3 resolutions", "grid", "tau_points")
    if "r_match" in gr and "r_outer" in g and not gr["r_match"] > g["r_outer"]:
        err("r_match must lie outside the shell", "grid", "r_match")
    if "r_max" in gr and "r_outer" in g and not gr["r_max"] > 2 * g["r_outer"]:
        err("r_max must be well outside the shell (> 2 r_outer)", "grid", "r_max")
    rng = _XI_RANGES.get(cfg.kind)
    if rng is not None:
        lo, hi, lo_closed, hi_closed, text = rng
        for j, xi in enumerate(cfg.field["xi"]):
            ok_lo = xi >= lo if lo_closed else xi > lo
            ok_hi = xi <= hi if hi_closed else xi < hi
            if not (ok_lo and ok_hi):
                err(f"xi = {xi!r} is outside the admissible range ({text})", "field", "xi", f"[{j}]")
    if cfg.kind == "lapse_scaling":
        for j, xi in enumerate(cfg.field["xi"]):
            if not 0 <= xi < 0.125 + 1e-15 and g["type"] != "unit":
                err(f"xi = {xi!r} must lie in [0, 1/8]", "field", "xi", f"[{j}]")


def parse_config(text: str, seed: int | None = None) -> list[ScenarioConfig]:
    """Parse and validate a configuration document.

    Parameters
    ----------
    text : str
        TOML text.
    seed : int, optional
        Overrides every scenario seed.

    Returns
    -------
    list of ScenarioConfig
        In document order, with defaults filled.

    Raises
    ------
    ConfigError
        With a field path such as ``scenario[1].states.betas[0]`` and a line number.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", line=int(m.group(1)) if m else None) from exc
    loc = _Locator(text)
    top_allowed = {"scenario", "seed", "description"}
    for key in doc:
        if key not in top_allowed:
            raise ConfigError(f"unknown top-level key {key!r}; allowed: {sorted(top_allowed)}", key,
                              _Locator(text).find(None, None, key))
    global_seed = doc.get("seed", 0)
    if not isinstance(global_seed, int) or isinstance(global_seed, bool) or global_seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {global_seed!r}", "seed")
    scenarios = doc.get("scenario")
    if not isinstance(scenarios, list) or not scenarios:
        raise ConfigError("the document must contain at least one [[scenario]] table", "scenario")
    out, seen = [], set()
    for i, raw in enumerate(scenarios):
        base = f"scenario[{i}]"

        def err(msg, section=None, key=None, suffix="", _i=i, _base=base):
            path = _base + (f".{section}" if section else "") + (f".{key}" if key else "") + suffix
            raise ConfigError(msg, path, loc.find(_i, section, key))

        for key in raw:
            if key not in ("id", "kind", "seed") + SECTIONS:
                err(f"unknown key {key!r}; allowed: id, kind, seed, {', '.join(SECTIONS)}", None, key)
        kind = raw.get("kind")
        if kind not in KIND_DEFAULTS:
            err(f"unknown scenario kind {kind!r}; choose from {sorted(KIND_DEFAULTS)}", None, "kind")
        sid = raw.get("id", kind)
        if not isinstance(sid, str) or not re.fullmatch(r"[A-Za-z0-9_\-]+", sid):
            err(f"id must be a simple name (letters, digits, '_' or '-'), got {sid!r}", None, "id")
        if sid in seen:
            err(f"duplicate scenario id {sid!r}", None, "id")
        seen.add(sid)
        sc_seed = raw.get("seed", global_seed)
        if not isinstance(sc_seed, int) or isinstance(sc_seed, bool) or sc_seed < 0:
            err(f"seed must be a non-negative integer, got {sc_seed!r}", None, "seed")
        sections = {}
        for sec in SECTIONS:
            defaults = KIND_DEFAULTS[kind][sec]
            given = raw.get(sec, {})
            if not isinstance(given, dict):
                err(f"expected a table, got {given!r}", sec)
            merged = copy.deepcopy(defaults)
            for key, value in given.items():
                if key not in defaults:
                    allowed = ", ".join(sorted(defaults)) or "none"
                    err(f"unknown key {key!r} for kind {kind!r} (allowed: {allowed})", sec, key)

                def kerr(msg, suffix="", _sec=sec, _key=key):
                    err(msg, _sec, _key, suffix)

                merged[key] = _validate_value(key, value, defaults[key], kerr)
            sections[sec] = merged
        cfg = ScenarioConfig(sid, kind, seed=seed if seed is not None else sc_seed, index=i, **sections)
        _check_cross(cfg, lambda msg, sec=None, key=None, suffix="": err(msg, sec, key, suffix))
        out.append(cfg)
    return out


def shipped_config_path(name: str) -> Path:
    """Path of a configuration shipped with the package (``default`` or ``calibration``)."""
    res = resources.files("wickthermo") / "data" / f"{name}.toml"
    return Path(str(res))


def load_config(path_or_name: str, seed: int | None = None) -> list[ScenarioConfig]:
    """Read a configuration from a file path or a shipped name."""
    p = Path(path_or_name)
    if not p.exists() and re.fullmatch(r"[A-Za-z0-9_\-]+", str(path_or_name)):
        p = shipped_config_path(str(path_or_name))
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path_or_name!r}: {exc.strerror}") from exc
    return parse_config(text, seed)


def schema_text() -> str:
    return (resources.files("wickthermo") / "data" / "schema.md").read_text(encoding="utf-8")
