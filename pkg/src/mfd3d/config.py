"""Experiment configuration: INI-style files, one section per experiment.

Keys (see README for the full schema):

    domain   = ball | stl <path>
    radius   = 1.0                  center = 0 0 0        (ball only)
    source   = grid | halton | node-file
    h0       = 0.25                 levels = 0 1 2 3      (spacing schedule)
    h        = 0.09 0.07            (explicit spacings, alternative to h0)
    node_files = a.txt b.txt        (source = node-file)
    boundary = projected | node-file <paths per level>
    methods  = oct-dist:k=18,s=1,n=3,delta=0.9; 20near; pqr3
    solver   = direct | bicgstab:tol=1e-6,maxit=1000
    problem  = ball-exp | const:<value>
    output   = results.csv          plot_data = plot.csv  (optional)
    nodes_output = prefix           (for the node-generation command)
    seed     = 0                    (optional)

The spacing schedule follows h_i = 0.9 * h0 * 2^(-i/3), which roughly
doubles the interior node count per level.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .selection import SelectionParams


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass
class MethodSpec:
    kind: str                 # oct-dist | oct | knear | tet | pqr3 | pqr4 | pqr4sel
    label: str
    params: SelectionParams = None    # oct-dist only
    k: int = 20                       # knear only
    tet_path: str = None              # tet only


@dataclass
class ExperimentConfig:
    name: str
    domain_kind: str                  # ball | stl
    stl_path: str = None
    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)
    source: str = "grid"              # grid | halton | node-file
    spacings: list = field(default_factory=list)     # h per level
    node_files: list = field(default_factory=list)
    boundary: str = "projected"
    boundary_files: list = field(default_factory=list)
    methods: list = field(default_factory=list)
    solver: str = "direct"
    solver_tol: float = 1e-6
    solver_maxit: int = 1000
    problem: str = "ball-exp"
    problem_value: float = -10.0
    output: str = None
    plot_data: str = None
    nodes_output: str = None
    seed: int = 0

    @property
    def n_levels(self) -> int:
        if self.source == "node-file":
            return len(self.node_files)
        return len(self.spacings)


def parse_method(text: str) -> MethodSpec:
    text = text.strip()
    if not text:
        raise ConfigError("empty method entry")
    name, _, arg = text.partition(":")
    name = name.strip().lower()
    arg = arg.strip()

    if name.endswith("near") and name[:-4].isdigit():    # 20near, 30near, ...
        return MethodSpec("knear", name, k=int(name[:-4]))
    if name == "knear":
        if not arg:
            raise ConfigError("knear needs a count, e.g. knear:20")
        k = int(arg)
        return MethodSpec("knear", f"{k}near", k=k)
    if name == "oct-dist":
        opts = {}
        if arg:
            for item in arg.split(","):
                key, _, val = item.partition("=")
                key = key.strip()
                if key not in ("m", "k", "s", "n", "delta"):
                    raise ConfigError(f"unknown oct-dist option {key!r}")
                opts[key] = float(val) if key == "delta" else int(val)
        try:
            params = SelectionParams(**opts)
        except ValueError as exc:
            raise ConfigError(f"bad oct-dist parameters: {exc}") from None
        return MethodSpec("oct-dist", "oct-dist", params=params)
    if name == "oct":
        return MethodSpec("oct", "oct")
    if name == "tet":
        if not arg:
            raise ConfigError("tet needs a mesh file, e.g. tet:mesh.txt")
        return MethodSpec("tet", "tet", tet_path=arg)
    if name in ("pqr3", "pqr4", "pqr4sel"):
        return MethodSpec(name, name)
    raise ConfigError(f"unknown selection method {text!r}")


def _parse_section(name: str, sec) -> ExperimentConfig:
    def get(key, default=None):
        return sec.get(key, default)

    domain_field = get("domain")
    if domain_field is None:
        raise ConfigError(f"[{name}]: missing 'domain'")
    parts = domain_field.split()
    kind = parts[0].lower()
    cfg = ExperimentConfig(name=name, domain_kind=kind)
    if kind == "stl":
        if len(parts) != 2:
            raise ConfigError(f"[{name}]: expected 'domain = stl <path>'")
        cfg.stl_path = parts[1]
    elif kind == "ball":
        cfg.radius = float(get("radius", "1.0"))
        center = get("center", "0 0 0").split()
        if len(center) != 3:
            raise ConfigError(f"[{name}]: center needs three coordinates")
        cfg.center = tuple(float(c) for c in center)
    else:
        raise ConfigError(f"[{name}]: unknown domain kind {kind!r}")

    cfg.source = get("source", "grid").strip().lower()
    if cfg.source not in ("grid", "halton", "node-file"):
        raise ConfigError(f"[{name}]: unknown node source {cfg.source!r}")
    if cfg.source == "node-file":
        files = get("node_files", "").split()
        if not files:
            raise ConfigError(f"[{name}]: source=node-file needs 'node_files'")
        cfg.node_files = files
    else:
        explicit = get("h")
        if explicit:
            cfg.spacings = [float(v) for v in explicit.split()]
        else:
            h0 = get("h0")
            if h0 is None:
                raise ConfigError(f"[{name}]: grid/halton sources need 'h0' or 'h'")
            levels = [int(v) for v in get("levels", "0").split()]
            cfg.spacings = [0.9 * float(h0) * 2.0 ** (-i / 3.0) for i in levels]
        if not cfg.spacings:
            raise ConfigError(f"[{name}]: empty spacing schedule")
        if any(h <= 0 for h in cfg.spacings):
            raise ConfigError(f"[{name}]: spacings must be positive")
        if any(b >= a for a, b in zip(cfg.spacings, cfg.spacings[1:])):
            raise ConfigError(f"[{name}]: spacing schedule must decrease")

    boundary = get("boundary", "projected").split()
    cfg.boundary = boundary[0].lower()
    if cfg.boundary == "node-file":
        cfg.boundary_files = boundary[1:]
        if len(cfg.boundary_files) != cfg.n_levels:
            raise ConfigError(f"[{name}]: need one boundary file per level")
    elif cfg.boundary != "projected":
        raise ConfigError(f"[{name}]: unknown boundary mode {cfg.boundary!r}")

    methods_field = get("methods", "").strip()
    if not methods_field:
        raise ConfigError(f"[{name}]: at least one method is required")
    cfg.methods = [parse_method(m) for m in methods_field.split(";") if m.strip()]
    if not cfg.methods:
        raise ConfigError(f"[{name}]: at least one method is required")

    solver_field = get("solver", "direct")
    sname, _, sarg = solver_field.partition(":")
    cfg.solver = sname.strip().lower()
    if cfg.solver not in ("direct", "bicgstab"):
        raise ConfigError(f"[{name}]: unknown solver {cfg.solver!r}")
    if sarg:
        for item in sarg.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if key == "tol":
                cfg.solver_tol = float(val)
            elif key == "maxit":
                cfg.solver_maxit = int(val)
            else:
                raise ConfigError(f"[{name}]: unknown solver option {key!r}")

    problem_field = get("problem", "ball-exp")
    pname, _, parg = problem_field.partition(":")
    cfg.problem = pname.strip().lower()
    if cfg.problem == "const":
        cfg.problem_value = float(parg) if parg else -10.0
    elif cfg.problem != "ball-exp":
        raise ConfigError(f"[{name}]: unknown problem {cfg.problem!r}")

    cfg.output = get("output")
    cfg.plot_data = get("plot_data")
    cfg.nodes_output = get("nodes_output")
    cfg.seed = int(get("seed", "0"))
    return cfg


def load_config(path) -> list:
    """All experiment sections of an INI config file, in file order."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    names = parser.sections()
    if not names:
        raise ConfigError(f"{path}: no experiment sections")
    return [_parse_section(name, parser[name]) for name in names]
