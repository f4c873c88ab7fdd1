"""Run configuration: an INI file with [mesh], [material], [scenario],
[solver] and [output] sections.

Example::

    [mesh]
    generator = channel
    length = 4
    half_width = 1
    h = 0.1

    [material]
    density = 0:1
    viscosity = 1

    [scenario]
    T = 1
    dt = 0.1
    f = 2, 0

    [output]
    directory = out

Scenario fields are expressions in ``x, y, z, t`` (see :mod:`pipeflow.expr`);
vector fields are comma-separated.  The density law is a list of
``theta:rho`` breakpoints separated by commas.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .expr import ExpressionError, parse_field


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


GENERATORS = ("channel", "cylinder", "tjunction", "square", "msh")
SADDLE_METHODS = ("fgmres", "direct")


@dataclass
class MeshConfig:
    generator: str = "channel"
    length: float = 4.0
    half_width: float = 1.0
    branch_length: float = 3.0
    branch_radius: float = 0.5
    h: float = 0.1
    n: int = 8
    path: str = ""


@dataclass
class MaterialConfig:
    density: str = "0:1"
    c_v: float = 1.0
    conductivity: float = 1.0
    viscosity: float = 1.0
    alpha: float = 1.0


@dataclass
class ScenarioConfig:
    T: float = 1.0
    dt: float = 0.1
    f: str = "0"
    h: str = "0"
    theta_inf: str = "0"
    q_e: str = "0"
    u0: str = "0"
    e0: str = "0"


@dataclass
class SolverConfig:
    picard_tol: float = 1e-6
    max_outer: int = 30
    relaxation: float = 1.0
    linear_tol: float = 1e-10
    newton_tol: float = 1e-10
    saddle: str = "fgmres"
    supg: bool = False
    c_s: float = 0.0
    cs_samples: int = 8
    gronwall_c1: float = 1.0
    gronwall_c2: float = 1.0
    gronwall_c3: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "pipeflow-out"
    vtk: bool = True
    vtk_every: int = 1
    seed: int = 0


@dataclass
class RunConfig:
    mesh: MeshConfig = field(default_factory=MeshConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    source: str = ""

    @property
    def nsteps(self) -> int:
        return int(round(self.scenario.T / self.scenario.dt))

    def density_table(self):
        return parse_density(self.material.density)

    def field(self, name: str):
        return parse_field(getattr(self.scenario, name))


SECTIONS = {
    "mesh": MeshConfig,
    "material": MaterialConfig,
    "scenario": ScenarioConfig,
    "solver": SolverConfig,
    "output": OutputConfig,
}


def parse_density(text: str):
    pts = []
    for item in str(text).split(","):
        item = item.strip()
        if not item:
            continue
        try:
            th, rho = item.split(":")
            pts.append((float(th), float(rho)))
        except ValueError:
            raise ConfigError(f"[material] density: bad breakpoint {item!r} (expected theta:rho)") from None
    if not pts:
        raise ConfigError("[material] density: no breakpoints")
    return pts


def _convert(kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def _validate(cfg: RunConfig) -> list[str]:
    p = []
    s, sol, m, o = cfg.scenario, cfg.solver, cfg.mesh, cfg.output
    if not s.T > 0:
        p.append("[scenario] T must be positive")
    if not s.dt > 0:
        p.append("[scenario] dt must be positive")
    if s.T > 0 and s.dt > 0:
        n = s.T / s.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            p.append(f"[scenario] T/dt = {n:g} is not an integer")
    for name in ("picard_tol", "linear_tol", "newton_tol"):
        if not getattr(sol, name) > 0:
            p.append(f"[solver] {name} must be positive")
    if sol.max_outer < 1:
        p.append("[solver] max_outer must be at least 1")
    if not 0 < sol.relaxation <= 1:
        p.append("[solver] relaxation must lie in (0, 1]")
    if sol.saddle not in SADDLE_METHODS:
        p.append(f"[solver] saddle must be one of {', '.join(SADDLE_METHODS)}")
    if sol.c_s < 0:
        p.append("[solver] c_s must be nonnegative (0 means estimate)")
    if sol.cs_samples < 1:
        p.append("[solver] cs_samples must be at least 1")
    if m.generator not in GENERATORS:
        p.append(f"[mesh] generator must be one of {', '.join(GENERATORS)}")
    if m.generator == "msh" and not m.path:
        p.append("[mesh] path is required for generator = msh")
    for name in ("length", "half_width", "h", "branch_length", "branch_radius"):
        if not getattr(m, name) > 0:
            p.append(f"[mesh] {name} must be positive")
    if m.n < 1:
        p.append("[mesh] n must be at least 1")
    if o.vtk_every < 1:
        p.append("[output] vtk_every must be at least 1")
    if o.seed < 0:
        p.append("[output] seed must be nonnegative")
    mat = cfg.material
    for name in ("c_v", "conductivity", "viscosity"):
        if not getattr(mat, name) > 0:
            p.append(f"[material] {name} must be positive")
    if mat.alpha < 0:
        p.append("[material] alpha must be nonnegative")
    try:
        table = parse_density(mat.density)
        if any(r <= 0 for _, r in table):
            p.append("[material] density values must be positive")
    except ConfigError as exc:
        p.extend(exc.problems)
    for name in ("f", "h", "theta_inf", "q_e", "u0", "e0"):
        try:
            parse_field(getattr(s, name))
        except ExpressionError as exc:
            p.append(f"[scenario] {name}: {exc}")
    return p


def parse_config_text(text: str, source: str = "<string>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive (T vs t)
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: entry outside any section") from None
    except configparser.ParsingError as exc:
        lines = ", ".join(f"line {ln}: {raw.strip()}" for ln, raw in exc.errors)
        raise ConfigError(f"{source}: cannot parse {lines}") from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ConfigError(f"{source}: line {exc.lineno}: {exc.message.splitlines()[0]}") from None
    cfg = RunConfig(source=source)
    problems = []
    for section in parser.sections():
        if section not in SECTIONS:
            problems.append(f"unknown section [{section}]")
            continue
        target = getattr(cfg, section)
        kinds = {f.name: f.type for f in fields(target)}
        defaults = {f.name: getattr(target, f.name) for f in fields(target)}
        for key, raw in parser.items(section):
            if key not in kinds:
                problems.append(f"[{section}] unknown key {key!r}")
                continue
            kind = type(defaults[key])
            try:
                setattr(target, key, _convert(kind, raw))
            except ValueError:
                problems.append(f"[{section}] {key}: cannot read {raw.strip()!r} as {kind.__name__}")
    if problems:
        raise ConfigError(problems)
    problems = _validate(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise ConfigError(f"{path} is not valid UTF-8") from None
    return parse_config_text(text, source=str(path))
