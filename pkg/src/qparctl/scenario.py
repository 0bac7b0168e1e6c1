"""Scenario files: YAML schema, validation and construction of solver inputs.

A scenario is a YAML mapping.  Every section is optional and falls back to the
defaults of the dataclasses below; unknown keys are rejected.  The
README lists the schema with an example.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import families
from .carleman import build_weights, construct_psi, default_lambda
from .errors import ParseError, ValidationError
from .estimates import GNConstant
from .mult_control import PipelineParams, ReactionSpec, TimeOptimalParams
from .null_control import DEFAULT_EPS, FixedPointParams, PenaltyParams
from .pde_core import Grid, build_diffusion_spec


@dataclass(frozen=True)
class DiffusionConfig:
    family: str = "constant"
    params: dict = field(default_factory=dict)
    sample_range: tuple = (-10.0, 10.0)
    n_samples: int = 2001


@dataclass(frozen=True)
class ReactionConfig:
    g: str = "square"
    g_params: dict = field(default_factory=dict)
    theta: float = 1.0
    theta0: float = 1.0


@dataclass(frozen=True)
class GridConfig:
    n_x: int = 64
    n_t: int = 256
    T: float = 1.0


@dataclass(frozen=True)
class CarlemanConfig:
    lam: Any = None  # None -> 2 / ||psi||
    s: Any = 4.0  # number or "auto"


@dataclass(frozen=True)
class PenaltyConfig:
    eps_schedule: tuple = DEFAULT_EPS
    cg_tol: float = 1e-10
    cg_max_iter: int = 500


@dataclass(frozen=True)
class FixedPointConfig:
    delta: float = 1.0
    max_outer: int = 10
    contraction_tol: float = 1e-9


@dataclass(frozen=True)
class PipelineConfig:
    t3: float = 0.2
    t2_init: float = 0.05
    max_doublings: int = 20
    terminal_rel_tol: float = 1e-3


@dataclass(frozen=True)
class TimeOptimalConfig:
    sigma: float = 1.0
    T_hi: float = 1.0
    bisect_tol: float = 0.02
    terminal_tol: Any = None


@dataclass(frozen=True)
class InitialConfig:
    family: str = "sine_sum"
    amplitude: float = 0.05
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EstimatesConfig:
    C0: float = 2.0
    eta: float = 0.05
    t0: Any = None  # regularity-ratio time; None -> T / 2


@dataclass(frozen=True)
class ProbeConfig:
    n_samples: int = 100


@dataclass(frozen=True)
class OutputConfig:
    stride: int = 1


SECTIONS = {
    "diffusion": DiffusionConfig,
    "reaction": ReactionConfig,
    "grid": GridConfig,
    "carleman": CarlemanConfig,
    "penalty": PenaltyConfig,
    "fixed_point": FixedPointConfig,
    "pipeline": PipelineConfig,
    "time_optimal": TimeOptimalConfig,
    "initial": InitialConfig,
    "estimates": EstimatesConfig,
    "probe": ProbeConfig,
    "output": OutputConfig,
}

# sections that default to absent; an explicit null keeps them absent
OPTIONAL_SECTIONS = {"time_optimal"}

# YAML spelling of dataclass field names that clash with Python keywords
_ALIASES = {"lambda": "lam"}
_REVERSE_ALIASES = {v: k for k, v in _ALIASES.items()}


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    seed: int = 0
    omega: tuple = (0.3, 0.7)
    omega0: tuple = (0.4, 0.6)
    diffusion: DiffusionConfig = DiffusionConfig()
    reaction: ReactionConfig = ReactionConfig()
    grid: GridConfig = GridConfig()
    carleman: CarlemanConfig = CarlemanConfig()
    penalty: PenaltyConfig = PenaltyConfig()
    fixed_point: FixedPointConfig = FixedPointConfig()
    pipeline: PipelineConfig = PipelineConfig()
    time_optimal: TimeOptimalConfig | None = None
    initial: InitialConfig = InitialConfig()
    estimates: EstimatesConfig = EstimatesConfig()
    probe: ProbeConfig = ProbeConfig()
    output: OutputConfig = OutputConfig()

    def to_dict(self) -> dict:
        out = {"name": self.name, "seed": self.seed, "omega": list(self.omega), "omega0": list(self.omega0)}
        for key in SECTIONS:
            section = getattr(self, key)
            if section is None:
                continue
            out[key] = {_REVERSE_ALIASES.get(k, k): _plain(v) for k, v in dataclasses.asdict(section).items()}
        return out

    def content_hash(self, extra="") -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True) + extra
        return hashlib.sha256(blob.encode()).hexdigest()


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _frozen_value(value):
    if isinstance(value, list):
        return tuple(_frozen_value(v) for v in value)
    if isinstance(value, dict):
        return {k: _frozen_value(v) for k, v in value.items()}
    return value


def _line_index(text):
    """Map key paths to 1-based line numbers."""
    index = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, val_node in node.value:
                p = path + (key_node.value,)
                index[p] = key_node.start_mark.line + 1
                walk(val_node, p)

    try:
        walk(yaml.compose(text), ())
    except yaml.YAMLError:
        pass
    return index


def _coerce(value, default, where, line):
    """Convert ``value`` to the type of ``default``."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return tuple(float(v) for v in value)
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise TypeError
            return _frozen_value(value)
    except (TypeError, ValueError):
        raise ParseError(f"bad value {value!r} for {where}", line=line, field=where) from None
    return _frozen_value(value)


def _section(cls, raw, name, lines):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(f"section {name!r} must be a mapping", line=lines.get((name,)), field=name)
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        attr = _ALIASES.get(key, key)
        where = f"{name}.{key}"
        if attr not in known:
            raise ParseError(f"unknown field {where}", line=lines.get((name, key)), field=where)
        f = known[attr]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        if value is None:
            if default is not None:
                raise ParseError(f"{where} may not be null", line=lines.get((name, key)), field=where)
            kwargs[attr] = None
        elif (name, attr) == ("carleman", "s") and value == "auto":
            kwargs[attr] = value
        elif default is None:
            kwargs[attr] = _coerce(value, 0.0, where, lines.get((name, key)))
        else:
            kwargs[attr] = _coerce(value, default, where, lines.get((name, key)))
    return cls(**kwargs)


def scenario_from_dict(raw: dict, lines=None) -> Scenario:
    lines = lines or {}
    if not isinstance(raw, dict):
        raise ParseError("scenario must be a mapping", line=1)
    top = {"name", "seed", "omega", "omega0"} | set(SECTIONS)
    for key in raw:
        if key not in top:
            raise ParseError(f"unknown field {key}", line=lines.get((key,)), field=key)
    kwargs = {}
    if "name" in raw:
        kwargs["name"] = _coerce(raw["name"], "", "name", lines.get(("name",)))
    if "seed" in raw:
        kwargs["seed"] = _coerce(raw["seed"], 0, "seed", lines.get(("seed",)))
    for key in ("omega", "omega0"):
        if key in raw:
            val = _coerce(raw[key], (), key, lines.get((key,)))
            if len(val) != 2:
                raise ParseError(f"{key} must be a pair", line=lines.get((key,)), field=key)
            kwargs[key] = val
    for key, cls in SECTIONS.items():
        if key in raw:
            if raw[key] is None and key in OPTIONAL_SECTIONS:
                kwargs[key] = None
            else:
                kwargs[key] = _section(cls, raw[key], key, lines)
    scenario = Scenario(**kwargs)
    validate_scenario(scenario)
    return scenario


def validate_scenario(sc: Scenario) -> None:
    """Check cross-field invariants.

    Raises
    ------
    ValidationError
        Naming the first violated invariant.
    """
    lo, hi = sc.omega
    if not (0.0 < lo < hi < 1.0):
        raise ValidationError(f"omega = {sc.omega} must satisfy 0 < a < b < 1", field="omega")
    lo0, hi0 = sc.omega0
    if not (lo < lo0 < hi0 < hi):
        raise ValidationError(f"closure of omega0 = {sc.omega0} is not inside omega = {sc.omega}",
                              field="omega0")
    if sc.diffusion.family not in families.DIFFUSION_FAMILIES:
        raise ValidationError(f"unknown diffusion family {sc.diffusion.family!r}", field="diffusion.family")
    if sc.reaction.g not in families.REACTION_FAMILIES:
        raise ValidationError(f"unknown reaction family {sc.reaction.g!r}", field="reaction.g")
    if sc.initial.family not in families.INITIAL_FAMILIES:
        raise ValidationError(f"unknown initial family {sc.initial.family!r}", field="initial.family")
    if not math.isfinite(sc.initial.amplitude):
        raise ValidationError("initial amplitude must be finite", field="initial.amplitude")
    g = sc.grid
    if g.n_x < 3 or g.n_t < 4 or not g.T > 0:
        raise ValidationError("grid needs n_x >= 3, n_t >= 4 and T > 0", field="grid")
    if not (sc.carleman.s == "auto" or (isinstance(sc.carleman.s, (int, float)) and sc.carleman.s > 0)):
        raise ValidationError("carleman.s must be positive or 'auto'", field="carleman.s")
    if abs(sc.reaction.theta) < sc.reaction.theta0 or not sc.reaction.theta0 > 0:
        raise ValidationError("need |theta| >= theta0 > 0", field="reaction.theta0")
    try:
        PenaltyParams(**dataclasses.asdict(sc.penalty))
        FixedPointParams(**dataclasses.asdict(sc.fixed_point))
        if sc.time_optimal is not None:
            TimeOptimalParams(**dataclasses.asdict(sc.time_optimal))
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    try:
        families.diffusion(sc.diffusion.family, **sc.diffusion.params)
        families.reaction(sc.reaction.g, **sc.reaction.g_params)
        families.initial_state(sc.initial.family, np.linspace(0, 1, 5), sc.initial.amplitude, sc.seed,
                               **sc.initial.params)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"family parameters rejected: {exc}") from None


def load_scenario(path) -> Scenario:
    """Read and validate a YAML scenario.

    Raises
    ------
    ParseError
        Malformed YAML, unknown keys or ill-typed values (with line numbers).
    ValidationError
        A cross-field invariant fails.
    """
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"YAML error: {exc}", line=None if mark is None else mark.line + 1) from None
    return scenario_from_dict(raw if raw is not None else {}, _line_index(text))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario.to_dict(), sort_keys=False))


def with_override(scenario: Scenario, dotted: str, value) -> Scenario:
    """Return a validated copy with ``section.field`` (or a top-level key) replaced."""
    raw = scenario.to_dict()
    parts = dotted.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value
    return scenario_from_dict(raw)


# ---------------------------------------------------------------------------
# construction of solver inputs


def make_grid(sc: Scenario) -> Grid:
    return Grid(sc.grid.n_x, sc.grid.n_t, sc.grid.T)


def make_spec(sc: Scenario):
    a, a_prime = families.diffusion(sc.diffusion.family, **sc.diffusion.params)
    return build_diffusion_spec(a, a_prime, sc.diffusion.sample_range, sc.diffusion.n_samples)


def make_reaction(sc: Scenario) -> ReactionSpec:
    g, gp = families.reaction(sc.reaction.g, **sc.reaction.g_params)
    return ReactionSpec(g, gp, sc.reaction.theta, sc.reaction.theta0)


def make_initial(sc: Scenario, grid: Grid):
    return families.initial_state(sc.initial.family, grid.x, sc.initial.amplitude, sc.seed, **sc.initial.params)


def make_penalty(sc: Scenario) -> PenaltyParams:
    return PenaltyParams(**dataclasses.asdict(sc.penalty))


def make_fixed_point(sc: Scenario) -> FixedPointParams:
    return FixedPointParams(**dataclasses.asdict(sc.fixed_point))


def make_pipeline(sc: Scenario) -> PipelineParams:
    p = sc.pipeline
    return PipelineParams(t2_init=p.t2_init, max_doublings=p.max_doublings, terminal_rel_tol=p.terminal_rel_tol)


def make_C0(sc: Scenario) -> GNConstant:
    return GNConstant(sc.estimates.C0)


def make_weights(sc: Scenario, grid: Grid, spec=None, y0=None):
    """Carleman weights on ``grid``; ``s = 'auto'`` runs the tuning search."""
    psi = construct_psi(sc.omega0, grid)
    lam = default_lambda(psi) if sc.carleman.lam is None else float(sc.carleman.lam)
    s = sc.carleman.s
    if s == "auto":
        from .null_control import auto_tune_s

        spec = spec or make_spec(sc)
        y0 = make_initial(sc, grid) if y0 is None else y0
        s = auto_tune_s(y0, spec, psi, lam, grid, sc.omega, make_penalty(sc))
    return build_weights(psi, lam, float(s), grid)
