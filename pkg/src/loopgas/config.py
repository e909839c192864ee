"""Schema-versioned YAML run configuration.

Lengths are in any unit common to the box, the radii and the points;
``beta`` is in inverse units of the potential, and ``z`` is dimensionless
once lengths are fixed.  Unknown keys are rejected with the line number of
the offending entry.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .geometry import BoxRegion, ClassicalConfig
from .mcmc import MoveWeights, SimulationParams
from .potential import InvalidPotentialError, PotentialModel

__all__ = [
    "SCHEMA_VERSION",
    "ConfigError",
    "BoxSpec",
    "PotentialSpec",
    "PhysicsConfig",
    "RunSettings",
    "ObservablesConfig",
    "ValidateConfig",
    "OracleConfig",
    "OutputConfig",
    "RunConfig",
    "parse_config",
    "load_config",
    "render_config",
    "VALIDATORS",
]

SCHEMA_VERSION = 1
VALIDATORS = ("ruelle", "q_bound", "kernel_bound", "gradient_bound", "compatibility", "trace", "energy_floor")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class BoxSpec:
    center: tuple[float, ...]
    half_side: float

    def region(self) -> BoxRegion:
        return BoxRegion(self.center, self.half_side)


@dataclass(frozen=True)
class PotentialSpec:
    family: str
    core_r: float
    range_R: float | None = None
    depth: float | None = None
    height: float | None = None
    table: str | None = None

    def model(self) -> PotentialModel:
        if self.family == "hard_core":
            return PotentialModel.hard_core(self.core_r, self.range_R)
        if self.family == "square_well":
            return PotentialModel.square_well(self.core_r, self.range_R, self.depth)
        if self.family == "shoulder":
            return PotentialModel.shoulder(self.core_r, self.range_R, self.height)
        if self.family == "table":
            return PotentialModel.from_table_file(self.table)
        raise InvalidPotentialError(f"unknown potential family {self.family!r}")


@dataclass(frozen=True)
class PhysicsConfig:
    box: BoxSpec
    z: float
    beta: float
    slices: int
    potential: PotentialSpec
    k_max: int = 1
    inner_box: BoxSpec | None = None
    small_box: BoxSpec | None = None
    boundary_points: tuple[tuple[float, ...], ...] = ()


@dataclass(frozen=True)
class RunSettings:
    seed: int
    sweeps: int
    steps_per_sweep: int = 10
    burn_in: int = 100
    thin: int = 1
    chains: int = 1
    checkpoint_interval: int = 0
    wiggle_max: int | None = None
    move_weights: tuple[float, float, float, float] = (0.3, 0.3, 0.3, 0.1)


@dataclass(frozen=True)
class ObservablesConfig:
    occupation_n_max: int = 2
    kernel_pairs: tuple = ()
    inner_samples: int = 1
    density_cells: tuple[BoxSpec, ...] = ()
    test_loops: int = 0
    test_loop_k: tuple[int, ...] = (1,)
    gradient_step: float = 1e-3


@dataclass(frozen=True)
class ValidateConfig:
    checks: tuple[str, ...] = ()
    n_sigma: float = 3.0


@dataclass(frozen=True)
class OracleConfig:
    nodes: int = 16
    n_max: int = 2


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("tsv", "jsonl")


@dataclass(frozen=True)
class RunConfig:
    physics: PhysicsConfig
    run: RunSettings
    observables: ObservablesConfig = field(default_factory=ObservablesConfig)
    validate: ValidateConfig = field(default_factory=ValidateConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    schema_version: int = SCHEMA_VERSION

    def params(self, sweeps: int | None = None) -> SimulationParams:
        ph, rn = self.physics, self.run
        boundary = ClassicalConfig(ph.boundary_points, dim=len(ph.box.center)) if ph.boundary_points else None
        return SimulationParams(
            box=ph.box.region(),
            z=ph.z,
            beta=ph.beta,
            potential=ph.potential.model(),
            M=ph.slices,
            k_max=ph.k_max,
            inner_box=ph.inner_box.region() if ph.inner_box else None,
            boundary=boundary,
            move_weights=MoveWeights(*rn.move_weights),
            sweeps=rn.sweeps if sweeps is None else sweeps,
            steps_per_sweep=rn.steps_per_sweep,
            burn_in=rn.burn_in,
            thin=rn.thin,
            seed=rn.seed,
            wiggle_max=rn.wiggle_max,
        )

    def digest(self) -> str:
        return hashlib.sha256(render_config(self).encode()).hexdigest()


# parsing ---------------------------------------------------------------------------------

_REQ = object()


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers using the YAML node tree."""
    out: dict[tuple, int] = {}
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        out.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                out[key] = k.start_mark.line + 1
                walk(v, key)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return out


class _Reader:
    def __init__(self, lines: dict, source: str):
        self.lines, self.source = lines, source

    def err(self, msg: str, path: tuple):
        line = None
        p = path
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        raise ConfigError(msg, line, self.source)

    def mapping(self, data, path, allowed: dict[str, Any]) -> dict:
        if data is None:
            data = {}
        if not isinstance(data, dict):
            self.err(f"'{'.'.join(map(str, path)) or 'root'}' must be a mapping", path)
        for k in data:
            if k not in allowed:
                self.err(f"unknown key '{'.'.join(map(str, path + (k,)))}'", path + (k,))
        out = {}
        for k, default in allowed.items():
            if k in data:
                out[k] = data[k]
            elif default is _REQ:
                self.err(f"missing required key '{'.'.join(map(str, path + (k,)))}'", path)
            else:
                out[k] = default
        return out

    def number(self, v, path, positive=False, integer=False, nonneg=False):
        ok = isinstance(v, int) and not isinstance(v, bool) if integer else \
            isinstance(v, (int, float)) and not isinstance(v, bool)
        if not ok:
            self.err(f"'{'.'.join(map(str, path))}' must be {'an integer' if integer else 'a number'}", path)
        if positive and not v > 0:
            self.err(f"'{'.'.join(map(str, path))}' must be positive", path)
        if nonneg and v < 0:
            self.err(f"'{'.'.join(map(str, path))}' must be nonnegative", path)
        return int(v) if integer else float(v)

    def points(self, v, path, dim) -> tuple[tuple[float, ...], ...]:
        if not isinstance(v, list):
            self.err(f"'{'.'.join(map(str, path))}' must be a list of points", path)
        out = []
        for i, pt in enumerate(v):
            if not isinstance(pt, list) or len(pt) != dim:
                self.err(f"point {i} of '{'.'.join(map(str, path))}' must have {dim} coordinates", path + (i,))
            out.append(tuple(self.number(c, path + (i,)) for c in pt))
        return tuple(out)

    def box(self, v, path, dim=None) -> BoxSpec:
        m = self.mapping(v, path, {"center": _REQ, "half_side": _REQ})
        c = m["center"]
        if not isinstance(c, list) or not c or (dim is not None and len(c) != dim):
            self.err(f"'{'.'.join(map(str, path))}.center' must be a list of {dim or 'd'} numbers", path + ("center",))
        return BoxSpec(tuple(self.number(x, path + ("center",)) for x in c),
                       self.number(m["half_side"], path + ("half_side",), positive=True))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {exc}", mark.line + 1 if mark else None, source) from None
    rd = _Reader(_line_index(text), source)
    top = rd.mapping(data, (), {"schema_version": _REQ, "physics": _REQ, "run": _REQ, "observables": None,
                                "validate": None, "oracle": None, "output": None})
    if top["schema_version"] != SCHEMA_VERSION:
        rd.err(f"unsupported schema_version {top['schema_version']!r}; expected {SCHEMA_VERSION}", ("schema_version",))

    P = ("physics",)
    ph = rd.mapping(top["physics"], P, {"box": _REQ, "z": _REQ, "beta": _REQ, "slices": _REQ, "potential": _REQ,
                                         "k_max": 1, "inner_box": None, "small_box": None, "boundary_points": None})
    box = rd.box(ph["box"], P + ("box",))
    dim = len(box.center)
    pot = rd.mapping(ph["potential"], P + ("potential",),
                     {"family": _REQ, "core_r": _REQ, "range_R": None, "depth": None, "height": None, "table": None})
    fam = pot["family"]
    if fam not in ("hard_core", "square_well", "shoulder", "table"):
        rd.err(f"unknown potential family {fam!r}", P + ("potential", "family"))
    need = {"square_well": ("range_R", "depth"), "shoulder": ("range_R", "height"), "table": ("table",)}.get(fam, ())
    for k in need:
        if pot[k] is None:
            rd.err(f"potential family {fam!r} needs '{k}'", P + ("potential",))
    pspec = PotentialSpec(
        fam,
        rd.number(pot["core_r"], P + ("potential", "core_r"), positive=True),
        None if pot["range_R"] is None else rd.number(pot["range_R"], P + ("potential", "range_R"), positive=True),
        None if pot["depth"] is None else rd.number(pot["depth"], P + ("potential", "depth")),
        None if pot["height"] is None else rd.number(pot["height"], P + ("potential", "height")),
        None if pot["table"] is None else str(pot["table"]),
    )
    try:
        pspec.model()
    except (InvalidPotentialError, OSError) as exc:
        rd.err(str(exc), P + ("potential",))
    physics = PhysicsConfig(
        box=box,
        z=rd.number(ph["z"], P + ("z",), positive=True),
        beta=rd.number(ph["beta"], P + ("beta",), positive=True),
        slices=rd.number(ph["slices"], P + ("slices",), positive=True, integer=True),
        potential=pspec,
        k_max=rd.number(ph["k_max"], P + ("k_max",), positive=True, integer=True),
        inner_box=None if ph["inner_box"] is None else rd.box(ph["inner_box"], P + ("inner_box",), dim),
        small_box=None if ph["small_box"] is None else rd.box(ph["small_box"], P + ("small_box",), dim),
        boundary_points=() if ph["boundary_points"] is None else rd.points(ph["boundary_points"],
                                                                          P + ("boundary_points",), dim),
    )
    if physics.small_box is not None and physics.inner_box is None:
        rd.err("'physics.small_box' requires 'physics.inner_box'", P + ("small_box",))

    R = ("run",)
    rn = rd.mapping(top["run"], R, {"seed": _REQ, "sweeps": _REQ, "steps_per_sweep": 10, "burn_in": 100, "thin": 1,
                                     "chains": 1, "checkpoint_interval": 0, "wiggle_max": None, "move_weights": None})
    mw = rd.mapping(rn["move_weights"], R + ("move_weights",),
                    {"insert": 0.3, "delete": 0.3, "wiggle": 0.3, "rek": 0.1})
    run = RunSettings(
        seed=rd.number(rn["seed"], R + ("seed",), integer=True, nonneg=True),
        sweeps=rd.number(rn["sweeps"], R + ("sweeps",), integer=True, nonneg=True),
        steps_per_sweep=rd.number(rn["steps_per_sweep"], R + ("steps_per_sweep",), integer=True, positive=True),
        burn_in=rd.number(rn["burn_in"], R + ("burn_in",), integer=True, nonneg=True),
        thin=rd.number(rn["thin"], R + ("thin",), integer=True, positive=True),
        chains=rd.number(rn["chains"], R + ("chains",), integer=True, positive=True),
        checkpoint_interval=rd.number(rn["checkpoint_interval"], R + ("checkpoint_interval",), integer=True,
                                      nonneg=True),
        wiggle_max=None if rn["wiggle_max"] is None else rd.number(rn["wiggle_max"], R + ("wiggle_max",),
                                                                   integer=True, positive=True),
        move_weights=tuple(rd.number(mw[k], R + ("move_weights", k), nonneg=True)
                           for k in ("insert", "delete", "wiggle", "rek")),
    )

    O = ("observables",)
    ob = rd.mapping(top["observables"], O, {"occupation_n_max": 2, "kernel_pairs": None, "inner_samples": 1,
                                             "density_cells": None, "test_loops": 0, "test_loop_k": None,
                                             "gradient_step": 1e-3})
    pairs = []
    for i, pr in enumerate(ob["kernel_pairs"] or []):
        m = rd.mapping(pr, O + ("kernel_pairs", i), {"x": _REQ, "y": _REQ})
        pairs.append((rd.points(m["x"], O + ("kernel_pairs", i, "x"), dim),
                      rd.points(m["y"], O + ("kernel_pairs", i, "y"), dim)))
    tlk = ob["test_loop_k"] if ob["test_loop_k"] is not None else [1]
    if not isinstance(tlk, list):
        rd.err("'observables.test_loop_k' must be a list of integers", O + ("test_loop_k",))
    observables = ObservablesConfig(
        occupation_n_max=rd.number(ob["occupation_n_max"], O + ("occupation_n_max",), integer=True, nonneg=True),
        kernel_pairs=tuple(pairs),
        inner_samples=rd.number(ob["inner_samples"], O + ("inner_samples",), integer=True, positive=True),
        density_cells=tuple(rd.box(c, O + ("density_cells", i), dim) for i, c in enumerate(ob["density_cells"] or [])),
        test_loops=rd.number(ob["test_loops"], O + ("test_loops",), integer=True, nonneg=True),
        test_loop_k=tuple(rd.number(k, O + ("test_loop_k",), integer=True, positive=True) for k in tlk),
        gradient_step=rd.number(ob["gradient_step"], O + ("gradient_step",), positive=True),
    )

    V = ("validate",)
    va = rd.mapping(top["validate"], V, {"checks": None, "n_sigma": 3.0})
    checks = va["checks"] or []
    if not isinstance(checks, list):
        rd.err("'validate.checks' must be a list", V + ("checks",))
    for i, c in enumerate(checks):
        if c not in VALIDATORS:
            rd.err(f"unknown validator {c!r}; choose from {', '.join(VALIDATORS)}", V + ("checks", i))
    validate = ValidateConfig(tuple(checks), rd.number(va["n_sigma"], V + ("n_sigma",), positive=True))

    Q = ("oracle",)
    oq = rd.mapping(top["oracle"], Q, {"nodes": 16, "n_max": 2})
    oracle = OracleConfig(*(rd.number(oq[k], Q + (k,), integer=True, positive=True) for k in ("nodes", "n_max")))

    U = ("output",)
    ou = rd.mapping(top["output"], U, {"directory": "out", "formats": None})
    fmts = ou["formats"] if ou["formats"] is not None else ["tsv", "jsonl"]
    if not isinstance(fmts, list) or any(f not in ("tsv", "jsonl") for f in fmts) or not fmts:
        rd.err("'output.formats' must be a nonempty list drawn from tsv, jsonl", U + ("formats",))
    output = OutputConfig(str(ou["directory"]), tuple(fmts))
    return RunConfig(physics, run, observables, validate, oracle, output, SCHEMA_VERSION)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))


def _plain(v):
    if dataclasses.is_dataclass(v):
        return {f.name: _plain(getattr(v, f.name)) for f in dataclasses.fields(v)}
    if isinstance(v, (tuple, list)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def render_config(cfg: RunConfig) -> str:
    """YAML text that parses back to an equal configuration."""
    ph = cfg.physics
    physics = {
        "box": _plain(ph.box), "z": ph.z, "beta": ph.beta, "slices": ph.slices, "k_max": ph.k_max,
        "potential": {k: v for k, v in _plain(ph.potential).items() if v is not None},
    }
    if ph.inner_box is not None:
        physics["inner_box"] = _plain(ph.inner_box)
    if ph.small_box is not None:
        physics["small_box"] = _plain(ph.small_box)
    if ph.boundary_points:
        physics["boundary_points"] = _plain(ph.boundary_points)
    rn = _plain(cfg.run)
    rn["move_weights"] = dict(zip(("insert", "delete", "wiggle", "rek"), cfg.run.move_weights))
    ob = _plain(cfg.observables)
    ob["kernel_pairs"] = [{"x": _plain(x), "y": _plain(y)} for x, y in cfg.observables.kernel_pairs]
    doc = {
        "schema_version": cfg.schema_version,
        "physics": physics,
        "run": rn,
        "observables": ob,
        "validate": _plain(cfg.validate),
        "oracle": _plain(cfg.oracle),
        "output": _plain(cfg.output),
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
