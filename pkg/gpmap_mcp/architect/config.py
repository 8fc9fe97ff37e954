"""Scenario configuration: TOML in, frozen dataclasses out, TOML back.

A scenario file has six flat sections:

    [run]        steps, seed, baseline
    [domain]     lower, upper, grid_resolution
    [field]      kind, centers, amplitudes, widths, expression, noise_std
    [protocol]   budget, targets, alpha, beta, optimizer, local_predictor,
                 sender_conditioning, quadrature_resolution,
                 local_inducing_resolution, edges
    [metrics]    nlpd_noise
    [agents.<id>] shape, center, radius | lower, upper,
                 length_scale, signal_scale, noise_std

Everything except the agents has a default. Unknown sections and keys are
rejected. Parsing collects every problem before raising so `ConfigInvalid`
lists them all; graph-level checks live in `observer.diagnostics`.
"""

from __future__ import annotations

import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields, replace
from dataclasses import field as dc_field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import tomli_w

from gpmap_mcp.architect.geometry import Box, Disk, Subdomain
from gpmap_mcp.errors import ConfigInvalid
from gpmap_mcp.model.gp import Kernel
from gpmap_mcp.observer.agents import PREDICTORS
from gpmap_mcp.observer.field import (
    ANALYTIC_FIELDS,
    DEFAULT_AMPLITUDES,
    DEFAULT_CENTERS,
    DEFAULT_WIDTHS,
    FIELD_KINDS,
    ScalarField,
)
from gpmap_mcp.observer.metrics import NLPD_NOISE_MODES
from gpmap_mcp.optimizer.btip import OPTIMIZERS

LOGGER = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"

CONDITIONING = ("augmented", "raw_only")
SHAPES = ("disk", "box")

Vec = Tuple[float, ...]


@dataclass(frozen=True)
class RunSettings:
    steps: int = 20
    seed: int = 0
    baseline: bool = True


@dataclass(frozen=True)
class DomainSettings:
    lower: Vec = (-6.0, -6.0)
    upper: Vec = (6.0, 6.0)
    grid_resolution: int = 41

    @property
    def dim(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class FieldSettings:
    kind: str = "gaussian_bumps"
    centers: Tuple[Vec, ...] = DEFAULT_CENTERS
    amplitudes: Vec = DEFAULT_AMPLITUDES
    widths: Vec = DEFAULT_WIDTHS
    expression: str = "peaks"
    noise_std: float = 0.08

    def build(self) -> ScalarField:
        return ScalarField(self.kind, self.centers, self.amplitudes, self.widths, self.expression)


@dataclass(frozen=True)
class ProtocolSettings:
    budget: int = 4
    targets: int = 16
    alpha: float = 1.0
    beta: float = 0.25
    optimizer: str = "grid"
    local_predictor: str = "exact"
    sender_conditioning: str = "augmented"
    quadrature_resolution: int = 24
    local_inducing_resolution: int = 6
    edges: Optional[Tuple[Tuple[int, int], ...]] = None


@dataclass(frozen=True)
class MetricsSettings:
    nlpd_noise: str = "modeled"


@dataclass(frozen=True)
class AgentConfig:
    id: int
    length_scale: float
    signal_scale: float
    noise_std: float
    shape: str = "disk"
    center: Optional[Vec] = None
    radius: Optional[float] = None
    lower: Optional[Vec] = None
    upper: Optional[Vec] = None

    def subdomain(self) -> Subdomain:
        if self.shape == "disk":
            return Disk(self.center, self.radius)
        return Box(self.lower, self.upper)

    def kernel(self) -> Kernel:
        return Kernel(self.signal_scale, self.length_scale)


@dataclass(frozen=True)
class ScenarioConfig:
    agents: Tuple[AgentConfig, ...]
    run: RunSettings = dc_field(default_factory=RunSettings)
    domain: DomainSettings = dc_field(default_factory=DomainSettings)
    field: FieldSettings = dc_field(default_factory=FieldSettings)
    protocol: ProtocolSettings = dc_field(default_factory=ProtocolSettings)
    metrics: MetricsSettings = dc_field(default_factory=MetricsSettings)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def agent_ids(self) -> Tuple[int, ...]:
        return tuple(a.id for a in self.agents)

    def agent(self, agent_id: int) -> AgentConfig:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def eval_grid(self) -> np.ndarray:
        """Evaluation grid with inclusive end points, rows in C order of (x, y, ...)."""
        axes = [
            np.linspace(lo, hi, self.domain.grid_resolution)
            for lo, hi in zip(self.domain.lower, self.domain.upper)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        baseline: Optional[bool] = None,
        optimizer: Optional[str] = None,
        predictor: Optional[str] = None,
        steps: Optional[int] = None,
    ) -> "ScenarioConfig":
        run = self.run
        protocol = self.protocol
        if seed is not None:
            run = replace(run, seed=int(seed))
        if baseline is not None:
            run = replace(run, baseline=bool(baseline))
        if steps is not None:
            run = replace(run, steps=int(steps))
        if optimizer is not None:
            protocol = replace(protocol, optimizer=optimizer)
        if predictor is not None:
            protocol = replace(protocol, local_predictor=predictor)
        cfg = replace(self, run=run, protocol=protocol)
        problems = _check_values(cfg)
        if problems:
            raise ConfigInvalid(problems)
        return cfg


# ---------------------------------------------------------------- converters


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValueError(f"expected an integer, got {v!r}")
    return v


def _float(v: Any) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"expected a number, got {v!r}")
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {v!r}")
    return float(v)


def _bool(v: Any) -> bool:
    if not isinstance(v, bool):
        raise ValueError(f"expected true/false, got {v!r}")
    return v


def _str(v: Any) -> str:
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


def _vec(v: Any) -> Vec:
    if not isinstance(v, (list, tuple)) or not v:
        raise ValueError(f"expected a non-empty list of numbers, got {v!r}")
    return tuple(_float(x) for x in v)


def _vecs(v: Any) -> Tuple[Vec, ...]:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list of points, got {v!r}")
    return tuple(_vec(x) for x in v)


def _floats(v: Any) -> Vec:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list of numbers, got {v!r}")
    return tuple(_float(x) for x in v)


def _edges(v: Any) -> Tuple[Tuple[int, int], ...]:
    if not isinstance(v, (list, tuple)):
        raise ValueError(f"expected a list of [sender, receiver] pairs, got {v!r}")
    out = []
    for e in v:
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise ValueError(f"edge {e!r} is not a [sender, receiver] pair")
        out.append((_int(e[0]), _int(e[1])))
    return tuple(out)


_Converters = Dict[str, Callable[[Any], Any]]

_SECTION_SCHEMA: Dict[str, Tuple[type, _Converters]] = {
    "run": (RunSettings, {"steps": _int, "seed": _int, "baseline": _bool}),
    "domain": (DomainSettings, {"lower": _vec, "upper": _vec, "grid_resolution": _int}),
    "field": (
        FieldSettings,
        {
            "kind": _str,
            "centers": _vecs,
            "amplitudes": _floats,
            "widths": _floats,
            "expression": _str,
            "noise_std": _float,
        },
    ),
    "protocol": (
        ProtocolSettings,
        {
            "budget": _int,
            "targets": _int,
            "alpha": _float,
            "beta": _float,
            "optimizer": _str,
            "local_predictor": _str,
            "sender_conditioning": _str,
            "quadrature_resolution": _int,
            "local_inducing_resolution": _int,
            "edges": _edges,
        },
    ),
    "metrics": (MetricsSettings, {"nlpd_noise": _str}),
}

_AGENT_SCHEMA: _Converters = {
    "shape": _str,
    "center": _vec,
    "radius": _float,
    "lower": _vec,
    "upper": _vec,
    "length_scale": _float,
    "signal_scale": _float,
    "noise_std": _float,
}
_AGENT_REQUIRED = ("length_scale", "signal_scale", "noise_std")


def _convert(raw: Any, prefix: str, schema: _Converters, problems: List[str]) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        problems.append(f"{prefix}: expected a table")
        return {}
    out: Dict[str, Any] = {}
    for key, value in raw.items():
        conv = schema.get(key)
        if conv is None:
            problems.append(f"{prefix}.{key}: unknown key")
            continue
        try:
            out[key] = conv(value)
        except ValueError as exc:
            problems.append(f"{prefix}.{key}: {exc}")
    return out


def _parse_agents(raw: Any, problems: List[str]) -> Tuple[AgentConfig, ...]:
    if not isinstance(raw, dict) or not raw:
        problems.append("agents: at least one [agents.<id>] table is required")
        return ()
    agents = []
    for key, table in raw.items():
        prefix = f"agents.{key}"
        try:
            agent_id = int(key)
            if agent_id < 0:
                raise ValueError
        except ValueError:
            problems.append(f"{prefix}: agent id must be a non-negative integer")
            continue
        values = _convert(table, prefix, _AGENT_SCHEMA, problems)
        missing = [k for k in _AGENT_REQUIRED if k not in values]
        for k in missing:
            problems.append(f"{prefix}.{k}: missing")
        shape = values.get("shape", "disk")
        needed = ("center", "radius") if shape == "disk" else ("lower", "upper")
        for k in needed:
            if k not in values:
                problems.append(f"{prefix}.{k}: missing (required for shape = {shape!r})")
        if missing:
            continue
        agents.append(AgentConfig(id=agent_id, **values))
    return tuple(sorted(agents, key=lambda a: a.id))


def _check_values(cfg: ScenarioConfig) -> List[str]:
    """Range and consistency checks on an already-typed config."""
    p: List[str] = []
    dim = len(cfg.domain.lower)

    if cfg.run.steps < 1:
        p.append("run.steps: must be >= 1")
    if cfg.run.seed < 0:
        p.append("run.seed: must be >= 0")

    if len(cfg.domain.upper) != dim:
        p.append("domain.upper: dimension differs from domain.lower")
    elif not all(lo < hi for lo, hi in zip(cfg.domain.lower, cfg.domain.upper)):
        p.append("domain: lower must be < upper on every axis")
    if cfg.domain.grid_resolution < 2:
        p.append("domain.grid_resolution: must be >= 2")

    f = cfg.field
    if f.kind not in FIELD_KINDS:
        p.append(f"field.kind: must be one of {FIELD_KINDS}, got {f.kind!r}")
    elif f.kind == "gaussian_bumps":
        if not (len(f.centers) == len(f.amplitudes) == len(f.widths)):
            p.append("field: centers, amplitudes and widths must have the same length")
        if any(len(c) != dim for c in f.centers):
            p.append(f"field.centers: every center must have {dim} coordinates")
        if any(w <= 0 for w in f.widths):
            p.append("field.widths: must be positive")
    else:
        if f.expression not in ANALYTIC_FIELDS:
            p.append(f"field.expression: must be one of {ANALYTIC_FIELDS}, got {f.expression!r}")
        if dim != 2:
            p.append("field.expression: analytic fields are defined in 2-D only")
    if f.noise_std < 0:
        p.append("field.noise_std: must be >= 0")

    pr = cfg.protocol
    for key in ("budget", "targets", "local_inducing_resolution"):
        if getattr(pr, key) < 1:
            p.append(f"protocol.{key}: must be >= 1")
    if pr.quadrature_resolution < 2:
        p.append("protocol.quadrature_resolution: must be >= 2")
    for key in ("alpha", "beta"):
        if getattr(pr, key) < 0:
            p.append(f"protocol.{key}: must be >= 0")
    for key, choices in (
        ("optimizer", OPTIMIZERS),
        ("local_predictor", PREDICTORS),
        ("sender_conditioning", CONDITIONING),
    ):
        if getattr(pr, key) not in choices:
            p.append(f"protocol.{key}: must be one of {choices}, got {getattr(pr, key)!r}")
    ids = set(cfg.agent_ids)
    for j, i in pr.edges or ():
        if j not in ids or i not in ids:
            p.append(f"protocol.edges: edge [{j}, {i}] names an unknown agent")
        elif j == i:
            p.append(f"protocol.edges: self-loop on agent {j}")

    if cfg.metrics.nlpd_noise not in NLPD_NOISE_MODES:
        p.append(f"metrics.nlpd_noise: must be one of {NLPD_NOISE_MODES}, got {cfg.metrics.nlpd_noise!r}")
    elif cfg.metrics.nlpd_noise == "true" and f.noise_std <= 0:
        p.append("metrics.nlpd_noise: 'true' needs field.noise_std > 0")

    if not cfg.agents:
        p.append("agents: at least one agent is required")
    for a in cfg.agents:
        prefix = f"agents.{a.id}"
        if a.shape not in SHAPES:
            p.append(f"{prefix}.shape: must be one of {SHAPES}, got {a.shape!r}")
        elif a.shape == "disk":
            if a.center is not None and len(a.center) != dim:
                p.append(f"{prefix}.center: must have {dim} coordinates")
            if a.radius is not None and a.radius <= 0:
                p.append(f"{prefix}.radius: must be > 0")
        elif a.lower is not None and a.upper is not None:
            if len(a.lower) != dim or len(a.upper) != dim:
                p.append(f"{prefix}: box corners must have {dim} coordinates")
            elif not all(lo < hi for lo, hi in zip(a.lower, a.upper)):
                p.append(f"{prefix}: box lower must be < upper on every axis")
        for key in ("length_scale", "signal_scale", "noise_std"):
            if getattr(a, key) <= 0:
                p.append(f"{prefix}.{key}: must be > 0")
    return p


# ---------------------------------------------------------------- public API


def config_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    problems: List[str] = []
    sections: Dict[str, Any] = {}
    for name, value in data.items():
        if name == "agents":
            continue
        if name not in _SECTION_SCHEMA:
            problems.append(f"{name}: unknown section")
            continue
        cls, schema = _SECTION_SCHEMA[name]
        sections[name] = cls(**_convert(value, name, schema, problems))
    agents = _parse_agents(data.get("agents"), problems)
    if problems:
        raise ConfigInvalid(problems)
    cfg = ScenarioConfig(agents=agents, **sections)
    problems = _check_values(cfg)
    if problems:
        raise ConfigInvalid(problems)
    return cfg


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigInvalid([f"{source}: {exc}"]) from exc
    return config_from_dict(data)


def list_presets() -> List[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.toml"))


def resolve_config_path(source: Union[str, Path]) -> Path:
    """A filesystem path, or the name of a bundled preset."""
    path = Path(source).expanduser()
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{source}.toml"
    if preset.is_file():
        return preset
    raise ConfigInvalid([f"{source}: no such file or preset (presets: {', '.join(list_presets())})"])


def load_config(path: Union[str, Path]) -> ScenarioConfig:
    resolved = resolve_config_path(path)
    LOGGER.debug("loading scenario config %s", resolved)
    return parse_config(resolved.read_text(encoding="utf-8"), source=str(resolved))


def config_to_dict(cfg: ScenarioConfig) -> Dict[str, Any]:
    """Normalized plain-data form: every default explicit, None omitted, agents by id."""

    def plain(obj) -> Dict[str, Any]:
        out = {}
        for f in fields(obj):
            v = getattr(obj, f.name)
            if v is None:
                continue
            out[f.name] = _listify(v)
        return out

    data: Dict[str, Any] = {
        "run": plain(cfg.run),
        "domain": plain(cfg.domain),
        "field": plain(cfg.field),
        "protocol": plain(cfg.protocol),
        "metrics": plain(cfg.metrics),
    }
    data["agents"] = {}
    for a in cfg.agents:
        entry = plain(a)
        entry.pop("id")
        data["agents"][str(a.id)] = entry
    return data


def _listify(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_listify(x) for x in v]
    return v


def dump_config(cfg: ScenarioConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def write_config(cfg: ScenarioConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg), encoding="utf-8")
    return path
