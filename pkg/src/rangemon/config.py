"""Scenario configuration: loading, validation, and resolved-config export.

A scenario JSON file mirrors :meth:`ScenarioConfig.to_dict`; every section
is optional and missing keys take the defaults below. Validation failures
raise :class:`~rangemon.errors.ConfigError` naming the dotted field path.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .attack import AttackSchedule
from .errors import ConfigError
from .measurement import NoiseConfig
from .solver import SolverConfig

MODES = ("kinematic", "dynamics")


@dataclass(frozen=True)
class FormationSpec:
    """Static formation geometry.

    ``grid`` lays robots on a square lattice with uniform jitter; ``uniform``
    draws them in a box of side ``side``; ``explicit`` uses ``positions``.
    """

    kind: str = "grid"
    spacing: float = 2.0
    jitter: float = 0.5
    altitude: float = 5.0
    altitude_jitter: float = 0.5
    side: float = 10.0
    positions: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("grid", "uniform", "explicit"):
            raise ConfigError("formation.kind", f"unknown formation {self.kind!r}")
        if self.kind == "explicit" and self.positions is None:
            raise ConfigError("formation.positions", "explicit formation needs positions")
        if self.positions is not None:
            object.__setattr__(self, "positions", tuple(tuple(float(v) for v in p) for p in self.positions))
        for name in ("spacing", "side"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"formation.{name}", "must be > 0")
        for name in ("jitter", "altitude_jitter"):
            if getattr(self, name) < 0:
                raise ConfigError(f"formation.{name}", "must be >= 0")


@dataclass(frozen=True)
class TopologySpec:
    """Sensing/communication graph.

    ``rgg`` connects robots within the radius that yields ``mean_degree``
    on the formation (or uses ``radius`` if given). With
    ``rebuild_on_attack`` the graph is rebuilt over the robots' estimated
    positions whenever the set of attacked robots changes.
    """

    kind: str = "rgg"
    mean_degree: float = 6.0
    radius: float | None = None
    edges: tuple | None = None
    rebuild_on_attack: bool = False

    def __post_init__(self):
        if self.kind not in ("rgg", "complete", "explicit"):
            raise ConfigError("topology.kind", f"unknown topology {self.kind!r}")
        if self.kind == "explicit" and self.edges is None:
            raise ConfigError("topology.edges", "explicit topology needs edges")
        if self.edges is not None:
            object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        if not self.mean_degree > 0:
            raise ConfigError("topology.mean_degree", "must be > 0")
        if self.radius is not None and not self.radius > 0:
            raise ConfigError("topology.radius", "must be > 0")


@dataclass(frozen=True)
class AttackSpec:
    """Either an explicit schedule or random disjoint target sets per window.

    Random mode draws ``counts[w]`` fresh targets for ``windows[w]`` with
    offsets of length ``magnitude`` in random horizontal directions, seeded
    per trial. ``end=None`` in a window means the end of the run.
    """

    windows: tuple = ((0, None),)
    counts: tuple = (6,)
    magnitude: float = 1.0
    schedule: AttackSchedule | None = None

    def __post_init__(self):
        windows = tuple((int(s), None if e is None else int(e)) for s, e in self.windows)
        counts = tuple(int(c) for c in self.counts)
        if self.schedule is None and len(windows) != len(counts):
            raise ConfigError("attack.counts", "need one target count per window")
        if any(c < 0 for c in counts):
            raise ConfigError("attack.counts", "counts must be >= 0")
        if not self.magnitude >= 0:
            raise ConfigError("attack.magnitude", "must be >= 0")
        object.__setattr__(self, "windows", windows)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def none(cls) -> "AttackSpec":
        return cls(windows=(), counts=())


@dataclass(frozen=True)
class DynamicsSpec:
    dt: float = 0.1
    estimator_poles: tuple = (0.7, 0.8)
    kp: float = 0.3
    kv: float = 0.8

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("dynamics.dt", "must be > 0")
        object.__setattr__(self, "estimator_poles", tuple(float(p) for p in self.estimator_poles))


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    n_agents: int = 20
    dim: int = 3
    mode: str = "kinematic"
    formation: FormationSpec = field(default_factory=FormationSpec)
    topology: TopologySpec = field(default_factory=TopologySpec)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    attack: AttackSpec = field(default_factory=AttackSpec)
    dynamics: DynamicsSpec = field(default_factory=DynamicsSpec)
    steps: int = 150
    trials: int = 20
    master_seed: int = 0
    epsilon: float | None = None
    confirm_k: int = 3
    divergence_factor: float = 10.0
    out_dir: str | None = None

    def __post_init__(self):
        if self.n_agents < 2:
            raise ConfigError("n_agents", f"need at least 2 robots, got {self.n_agents}")
        if self.dim not in (1, 2, 3):
            raise ConfigError("dim", f"must be 1, 2 or 3, got {self.dim}")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}, got {self.mode!r}")
        if self.steps < 0:
            raise ConfigError("steps", "must be >= 0")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError("epsilon", f"must be > 0, got {self.epsilon}")
        if self.confirm_k < 1:
            raise ConfigError("confirm_k", "must be >= 1")
        if not self.divergence_factor > 0:
            raise ConfigError("divergence_factor", "must be > 0")
        if self.formation.positions is not None and (
                len(self.formation.positions) != self.n_agents
                or any(len(p) != self.dim for p in self.formation.positions)):
            raise ConfigError("formation.positions", f"need {self.n_agents} positions of length {self.dim}")
        if self.attack.schedule is not None:
            self.attack.schedule.validate_for(self.n_agents)
        elif sum(self.attack.counts) > self.n_agents:
            raise ConfigError("attack.counts", f"{sum(self.attack.counts)} targets exceed {self.n_agents} robots")

    @property
    def resolved_epsilon(self) -> float:
        """Threshold in use: the configured one or ``5 (nu_max + omega_max)``."""
        if self.epsilon is not None:
            return self.epsilon
        eps = 5.0 * (self.noise.nu_max + self.noise.omega_max)
        if not eps > 0:
            raise ConfigError("epsilon", "noise-free scenarios need an explicit epsilon")
        return eps

    @property
    def state_dim(self) -> int:
        return self.dim if self.mode == "kinematic" else 2 * self.dim

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = _plain(self)
        d["epsilon_resolved"] = self.resolved_epsilon
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d.pop("epsilon_resolved", None)
        sections = {
            "formation": FormationSpec, "topology": TopologySpec, "noise": NoiseConfig,
            "solver": SolverConfig, "dynamics": DynamicsSpec,
        }
        kwargs = {}
        for key, value in d.items():
            if key in sections:
                kwargs[key] = _build(sections[key], value, key)
            elif key == "attack":
                kwargs[key] = _attack(value)
            else:
                kwargs[key] = value
        return _build(cls, kwargs, "")

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"{path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", f"{path} must hold a JSON object")
        return cls.from_dict(data)


def _plain(obj):
    if isinstance(obj, AttackSchedule):
        return obj.to_dict()
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj) if f.init}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data, prefix: str):
    where = f"{prefix}." if prefix else ""
    if not isinstance(data, dict):
        raise ConfigError(prefix or "config", "expected a JSON object")
    names = {f.name for f in fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}{unknown[0]}", "unknown key")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        head = msg.split()[0] if msg else ""
        name = head if head in names else next((n for n in names if n in msg), prefix or "config")
        raise ConfigError(f"{where}{name}" if name != prefix else name, msg) from None


def _attack(value) -> AttackSpec:
    if not isinstance(value, dict):
        raise ConfigError("attack", "expected a JSON object")
    value = dict(value)
    if value.get("schedule") is not None:
        value["schedule"] = AttackSchedule.from_dict(value["schedule"])
    return _build(AttackSpec, value, "attack")
