"""
YAML run configuration.

Every section is optional; missing keys fall back to ``constants``. A
traffic pattern (``patterns.<id>``) overrides traffic fields of individual
slices by slice name.
"""
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import yaml

import constants
from ai.ppo import ExplorationSchedule, PpoHyperparams
from ai.transfer import TransferConfig, TransferMode
from slicing.action_space import enumerate_action_space
from slicing.types import ConfigError, EnvConfig, SliceSpec, TrafficKind, TrafficModel

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
DEFAULT_PATTERN = "pattern1"


@dataclass(frozen=True)
class RunConfig:
    """One training or deployment run."""
    env: EnvConfig
    ppo: PpoHyperparams = PpoHyperparams()
    explore: ExplorationSchedule = ExplorationSchedule()
    transfer: TransferConfig = TransferConfig()
    expert_keys: Tuple[str, ...] = ()
    total_steps: int = constants.TOTAL_STEPS
    seed: int = 0
    traffic_pattern: str = DEFAULT_PATTERN
    learner_init_key: Optional[str] = None
    save_learner_key: Optional[str] = None
    oracle_windows: int = constants.ORACLE_WINDOWS
    # learner init and action sampling; ``seed`` alone drives the traffic and the transfer draws
    agent_seed: Optional[int] = None

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.transfer.mode != TransferMode.NONE and self.total_steps < self.transfer.duration:
            raise ConfigError(
                f"total_steps ({self.total_steps}) must cover the transfer duration ({self.transfer.duration})")
        if self.transfer.mode != TransferMode.NONE and not self.expert_keys:
            raise ConfigError(f"mode {self.transfer.mode} needs at least one expert key")
        if self.oracle_windows < 1:
            raise ConfigError("oracle_windows must be >= 1")

    @property
    def learner_seed(self) -> int:
        return self.seed if self.agent_seed is None else self.agent_seed

    def replace(self, **changes) -> 'RunConfig':
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Scenario:
    """Which pattern the experts are trained on and which one they are deployed on."""
    name: str
    train_pattern: str
    deploy_pattern: str


@dataclass(frozen=True)
class SweepSpec:
    """The hyper-parameter grid of a sweep."""
    modes: Tuple[TransferMode, ...] = tuple(TransferMode)
    exploration_decays: Tuple[float, ...] = constants.EXPLORATION_DECAYS
    transfer_rates: Tuple[float, ...] = constants.TRANSFER_RATES
    gammas: Tuple[float, ...] = constants.HYBRID_GAMMAS
    seeds: Tuple[int, ...] = (1, 2)
    scenarios: Tuple[Scenario, ...] = (Scenario("similar", DEFAULT_PATTERN, DEFAULT_PATTERN),)
    base_seed: int = 0
    expert_seed: int = 1000
    expert_steps: int = constants.TOTAL_STEPS
    top_k: int = constants.TOP_K

    def __post_init__(self):
        if not self.seeds or not self.scenarios or not self.modes:
            raise ConfigError("a sweep needs at least one seed, scenario and mode")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")


def load_document(path: PathLike) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _section(doc: dict, name: str) -> dict:
    section = doc.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    return section


def _build(cls, values: dict, where: str):
    """Construct a dataclass from a mapping, rejecting unknown keys."""
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def default_slices() -> list:
    """The three-slice layout (VoNR, VR, Video) as YAML-shaped mappings."""
    kinds = ("vonr", "vr_synthetic", "video")
    users = (constants.VONR_USERS, constants.VR_USERS, constants.VIDEO_USERS)
    return [
        {"name": name, "weight": w, "c1": c1, "c2": c2,
         "traffic": {"kind": kind, "user_mean": mean, "user_max": max_users}}
        for name, w, c1, c2, kind, (mean, max_users) in zip(
            constants.SLICE_NAMES, constants.SLICE_WEIGHTS, constants.SLICE_C1, constants.SLICE_C2,
            kinds, users)
    ]


def _traffic_model(values: dict, where: str) -> TrafficModel:
    values = dict(values)
    try:
        values["kind"] = TrafficKind(values.get("kind"))
    except ValueError as exc:
        raise ConfigError(f"{where}: unknown traffic kind {values.get('kind')!r}") from exc
    return _build(TrafficModel, values, where)


def build_env_config(doc: dict, pattern: Optional[str] = None) -> EnvConfig:
    """EnvConfig from the ``env`` and ``slices`` sections plus a traffic pattern."""
    slice_docs = doc.get("slices") or default_slices()
    overrides = {}
    if pattern is not None:
        patterns = _section(doc, "patterns")
        if pattern not in patterns and pattern != DEFAULT_PATTERN:
            raise ConfigError(f"unknown traffic pattern {pattern!r}; known: {sorted(patterns)}")
        overrides = patterns.get(pattern) or {}
    names = [s.get("name", f"slice{i}") for i, s in enumerate(slice_docs)]
    unknown = set(overrides) - set(names)
    if unknown:
        raise ConfigError(f"pattern {pattern!r} overrides unknown slices {sorted(unknown)}")

    slices = []
    for slice_id, (name, entry) in enumerate(zip(names, slice_docs)):
        where = f"slices[{slice_id}] ({name})"
        traffic = dict(entry.get("traffic") or {})
        traffic.update(overrides.get(name) or {})
        slices.append(SliceSpec(
            slice_id=slice_id,
            name=name,
            weight=float(entry.get("weight", 0.0)),
            c1=float(entry.get("c1", 1.0)),
            c2=float(entry.get("c2", 1.0)),
            traffic=_traffic_model(traffic, where),
        ))
    env = _build(EnvConfig, dict(_section(doc, "env"), slices=tuple(slices)), "env")
    enumerate_action_space(env.num_slices, env.action_granularity, env.min_share)
    return env


def build_run_config(doc: dict, pattern: Optional[str] = None,
                     transfer_overrides: Optional[dict] = None,
                     explore_overrides: Optional[dict] = None, **overrides) -> RunConfig:
    """
    RunConfig from a parsed document.

    Args:
        doc: Parsed YAML document.
        pattern: Traffic pattern id; defaults to ``run.traffic_pattern``.
        transfer_overrides: Keys merged into the ``transfer`` section.
        explore_overrides: Keys merged into the ``explore`` section.
        **overrides: RunConfig fields (``seed``, ``expert_keys``, ...).
    """
    run = dict(_section(doc, "run"))
    pattern = pattern or run.pop("traffic_pattern", DEFAULT_PATTERN)
    run.pop("traffic_pattern", None)
    transfer = dict(_section(doc, "transfer"), **(transfer_overrides or {}))
    explore = dict(_section(doc, "explore"), **(explore_overrides or {}))
    if "mode" in transfer:
        try:
            transfer["mode"] = TransferMode(transfer["mode"])
        except ValueError as exc:
            raise ConfigError(f"transfer: unknown mode {transfer['mode']!r}") from exc
    if "expert_keys" in run:
        run["expert_keys"] = tuple(run["expert_keys"] or ())

    values = dict(
        env=build_env_config(doc, pattern),
        ppo=_build(PpoHyperparams, _section(doc, "ppo"), "ppo"),
        explore=_build(ExplorationSchedule, explore, "explore"),
        transfer=_build(TransferConfig, transfer, "transfer"),
        traffic_pattern=pattern,
        **run,
    )
    values.update(overrides)
    return _build(RunConfig, values, "run")


def load_run_config(path: PathLike = constants.CONFIG_PATH, pattern: Optional[str] = None,
                    **overrides) -> RunConfig:
    config = build_run_config(load_document(path), pattern, **overrides)
    logger.debug("loaded run config from %s (pattern %s)", path, config.traffic_pattern)
    return config


def build_sweep_spec(doc: dict, preset: Optional[str] = None) -> SweepSpec:
    """
    SweepSpec from the ``sweep`` section. A named ``preset`` from
    ``sweep_presets`` replaces the keys it sets.
    """
    values = dict(_section(doc, "sweep"))
    if preset is not None:
        presets = _section(doc, "sweep_presets")
        if preset not in presets:
            raise ConfigError(f"unknown sweep preset {preset!r}; known: {sorted(presets)}")
        values.update(presets[preset] or {})
        logger.info("sweep preset %s: %s", preset, ", ".join(sorted(presets[preset] or {})))
    if "modes" in values:
        try:
            values["modes"] = tuple(TransferMode(m) for m in values["modes"])
        except ValueError as exc:
            raise ConfigError(f"sweep: {exc}") from exc
    for name in ("exploration_decays", "transfer_rates", "gammas"):
        if name in values:
            values[name] = tuple(float(v) for v in values[name])
    if "seeds" in values:
        values["seeds"] = tuple(int(v) for v in values["seeds"])
    if "scenarios" in values:
        scenarios: Dict[str, dict] = values["scenarios"] or {}
        try:
            values["scenarios"] = tuple(
                Scenario(name, str(entry["train"]), str(entry["deploy"])) for name, entry in scenarios.items())
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"sweep: each scenario needs 'train' and 'deploy' patterns ({exc})") from exc
    spec = _build(SweepSpec, values, "sweep")
    patterns = set(_section(doc, "patterns")) | {DEFAULT_PATTERN}
    for scenario in spec.scenarios:
        for pattern in (scenario.train_pattern, scenario.deploy_pattern):
            if pattern not in patterns:
                raise ConfigError(f"scenario {scenario.name}: unknown pattern {pattern!r}")
    return spec
