"""Run configuration: one TOML file with a section per stage.

Only the top-level ``seed`` is required.  The scene, observation noise and
pipeline seeds are derived from it, so a run is reproducible from the file
and the seed alone.  Unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterConfig
from .errors import ConfigError, SRRMError
from .grid import NoiseSpec
from .pipeline import PipelineConfig
from .scene import CropSeason, RainEvent, SceneConfig, TauOmegaParams

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SECTIONS = ("scene", "tau_omega", "noise", "pipeline", "clustering", "evaluation", "iterstudy")


@dataclass
class EvaluationSettings:
    threshold: float = 10.0
    confidence: float = 0.95
    bins: int = 50

    def __post_init__(self):
        if self.threshold <= 0:
            raise ConfigError("evaluation.threshold must be > 0")
        if not 0 < self.confidence < 1:
            raise ConfigError("evaluation.confidence must be in (0, 1)")
        if self.bins < 1:
            raise ConfigError("evaluation.bins must be >= 1")


@dataclass
class IterStudySettings:
    every: int = 10
    max_iterations: int = 200
    day: int | None = None

    def __post_init__(self):
        if self.every < 1 or self.max_iterations < 0:
            raise ConfigError("iterstudy.every must be >= 1 and iterstudy.max_iterations >= 0")


@dataclass
class RunConfig:
    seed: int
    scene: SceneConfig
    tau_omega: TauOmegaParams
    noise: NoiseSpec
    pipeline: PipelineConfig
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    iterstudy: IterStudySettings = field(default_factory=IterStudySettings)
    text: str = ""

    @property
    def sha256(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def resolved(self):
        """Plain nested dict of every setting after defaults and overrides."""
        out = {"seed": self.seed}
        for name in SECTIONS:
            if name == "clustering":
                section = dataclasses.asdict(self.pipeline.cluster)
                # set per candidate and per day by the pipeline
                for key in ("n_clusters", "entropy_weight", "seed"):
                    section.pop(key)
                out[name] = section
                continue
            section = dataclasses.asdict(getattr(self, name))
            if name == "pipeline":
                section.pop("cluster")
            out[name] = section
        return _jsonable(out)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def derive_seeds(seed):
    """Independent integer seeds for the scene, the observation noise and the pipeline."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_type(path, default, value):
    if _is_number(default) and not _is_number(value):
        raise ConfigError(f"{path} must be a number, got {value!r}")
    if isinstance(default, tuple) and not isinstance(value, list):
        raise ConfigError(f"{path} must be a list, got {value!r}")
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{path} must be a string, got {value!r}")


def _build(cls, table, path, exclude=(), extra=None):
    if not isinstance(table, dict):
        raise ConfigError(f"{path} must be a table")
    known = {f.name: f for f in dataclasses.fields(cls) if f.name not in exclude}
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")
        f = known[key]
        if f.default is not dataclasses.MISSING:
            _check_type(f"{path}.{key}", f.default, value)
        kwargs[key] = tuple(value) if isinstance(value, list) and isinstance(f.default, tuple) else value
    kwargs.update(extra or {})
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (SRRMError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _entries(cls, items, path):
    if not isinstance(items, list):
        raise ConfigError(f"{path} must be an array of tables")
    return [_build(cls, item, f"{path}[{i}]") for i, item in enumerate(items)]


def parse_config(text, seed=None, cadence=None):
    """Build a RunConfig from TOML text; ``seed`` and ``cadence`` override the file."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    for key in data:
        if key != "seed" and key not in SECTIONS:
            raise ConfigError(f"unknown key '{key}'")
    if seed is None:
        if "seed" not in data:
            raise ConfigError("missing required key 'seed'")
        seed = data["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    scene_seed, noise_seed, pipeline_seed = derive_seeds(seed)

    scene = dict(data.get("scene", {}))
    if "crop_calendar" in scene:
        scene["crop_calendar"] = _entries(CropSeason, scene["crop_calendar"], "scene.crop_calendar")
    if "rain_events" in scene:
        scene["rain_events"] = _entries(RainEvent, scene["rain_events"], "scene.rain_events")
    scene_cfg = _build(SceneConfig, scene, "scene", exclude=("seed",), extra={"seed": scene_seed})

    tau = _build(TauOmegaParams, data.get("tau_omega", {}), "tau_omega")
    noise = _build(NoiseSpec, data.get("noise", {}), "noise", exclude=("seed",), extra={"seed": noise_seed})
    cluster = _build(
        ClusterConfig, data.get("clustering", {}), "clustering", exclude=("n_clusters", "entropy_weight", "seed")
    )
    pipe = dict(data.get("pipeline", {}))
    if cadence is not None:
        pipe["cadence"] = cadence
    pipeline = _build(
        PipelineConfig, pipe, "pipeline", exclude=("cluster", "seed"), extra={"cluster": cluster, "seed": pipeline_seed}
    )
    if scene_cfg.rows % pipeline.scale_factor or scene_cfg.cols % pipeline.scale_factor:
        raise ConfigError("pipeline.scale_factor must divide scene.rows and scene.cols")
    return RunConfig(
        seed=seed,
        scene=scene_cfg,
        tau_omega=tau,
        noise=noise,
        pipeline=pipeline,
        evaluation=_build(EvaluationSettings, data.get("evaluation", {}), "evaluation"),
        iterstudy=_build(IterStudySettings, data.get("iterstudy", {}), "iterstudy"),
        text=text,
    )


def load_config(path, seed=None, cadence=None):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, seed=seed, cadence=cadence)


__all__ = ["RunConfig", "EvaluationSettings", "IterStudySettings", "parse_config", "load_config", "derive_seeds"]
