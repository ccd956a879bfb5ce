"""YAML configuration for the command-line pipeline.

A config file has up to five sections, all optional:

    endpoints:
      judge:        {base_url, model_name, max_context_tokens, max_retries,
                     requests_per_second_cap, temperature}
      guard:        same shape (optional)
      reward_model: same shape (optional)
      reference:    same shape (optional; defaults to the judge)
    annotate:
      workers, checkpoint_every, input_format, default_dataset,
      default_subset, timeout
    curation:
      tau, deficit_mode, quantile_method, strict_above,
      restrict_augmentation_to_deficient, augmentation_cap_per_category,
      dedup_on_merge, allow_degraded_single_turn, category_list
    sample:
      fraction, keys
    stats:
      figures

Command-line flags override file values one to one. Credentials never live
in the file: they come from MIXCURATE_JUDGE_API_KEY, MIXCURATE_GUARD_API_KEY,
MIXCURATE_REWARD_MODEL_API_KEY, and MIXCURATE_REFERENCE_API_KEY.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .corpus import FORMAT_HINTS, FORMAT_AUTO
from .judge import EndpointSet, JudgeEndpoint, JudgeError
from .recipe import CurationConfig, RecipeError

_ENV_PREFIX = "MIXCURATE_"
_ENDPOINT_NAMES = ("judge", "guard", "reward_model", "reference")


class ConfigError(ValueError):
    """The config file is malformed or contradicts itself."""


@dataclass(frozen=True)
class AnnotateSettings:
    workers: int = 1
    checkpoint_every: int = 100
    input_format: str = FORMAT_AUTO
    default_dataset: str | None = None
    default_subset: str | None = None
    timeout: float = 60.0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("annotate.workers must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("annotate.checkpoint_every must be >= 1")
        if self.input_format not in FORMAT_HINTS:
            raise ConfigError(f"unknown annotate.input_format: {self.input_format!r}")
        if self.timeout <= 0:
            raise ConfigError("annotate.timeout must be positive")


@dataclass(frozen=True)
class SampleSettings:
    fraction: float = 0.1
    keys: tuple[str, ...] = ("source_subset",)

    def __post_init__(self) -> None:
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError(f"sample.fraction must be in (0, 1]: {self.fraction}")
        if not self.keys:
            raise ConfigError("sample.keys must not be empty")


@dataclass(frozen=True)
class StatsSettings:
    figures: bool = True


@dataclass(frozen=True)
class ToolConfig:
    endpoints: EndpointSet | None = None
    annotate: AnnotateSettings = AnnotateSettings()
    curation: CurationConfig = CurationConfig()
    sample: SampleSettings = SampleSettings()
    stats: StatsSettings = StatsSettings()

    def snapshot(self) -> dict:
        """Effective values (after any flag overrides), for run manifests."""
        endpoints = None
        if self.endpoints is not None:
            endpoints = {
                name: dataclasses.asdict(endpoint)
                for name in _ENDPOINT_NAMES
                if (endpoint := getattr(self.endpoints, name)) is not None
            }
        return {
            "endpoints": endpoints,
            "annotate": dataclasses.asdict(self.annotate),
            "curation": self.curation.to_dict(),
            "sample": dataclasses.asdict(self.sample),
            "stats": dataclasses.asdict(self.stats),
        }


def _require_mapping(value: object, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be a mapping")
    return value


def _check_keys(obj: dict, allowed: tuple[str, ...], where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(unknown)}")


def _endpoint_from_dict(name: str, obj: object) -> JudgeEndpoint:
    obj = _require_mapping(obj, f"endpoints.{name}")
    _check_keys(
        obj,
        (
            "base_url",
            "model_name",
            "max_context_tokens",
            "max_retries",
            "requests_per_second_cap",
            "temperature",
        ),
        f"endpoints.{name}",
    )
    for required in ("base_url", "model_name"):
        if required not in obj:
            raise ConfigError(f"endpoints.{name} is missing {required}")
    try:
        return JudgeEndpoint(
            base_url=str(obj["base_url"]),
            model_name=str(obj["model_name"]),
            max_context_tokens=int(obj.get("max_context_tokens", 32768)),
            max_retries=int(obj.get("max_retries", 2)),
            requests_per_second_cap=float(obj.get("requests_per_second_cap", 8.0)),
            temperature=float(obj.get("temperature", 0.0)),
        )
    except (JudgeError, TypeError, ValueError) as exc:
        raise ConfigError(f"endpoints.{name}: {exc}") from exc


def _endpoints_from_dict(obj: object) -> EndpointSet | None:
    obj = _require_mapping(obj, "endpoints")
    if not obj:
        return None
    _check_keys(obj, _ENDPOINT_NAMES, "endpoints")
    if "judge" not in obj:
        raise ConfigError("endpoints must include a judge endpoint")
    parsed = {name: _endpoint_from_dict(name, obj[name]) for name in obj}
    return EndpointSet(
        judge=parsed["judge"],
        guard=parsed.get("guard"),
        reward_model=parsed.get("reward_model"),
        reference=parsed.get("reference"),
    )


def _annotate_from_dict(obj: object) -> AnnotateSettings:
    obj = _require_mapping(obj, "annotate")
    allowed = tuple(f.name for f in dataclasses.fields(AnnotateSettings))
    _check_keys(obj, allowed, "annotate")
    try:
        return AnnotateSettings(**obj)
    except TypeError as exc:
        raise ConfigError(f"annotate: {exc}") from exc


def _curation_from_dict(obj: object) -> CurationConfig:
    obj = dict(_require_mapping(obj, "curation"))
    allowed = tuple(f.name for f in dataclasses.fields(CurationConfig))
    _check_keys(obj, allowed, "curation")
    if "category_list" in obj:
        raw = obj["category_list"]
        if not isinstance(raw, list) or not all(isinstance(c, str) for c in raw):
            raise ConfigError("curation.category_list must be a list of strings")
        obj["category_list"] = tuple(raw)
    try:
        return CurationConfig(**obj)
    except (RecipeError, TypeError) as exc:
        raise ConfigError(f"curation: {exc}") from exc


def _sample_from_dict(obj: object) -> SampleSettings:
    obj = dict(_require_mapping(obj, "sample"))
    _check_keys(obj, ("fraction", "keys"), "sample")
    if "keys" in obj:
        raw = obj["keys"]
        if not isinstance(raw, list) or not all(isinstance(k, str) for k in raw):
            raise ConfigError("sample.keys must be a list of strings")
        obj["keys"] = tuple(raw)
    try:
        return SampleSettings(**obj)
    except TypeError as exc:
        raise ConfigError(f"sample: {exc}") from exc


def _stats_from_dict(obj: object) -> StatsSettings:
    obj = _require_mapping(obj, "stats")
    _check_keys(obj, ("figures",), "stats")
    if "figures" in obj and not isinstance(obj["figures"], bool):
        raise ConfigError("stats.figures must be a boolean")
    return StatsSettings(**obj)


def load_config(path: str | Path | None) -> ToolConfig:
    """Parse a YAML config file; None gives all defaults."""
    if path is None:
        return ToolConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    raw = _require_mapping(raw, "config")
    _check_keys(raw, ("endpoints", "annotate", "curation", "sample", "stats"), "config")
    return ToolConfig(
        endpoints=_endpoints_from_dict(raw.get("endpoints")),
        annotate=_annotate_from_dict(raw.get("annotate")),
        curation=_curation_from_dict(raw.get("curation")),
        sample=_sample_from_dict(raw.get("sample")),
        stats=_stats_from_dict(raw.get("stats")),
    )


def api_keys_from_env(environ: dict | None = None) -> dict[str, str]:
    """Endpoint credentials, the only thing the environment supplies."""
    env = os.environ if environ is None else environ
    keys = {}
    for name in _ENDPOINT_NAMES:
        value = env.get(f"{_ENV_PREFIX}{name.upper()}_API_KEY")
        if value:
            keys[name] = value
    return keys
