"""Run configuration: one JSON document covering model, training, corruption and data.

Seeds and data-derived sizes (feature count, window length) live at the top
level only; each section is validated by its own dataclass and unknown keys
are rejected before any computation starts.
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .missingness import CorruptionSpec, SyntheticSpec
from .model import ModelConfig
from .training import TrainConfig

_MODEL_KEYS = tuple(f.name for f in fields(ModelConfig) if f.name not in ("n_features", "n_steps"))
_TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")
_CORRUPT_KEYS = tuple(f.name for f in fields(CorruptionSpec) if f.name != "seed")
_SYNTH_KEYS = tuple(f.name for f in fields(SyntheticSpec) if f.name not in ("seed", "n_steps", "coords"))
_PATH_KEYS = ("data", "coords", "checkpoint", "out")


def _checked(section, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    return dict(d)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    window: int = 24
    stride: int = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    corruption: dict = field(default_factory=dict)
    synthetic: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride must be >= 1")
        for name, allowed in (
            ("model", _MODEL_KEYS),
            ("train", _TRAIN_KEYS),
            ("corruption", _CORRUPT_KEYS),
            ("synthetic", _SYNTH_KEYS),
            ("paths", _PATH_KEYS),
        ):
            object.__setattr__(self, name, _checked(name, getattr(self, name), allowed))
        # build every section once so range errors surface up front
        self.model_config(1)
        self.train_config()
        self.corruption_spec()
        self.synthetic_spec()

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError("config root must be an object")
        return cls.from_dict(d)

    def to_dict(self):
        return asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)

    def with_overrides(self, **kw):
        """Copy with top-level fields or ``section.key`` entries replaced (``None`` values ignored)."""
        top, nested = {}, {}
        for key, value in kw.items():
            if value is None:
                continue
            if "." in key:
                section, sub = key.split(".", 1)
                nested.setdefault(section, dict(getattr(self, section)))[sub] = value
            else:
                top[key] = value
        return replace(self, **top, **nested)

    def model_config(self, n_features):
        return ModelConfig(n_features=n_features, n_steps=self.window, **self.model)

    def train_config(self):
        return TrainConfig(seed=self.seed, **self.train)

    def corruption_spec(self):
        return CorruptionSpec(seed=self.seed, **self.corruption)

    def synthetic_spec(self):
        return SyntheticSpec(seed=self.seed, n_steps=self.window, **self.synthetic)
