"""Run configuration: nested dataclasses rendered as dotted ``section.key = value`` text.

Values are JSON literals (bare words are accepted as strings when parsing).
Per-module seeds are not configured individually; they are split from the
single root ``seed``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace

from .errors import InvalidConfig
from .fusion import DriftSpec, FusionConfig
from .rsd import RsdConfig
from .scene import SceneSpec
from .scg import ClassifierConfig
from .seeds import derive
from .solver import RansacParams
from .trainer import TrainConfig

_SPLIT_SEED_FIELDS = {"seed"}


@dataclass(frozen=True)
class BackboneConfig:
    width: int = 64
    hidden: int = 128


@dataclass(frozen=True)
class GuidanceConfig:
    enabled: bool = True
    sigma: float = 0.1


@dataclass(frozen=True)
class TrainerSettings:
    epochs: int = 25
    frames_per_batch: int = 8
    points_per_frame: int = 128
    hidden: int = 128
    depth: int = 3
    lr_min: float = 1e-4
    lr_max: float = 2e-2
    optimizer: str = "adamw"
    weight_decay: float = 1e-2
    strategy: str = "rsd"


@dataclass(frozen=True)
class FusionSettings:
    bias_per_meter: tuple[float, float, float] = (0.05, 0.0, 0.0)
    noise_sigma: float = 0.0
    process_sigma: float = 0.1
    initial_sigma: float = 0.1
    confidence_floor: float = 0.0
    stride: int = 1
    noise_scale: float = 1.0


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneSpec = field(default_factory=SceneSpec)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    trainer: TrainerSettings = field(default_factory=TrainerSettings)
    rsd: RsdConfig = field(default_factory=RsdConfig)
    ransac: RansacParams = field(default_factory=RansacParams)
    fusion: FusionSettings = field(default_factory=FusionSettings)

    # seeds split from the root ------------------------------------------------

    def module_seed(self, name: str) -> int:
        return int(derive(self.seed, name).generate_state(1, dtype="uint32")[0])

    def scene_spec(self) -> SceneSpec:
        return replace(self.scene, seed=self.module_seed("scene"))

    def train_config(self) -> TrainConfig:
        t = self.trainer
        return TrainConfig(epochs=t.epochs, frames_per_batch=t.frames_per_batch, points_per_frame=t.points_per_frame,
                           hidden=t.hidden, depth=t.depth, lr_min=t.lr_min, lr_max=t.lr_max, optimizer=t.optimizer,
                           weight_decay=t.weight_decay, scg=self.guidance.enabled, sigma=self.guidance.sigma,
                           strategy=t.strategy, rsd=self.rsd, seed=self.module_seed("trainer"))

    def ransac_params(self) -> RansacParams:
        return replace(self.ransac, seed=self.module_seed("ransac"))

    def drift_spec(self) -> DriftSpec:
        f = self.fusion
        return DriftSpec(tuple(f.bias_per_meter), f.noise_sigma, f.process_sigma)

    def fusion_config(self) -> FusionConfig:
        f = self.fusion
        return FusionConfig(f.initial_sigma, f.confidence_floor, f.stride, f.noise_scale)

    def validate(self) -> "RunConfig":
        """Run every sub-config validator; raises InvalidConfig / InvalidSpec."""
        self.scene.validate()
        if self.backbone.width < 1 or self.backbone.hidden < 1:
            raise InvalidConfig("backbone sizes must be positive")
        if self.guidance.sigma < 0:
            raise InvalidConfig("guidance.sigma must be non-negative")
        if self.classifier.optimizer not in ("sgd", "adamw") or self.trainer.optimizer not in ("sgd", "adamw"):
            raise InvalidConfig("optimizer must be sgd or adamw")
        if not 0 <= self.classifier.epsilon < 1:
            raise InvalidConfig("classifier.epsilon must lie in [0, 1)")
        self.train_config()
        self.fusion_config()
        return self


def _sections(cfg) -> list[tuple[str, object]]:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out += [(f"{f.name}.{k}", x) for k, x in _sections(v) if k not in _SPLIT_SEED_FIELDS]
        else:
            out.append((f.name, v))
    return out


def _to_json(v):
    if isinstance(v, tuple):
        return [_to_json(x) for x in v]
    return v


def render(cfg: RunConfig) -> str:
    return "".join(f"{k} = {json.dumps(_to_json(v))}\n" for k, v in _sections(cfg))


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(render(cfg).encode()).hexdigest()[:16]


def _coerce(value, like, key):
    if isinstance(like, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(like, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise InvalidConfig(f"{key}: expected integer, got {value!r}")
        return int(value)
    if isinstance(like, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{key}: expected number, got {value!r}")
        return float(value)
    if isinstance(like, str):
        if not isinstance(value, str):
            raise InvalidConfig(f"{key}: expected string, got {value!r}")
        return value
    if isinstance(like, tuple):
        if not isinstance(value, list):
            raise InvalidConfig(f"{key}: expected list, got {value!r}")
        proto = like[0] if like else 0.0
        return tuple(_coerce(v, proto, key) for v in value)
    raise InvalidConfig(f"{key}: unsupported type")


def _parse_value(text: str, key: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        if text and all(c.isalnum() or c in "_-." for c in text):
            return text
        raise InvalidConfig(f"{key}: cannot parse value {text!r}") from None


def apply_overrides(cfg, pairs: dict[str, object], prefix: str = ""):
    """Return a copy of ``cfg`` with dotted-key overrides applied (raw parsed values)."""
    changes = {}
    names = {f.name for f in fields(cfg)}
    nested: dict[str, dict] = {}
    for key, value in pairs.items():
        head, _, rest = key.partition(".")
        if head not in names or (prefix and head in _SPLIT_SEED_FIELDS):
            raise InvalidConfig(f"unknown config key {prefix + key!r}")
        current = getattr(cfg, head)
        if dataclasses.is_dataclass(current):
            if not rest:
                raise InvalidConfig(f"{prefix + key!r} is a section, not a key")
            nested.setdefault(head, {})[rest] = value
        else:
            if rest:
                raise InvalidConfig(f"unknown config key {prefix + key!r}")
            changes[head] = _coerce(value, current, prefix + key)
    for head, sub in nested.items():
        changes[head] = apply_overrides(getattr(cfg, head), sub, f"{prefix}{head}.")
    try:
        return replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidConfig):
            raise
        raise InvalidConfig(str(exc)) from exc


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    pairs = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidConfig(f"line {n}: expected 'key = value'")
        key = key.strip()
        if key in pairs:
            raise InvalidConfig(f"line {n}: duplicate key {key!r}")
        pairs[key] = _parse_value(value.strip(), key)
    return apply_overrides(base or RunConfig(), pairs)


def load(path) -> RunConfig:
    with open(path) as fh:
        return parse(fh.read())
