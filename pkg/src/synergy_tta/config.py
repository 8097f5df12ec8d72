"""Run configuration, loaded from YAML files with nested sections."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .bank import DEFAULT_CAPACITY, DEFAULT_UPDATE_PERIOD
from .detector import DetectorConfig
from .errors import ConfigError
from .simstream import StreamConfig

MODES = ("mos_sw_first", "mos_latest_first", "mean_ensemble", "no_ensemble", "no_adapt")
FEATSIM_MODES = ("rank", "cosine")


@dataclass(frozen=True)
class SourceConfig:
    """Supervised pretraining of the source model."""

    batches: int = 250
    steps: int = 3000
    batch_size: int = 4
    lr: float = 3e-3
    seed: int = 1000
    checkpoint: str = ""   # load this file instead of pretraining when set


@dataclass(frozen=True)
class RunConfig:
    bank_size: int = DEFAULT_CAPACITY
    update_period: int = DEFAULT_UPDATE_PERIOD
    pseudo_threshold: float = 0.6
    ignore_threshold: float = 0.25
    # adaptation step; kept here so tuning them leaves the cached source model valid
    tta_lr: float = 1e-2
    tta_grad_clip: float = 1.0
    tta_reg_weight: float = 0.0
    mode: str = "mos_sw_first"
    featsim: str = "rank"
    rank_method: str = "svd"
    rank_rel_tol: float = 1e-3
    center_features: bool = True
    box_cost_mean: bool = False
    iou_thresh: float = 0.7
    early_set_batches: int = 32
    workers: int = 0
    seed: int = 0
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    stream: StreamConfig = field(default_factory=StreamConfig)
    source: SourceConfig = field(default_factory=SourceConfig)

    def validate(self):
        if self.bank_size < 1:
            raise ConfigError("bank_size must be >= 1")
        if self.update_period < 1:
            raise ConfigError("update_period must be >= 1")
        if not 0.0 < self.pseudo_threshold < 1.0:
            raise ConfigError("pseudo_threshold must lie in (0, 1)")
        if not 0.0 <= self.ignore_threshold <= self.pseudo_threshold:
            raise ConfigError("ignore_threshold must lie in [0, pseudo_threshold]")
        if self.tta_lr < 0.0 or self.tta_grad_clip <= 0.0 or self.tta_reg_weight < 0.0:
            raise ConfigError("tta_lr and tta_reg_weight must be >= 0, tta_grad_clip > 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.featsim not in FEATSIM_MODES:
            raise ConfigError(f"featsim must be one of {FEATSIM_MODES}, got {self.featsim!r}")
        if self.rank_method not in ("svd", "nuclear"):
            raise ConfigError("rank_method must be 'svd' or 'nuclear'")
        if not 0.0 < self.iou_thresh <= 1.0:
            raise ConfigError("iou_thresh must lie in (0, 1]")
        if self.stream.domain != "target":
            raise ConfigError("the adaptation stream must use the target domain")
        self.stream.validate()
        return self

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate()

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "detector" in d:
                d["detector"] = DetectorConfig.from_dict(d["detector"])
            if "stream" in d:
                d["stream"] = StreamConfig.from_dict(d["stream"])
            if "source" in d:
                d["source"] = SourceConfig(**d["source"])
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping")
    return RunConfig.from_dict(data)


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(json.loads(json.dumps(cfg.to_dict())), fh, sort_keys=False)


def source_key(cfg):
    """Stable hash of everything the pretrained source model depends on."""
    payload = {"detector": asdict(cfg.detector), "stream": asdict(cfg.stream),
               "source": asdict(cfg.source)}
    payload["stream"].pop("num_batches")
    payload["stream"].pop("schedule")
    payload["stream"].pop("domain")
    payload["stream"].pop("target")
    raw = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(raw).hexdigest()[:16]
