"""Single resolved configuration for the whole pipeline.

Every field has a default; a run's exact configuration is always written
next to its outputs. Stage artifacts are keyed by a hash of the resolved
configuration so artifacts from different configurations never mix.
"""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .ccl import CclConfig
from .errors import SchemaViolation
from .semantic_field import FieldTrainConfig


@dataclass
class SynthConfig:
    k: int = 4
    views: int = 8
    resolution: int = 64
    gaussians: int = 500
    backdrop: bool = True
    occlusion: float = 0.0
    blur_mix: float = 0.0
    view_rot_deg: float = 0.0
    holdout_every: int = 4
    dim: int = 512
    feature_dim: int = 8


@dataclass
class MaskFilterConfig:
    min_pred_iou: float = 0.88
    min_stability: float = 0.9
    max_overlap: float = 0.8
    association_threshold: float = 0.5


@dataclass
class QueryConfig:
    segment_threshold: float = 0.5


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    masks: MaskFilterConfig = field(default_factory=MaskFilterConfig)
    ccl: CclConfig = field(default_factory=CclConfig)
    field_train: FieldTrainConfig = field(default_factory=FieldTrainConfig)
    query: QueryConfig = field(default_factory=QueryConfig)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["ccl"]["adam_betas"] = list(d["ccl"]["adam_betas"])
        d["field_train"]["adam_betas"] = list(d["field_train"]["adam_betas"])
        return d

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _from_dict(cls, data, path="config"):
    if not isinstance(data, dict):
        raise SchemaViolation(f"{path}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise SchemaViolation(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        if dataclasses.is_dataclass(f.type) or f.type in (
            SynthConfig, MaskFilterConfig, QueryConfig, CclConfig, FieldTrainConfig
        ):
            kwargs[name] = _from_dict(f.type, value, f"{path}.{name}")
        elif name == "adam_betas":
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    return _from_dict(PipelineConfig, data)


def config_from_dict(data):
    return _from_dict(PipelineConfig, data)
