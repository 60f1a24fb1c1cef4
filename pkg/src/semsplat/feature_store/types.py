"""Canonical data model shared by every pipeline stage.

Datasets are immutable after load: stages derive new artifacts instead of
mutating records in place, so concurrent readers need no locking.
"""
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateFeature, SchemaViolation, ShapeError
from .rle import rle_area, rle_decode

SCALE_SP = "sp"
SCALE_WP = "wp"
SCALES = (SCALE_SP, SCALE_WP)

UNLABELED = -1


@dataclass(frozen=True)
class CameraPose:
    intrinsics: np.ndarray      # 3x3, fx fy cx cy embedded
    world_to_camera: np.ndarray  # 4x4 rigid transform

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        W = np.asarray(self.world_to_camera, dtype=np.float64)
        if K.shape != (3, 3) or W.shape != (4, 4):
            raise ShapeError(f"pose shapes {K.shape}, {W.shape}")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0:
            raise SchemaViolation("intrinsics must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise SchemaViolation("focal lengths must be positive")
        R = W[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise SchemaViolation("rotation block is not orthonormal")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "world_to_camera", W)

    @property
    def fx(self):
        return self.intrinsics[0, 0]

    @property
    def fy(self):
        return self.intrinsics[1, 1]

    @property
    def cx(self):
        return self.intrinsics[0, 2]

    @property
    def cy(self):
        return self.intrinsics[1, 2]


@dataclass(frozen=True)
class Frame:
    frame_id: int
    width: int
    height: int
    camera: CameraPose
    image_path: str | None = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SchemaViolation(
                f"frame {self.frame_id}: non-positive size "
                f"{self.width}x{self.height}"
            )


@dataclass(frozen=True)
class Mask:
    mask_id: int
    frame_id: int
    scale: str                   # SCALE_SP | SCALE_WP
    rle_counts: tuple            # run-length region over the frame grid
    height: int
    width: int
    pred_iou: float
    stability: float
    label: int = UNLABELED

    def __post_init__(self):
        if self.scale not in SCALES:
            raise SchemaViolation(f"unknown scale tag {self.scale!r}")
        if rle_area(self.rle_counts) == 0:
            raise SchemaViolation(
                f"mask {self.mask_id} of frame {self.frame_id} is empty"
            )
        for name in ("pred_iou", "stability"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise SchemaViolation(f"{name}={v} outside [0,1]")
        if self.label != UNLABELED and self.label < 1:
            raise SchemaViolation(f"label must be >=1 or -1, got {self.label}")
        object.__setattr__(self, "rle_counts", tuple(int(c) for c in self.rle_counts))

    def bitmap(self):
        return rle_decode(self.rle_counts, self.height, self.width)

    @property
    def area(self):
        return rle_area(self.rle_counts)


@dataclass(frozen=True)
class SemanticFeature:
    frame_id: int
    mask_id: int
    vector: np.ndarray  # unit-normalized float64 copy of the stored record

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise DegenerateFeature(
                f"feature ({self.frame_id},{self.mask_id}) has non-finite entries"
            )
        n = np.linalg.norm(v)
        if n == 0.0:
            raise DegenerateFeature(
                f"feature ({self.frame_id},{self.mask_id}) has zero norm"
            )
        object.__setattr__(self, "vector", v / n)


@dataclass
class Codebook:
    prototypes: np.ndarray  # N x d

    def __post_init__(self):
        P = np.asarray(self.prototypes, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] < 2:
            raise SchemaViolation(f"codebook needs N>=2 rows, got shape {P.shape}")
        self.prototypes = P

    @property
    def n_prototypes(self):
        return self.prototypes.shape[0]

    @property
    def dim(self):
        return self.prototypes.shape[1]

    def unit_rows(self):
        norms = np.linalg.norm(self.prototypes, axis=1, keepdims=True)
        return self.prototypes / norms


@dataclass(frozen=True)
class QuerySet:
    phrases: tuple
    embeddings: np.ndarray  # |phrases| x d, unit rows

    def __post_init__(self):
        E = np.asarray(self.embeddings, dtype=np.float64)
        if E.ndim != 2 or E.shape[0] != len(self.phrases):
            raise SchemaViolation(
                f"{len(self.phrases)} phrases but embedding shape {E.shape}"
            )
        norms = np.linalg.norm(E, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise DegenerateFeature("zero-norm query embedding")
        object.__setattr__(self, "phrases", tuple(self.phrases))
        object.__setattr__(self, "embeddings", E / norms)


@dataclass
class Dataset:
    """Everything load_dataset resolves from a dataset root directory."""
    root: str
    dim: int
    feature_dim: int            # rendered feature channels d_f
    frames: list = field(default_factory=list)
    masks: dict = field(default_factory=dict)     # scale -> [Mask], dataset order
    features: dict = field(default_factory=dict)  # scale -> [SemanticFeature]
    raw_features: dict = field(default_factory=dict)  # scale -> float32 array as stored
    propagated: dict = field(default_factory=dict)    # frame_id -> K bitmaps (optional)
    n_categories: int = 0

    def frame_by_id(self, frame_id):
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        from ..errors import MissingArtifact
        raise MissingArtifact(f"frame {frame_id} not in dataset")

    def masks_for(self, frame_id, scale):
        return [m for m in self.masks[scale] if m.frame_id == frame_id]

    def features_for(self, frame_id, scale):
        return [f for f in self.features[scale] if f.frame_id == frame_id]
