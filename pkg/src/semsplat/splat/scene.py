"""Scene container for 3D Gaussians, stored as arrays for batch math."""
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import SchemaViolation


@dataclass(frozen=True)
class Gaussian:
    """One Gaussian: world position, unit quaternion, positive scales,
    pre-sigmoid opacity, color, and semantic feature."""
    p: np.ndarray
    r: np.ndarray
    s: np.ndarray
    alpha_logit: float
    c: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64).reshape(3)
        r = np.asarray(self.r, dtype=np.float64).reshape(4)
        s = np.asarray(self.s, dtype=np.float64).reshape(3)
        if np.any(s <= 0):
            raise SchemaViolation(f"scales must be positive, got {s}")
        if abs(np.linalg.norm(r) - 1.0) > 1e-6:
            raise SchemaViolation("quaternion must be unit length")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "c", np.asarray(self.c, dtype=np.float64))
        object.__setattr__(self, "f", np.asarray(self.f, dtype=np.float64))


@dataclass
class GaussianScene:
    positions: np.ndarray     # n x 3
    quaternions: np.ndarray   # n x 4
    scales: np.ndarray        # n x 3, positive
    alpha_logits: np.ndarray  # n
    colors: np.ndarray        # n x d_c
    features: np.ndarray      # n x d_f

    def __post_init__(self):
        n = len(self.positions)
        for name in ("positions", "quaternions", "scales", "alpha_logits",
                     "colors", "features"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            if arr.shape[0] != n:
                raise SchemaViolation(f"{name} has {arr.shape[0]} rows, expected {n}")
            setattr(self, name, arr)
        if n and np.any(self.scales <= 0):
            raise SchemaViolation("scales must be positive")

    def __len__(self):
        return len(self.positions)

    @property
    def d_c(self):
        return self.colors.shape[1]

    @property
    def d_f(self):
        return self.features.shape[1]

    @classmethod
    def from_gaussians(cls, gaussians):
        if not gaussians:
            return cls.empty()
        return cls(
            positions=np.array([g.p for g in gaussians]),
            quaternions=np.array([g.r for g in gaussians]),
            scales=np.array([g.s for g in gaussians]),
            alpha_logits=np.array([g.alpha_logit for g in gaussians]),
            colors=np.array([g.c for g in gaussians]),
            features=np.array([g.f for g in gaussians]),
        )

    @classmethod
    def empty(cls, d_c=3, d_f=8):
        z = np.zeros
        return cls(z((0, 3)), z((0, 4)), z((0, 3)), z(0), z((0, d_c)), z((0, d_f)))

    def with_features(self, features):
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.shape[0] != len(self):
            raise SchemaViolation("feature row count differs from scene size")
        return replace(self, features=features)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=int)
        return GaussianScene(
            positions=self.positions[idx].copy(),
            quaternions=self.quaternions[idx].copy(),
            scales=self.scales[idx].copy(),
            alpha_logits=self.alpha_logits[idx].copy(),
            colors=self.colors[idx].copy(),
            features=self.features[idx].copy(),
        )

    def copy(self):
        return self.subset(np.arange(len(self)))

    def opacities(self):
        return 1.0 / (1.0 + np.exp(-self.alpha_logits))


def save_scene(path_prefix, scene):
    """Binary float64 records per Gaussian plus a JSON header."""
    n = len(scene)
    header = {"count": n, "d_c": scene.d_c, "d_f": scene.d_f, "dtype": "<f8"}
    rec = np.concatenate(
        [
            scene.positions,
            scene.quaternions,
            scene.scales,
            scene.alpha_logits[:, None],
            scene.colors,
            scene.features,
        ],
        axis=1,
    ).astype("<f8")
    with open(path_prefix + ".json", "w") as fh:
        json.dump(header, fh, indent=1, sort_keys=True)
        fh.write("\n")
    rec.tofile(path_prefix + ".bin")


def load_scene(path_prefix):
    from ..errors import MissingArtifact

    if not os.path.exists(path_prefix + ".json"):
        raise MissingArtifact(f"scene header {path_prefix}.json not found")
    with open(path_prefix + ".json") as fh:
        header = json.load(fh)
    n, d_c, d_f = header["count"], header["d_c"], header["d_f"]
    width = 3 + 4 + 3 + 1 + d_c + d_f
    rec = np.fromfile(path_prefix + ".bin", dtype="<f8")
    if rec.size != n * width:
        raise SchemaViolation(
            f"scene payload has {rec.size} floats, expected {n * width}"
        )
    rec = rec.reshape(n, width)
    o = 0

    def take(k):
        nonlocal o
        out = rec[:, o:o + k]
        o += k
        return out.copy()

    return GaussianScene(
        positions=take(3),
        quaternions=take(4),
        scales=take(3),
        alpha_logits=take(1)[:, 0],
        colors=take(d_c),
        features=take(d_f),
    )
