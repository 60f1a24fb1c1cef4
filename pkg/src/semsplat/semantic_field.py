"""Optimization of the per-Gaussian semantic feature channel.

Rendered feature maps pass through a small MLP decoder and a softmax to give
per-pixel distributions over codebook indices, supervised by cross-entropy
against index maps. Training jointly updates the Gaussians' features and the
decoder; geometry, opacity, and color stay frozen in SEMANTIC_ONLY mode, and
receive an L1 photometric term in JOINT mode.
"""
from dataclasses import dataclass, field

import numpy as np

from .ccl import UNASSIGNED
from .errors import EmptySupervision, NumericalFailure, SchemaViolation, ShapeError
from .optim import Adam
from .splat import build_feature_plan, render, render_backward

MODE_SEMANTIC_ONLY = "semantic_only"
MODE_JOINT = "joint_rgb_semantic"

DECODER_HIDDEN = 64


@dataclass
class Decoder:
    """One hidden layer with ReLU, then linear logits over N indices."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def create(cls, in_dim, n_out, hidden=DECODER_HIDDEN, seed=0):
        rng = np.random.default_rng(seed)
        lim1 = np.sqrt(1.0 / in_dim)
        lim2 = np.sqrt(1.0 / hidden)
        return cls(
            w1=rng.uniform(-lim1, lim1, size=(in_dim, hidden)),
            b1=rng.uniform(-lim1, lim1, size=hidden),
            w2=rng.uniform(-lim2, lim2, size=(hidden, n_out)),
            b2=rng.uniform(-lim2, lim2, size=n_out),
        )

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def n_out(self):
        return self.w2.shape[1]

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class FieldTrainConfig:
    iterations: int = 30000
    learning_rate: float = 0.001
    adam_betas: tuple = (0.9, 0.999)
    mode: str = MODE_SEMANTIC_ONLY
    color_loss_weight: float = 1.0
    hidden: int = DECODER_HIDDEN
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise SchemaViolation("iterations must be >= 1")
        if self.mode not in (MODE_SEMANTIC_ONLY, MODE_JOINT):
            raise SchemaViolation(f"unknown training mode {self.mode!r}")


def softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def decode(feature_map, decoder):
    """Per-pixel MLP + softmax; returns (logits, distribution)."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    if fmap.shape[-1] != decoder.in_dim:
        raise ShapeError(
            f"feature width {fmap.shape[-1]} vs decoder input {decoder.in_dim}"
        )
    flat = fmap.reshape(-1, decoder.in_dim)
    h = flat @ decoder.w1 + decoder.b1
    hr = np.maximum(h, 0.0)
    logits = hr @ decoder.w2 + decoder.b2
    shape = fmap.shape[:-1] + (decoder.n_out,)
    logits = logits.reshape(shape)
    return logits, softmax(logits)


def decode_backward(feature_map, decoder, dlogits):
    """Gradient of the decode MLP: returns (decoder grads dict, dfeature_map)."""
    fmap = np.asarray(feature_map, dtype=np.float64)
    flat = fmap.reshape(-1, decoder.in_dim)
    h = flat @ decoder.w1 + decoder.b1
    hr = np.maximum(h, 0.0)
    dl = np.asarray(dlogits, dtype=np.float64).reshape(-1, decoder.n_out)
    dw2 = hr.T @ dl
    db2 = dl.sum(axis=0)
    dh = (dl @ decoder.w2.T) * (h > 0.0)
    dw1 = flat.T @ dh
    db1 = dh.sum(axis=0)
    dflat = dh @ decoder.w1.T
    return (
        {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2},
        dflat.reshape(fmap.shape),
    )


def ce_loss(distribution, index_map):
    """Mean negative log-likelihood of the target index over assigned pixels."""
    grid = index_map.grid
    if distribution.shape[:2] != grid.shape:
        raise ShapeError(
            f"distribution {distribution.shape[:2]} vs index map {grid.shape}"
        )
    mask = grid != UNASSIGNED
    if not mask.any():
        raise EmptySupervision("index map assigns no pixel")
    p = distribution[mask, grid[mask]]
    return float(np.mean(-np.log(np.maximum(p, 1e-300))))


def ce_loss_grad_logits(distribution, index_map):
    """Fused softmax+CE gradient with respect to the logits."""
    grid = index_map.grid
    mask = grid != UNASSIGNED
    count = int(mask.sum())
    if count == 0:
        raise EmptySupervision("index map assigns no pixel")
    dlogits = np.zeros_like(distribution)
    dlogits[mask] = distribution[mask]
    rows, cols = np.nonzero(mask)
    dlogits[rows, cols, grid[mask]] -= 1.0
    dlogits /= count
    return dlogits


def refine_pixel_features(distribution, codebook):
    """Replace each pixel by its most probable prototype row (ties to the
    lowest index)."""
    idx = np.argmax(distribution, axis=-1)
    return codebook.prototypes[idx]


@dataclass
class FieldTrainResult:
    features: np.ndarray
    decoder: Decoder
    loss_trace: list = field(default_factory=list)
    scene: object = None


def train_field(scene, views, index_maps, decoder, config):
    """Optimize Gaussian features (and decoder) against per-view index maps.

    `views` is a list of (camera, width, height[, image]) tuples, and
    `index_maps` the matching IndexMap per view. Each iteration samples one
    view, renders the feature map, and backpropagates CE (plus L1 color in
    JOINT mode). Deterministic given config.seed.
    """
    if len(views) != len(index_maps):
        raise ShapeError(f"{len(views)} views but {len(index_maps)} index maps")
    if not views:
        raise EmptySupervision("no training views")
    rng = np.random.default_rng(config.seed)
    scene = scene.copy()
    semantic_only = config.mode == MODE_SEMANTIC_ONLY
    params = {"features": scene.features, **decoder.params()}
    if not semantic_only:
        params.update(
            {
                "colors": scene.colors,
                "alpha_logits": scene.alpha_logits,
                "positions": scene.positions,
                "quaternions": scene.quaternions,
                "scales": scene.scales,
            }
        )
    optimizer = Adam(lr=config.learning_rate, betas=tuple(config.adam_betas))
    plans = None
    if semantic_only:
        plans = [build_feature_plan(scene, v[0], v[1], v[2]) for v in views]
    trace = []
    for it in range(config.iterations):
        vi = int(rng.integers(len(views)))
        camera, width, height = views[vi][0], views[vi][1], views[vi][2]
        imap = index_maps[vi]
        if semantic_only:
            fmap = plans[vi].render_features(scene.features)
            logits, probs = decode(fmap, decoder)
            loss = ce_loss(probs, imap)
            dlogits = ce_loss_grad_logits(probs, imap)
            dec_grads, dfmap = decode_backward(fmap, decoder, dlogits)
            dfeat = plans[vi].backward_features(dfmap)
            grads = {"features": dfeat, **dec_grads}
        else:
            out = render(scene, camera, width, height)
            logits, probs = decode(out.feature, decoder)
            loss = ce_loss(probs, imap)
            dlogits = ce_loss_grad_logits(probs, imap)
            dec_grads, dfmap = decode_backward(out.feature, decoder, dlogits)
            dcolor = None
            target = views[vi][3] if len(views[vi]) > 3 else None
            if target is not None and config.color_loss_weight > 0:
                diff = out.color - target
                l1 = float(np.mean(np.abs(diff)))
                loss = loss + config.color_loss_weight * l1
                dcolor = config.color_loss_weight * np.sign(diff) / diff.size
            rgrads = render_backward(
                scene, camera, out.state, dL_dcolor=dcolor, dL_dfeature=dfmap,
                want_geometry=True,
            )
            grads = {**rgrads, **dec_grads}
        if not np.isfinite(loss):
            raise NumericalFailure("training loss is not finite", step=it)
        optimizer.step(params, grads)
        if not semantic_only:
            # keep invariants the optimizer cannot know about
            np.clip(scene.scales, 1e-6, None, out=scene.scales)
            qn = np.linalg.norm(scene.quaternions, axis=1, keepdims=True)
            scene.quaternions /= np.where(qn == 0, 1.0, qn)
        trace.append(loss)
    return FieldTrainResult(
        features=scene.features, decoder=decoder, loss_trace=trace, scene=scene
    )
