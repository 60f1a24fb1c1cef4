"""Open-vocabulary querying over a trained semantic field.

Relevance maps follow the softmax-over-queries rule: the probability of a
phrase at a pixel is exp(cos) of that phrase against the refined pixel
feature, normalized across every phrase in the query set. Direct 3D
selection skips rasterization entirely: each Gaussian's feature is decoded
on its own and matched against codebook categories scored by the query.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyQuerySet, EmptySelection, MissingArtifact, ShapeError
from .semantic_field import decode, softmax

OP_EXTRACT = "extract"
OP_DELETE = "delete"
OP_RECOLOR = "recolor"


@dataclass
class RelevanceMap:
    phrase: str
    grid: np.ndarray   # H x W probabilities
    scale: str = ""


@dataclass
class GaussianSelection:
    indices: np.ndarray           # selected Gaussian indices, unique
    phrase: str
    categories: np.ndarray        # selected codebook indices
    confidences: np.ndarray = field(default=None)  # per selected Gaussian


def _unit_rows(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return x / np.where(n == 0.0, 1.0, n)


def relevance_scores(features, query_set):
    """Softmax over the query set of cosine similarities; last axis = phrase."""
    if len(query_set.phrases) == 0:
        raise EmptyQuerySet("query set has no phrases")
    cos = _unit_rows(np.asarray(features, dtype=np.float64)) @ query_set.embeddings.T
    return softmax(cos)


def relevance_map(refined_features, phrase, query_set, scale=""):
    """Per-pixel probability of one phrase from refined pixel features."""
    if phrase not in query_set.phrases:
        raise MissingArtifact(f"phrase {phrase!r} is not in the query set")
    probs = relevance_scores(refined_features, query_set)
    qi = query_set.phrases.index(phrase)
    return RelevanceMap(phrase=phrase, grid=probs[..., qi], scale=scale)


def segment(relevance_maps, threshold=0.5):
    """Fuse per-scale relevance by pixelwise max, then threshold."""
    if not relevance_maps:
        raise EmptyQuerySet("no relevance maps to segment")
    grids = [m.grid for m in relevance_maps]
    shape = grids[0].shape
    for g in grids:
        if g.shape != shape:
            raise ShapeError(f"relevance map shapes differ: {g.shape} vs {shape}")
    fused = np.maximum.reduce(grids)
    return fused > threshold


def classify_gaussians(scene, decoder, codebook):
    """Decode every Gaussian's own feature; returns (indices, confidence,
    distribution over the codebook)."""
    _, dist = decode(scene.features[:, None, :], decoder)
    dist = dist[:, 0, :]
    idx = np.argmax(dist, axis=1)
    conf = dist[np.arange(len(idx)), idx]
    return idx, conf, dist


def score_categories(codebook, phrase, query_set):
    """Relevance of each codebook prototype to the phrase (softmax over the
    query set)."""
    if phrase not in query_set.phrases:
        raise MissingArtifact(f"phrase {phrase!r} is not in the query set")
    probs = relevance_scores(codebook.prototypes, query_set)
    return probs[:, query_set.phrases.index(phrase)]


def select_and_edit(scene, phrase, query_set, op, codebook, decoder,
                    threshold=None, color=None):
    """Select Gaussians whose decoded category matches the queried concept
    and apply an edit. Returns (edited scene, GaussianSelection).

    Categories are selected where the phrase's relevance strictly exceeds
    `threshold` (default: uniform 1/|queries|, i.e. leaning toward the
    phrase at all). Geometry of untouched Gaussians is never modified.
    """
    if len(query_set.phrases) == 0:
        raise EmptyQuerySet("query set has no phrases")
    if threshold is None:
        threshold = 1.0 / len(query_set.phrases)
    cat_scores = score_categories(codebook, phrase, query_set)
    selected_cats = np.flatnonzero(cat_scores > threshold)
    if selected_cats.size == 0:
        raise EmptySelection(
            f"no codebook category scored above {threshold:.4f} for {phrase!r}"
        )
    gauss_idx, conf, _ = classify_gaussians(scene, decoder, codebook)
    chosen = np.flatnonzero(np.isin(gauss_idx, selected_cats))
    selection = GaussianSelection(
        indices=chosen, phrase=phrase, categories=selected_cats,
        confidences=conf[chosen],
    )
    if op == OP_EXTRACT:
        return scene.subset(chosen), selection
    if op == OP_DELETE:
        keep = np.setdiff1d(np.arange(len(scene)), chosen)
        return scene.subset(keep), selection
    if op == OP_RECOLOR:
        if color is None:
            raise ShapeError("recolor needs a target color")
        edited = scene.copy()
        edited.colors[chosen] = np.asarray(color, dtype=np.float64)
        return edited, selection
    raise ShapeError(f"unknown edit op {op!r}")
