"""Contrastive codebook learning over labeled mask embeddings.

A table of N prototype vectors quantizes unit features by cosine argmax.
Training combines a matching loss (every feature toward its selected
prototype) with pull/push terms over the prototypes selected by same- and
different-label feature pairs. Assignments are hard: recomputed at the start
of each step, carrying no gradient.

Pairwise terms use every pair inside the mini-batch. Rather than looping
over O(B^2) pairs, pairs are aggregated by (label, prototype) counts, which
gives identical sums because a pair's contribution depends only on the two
selected prototypes.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFeature, EmptyDataset, SchemaViolation
from .feature_store.types import Codebook, UNLABELED
from .optim import Adam

UNASSIGNED = -1


@dataclass
class CclConfig:
    lambda_pull: float = 0.25
    lambda_push: float = 0.25
    margin: float = 0.7
    n_prototypes: int = 128
    steps: int = 2000
    batch_size: int = 256
    learning_rate: float = 0.001
    adam_betas: tuple = (0.9, 0.999)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.margin < 1.0):
            raise SchemaViolation(f"margin {self.margin} outside (0,1)")
        if self.lambda_pull < 0 or self.lambda_push < 0:
            raise SchemaViolation("loss weights must be non-negative")
        if self.n_prototypes < 2:
            raise SchemaViolation("need at least 2 prototypes")


@dataclass
class LabeledFeatureBatch:
    features: np.ndarray          # B x d, unit rows
    labels: np.ndarray            # B ints in {1..K} or -1
    assignments: np.ndarray = None  # B prototype indices

    def __post_init__(self):
        F = np.asarray(self.features, dtype=np.float64)
        if F.ndim != 2 or F.shape[0] < 1:
            raise SchemaViolation(f"batch features shape {F.shape}")
        norms = np.linalg.norm(F, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise SchemaViolation("batch rows must be unit-normalized")
        self.features = F
        self.labels = np.asarray(self.labels, dtype=np.int64)


def nearest_prototype(feature, codebook):
    """Most cosine-similar prototype; ties go to the lowest index."""
    v = np.asarray(feature, dtype=np.float64)
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) == 0.0:
        raise DegenerateFeature("cannot match a zero or non-finite feature")
    sims = codebook.unit_rows() @ (v / np.linalg.norm(v))
    j = int(np.argmax(sims))
    return j, float(sims[j])


def assign_batch(features, codebook):
    """Vectorized nearest_prototype over unit feature rows."""
    sims = np.asarray(features, dtype=np.float64) @ codebook.unit_rows().T
    idx = np.argmax(sims, axis=1)
    return idx.astype(np.int64), sims[np.arange(len(idx)), idx]


def _pair_weights(labels, assignments, n_prototypes):
    """Aggregate all within-batch pairs into per-prototype-pair weights.

    Returns (pull_w, push_w, n_pull, n_push, push_diag_pairs): symmetric
    off-diagonal weight matrices plus total unordered pair counts. Pairs whose
    two members share a prototype contribute to the counts (and, for push, a
    constant ReLU(1-m) term) but never to gradients, since cos(T,T) == 1.
    """
    lab = labels != UNLABELED
    yl = labels[lab]
    jl = assignments[lab]
    N = n_prototypes
    if yl.size == 0:
        z = np.zeros((N, N))
        return z, z, 0.0, 0.0, 0.0
    cats, yinv = np.unique(yl, return_inverse=True)
    Q = np.zeros((len(cats), N))
    np.add.at(Q, (yinv, jl), 1.0)
    M = Q.sum(axis=0)
    same = Q.T @ Q                       # ordered same-label pair counts
    allp = np.outer(M, M)
    pull_w = same.copy()
    push_w = allp - same
    diag_pull = ((Q * (Q - 1.0)) / 2.0).sum(axis=0).sum()
    diag_push = ((M * (M - 1.0)) / 2.0).sum() - diag_pull
    np.fill_diagonal(pull_w, 0.0)
    np.fill_diagonal(push_w, 0.0)
    n_pull = diag_pull + pull_w.sum() / 2.0
    n_push = diag_push + push_w.sum() / 2.0
    return pull_w, push_w, n_pull, n_push, diag_push


def _cos_matrix(codebook):
    U = codebook.unit_rows()
    C = U @ U.T
    np.fill_diagonal(C, 1.0)
    return C


def loss_max(batch, codebook):
    """Mean of 1 - cos(F_i, T_{j_i}) over the whole batch, -1 labels included."""
    U = codebook.unit_rows()
    cos = np.einsum("ij,ij->i", batch.features, U[batch.assignments])
    return float(np.mean(1.0 - cos))


def loss_pull(batch, codebook):
    """Mean of 1 - cos between prototypes selected by same-label pairs."""
    pull_w, _, n_pull, _, _ = _pair_weights(
        batch.labels, batch.assignments, codebook.n_prototypes
    )
    if n_pull == 0:
        return 0.0
    C = _cos_matrix(codebook)
    return float((pull_w * (1.0 - C)).sum() / 2.0 / n_pull)


def loss_push(batch, codebook, margin):
    """Mean of ReLU(cos - margin) between prototypes selected by
    different-label pairs; -1 labels are excluded entirely."""
    _, push_w, _, n_push, diag_push = _pair_weights(
        batch.labels, batch.assignments, codebook.n_prototypes
    )
    if n_push == 0:
        return 0.0
    C = _cos_matrix(codebook)
    off = (push_w * np.maximum(C - margin, 0.0)).sum() / 2.0
    return float((off + diag_push * max(0.0, 1.0 - margin)) / n_push)


def total_loss(batch, codebook, config):
    return (
        loss_max(batch, codebook)
        + config.lambda_pull * loss_pull(batch, codebook)
        + config.lambda_push * loss_push(batch, codebook, config.margin)
    )


def total_loss_and_grad(batch, codebook, config):
    """Analytic gradient of total_loss with respect to prototype rows.

    Features are constants. Uses cos(a,b) = a.b/(|a||b|), so the gradient is
    exact even when prototype rows drift off unit norm between steps.
    """
    T = codebook.prototypes
    N, d = T.shape
    tn = np.linalg.norm(T, axis=1)
    U = T / tn[:, None]
    F = batch.features
    B = F.shape[0]
    j = batch.assignments

    cosFT = np.einsum("ij,ij->i", F, U[j])
    L_max = float(np.mean(1.0 - cosFT))
    G = np.zeros_like(T)
    sumF = np.zeros_like(T)
    np.add.at(sumF, j, F)
    sumcos = np.zeros(N)
    np.add.at(sumcos, j, cosFT)
    # d cos(F,T_p)/dT_p = F/|T_p| - cos * T_p/|T_p|^2
    G -= (sumF / tn[:, None] - (sumcos / tn**2)[:, None] * T) / B

    pull_w, push_w, n_pull, n_push, diag_push = _pair_weights(
        batch.labels, j, N
    )
    C = U @ U.T
    np.fill_diagonal(C, 1.0)
    L_pull = 0.0
    L_push = 0.0

    def pair_grad(W):
        # sum_q W[p,q] * dcos(T_p,T_q)/dT_p, rows p
        a = ((W / tn[None, :]) @ T) / tn[:, None]
        b = ((W * C).sum(axis=1) / tn**2)[:, None] * T
        return a - b

    if n_pull > 0:
        L_pull = float((pull_w * (1.0 - C)).sum() / 2.0 / n_pull)
        if config.lambda_pull > 0:
            G -= config.lambda_pull * pair_grad(pull_w) / n_pull
    if n_push > 0:
        active = (C > config.margin).astype(float)
        np.fill_diagonal(active, 0.0)
        Wact = push_w * active
        off = (push_w * np.maximum(C - config.margin, 0.0)).sum() / 2.0
        L_push = float(
            (off + diag_push * max(0.0, 1.0 - config.margin)) / n_push
        )
        if config.lambda_push > 0:
            G += config.lambda_push * pair_grad(Wact) / n_push

    total = L_max + config.lambda_pull * L_pull + config.lambda_push * L_push
    return total, G, (L_max, L_pull, L_push)


def train_step(batch, codebook, optimizer, config):
    """One optimization step; re-assigns, applies Adam, re-normalizes rows."""
    batch.assignments, _ = assign_batch(batch.features, codebook)
    loss, grad, _ = total_loss_and_grad(batch, codebook, config)
    optimizer.step({"prototypes": codebook.prototypes}, {"prototypes": grad})
    norms = np.linalg.norm(codebook.prototypes, axis=1, keepdims=True)
    codebook.prototypes /= norms
    return loss


def kmeanspp_init(features, n_prototypes, rng):
    """k-means++-style seeding on the sphere with 1-cos as the distance."""
    F = np.asarray(features, dtype=np.float64)
    n = F.shape[0]
    take = min(n_prototypes, n)
    chosen = [int(rng.integers(n))]
    d2 = 1.0 - F @ F[chosen[0]]
    for _ in range(take - 1):
        p = np.maximum(d2, 1e-12)
        p = p / p.sum()
        i = int(rng.choice(n, p=p))
        chosen.append(i)
        d2 = np.minimum(d2, 1.0 - F @ F[i])
    T = F[np.array(chosen)].copy()
    if take < n_prototypes:
        extra = rng.normal(size=(n_prototypes - take, F.shape[1]))
        extra /= np.linalg.norm(extra, axis=1, keepdims=True)
        T = np.vstack([T, extra])
    return T


def train_codebook(features, labels, config):
    """Train a codebook over the full feature set with seeded mini-batches.

    Returns (codebook, loss_trace). Deterministic given config.seed. When
    batch_size covers the whole set, every step uses the full set in order;
    otherwise batches are drawn with replacement.
    """
    F = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise EmptyDataset("no features to train on")
    if not np.any(y != UNLABELED):
        raise EmptyDataset("codebook training needs at least one labeled feature")
    rng = np.random.default_rng(config.seed)
    codebook = Codebook(prototypes=kmeanspp_init(F, config.n_prototypes, rng))
    optimizer = Adam(lr=config.learning_rate, betas=tuple(config.adam_betas))
    n = F.shape[0]
    trace = []
    for _ in range(config.steps):
        if config.batch_size >= n:
            idx = np.arange(n)
        else:
            idx = rng.integers(0, n, size=config.batch_size)
        batch = LabeledFeatureBatch(features=F[idx], labels=y[idx])
        trace.append(train_step(batch, codebook, optimizer, config))
    return codebook, trace


@dataclass
class IndexMap:
    """Per-pixel prototype indices used as cross-entropy targets."""
    frame_id: int
    scale: str
    grid: np.ndarray  # H x W int32, UNASSIGNED where no mask covers the pixel

    @property
    def assigned(self):
        return self.grid != UNASSIGNED


def build_index_map(masks, features, codebook, height, width, frame_id=0, scale="wp"):
    """Paint each mask's nearest-prototype index over its region.

    Masks must be pairwise disjoint; pixels covered by no mask stay
    UNASSIGNED.
    """
    grid = np.full((height, width), UNASSIGNED, dtype=np.int32)
    by_key = {(f.frame_id, f.mask_id): f for f in features}
    for mask in masks:
        feat = by_key.get((mask.frame_id, mask.mask_id))
        if feat is None:
            from .errors import MissingArtifact

            raise MissingArtifact(
                f"no feature for mask ({mask.frame_id},{mask.mask_id})"
            )
        j, _ = nearest_prototype(feat.vector, codebook)
        grid[mask.bitmap()] = j
    return IndexMap(frame_id=frame_id, scale=scale, grid=grid)
