"""Precomputed blending weights for repeated feature rendering.

When geometry, opacity, and camera are frozen (semantic-only training), the
per-pixel contributor weights never change, so feature rendering reduces to
one weight-matrix product per tile, and its backward to the transpose
product. The plan is exact: it reproduces render()'s feature output bitwise.
"""
from dataclasses import dataclass

import numpy as np

from .render import render


@dataclass
class _PlanTile:
    row0: int
    col0: int
    rows: int
    cols: int
    idx: np.ndarray   # (m,) contributor indices
    w: np.ndarray     # (m, P) blend weights


@dataclass
class FeaturePlan:
    width: int
    height: int
    n_gaussians: int
    tiles: list
    blend_weight_sum: np.ndarray

    def render_features(self, features):
        out = np.zeros((self.height, self.width, features.shape[1]))
        for t in self.tiles:
            out[t.row0:t.row0 + t.rows, t.col0:t.col0 + t.cols] = (
                t.w.T @ features[t.idx]
            ).reshape(t.rows, t.cols, -1)
        return out

    def backward_features(self, dL_dfeature):
        df = np.zeros((self.n_gaussians, dL_dfeature.shape[2]))
        for t in self.tiles:
            dF = dL_dfeature[
                t.row0:t.row0 + t.rows, t.col0:t.col0 + t.cols
            ].reshape(-1, dL_dfeature.shape[2])
            np.add.at(df, t.idx, t.w @ dF)
        return df


def build_feature_plan(scene, camera, width, height):
    out = render(scene, camera, width, height, save_state=True)
    tiles = []
    for ts in out.state.tiles:
        w = ts.alpha * ts.trans * ts.live
        keep = w.any(axis=1)
        tiles.append(
            _PlanTile(
                row0=ts.row0, col0=ts.col0, rows=ts.rows, cols=ts.cols,
                idx=ts.idx[keep], w=w[keep],
            )
        )
    return FeaturePlan(
        width=width, height=height, n_gaussians=len(scene), tiles=tiles,
        blend_weight_sum=out.blend_weight_sum,
    )
