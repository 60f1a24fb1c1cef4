"""Tile-based forward rasterization with front-to-back alpha blending.

Per pixel, contributors are composited in global depth order (ties broken by
Gaussian index): value += channel * alpha * transmittance, transmittance *=
(1 - alpha). Contributions with alpha below 1/255 are skipped and blending
terminates once transmittance drops under 1e-4. Color and feature channels
blend with identical weights.
"""
from dataclasses import dataclass

import numpy as np

from .project import project_all

TILE = 16
ALPHA_FLOOR = 1.0 / 255.0
ALPHA_CLAMP = 0.99
TRANSMITTANCE_EPS = 1e-4


@dataclass
class TileState:
    row0: int
    col0: int
    rows: int
    cols: int
    idx: np.ndarray        # contributor Gaussian indices, depth order
    alpha: np.ndarray      # (n, P) effective alphas (0 where floored)
    trans: np.ndarray      # (n, P) transmittance before each contributor
    live: np.ndarray       # (n, P) processed mask (not past termination)
    clamped: np.ndarray    # (n, P) alpha hit the 0.99 clamp


@dataclass
class SplatOutput:
    color: np.ndarray            # H x W x d_c
    feature: np.ndarray          # H x W x d_f
    blend_weight_sum: np.ndarray  # H x W
    state: object = None


@dataclass
class RenderState:
    width: int
    height: int
    n_gaussians: int
    proj: dict
    order: np.ndarray
    tiles: list
    opacities: np.ndarray
    token: int


_render_counter = [0]


def _tile_ranges(extent, tile):
    edges = list(range(0, extent, tile))
    return [(e, min(tile, extent - e)) for e in edges]


def render(scene, camera, width, height, tile=TILE, save_state=True):
    """Rasterize the scene; returns SplatOutput with per-pixel channels."""
    proj = project_all(scene, camera, width, height)
    valid = np.flatnonzero(proj["valid"])
    # global depth order with index tie-break makes output independent of
    # input permutation
    order = valid[np.lexsort((valid, proj["depth"][valid]))]
    d_c, d_f = scene.colors.shape[1] if len(scene) else 3, scene.features.shape[1] if len(scene) else 8
    color = np.zeros((height, width, d_c))
    feature = np.zeros((height, width, d_f))
    bws = np.zeros((height, width))
    opac = scene.opacities() if len(scene) else np.zeros(0)
    tiles = []

    mean2d = proj["mean2d"]
    conic = proj["conic"]
    radius = proj["radius"]

    for row0, rh in _tile_ranges(height, tile):
        for col0, cw in _tile_ranges(width, tile):
            if order.size:
                m = mean2d[order]
                r = radius[order]
                hit = (
                    (m[:, 0] + r > col0)
                    & (m[:, 0] - r < col0 + cw)
                    & (m[:, 1] + r > row0)
                    & (m[:, 1] - r < row0 + rh)
                )
                idx = order[hit]
            else:
                idx = order
            if idx.size == 0:
                continue
            ys, xs = np.mgrid[row0:row0 + rh, col0:col0 + cw]
            px = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)  # (P,2)
            d = px[None, :, :] - mean2d[idx][:, None, :]                 # (n,P,2)
            A = conic[idx]
            q = (
                A[:, None, 0, 0] * d[:, :, 0] ** 2
                + 2.0 * A[:, None, 0, 1] * d[:, :, 0] * d[:, :, 1]
                + A[:, None, 1, 1] * d[:, :, 1] ** 2
            )
            falloff = np.exp(-0.5 * q)
            a_raw = opac[idx][:, None] * falloff
            clamped = a_raw > ALPHA_CLAMP
            a = np.where(clamped, ALPHA_CLAMP, a_raw)
            a = np.where(a < ALPHA_FLOOR, 0.0, a)
            # exclusive prefix product of (1 - a) down the depth order
            one_minus = 1.0 - a
            trans = np.ones_like(a)
            if a.shape[0] > 1:
                trans[1:] = np.cumprod(one_minus[:-1], axis=0)
            live = trans >= TRANSMITTANCE_EPS
            w = a * trans * live
            color[row0:row0 + rh, col0:col0 + cw] += (
                w.T @ scene.colors[idx]
            ).reshape(rh, cw, d_c)
            feature[row0:row0 + rh, col0:col0 + cw] += (
                w.T @ scene.features[idx]
            ).reshape(rh, cw, d_f)
            bws[row0:row0 + rh, col0:col0 + cw] += w.sum(axis=0).reshape(rh, cw)
            if save_state:
                tiles.append(
                    TileState(
                        row0=row0, col0=col0, rows=rh, cols=cw,
                        idx=idx, alpha=a, trans=trans, live=live,
                        clamped=clamped,
                    )
                )
    state = None
    if save_state:
        _render_counter[0] += 1
        state = RenderState(
            width=width, height=height, n_gaussians=len(scene),
            proj=proj, order=order, tiles=tiles, opacities=opac,
            token=_render_counter[0],
        )
    return SplatOutput(color=color, feature=feature, blend_weight_sum=bws, state=state)
