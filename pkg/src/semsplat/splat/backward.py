"""Reverse-mode gradients through the alpha-blending rasterizer.

Given upstream gradients for the rendered color and feature maps, produces
exact gradients for per-Gaussian color, feature, and opacity logit, and
optionally for position, quaternion, and scales (the geometry chain through
the perspective Jacobian and the covariance construction).

Non-differentiable gates (alpha floor, 0.99 clamp, transmittance
termination, depth ordering, culling) contribute zero gradient, matching the
almost-everywhere derivative of the forward pass.
"""
import numpy as np

from ..errors import StaleState
from .project import rot_jacobian, quat_to_rot


def _suffix_exclusive_sum(x):
    """S[i] = sum_{k>i} x[k] along axis 0."""
    c = np.cumsum(x[::-1], axis=0)[::-1]
    return c - x


def render_backward(scene, camera, state, dL_dcolor=None, dL_dfeature=None,
                    want_geometry=False):
    """Backpropagate pixel-map gradients to per-Gaussian parameters.

    Returns a dict with keys 'colors', 'features', 'alpha_logits' and, when
    want_geometry is set, 'positions', 'quaternions', 'scales'.
    """
    if state is None or not hasattr(state, "tiles"):
        raise StaleState("render was called without save_state")
    if state.n_gaussians != len(scene):
        raise StaleState(
            f"state built for {state.n_gaussians} Gaussians, scene has {len(scene)}"
        )
    H, W = state.height, state.width
    d_c = scene.colors.shape[1]
    d_f = scene.features.shape[1]
    if dL_dcolor is None:
        dL_dcolor = np.zeros((H, W, d_c))
    if dL_dfeature is None:
        dL_dfeature = np.zeros((H, W, d_f))
    if dL_dcolor.shape != (H, W, d_c) or dL_dfeature.shape != (H, W, d_f):
        raise StaleState(
            f"gradient maps {dL_dcolor.shape}/{dL_dfeature.shape} do not match "
            f"render state {(H, W)}"
        )

    n = len(scene)
    grads = {
        "colors": np.zeros_like(scene.colors),
        "features": np.zeros_like(scene.features),
        "alpha_logits": np.zeros_like(scene.alpha_logits),
    }
    opac = state.opacities
    d_mean = np.zeros((n, 2))
    d_cov = np.zeros((n, 2, 2))
    mean2d = state.proj["mean2d"]
    conic = state.proj["conic"]

    for tile in state.tiles:
        r0, c0, rh, cw = tile.row0, tile.col0, tile.rows, tile.cols
        idx = tile.idx
        a, Tm, live = tile.alpha, tile.trans, tile.live
        w = a * Tm * live                                        # (m,P)
        dC = dL_dcolor[r0:r0 + rh, c0:c0 + cw].reshape(-1, d_c)  # (P,dc)
        dF = dL_dfeature[r0:r0 + rh, c0:c0 + cw].reshape(-1, d_f)
        np.add.at(grads["colors"], idx, w @ dC)
        np.add.at(grads["features"], idx, w @ dF)

        # dL/d alpha_i = g_i T_i - (sum_{k>i} g_k w_k) / (1 - a_i),
        # g = channel-dotted upstream gradient per contributor-pixel
        g = scene.colors[idx] @ dC.T + scene.features[idx] @ dF.T  # (m,P)
        S = _suffix_exclusive_sum(g * w)
        gate = live & (a > 0.0)
        da = (g * Tm - S / (1.0 - a)) * gate
        up = da * (~tile.clamped)            # clamp kills upstream flow
        np.add.at(
            grads["alpha_logits"], idx,
            (up * a * (1.0 - opac[idx][:, None])).sum(axis=1),
        )
        # falloff chain: a = opac * exp(-q/2), q = d^T conic d, d = px - mean
        ys, xs = np.mgrid[r0:r0 + rh, c0:c0 + cw]
        px = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
        d = px[None, :, :] - mean2d[idx][:, None, :]              # (m,P,2)
        u = np.einsum("mij,mpj->mpi", conic[idx], d)              # conic @ d
        coeff = up * a                                            # (m,P)
        np.add.at(d_mean, idx, np.einsum("mp,mpi->mi", coeff, u))
        np.add.at(
            d_cov, idx,
            np.einsum("mp,mpi,mpj->mij", 0.5 * coeff, u, u),
        )

    if not want_geometry:
        return grads

    valid = state.proj["valid"]
    J = state.proj["J"]               # (n,2,3)
    Vc = state.proj["cov_cam"]        # (n,3,3)
    t = state.proj["t_cam"]
    Wr = camera.world_to_camera[:3, :3]
    fx, fy = camera.fx, camera.fy

    dVc = np.einsum("nij,nik,nkl->njl", J, d_cov, J)
    dV3 = np.einsum("ji,njk,kl->nil", Wr, dVc, Wr)
    dJ = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov, J, Vc)

    dt = np.einsum("nij,ni->nj", J, d_mean)
    z = np.where(valid, t[:, 2], 1.0)
    rx, ry = state.proj["rx"], state.proj["ry"]
    free_x = ~state.proj["clamped_x"]
    free_y = ~state.proj["clamped_y"]
    dt[:, 0] += dJ[:, 0, 2] * (-fx / z**2) * free_x
    dt[:, 1] += dJ[:, 1, 2] * (-fy / z**2) * free_y
    dt[:, 2] += (
        dJ[:, 0, 0] * (-fx / z**2)
        + dJ[:, 0, 2] * ((1.0 + free_x) * fx * rx / z**2)
        + dJ[:, 1, 1] * (-fy / z**2)
        + dJ[:, 1, 2] * ((1.0 + free_y) * fy * ry / z**2)
    )
    dt[~valid] = 0.0
    grads["positions"] = dt @ Wr

    R = quat_to_rot(scene.quaternions)
    if R.ndim == 2:
        R = R[None]
    s2 = scene.scales**2
    dR = 2.0 * np.einsum("nij,njk->nik", dV3, R) * s2[:, None, :]
    inner = np.einsum("nji,njk,nkl->nil", R, dV3, R)
    ds = 2.0 * scene.scales * np.einsum("nii->ni", inner)
    ds[~valid] = 0.0
    grads["scales"] = ds

    dRdq = rot_jacobian(scene.quaternions)   # (n,4,3,3) wrt normalized quat
    dqhat = np.einsum("nkij,nij->nk", dRdq, dR)
    qn = np.linalg.norm(scene.quaternions, axis=1, keepdims=True)
    qhat = scene.quaternions / qn
    dq = (dqhat - qhat * np.einsum("ni,ni->n", qhat, dqhat)[:, None]) / qn
    dq[~valid] = 0.0
    grads["quaternions"] = dq
    return grads
