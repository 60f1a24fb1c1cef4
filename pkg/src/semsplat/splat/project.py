"""Perspective projection of 3D Gaussians to screen-space ellipses.

The 2D covariance follows the EWA construction: cov2d = J W Sigma W^T J^T
with Sigma = R diag(s^2) R^T built from the (normalized) quaternion and
scales, J the perspective Jacobian at the Gaussian center, and W the
world-to-camera rotation. A fixed isotropic dilation keeps the footprint
at least a fraction of a pixel wide.
"""
import numpy as np

from ..errors import NumericalFailure

NEAR_PLANE = 0.01
DILATION = 0.3
FOOTPRINT_SIGMAS = 3.0


def quat_to_rot(q):
    """Rotation matrices from quaternions (n,4) in (w,x,y,z) order.

    Quaternions are normalized here; callers keep raw values and gradients
    flow through the normalization.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    n = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = n[:, 0], n[:, 1], n[:, 2], n[:, 3]
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R[0] if single else R


def rot_jacobian(q):
    """dR/dq_hat for normalized quaternions: (n, 4, 3, 3)."""
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    n = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = n[:, 0], n[:, 1], n[:, 2], n[:, 3]
    zero = np.zeros_like(w)
    J = np.empty((len(q), 4, 3, 3))
    J[:, 0] = 2 * np.stack(
        [np.stack([zero, -z, y], -1),
         np.stack([z, zero, -x], -1),
         np.stack([-y, x, zero], -1)], axis=-2)
    J[:, 1] = 2 * np.stack(
        [np.stack([zero, y, z], -1),
         np.stack([y, -2 * x, -w], -1),
         np.stack([z, w, -2 * x], -1)], axis=-2)
    J[:, 2] = 2 * np.stack(
        [np.stack([-2 * y, x, w], -1),
         np.stack([x, zero, z], -1),
         np.stack([-w, z, -2 * y], -1)], axis=-2)
    J[:, 3] = 2 * np.stack(
        [np.stack([-2 * z, -w, x], -1),
         np.stack([w, -2 * z, y], -1),
         np.stack([x, y, zero], -1)], axis=-2)
    return J


def world_covariances(quaternions, scales):
    """Sigma = R diag(s^2) R^T per Gaussian."""
    R = np.atleast_3d(quat_to_rot(quaternions))
    if R.ndim == 2:
        R = R[None]
    S2 = np.asarray(scales, dtype=np.float64) ** 2
    return np.einsum("nij,nj,nkj->nik", R, S2, R)


def project_all(scene, camera, width, height, near=NEAR_PLANE, dilation=DILATION):
    """Project every Gaussian; returns a dict of arrays plus a validity mask.

    A Gaussian is culled when its camera depth is at or behind the near
    plane or its 3-sigma screen footprint misses the image rectangle.
    """
    n = len(scene)
    W4 = camera.world_to_camera
    Wr, tr = W4[:3, :3], W4[:3, 3]
    if n == 0:
        return {
            "mean2d": np.zeros((0, 2)), "cov2d": np.zeros((0, 2, 2)),
            "conic": np.zeros((0, 2, 2)), "depth": np.zeros(0),
            "radius": np.zeros(0), "valid": np.zeros(0, dtype=bool),
            "t_cam": np.zeros((0, 3)), "J": np.zeros((0, 2, 3)),
            "cov_cam": np.zeros((0, 3, 3)),
            "clamped_x": np.zeros(0, dtype=bool),
            "clamped_y": np.zeros(0, dtype=bool),
            "rx": np.zeros(0), "ry": np.zeros(0),
        }
    if not (np.all(np.isfinite(scene.positions)) and np.all(np.isfinite(scene.scales))):
        raise NumericalFailure("non-finite Gaussian parameters")
    t = scene.positions @ Wr.T + tr
    depth = t[:, 2]
    fx, fy, cx, cy = camera.fx, camera.fy, camera.cx, camera.cy
    in_front = depth > near
    safe_z = np.where(in_front, depth, 1.0)
    u = fx * t[:, 0] / safe_z + cx
    v = fy * t[:, 1] / safe_z + cy
    mean2d = np.stack([u, v], axis=1)

    # clamp the linearization point of the Jacobian to a slightly enlarged
    # frustum: keeps grazing Gaussians from exploding their footprints
    if np.isfinite(width) and np.isfinite(height):
        lim_x = 1.3 * (0.5 * width + abs(cx - 0.5 * width)) / fx
        lim_y = 1.3 * (0.5 * height + abs(cy - 0.5 * height)) / fy
    else:
        lim_x = lim_y = np.inf
    rx = t[:, 0] / safe_z
    ry = t[:, 1] / safe_z
    clamped_x = np.abs(rx) > lim_x
    clamped_y = np.abs(ry) > lim_y
    rx = np.clip(rx, -lim_x, lim_x)
    ry = np.clip(ry, -lim_y, lim_y)

    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = fx / safe_z
    J[:, 0, 2] = -fx * rx / safe_z
    J[:, 1, 1] = fy / safe_z
    J[:, 1, 2] = -fy * ry / safe_z

    V3 = world_covariances(scene.quaternions, scene.scales)
    Vc = np.einsum("ij,njk,lk->nil", Wr, V3, Wr)
    cov2d = np.einsum("nij,njk,nlk->nil", J, Vc, J)
    cov2d[:, 0, 0] += dilation
    cov2d[:, 1, 1] += dilation

    tr2 = cov2d[:, 0, 0] + cov2d[:, 1, 1]
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    mid = tr2 / 2.0
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
    radius = np.ceil(FOOTPRINT_SIGMAS * np.sqrt(lam_max))

    on_image = (
        (mean2d[:, 0] + radius > 0.0)
        & (mean2d[:, 0] - radius < width)
        & (mean2d[:, 1] + radius > 0.0)
        & (mean2d[:, 1] - radius < height)
    )
    valid = in_front & on_image

    conic = np.zeros_like(cov2d)
    safe_det = np.where(det > 0, det, 1.0)
    conic[:, 0, 0] = cov2d[:, 1, 1] / safe_det
    conic[:, 1, 1] = cov2d[:, 0, 0] / safe_det
    conic[:, 0, 1] = -cov2d[:, 0, 1] / safe_det
    conic[:, 1, 0] = conic[:, 0, 1]

    if valid.any() and not np.all(np.isfinite(cov2d[valid])):
        raise NumericalFailure("non-finite projected covariance")
    return {
        "mean2d": mean2d, "cov2d": cov2d, "conic": conic, "depth": depth,
        "radius": radius, "valid": valid, "t_cam": t, "J": J, "cov_cam": Vc,
        "clamped_x": clamped_x, "clamped_y": clamped_y, "rx": rx, "ry": ry,
    }


def project(gaussian, camera, width=None, height=None):
    """Single-Gaussian projection; returns (mean2d, cov2d, depth) or None
    when culled. Without image bounds only the near plane culls."""
    from .scene import GaussianScene

    scene = GaussianScene.from_gaussians([gaussian])
    w = width if width is not None else np.inf
    h = height if height is not None else np.inf
    out = project_all(scene, camera, w, h)
    if not out["valid"][0]:
        return None
    return out["mean2d"][0], out["cov2d"][0], float(out["depth"][0])
