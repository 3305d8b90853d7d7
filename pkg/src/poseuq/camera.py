"""Pinhole projection and pose recovery from 2D-3D correspondences.

solve_pnp is a direct linear transform on normalized image coordinates
followed by Gauss-Newton refinement of the reprojection objective with
step halving, so the objective never increases between accepted iterates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose, quat_from_matrix

MIN_CORRESPONDENCES = 6
_MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside image")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """Pixel keypoints with a per-point visibility flag."""

    points_2d: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points_2d, dtype=float)
        vis = np.array(self.visible, dtype=bool)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ValueError("keypoints must be a nonempty (N, 2) array")
        if vis.shape != (pts.shape[0],):
            raise ValueError("visibility length mismatch")
        if not np.all(np.isfinite(pts[vis])):
            raise ValueError("visible keypoint not finite")
        pts.flags.writeable = False
        vis.flags.writeable = False
        object.__setattr__(self, "points_2d", pts)
        object.__setattr__(self, "visible", vis)

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        # nan-tolerant: invisible keypoints may legitimately be non-finite
        return (np.array_equal(self.points_2d, other.points_2d, equal_nan=True)
                and np.array_equal(self.visible, other.visible))

    def __hash__(self):
        return hash((self.points_2d.tobytes(), self.visible.tobytes()))

    def __len__(self):
        return self.points_2d.shape[0]

    def n_visible(self) -> int:
        return int(self.visible.sum())


def project(pose: Pose, model_points: PointCloud, K: CameraIntrinsics) -> KeypointSet:
    """Project model points through a pinhole camera; off-image points are marked invisible."""
    cam = pose.apply(model_points.points)
    z = cam[:, 2]
    if np.any(z <= _MIN_DEPTH):
        raise ValueError("point behind camera")
    u = K.fx * cam[:, 0] / z + K.cx
    v = K.fy * cam[:, 1] / z + K.cy
    pts = np.column_stack([u, v])
    visible = (u >= 0) & (u <= K.width) & (v >= 0) & (v <= K.height)
    return KeypointSet(pts, visible)


def reprojection_rmse(pose: Pose, model_points: PointCloud, observed: KeypointSet,
                      K: CameraIntrinsics) -> float:
    vis = observed.visible
    if not np.any(vis):
        raise ValueError("no visible keypoints")
    cam = pose.apply(model_points.points[vis])
    pred = np.column_stack([K.fx * cam[:, 0] / cam[:, 2] + K.cx,
                            K.fy * cam[:, 1] / cam[:, 2] + K.cy])
    res = pred - observed.points_2d[vis]
    return float(np.sqrt((res ** 2).sum(axis=1).mean()))


def _dlt(model: np.ndarray, xn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DLT for P = [R|t] from normalized image coordinates xn (n, 2)."""
    n = model.shape[0]
    A = np.zeros((2 * n, 12))
    homo = np.column_stack([model, np.ones(n)])
    A[0::2, 0:4] = homo
    A[0::2, 8:12] = -xn[:, [0]] * homo
    A[1::2, 4:8] = homo
    A[1::2, 8:12] = -xn[:, [1]] * homo
    _, s, vt = np.linalg.svd(A, full_matrices=False)
    if s[-2] < 1e-12:
        raise ValueError("degenerate configuration")
    P = vt[-1].reshape(3, 4)
    M = P[:, :3]
    detM = np.linalg.det(M)
    if abs(detM) < 1e-15:
        raise ValueError("degenerate configuration")
    # Fix gauge: unit-determinant rotation part, then nearest rotation by SVD.
    scale = np.cbrt(1.0 / detM)
    P = P * scale
    U, sv, Vt = np.linalg.svd(P[:, :3])
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    t = P[:, 3] / sv.mean()
    # Unit determinant fixed the sign ambiguity of the nullspace vector, so a
    # physical solution already has positive depths.
    if np.median((model @ R.T + t)[:, 2]) < 0:
        raise ValueError("degenerate configuration")
    return R, t


def _so3_exp(w):
    theta = np.linalg.norm(w)
    if theta < 1e-12:
        W = _skew(w)
        return np.eye(3) + W + 0.5 * W @ W
    k = w / theta
    K_ = _skew(k)
    return np.eye(3) + np.sin(theta) * K_ + (1 - np.cos(theta)) * (K_ @ K_)


def _skew(v):
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def _objective(R, t, model, obs_px, K):
    cam = model @ R.T + t
    z = cam[:, 2]
    if np.any(z <= _MIN_DEPTH):
        return None, np.inf
    pred = np.column_stack([K.fx * cam[:, 0] / z + K.cx,
                            K.fy * cam[:, 1] / z + K.cy])
    res = (pred - obs_px).ravel()
    return res, float(res @ res)


def solve_pnp(model_points: PointCloud, observed: KeypointSet, K: CameraIntrinsics,
              max_iters: int = 100, step_tol: float = 1e-10) -> Pose:
    """Recover the pose minimizing summed squared reprojection error.

    DLT initialization on the visible correspondences, then Gauss-Newton
    with step halving until the step norm drops below step_tol.
    """
    if len(model_points) != len(observed):
        raise ValueError("model/keypoint count mismatch")
    vis = observed.visible
    n = int(vis.sum())
    if n < MIN_CORRESPONDENCES:
        raise ValueError("insufficient correspondences")
    model = model_points.points[vis]
    obs_px = observed.points_2d[vis]
    xn = np.column_stack([(obs_px[:, 0] - K.cx) / K.fx,
                          (obs_px[:, 1] - K.cy) / K.fy])
    R, t = _dlt(model, xn)

    res, cost = _objective(R, t, model, obs_px, K)
    if res is None:
        raise ValueError("degenerate configuration")
    for _ in range(max_iters):
        cam = model @ R.T + t
        z = cam[:, 2]
        # Residual Jacobian wrt the left increment (rotation w, translation dt).
        J = np.zeros((2 * n, 6))
        inv_z = 1.0 / z
        du_dcam = np.column_stack([K.fx * inv_z, np.zeros(n), -K.fx * cam[:, 0] * inv_z ** 2])
        dv_dcam = np.column_stack([np.zeros(n), K.fy * inv_z, -K.fy * cam[:, 1] * inv_z ** 2])
        rp = cam - t  # R @ model
        # a @ (-skew(b)) == cross(b, a) collapses the per-point loop.
        J[0::2, 0:3] = np.cross(rp, du_dcam)
        J[0::2, 3:6] = du_dcam
        J[1::2, 0:3] = np.cross(rp, dv_dcam)
        J[1::2, 3:6] = dv_dcam
        g = J.T @ res
        H = J.T @ J
        try:
            step = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            raise ValueError("degenerate configuration") from None
        if np.linalg.norm(step) < step_tol:
            break
        # Step halving keeps the objective monotone.
        accepted = False
        while np.linalg.norm(step) >= step_tol:
            R_new = _so3_exp(step[:3]) @ R
            t_new = t + step[3:]
            res_new, cost_new = _objective(R_new, t_new, model, obs_px, K)
            if res_new is not None and cost_new <= cost:
                improvement = cost - cost_new
                R, t, res, cost = R_new, t_new, res_new, cost_new
                accepted = improvement > 1e-14 * (1.0 + cost)
                break
            step = 0.5 * step
        if not accepted:
            break
    cam = model @ R.T + t
    if np.any(cam[:, 2] <= 0):
        raise ValueError("degenerate configuration")
    return Pose(quat_from_matrix(R), t)
