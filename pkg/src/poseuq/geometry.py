"""SE(3) poses, point clouds, and the pose-distance functions used everywhere else.

Poses are unit quaternions (w, x, y, z) plus a translation in meters.
Quaternions are kept in canonical sign (w >= 0) so that identical rotations
always map to identical parameter vectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_NORM_KEEP_TOL = 1e-8  # accept stored quaternions this close to unit without touching them


def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle_rad):
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("zero rotation axis")
    half = 0.5 * angle_rad
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = np.sin(half) * axis / n
    return q


def quat_from_matrix(R):
    """Shepperd's method; numerically stable for all rotations."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s,
                      0.25 * s,
                      (R[0, 1] + R[1, 0]) / s,
                      (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s,
                      (R[0, 1] + R[1, 0]) / s,
                      0.25 * s,
                      (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s,
                      (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s,
                      0.25 * s])
    return q / np.linalg.norm(q)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform: x_out = R(quat) @ x_in + trans."""

    quat: np.ndarray
    trans: np.ndarray

    def __post_init__(self):
        q = np.array(self.quat, dtype=float).reshape(4)
        t = np.array(self.trans, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite pose parameters")
        n = np.linalg.norm(q)
        if n < 1e-6:
            raise ValueError("degenerate quaternion")
        if abs(n - 1.0) > _NORM_KEEP_TOL:
            q = q / n
        q = _canonical_sign(q)
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle_rad, trans=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_axis_angle(axis, angle_rad), np.asarray(trans, dtype=float))

    @staticmethod
    def from_matrix(T) -> "Pose":
        T = np.asarray(T, dtype=float)
        return Pose(quat_from_matrix(T[:3, :3]), T[:3, 3])

    @staticmethod
    def from_rotation_translation(R, t) -> "Pose":
        return Pose(quat_from_matrix(R), np.asarray(t, dtype=float))

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.quat)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation_matrix()
        T[:3, 3] = self.trans
        return T

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.quat, other.quat)
                and np.array_equal(self.trans, other.trans))

    def __hash__(self):
        return hash((self.quat.tobytes(), self.trans.tobytes()))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array (or a single 3-vector) of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.trans


def _canonical_sign(q):
    for c in q:
        if c > 0:
            return q.copy()
        if c < 0:
            return -q
    raise ValueError("degenerate quaternion")


def compose(a: Pose, b: Pose) -> Pose:
    """Composition a∘b: applies b first, then a."""
    q = _quat_mul(a.quat, b.quat)
    q = q / np.linalg.norm(q)
    t = a.apply(b.trans)
    return Pose(q, t)


def inverse(p: Pose) -> Pose:
    q_inv = np.array([p.quat[0], -p.quat[1], -p.quat[2], -p.quat[3]])
    R_inv = _quat_to_matrix(q_inv)
    return Pose(q_inv, -(R_inv @ p.trans))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D model points, in meters."""

    points: np.ndarray
    object_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise ValueError("empty point cloud")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point cloud")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (self.object_id == other.object_id
                and np.array_equal(self.points, other.points))

    def __hash__(self):
        return hash((self.object_id, self.points.tobytes()))

    def __len__(self):
        return self.points.shape[0]

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def max_radius(self) -> float:
        """Largest distance of any point from the origin."""
        return float(np.linalg.norm(self.points, axis=1).max())

    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.points - self.centroid(), axis=1).max())


def add_distance(p: Pose, q: Pose, cloud: PointCloud) -> float:
    """Average distance (ADD) between the cloud transformed by p and by q."""
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    d = p.apply(cloud.points) - q.apply(cloud.points)
    return float(np.linalg.norm(d, axis=1).mean())


def rotation_angle(p: Pose, q: Pose) -> float:
    """Geodesic angle between the two rotations, in degrees, in [0, 180]."""
    w = abs(float(np.dot(p.quat, q.quat)))
    w = min(w, 1.0)
    return float(np.degrees(2.0 * np.arccos(w)))


def translation_distance(p: Pose, q: Pose) -> float:
    return float(np.linalg.norm(p.trans - q.trans))


def cuboid_corners(extents) -> np.ndarray:
    """The 8 corners of an origin-centered axis-aligned cuboid with full extents (w, h, d)."""
    w, h, d = (float(v) for v in extents)
    half = np.array([w, h, d]) / 2.0
    signs = np.array([[(i >> 2) * 2 - 1, ((i >> 1) & 1) * 2 - 1, (i & 1) * 2 - 1]
                      for i in range(8)], dtype=float)
    return signs * half


def cuboid_point_cloud(extents, object_id: str = "") -> PointCloud:
    return PointCloud(cuboid_corners(extents), object_id)


def cuboid_keypoint_model(extents, object_id: str = "") -> PointCloud:
    """8 cuboid corners followed by the centroid: the 9-point keypoint model."""
    pts = np.vstack([cuboid_corners(extents), np.zeros(3)])
    return PointCloud(pts, object_id)


def load_point_cloud(path, object_id: str = "") -> PointCloud:
    """Read an x,y,z-per-line CSV cloud; '#' lines are comments."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = s.split(",")
            if len(fields) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 values, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: empty point cloud file")
    return PointCloud(np.array(rows), object_id)
