"""
Geometric value types, RGB-D back-projection and SE(3) machinery.

Camera convention: +z forward, +x right, +y down. A pixel (u, v) with depth z
back-projects to ((u - cx) z / fx, (v - cy) z / fy, z). Depth 0 marks an
invalid pixel.

Twists are 6-vectors laid out as (a, tr): the axis-angle rotation a followed by
the translation tr. Poses are updated on the left, ``exp_map(delta) @ pose``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import DimensionError, IngestionError, NearSingularityError

ORTHONORMAL_TOLERANCE = 1e-9
# compose() re-orthonormalizes once the product drifts past this
DRIFT_TOLERANCE = 1e-10
SMALL_ANGLE = 1e-8
SINGULAR_MARGIN = 1e-6


def _frozen(array, shape=None):
    out = np.array(array, dtype=np.float64)
    if shape is not None and out.shape != shape:
        raise DimensionError(f'Expected shape {shape}, got {out.shape}')
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics of an RGB-D sensor."""
    focal_x: float
    focal_y: float
    center_x: float
    center_y: float
    width: int
    height: int
    depth_scale: float = 5000.0

    def __post_init__(self):
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError('Focal lengths must be positive')
        if not 0 <= self.center_x < self.width or not 0 <= self.center_y < self.height:
            raise ValueError('Principal point must lie inside the image')
        if self.depth_scale <= 0:
            raise ValueError('depth_scale must be positive')

    def scaled(self, factor):
        """Intrinsics of the image resized by ``factor``."""
        return CameraIntrinsics(
            focal_x=self.focal_x * factor,
            focal_y=self.focal_y * factor,
            center_x=self.center_x * factor,
            center_y=self.center_y * factor,
            width=int(round(self.width * factor)),
            height=int(round(self.height * factor)),
            depth_scale=self.depth_scale,
        )


@dataclass(frozen=True, eq=False)
class RGBDFrame:
    """One observation: color image in [0, 1], depth in meters, timestamp in seconds."""
    color: np.ndarray
    depth: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        color = _frozen(self.color)
        depth = _frozen(self.depth)
        if depth.ndim != 2 or color.shape != depth.shape + (3,):
            raise DimensionError(
                f'Color {color.shape} and depth {depth.shape} images do not match'
            )
        if not np.all(np.isfinite(depth)) or np.any(depth < 0):
            raise IngestionError('Depth images must be finite and non-negative')
        object.__setattr__(self, 'color', color)
        object.__setattr__(self, 'depth', depth)

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


@dataclass(frozen=True, eq=False)
class ColorPointCloud:
    """Points in meters with per-point RGB colors in [0, 1]."""
    positions: np.ndarray
    colors: np.ndarray = None

    def __post_init__(self):
        positions = _frozen(self.positions).reshape(-1, 3)
        if self.colors is None:
            colors = np.full_like(positions, 0.5)
        else:
            colors = np.array(self.colors, dtype=np.float64).reshape(-1, 3)
        if colors.shape != positions.shape:
            raise DimensionError('Every point needs exactly one color')
        if not np.all(np.isfinite(positions)):
            raise ValueError('Point coordinates must be finite')
        if np.any(colors < 0) or np.any(colors > 1):
            raise ValueError('Colors must lie in [0, 1]')
        colors.setflags(write=False)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'colors', colors)

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros((0, 3)))

    def subset(self, index):
        return ColorPointCloud(self.positions[index], self.colors[index])


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform x -> R x + t."""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = _frozen(self.rotation, (3, 3))
        translation = _frozen(self.translation, (3,))
        if orthonormal_drift(rotation) > ORTHONORMAL_TOLERANCE:
            raise ValueError('Rotation is not orthonormal')
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise ValueError('Rotation must have determinant +1')
        object.__setattr__(self, 'rotation', rotation)
        object.__setattr__(self, 'translation', translation)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_quaternion(cls, translation, quaternion):
        """Build from a translation and a unit quaternion ordered (qx, qy, qz, qw)."""
        rotation = Rotation.from_quat(np.asarray(quaternion, dtype=np.float64)).as_matrix()
        return cls(orthonormalize(rotation), translation)

    def as_matrix(self):
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def quaternion(self):
        """Unit quaternion (qx, qy, qz, qw) with non-negative qw."""
        quat = Rotation.from_matrix(self.rotation).as_quat()
        return -quat if quat[3] < 0 else quat

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __matmul__(self, other):
        return compose(self, other)

    def inverse(self):
        return inverse(self)

    def rotation_angle(self):
        return rotation_angle(self.rotation)


def orthonormal_drift(rotation):
    """Largest absolute entry of R^T R - I."""
    return float(np.max(np.abs(rotation.T @ rotation - np.eye(3))))


def orthonormalize(rotation):
    """Closest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(rotation)
    result = u @ vt
    if np.linalg.det(result) < 0:
        u[:, -1] *= -1
        result = u @ vt
    return result


def hat(vector):
    x, y, z = vector
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vee(matrix):
    return 0.5 * np.array([
        matrix[2, 1] - matrix[1, 2],
        matrix[0, 2] - matrix[2, 0],
        matrix[1, 0] - matrix[0, 1],
    ])


def rotation_angle(rotation):
    """Rotation angle in [0, pi], stable near 0 and pi."""
    sin_axis = vee(rotation)
    cos_angle = 0.5 * (np.trace(rotation) - 1.0)
    return float(np.arctan2(np.linalg.norm(sin_axis), cos_angle))


def exp_map(xi):
    """Exponential map se(3) -> SE(3) of a twist (a, tr)."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (6,):
        raise DimensionError(f'Twist must have 6 components, got {xi.shape}')
    a, tr = xi[:3], xi[3:]
    theta = float(np.linalg.norm(a))
    skew = hat(a)
    skew2 = skew @ skew
    if theta < SMALL_ANGLE:
        rotation = np.eye(3) + skew + 0.5 * skew2
        v_matrix = np.eye(3) + 0.5 * skew + skew2 / 6.0
    else:
        theta2 = theta * theta
        one_minus_cos = 2.0 * np.sin(0.5 * theta) ** 2
        rotation = (
            np.eye(3)
            + np.sin(theta) / theta * skew
            + one_minus_cos / theta2 * skew2
        )
        if theta < 1e-3:
            third = 1.0 / 6.0 - theta2 / 120.0
        else:
            third = (theta - np.sin(theta)) / (theta2 * theta)
        v_matrix = np.eye(3) + one_minus_cos / theta2 * skew + third * skew2
    return Pose(rotation, v_matrix @ tr)


def log_map(pose):
    """Logarithm SE(3) -> se(3); undefined for rotations at or near pi."""
    rotation = pose.rotation
    sin_axis = vee(rotation)
    sin_theta = float(np.linalg.norm(sin_axis))
    cos_theta = 0.5 * (np.trace(rotation) - 1.0)
    theta = float(np.arctan2(sin_theta, cos_theta))
    if theta > np.pi - SINGULAR_MARGIN:
        raise NearSingularityError(f'Rotation angle {theta:.9f} is too close to pi')
    if theta < 1e-4:
        # theta / sin(theta) series
        a = sin_axis * (1.0 + theta * theta / 6.0)
    else:
        a = sin_axis * (theta / sin_theta)
    skew = hat(a)
    theta2 = theta * theta
    if theta < 1e-2:
        coefficient = 1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    else:
        half = 0.5 * theta
        coefficient = (1.0 - half * np.cos(half) / np.sin(half)) / theta2
    v_inverse = np.eye(3) - 0.5 * skew + coefficient * (skew @ skew)
    return np.concatenate([a, v_inverse @ pose.translation])


def compose(a, b):
    """Group product a * b: apply b first, then a."""
    rotation = a.rotation @ b.rotation
    if orthonormal_drift(rotation) > DRIFT_TOLERANCE:
        rotation = orthonormalize(rotation)
    return Pose(rotation, a.rotation @ b.translation + a.translation)


def inverse(a):
    rotation_t = a.rotation.T
    return Pose(rotation_t, -rotation_t @ a.translation)


def transform_cloud(pose, cloud):
    """Map every position p to R p + t; colors are unchanged."""
    if len(cloud) == 0:
        return cloud
    return ColorPointCloud(pose.apply(cloud.positions), cloud.colors)


def backproject(frame, intrinsics, stride=1):
    """Lift valid depth pixels on a stride x stride grid into a camera-frame point cloud."""
    if stride < 1:
        raise ValueError('stride must be a positive integer')
    if frame.width != intrinsics.width or frame.height != intrinsics.height:
        raise DimensionError(
            f'Frame is {frame.width}x{frame.height} but intrinsics expect '
            f'{intrinsics.width}x{intrinsics.height}'
        )
    rows = np.arange(0, frame.height, stride)
    cols = np.arange(0, frame.width, stride)
    v, u = np.meshgrid(rows, cols, indexing='ij')
    depth = frame.depth[v, u]
    valid = depth > 0
    z = depth[valid]
    u = u[valid].astype(np.float64)
    v = v[valid].astype(np.float64)
    positions = np.stack([
        (u - intrinsics.center_x) * z / intrinsics.focal_x,
        (v - intrinsics.center_y) * z / intrinsics.focal_y,
        z,
    ], axis=1)
    colors = frame.color[v.astype(int), u.astype(int)]
    return ColorPointCloud(positions, np.clip(colors, 0.0, 1.0))


def project(positions, intrinsics):
    """Pinhole projection of camera-frame points to (u, v) pixel coordinates."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    z = positions[:, 2]
    u = positions[:, 0] * intrinsics.focal_x / z + intrinsics.center_x
    v = positions[:, 1] * intrinsics.focal_y / z + intrinsics.center_y
    return np.stack([u, v], axis=1)


def look_at(eye, target, down=(0.0, 1.0, 0.0)):
    """Camera-to-world pose at ``eye`` looking at ``target`` with +y pointing ``down``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(np.asarray(down, dtype=np.float64), forward)
    right /= np.linalg.norm(right)
    below = np.cross(forward, right)
    return Pose(np.stack([right, below, forward], axis=1), eye)
