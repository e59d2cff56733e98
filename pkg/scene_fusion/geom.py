"""SE(3) machinery, pinhole cameras, projection and pixel rays.

Twists are ordered ``(rho, omega)``: translational part first, rotational part
second, right-handed. Rotations are exchanged as 3x3 matrices.
"""

from collections import namedtuple
from typing import Any, Dict, List, Sequence, Tuple, Union  # pylint: disable=unused-import

import numpy as np

from .exceptions import AngleNearPi, BehindCamera, InvalidCamera, PixelOutOfBounds

SMALL_ANGLE = 1e-8
LOG_ANGLE_LIMIT = np.pi - 1e-6
DEFAULT_NEAR = 1e-3
SERIAL_DIGITS = 12


def _frozen(array):
    # type: (np.ndarray) -> np.ndarray
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


class RigidTransform(namedtuple("RigidTransform", ["rotation", "translation"])):
    """Element of SE(3) acting as ``p -> R p + t``.

    :param rotation: 3x3 rotation matrix
    :param translation: translation vector in meters
    """

    __slots__ = ()

    def __new__(cls, rotation, translation):
        # type: (Any, Any) -> RigidTransform
        return super(RigidTransform, cls).__new__(
            cls,
            _frozen(np.asarray(rotation, dtype=np.float64).reshape(3, 3)),
            _frozen(np.asarray(translation, dtype=np.float64).reshape(3)),
        )

    @classmethod
    def identity(cls):
        # type: () -> RigidTransform
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, translation):
        # type: (Any) -> RigidTransform
        return cls(np.eye(3), translation)

    @classmethod
    def from_matrix(cls, matrix):
        # type: (Any) -> RigidTransform
        matrix = np.asarray(matrix, dtype=np.float64).reshape(4, 4)
        return cls(matrix[:3, :3], matrix[:3, 3])

    def matrix(self):
        # type: () -> np.ndarray
        """Homogeneous 4x4 matrix."""
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[:3, 3] = self.translation
        return out

    def to_list(self):
        # type: () -> List[float]
        """Row-major 4x4 matrix with 12 significant digits."""
        return [float(f"{value:.{SERIAL_DIGITS}g}") for value in self.matrix().ravel()]

    @classmethod
    def from_list(cls, values):
        # type: (Sequence[float]) -> RigidTransform
        if len(values) != 16:
            raise ValueError(f"Expected 16 matrix entries, got {len(values)}.")
        return cls.from_matrix(np.asarray(values, dtype=np.float64))


class Twist(namedtuple("Twist", ["rho", "omega"])):
    """Tangent vector of SE(3), ``xi = (rho, omega)``."""

    __slots__ = ()

    def __new__(cls, rho, omega):
        # type: (Any, Any) -> Twist
        return super(Twist, cls).__new__(
            cls,
            _frozen(np.asarray(rho, dtype=np.float64).reshape(3)),
            _frozen(np.asarray(omega, dtype=np.float64).reshape(3)),
        )

    @classmethod
    def zero(cls):
        # type: () -> Twist
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector):
        # type: (Any) -> Twist
        vector = np.asarray(vector, dtype=np.float64).reshape(6)
        return cls(vector[:3], vector[3:])

    def as_vector(self):
        # type: () -> np.ndarray
        return np.concatenate([self.rho, self.omega])


_CameraBase = namedtuple(
    "Camera", ["fx", "fy", "cx", "cy", "width", "height", "world_to_camera"]
)


class Camera(_CameraBase):
    """Pinhole camera, x right, y down, z forward in the camera frame."""

    __slots__ = ()

    def __new__(cls, fx, fy, cx, cy, width, height, world_to_camera=None):
        # type: (float, float, float, float, int, int, RigidTransform) -> Camera
        if world_to_camera is None:
            world_to_camera = RigidTransform.identity()
        if fx <= 0 or fy <= 0:
            raise InvalidCamera(f"Focal lengths must be positive, got {fx}, {fy}.")
        if int(width) <= 0 or int(height) <= 0:
            raise InvalidCamera(f"Image size must be positive, got {width}x{height}.")
        if not (0 <= cx < width and 0 <= cy < height):
            raise InvalidCamera(f"Principal point ({cx}, {cy}) outside of the image.")
        return super(Camera, cls).__new__(
            cls,
            float(fx),
            float(fy),
            float(cx),
            float(cy),
            int(width),
            int(height),
            world_to_camera,
        )

    @property
    def center(self):
        # type: () -> np.ndarray
        """Camera center in world coordinates."""
        pose = self.world_to_camera
        return -pose.rotation.T @ pose.translation

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "world_to_camera": self.world_to_camera.to_list(),
        }

    @classmethod
    def from_dict(cls, data):
        # type: (Dict[str, Any]) -> Camera
        return cls(
            fx=data["fx"],
            fy=data["fy"],
            cx=data["cx"],
            cy=data["cy"],
            width=data["width"],
            height=data["height"],
            world_to_camera=RigidTransform.from_list(data["world_to_camera"]),
        )


def hat(v):
    # type: (Any) -> np.ndarray
    """Skew-symmetric matrix with ``hat(v) @ p == cross(v, p)``."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(matrix):
    # type: (np.ndarray) -> np.ndarray
    """Inverse of :func:`hat` on the skew-symmetric part."""
    return np.array([matrix[2, 1], matrix[0, 2], matrix[1, 0]])


def _exp_coefficients(theta):
    # type: (float) -> Tuple[float, float, float]
    if theta < SMALL_ANGLE:
        theta2 = theta * theta
        return 1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0
    half_sin = np.sin(0.5 * theta)
    a = np.sin(theta) / theta
    b = 2.0 * half_sin * half_sin / (theta * theta)
    c = (theta - np.sin(theta)) / theta ** 3
    return a, b, c


def so3_exp(omega):
    # type: (Any) -> np.ndarray
    """Rodrigues formula."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(omega))
    w = hat(omega)
    a, b, _ = _exp_coefficients(theta)
    return np.eye(3) + a * w + b * (w @ w)


def rotation_angle(rotation):
    # type: (np.ndarray) -> float
    """Angle of a rotation matrix in radians, in ``[0, pi]``."""
    rotation = np.asarray(rotation, dtype=np.float64)
    sin_part = 0.5 * np.linalg.norm(vee(rotation - rotation.T))
    cos_part = 0.5 * (np.trace(rotation) - 1.0)
    return float(np.arctan2(sin_part, cos_part))


def so3_log(rotation):
    # type: (np.ndarray) -> np.ndarray
    """Rotation vector of ``rotation``.

    :raises AngleNearPi: angle within 1e-6 of pi
    """
    theta = rotation_angle(rotation)
    if theta >= LOG_ANGLE_LIMIT:
        raise AngleNearPi(f"Rotation angle {theta:.9f} rad is too close to pi.")
    axis_part = 0.5 * vee(rotation - rotation.T)
    if theta < SMALL_ANGLE:
        return axis_part * (1.0 + theta * theta / 6.0)
    return axis_part * (theta / np.sin(theta))


def se3_exp(xi):
    # type: (Union[Twist, Any]) -> RigidTransform
    """Exponential map of a twist, closed form."""
    if not isinstance(xi, Twist):
        xi = Twist.from_vector(xi)
    theta = float(np.linalg.norm(xi.omega))
    w = hat(xi.omega)
    w2 = w @ w
    a, b, c = _exp_coefficients(theta)
    rotation = np.eye(3) + a * w + b * w2
    left_jacobian = np.eye(3) + b * w + c * w2
    return RigidTransform(rotation, left_jacobian @ xi.rho)


def se3_log(transform):
    # type: (RigidTransform) -> Twist
    """Logarithm of a rigid transform.

    :raises AngleNearPi: rotation angle within 1e-6 of pi
    """
    omega = so3_log(transform.rotation)
    theta = float(np.linalg.norm(omega))
    w = hat(omega)
    if theta < SMALL_ANGLE:
        coefficient = 1.0 / 12.0 + theta * theta / 720.0
    else:
        half = 0.5 * theta
        coefficient = (1.0 - half / np.tan(half)) / (theta * theta)
    inverse_jacobian = np.eye(3) - 0.5 * w + coefficient * (w @ w)
    return Twist(inverse_jacobian @ transform.translation, omega)


def compose(a, b):
    # type: (RigidTransform, RigidTransform) -> RigidTransform
    """``a ∘ b``: apply ``b`` first."""
    return RigidTransform(
        a.rotation @ b.rotation, a.rotation @ b.translation + a.translation
    )


def compose_all(transforms):
    # type: (Sequence[RigidTransform]) -> RigidTransform
    """Compose in application order: the first transform is applied first."""
    result = RigidTransform.identity()
    for transform in transforms:
        result = compose(transform, result)
    return result


def inverse(transform):
    # type: (RigidTransform) -> RigidTransform
    rotation_t = transform.rotation.T
    return RigidTransform(rotation_t, -rotation_t @ transform.translation)


def transform_point(transform, p):
    # type: (RigidTransform, Any) -> np.ndarray
    """Apply ``transform`` to one point ``(3,)`` or to an ``(N, 3)`` array."""
    points = np.asarray(p, dtype=np.float64)
    if points.ndim == 1:
        return transform.rotation @ points + transform.translation
    return points @ transform.rotation.T + transform.translation


def pose_error(estimate, truth):
    # type: (RigidTransform, RigidTransform) -> Tuple[float, float]
    """Rotation error in degrees and translation error in meters."""
    relative = compose(inverse(truth), estimate)
    return (
        float(np.degrees(rotation_angle(relative.rotation))),
        float(np.linalg.norm(estimate.translation - truth.translation)),
    )


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    # type: (Any, Any, Any) -> RigidTransform
    """World-to-camera transform of a camera at ``eye`` looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return RigidTransform(rotation, -rotation @ eye)


def camera_points(cam, points):
    # type: (Camera, Any) -> np.ndarray
    """World points expressed in the camera frame."""
    return transform_point(cam.world_to_camera, np.asarray(points, dtype=np.float64))


def project(cam, p, near=DEFAULT_NEAR):
    # type: (Camera, Any, float) -> Tuple[float, float, float]
    """Pinhole projection of one point.

    :return: ``(u, v, depth)`` in pixels and meters
    :raises BehindCamera: depth not beyond the near plane
    """
    x, y, z = camera_points(cam, np.asarray(p, dtype=np.float64).reshape(3))
    if z <= near:
        raise BehindCamera(f"Point depth {z} is not beyond the near plane {near}.")
    return cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy, float(z)


def project_points(cam, points, near=DEFAULT_NEAR):
    # type: (Camera, Any, float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    """Vectorized projection; rows behind the near plane get ``valid=False``.

    :return: ``(u, v, depth, valid)``
    """
    local = camera_points(cam, points).reshape(-1, 3)
    depth = local[:, 2]
    valid = depth > near
    safe = np.where(valid, depth, 1.0)
    u = cam.fx * local[:, 0] / safe + cam.cx
    v = cam.fy * local[:, 1] / safe + cam.cy
    return u, v, depth, valid


def pixel_ray(cam, u, v):
    # type: (Camera, int, int) -> Tuple[np.ndarray, np.ndarray]
    """Ray through the center of pixel ``(u, v)``.

    :return: ``(origin, unit direction)`` in world coordinates
    :raises PixelOutOfBounds: pixel outside of the image
    """
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise PixelOutOfBounds(f"Pixel ({u}, {v}) outside of {cam.width}x{cam.height}.")
    origins, directions = _rays(cam, np.array([u], dtype=np.float64), np.array([v], dtype=np.float64))
    return origins[0], directions[0]


def pixel_rays(cam, stride=1):
    # type: (Camera, int) -> Tuple[np.ndarray, np.ndarray]
    """Rays through every ``stride``-th pixel center, row-major."""
    vs, us = np.mgrid[0 : cam.height : stride, 0 : cam.width : stride]
    return _rays(cam, us.ravel().astype(np.float64), vs.ravel().astype(np.float64))


def _rays(cam, us, vs):
    # type: (Camera, np.ndarray, np.ndarray) -> Tuple[np.ndarray, np.ndarray]
    local = np.stack(
        [(us + 0.5 - cam.cx) / cam.fx, (vs + 0.5 - cam.cy) / cam.fy, np.ones_like(us)],
        axis=1,
    )
    directions = local @ cam.world_to_camera.rotation
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    origins = np.broadcast_to(cam.center, directions.shape).copy()
    return origins, directions
