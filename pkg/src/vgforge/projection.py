"""Perspective projection of point clouds onto binary raster images."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

CAMERA_RADIUS = 2.5
_MASK64 = (1 << 64) - 1
_UP_DEGENERACY = 0.999


@dataclass(frozen=True)
class ProjectionConfig:
    fov_y_degrees: float = 45.0
    aspect: float = 1.0
    near: float = 1.0
    far: float = 100.0
    width: int = 224
    height: int = 224

    def __post_init__(self):
        if not 0.0 < self.fov_y_degrees < 180.0:
            raise ValueError(f"fov_y_degrees must be in (0, 180), got {self.fov_y_degrees}")
        if self.aspect <= 0.0:
            raise ValueError(f"aspect must be positive, got {self.aspect}")
        if not 0.0 < self.near < self.far:
            raise ValueError(f"need 0 < near < far, got near={self.near} far={self.far}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class CameraPose:
    eye: np.ndarray  # (3,)
    look_at: np.ndarray  # (3,)
    up: np.ndarray  # (3,)
    sphere_radius: float = CAMERA_RADIUS

    def as_dict(self) -> dict:
        return {
            "eye": [float(v) for v in self.eye],
            "look_at": [float(v) for v in self.look_at],
            "up": [float(v) for v in self.up],
            "radius": float(self.sphere_radius),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        return cls(
            eye=np.array(d["eye"], dtype=np.float64),
            look_at=np.array(d["look_at"], dtype=np.float64),
            up=np.array(d["up"], dtype=np.float64),
            sphere_radius=float(d["radius"]),
        )


def sample_camera(centroid: np.ndarray, radius: float = CAMERA_RADIUS, cam_seed: int = 0) -> CameraPose:
    """Place the eye uniformly on a sphere around centroid, looking at it.

    Direction comes from z ~ U(-1,1) then azimuth ~ U(0,2pi), in that draw
    order. Up is +Y unless the view direction is within 0.001 of vertical
    (|dot| > 0.999), in which case it falls back to +X.
    """
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    centroid = np.asarray(centroid, dtype=np.float64)
    rng = np.random.default_rng(cam_seed & _MASK64)
    z = rng.uniform(-1.0, 1.0)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    s = math.sqrt(max(0.0, 1.0 - z * z))
    direction = np.array([s * math.cos(phi), s * math.sin(phi), z])
    eye = centroid + radius * direction
    view = centroid - eye
    view = view / np.linalg.norm(view)
    if abs(float(view[1])) > _UP_DEGENERACY:
        up = np.array([1.0, 0.0, 0.0])
    else:
        up = np.array([0.0, 1.0, 0.0])
    return CameraPose(eye=eye, look_at=centroid.copy(), up=up, sphere_radius=float(radius))


def view_rotation(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera rotation rows (right, up, -forward) and translation."""
    f = pose.look_at - pose.eye
    nf = np.linalg.norm(f)
    if nf == 0.0:
        raise ValueError("eye and look_at coincide")
    f = f / nf
    r = np.cross(f, pose.up)
    nr = np.linalg.norm(r)
    if nr == 0.0:
        raise ValueError("up vector is parallel to the view direction")
    r = r / nr
    u = np.cross(r, f)
    rot = np.stack([r, u, -f])
    trans = -rot @ pose.eye
    return rot, trans


def project(points: np.ndarray, pose: CameraPose, config: ProjectionConfig = ProjectionConfig()) -> np.ndarray:
    """Render points as white pixels on a black (height, width, 3) uint8 image.

    Points outside the frustum (depth not in [near, far] or |ndc| > 1) are
    culled. Viewport row 0 is the top of the image. Multiple points landing on
    one pixel stay a single white pixel, so the result is permutation
    invariant in the input order.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {pts.shape}")
    rot, trans = view_rotation(pose)
    tan_half = math.tan(math.radians(config.fov_y_degrees) / 2.0)
    inv_at = 1.0 / (config.aspect * tan_half)
    inv_t = 1.0 / tan_half
    pix = np.zeros((pts.shape[0], 2), dtype=np.int64)
    ok = np.zeros(pts.shape[0], dtype=np.bool_)
    kernels.project_points(
        pts, rot, trans, inv_at, inv_t,
        float(config.near), float(config.far), config.width, config.height,
        pix, ok,
    )
    img = np.zeros((config.height, config.width, 3), dtype=np.uint8)
    hit = pix[ok]
    img[hit[:, 0], hit[:, 1]] = 255
    return img


def render_cloud(
    points: np.ndarray,
    cam_seed: int,
    radius: float = CAMERA_RADIUS,
    config: ProjectionConfig = ProjectionConfig(),
) -> tuple[np.ndarray, CameraPose]:
    """Sample one camera on a sphere around the origin and project.

    Input is expected in normalized form (zero centroid), so the camera
    target is the exact origin rather than the float centroid.
    """
    pts = np.asarray(points, dtype=np.float64)
    pose = sample_camera(np.zeros(3), radius, cam_seed)
    return project(pts, pose, config), pose
