"""Camera/road frames, the road-to-image homography and the IPM sampling layer.

Frame conventions
-----------------
Camera frame ``(x', y', z')``: x' right, y' along the optical axis, z' up
(when pitch is zero).  Road frame ``(x, y, z)``: x right, y the projection of
the optical axis onto the road plane, z the road normal, origin directly below
the camera centre.  Image pixels ``(u, v)``: u to the right, v downwards, and
``(0, 0)`` is the *centre* of the top-left pixel.

Top-view images have row 0 at the far edge (``y_max``) so that they read like
the camera image they are warped from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "RigidTransform",
    "Homography",
    "TopViewSpec",
    "SamplingGrid",
    "UnprojectableError",
    "pose_to_transform",
    "road_to_image_homography",
    "camera_matrix",
    "ipm_sampling_grid",
    "bilinear_sample",
    "bilinear_sample_backward",
    "below_horizon",
    "flat_ground_backproject",
    "project_camera_points",
]

FEATURE_SCALES = (1.0, 0.5, 0.25, 0.125)


class UnprojectableError(ValueError):
    """Raised when an image ray does not hit the road plane in front of the camera."""

    def __init__(self, indices):
        self.indices = list(indices)
        super().__init__(f"pixels on or above the horizon: {self.indices}")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 480.0
    fy: float = 480.0
    cx: float = 240.0
    cy: float = 180.0
    width: int = 480
    height: int = 360

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class CameraPose:
    """Camera pitch (radians, downward positive) and height above the road plane."""

    pitch: float
    h_cam: float

    def __post_init__(self):
        if not self.h_cam > 0:
            raise ValueError("h_cam must be positive")
        if not 0 <= self.pitch < math.pi / 2:
            raise ValueError("pitch must lie in [0, pi/2)")


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)


class Homography:
    """A 3x3 projective map, normalised so its largest-magnitude entry is 1."""

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        if abs(np.linalg.det(m)) <= 1e-12 * np.max(np.abs(m)) ** 3:
            raise ValueError("homography is singular")
        self.matrix = m / m.flat[np.argmax(np.abs(m))]

    def apply(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        hom = pts @ self.matrix[:, :2].T + self.matrix[:, 2]
        return hom[:, :2] / hom[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))

    def __repr__(self):
        return f"Homography({self.matrix.tolist()!r})"


def pose_to_transform(pose: CameraPose) -> RigidTransform:
    """Camera-to-road transform ``T_c2r`` for a zero-roll camera."""
    c, s = math.cos(pose.pitch), math.sin(pose.pitch)
    # columns are the camera axes expressed in road coordinates
    rot = np.array([[1.0, 0.0, 0.0],
                    [0.0, c, s],
                    [0.0, -s, c]])
    return RigidTransform(rot, np.array([0.0, 0.0, pose.h_cam]))


def camera_matrix(k: CameraIntrinsics) -> np.ndarray:
    """Maps camera-frame ``(x', y', z')`` to homogeneous pixels (y' is depth, v grows down)."""
    return np.array([[k.fx, k.cx, 0.0],
                     [0.0, k.cy, -k.fy],
                     [0.0, 1.0, 0.0]])


def project_camera_points(points_cam, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points; returns (n, 2) pixels."""
    hom = np.asarray(points_cam, dtype=float) @ camera_matrix(k).T
    return hom[:, :2] / hom[:, 2:3]


def road_to_image_homography(pose: CameraPose, k: CameraIntrinsics) -> Homography:
    r2c = pose_to_transform(pose).inverse()
    rt = np.column_stack([r2c.rotation[:, 0], r2c.rotation[:, 1], r2c.translation])
    return Homography(camera_matrix(k) @ rt)


@dataclass(frozen=True)
class TopViewSpec:
    """Road-frame window covered by the top view and its metric pixel size.

    The defaults cover 20.48 m x 79.872 m at 16 cm x 38.4 cm per pixel, a
    128 x 208 grid (both sides divisible by 8).
    """

    x_half: float = 10.24
    y_min: float = 0.0
    y_max: float = 79.872
    px_x: float = 0.16
    px_y: float = 0.384

    def __post_init__(self):
        if self.x_half <= 0 or self.y_max <= self.y_min or self.px_x <= 0 or self.px_y <= 0:
            raise ValueError("degenerate top-view spec")
        if self.W % 8 or self.H % 8:
            raise ValueError(f"top-view size {self.H}x{self.W} must be divisible by 8")

    @property
    def W(self) -> int:
        return int(round(2 * self.x_half / self.px_x))

    @property
    def H(self) -> int:
        return int(round((self.y_max - self.y_min) / self.px_y))

    def cell_centers(self, feature_scale: float = 1.0):
        """Road ``(x, y)`` of every cell centre of the (scaled) top view, shape (h, w)."""
        w = int(round(self.W * feature_scale))
        h = int(round(self.H * feature_scale))
        px, py = self.px_x / feature_scale, self.px_y / feature_scale
        xs = -self.x_half + (np.arange(w) + 0.5) * px
        ys = self.y_max - (np.arange(h) + 0.5) * py
        return np.meshgrid(xs, ys)

    def road_to_cell(self, x, y, feature_scale: float = 1.0):
        """Top-view (row, col) containing a road point; depends only on the spec."""
        px, py = self.px_x / feature_scale, self.px_y / feature_scale
        col = np.floor((np.asarray(x) + self.x_half) / px).astype(int)
        row = np.floor((self.y_max - np.asarray(y)) / py).astype(int)
        return row, col


@dataclass(frozen=True)
class SamplingGrid:
    """Per-output-pixel source coordinates ``coords[..., 0] = u``, ``coords[..., 1] = v``."""

    coords: np.ndarray
    in_view: np.ndarray

    @property
    def shape(self):
        return self.coords.shape[:2]


def ipm_sampling_grid(h: Homography, spec: TopViewSpec, feature_scale: float = 1.0,
                      source_shape=None) -> SamplingGrid:
    """Sampling grid ``S_IPM`` warping an image-plane map of the given scale to top view.

    ``source_shape`` (rows, cols) of the feature map is only used to fill the
    ``in_view`` flags; coordinates outside it are kept as they are.
    """
    if not any(math.isclose(feature_scale, s) for s in FEATURE_SCALES):
        raise ValueError(f"feature_scale must be one of {FEATURE_SCALES}")
    xs, ys = spec.cell_centers(feature_scale)
    pix = h.apply(np.column_stack([xs.ravel(), ys.ravel()]))
    # pixel centres: full-res u maps to (u + 0.5) * s - 0.5 at scale s
    pix = (pix + 0.5) * feature_scale - 0.5
    coords = pix.reshape(xs.shape + (2,))
    if source_shape is None:
        in_view = np.ones(xs.shape, dtype=bool)
    else:
        rows, cols = source_shape
        in_view = ((coords[..., 0] > -1) & (coords[..., 0] < cols)
                   & (coords[..., 1] > -1) & (coords[..., 1] < rows))
    return SamplingGrid(coords, in_view)


def _as_coords(grid) -> np.ndarray:
    return grid.coords if isinstance(grid, SamplingGrid) else np.asarray(grid, dtype=float)


def _corners(coords):
    # ceil - 1 keeps exact integers on the upper corner, so integer grids copy
    # values exactly and gradients there use the left/lower interval
    u, v = coords[..., 0], coords[..., 1]
    x0 = np.ceil(u).astype(np.int64) - 1
    y0 = np.ceil(v).astype(np.int64) - 1
    return u, v, x0, y0, u - x0, v - y0


def _gather(img, yy, xx):
    rows, cols = img.shape[:2]
    ok = (xx >= 0) & (xx < cols) & (yy >= 0) & (yy < rows)
    vals = img[np.clip(yy, 0, rows - 1), np.clip(xx, 0, cols - 1)]
    return np.where(ok[..., None], vals, 0.0), ok


def bilinear_sample(inp, grid) -> np.ndarray:
    """Bilinear interpolation of an (H, W, C) map at grid points, zero outside."""
    img = np.asarray(inp, dtype=float)
    _, _, x0, y0, ax, ay = _corners(_as_coords(grid))
    ax, ay = ax[..., None], ay[..., None]
    v00, _ = _gather(img, y0, x0)
    v01, _ = _gather(img, y0, x0 + 1)
    v10, _ = _gather(img, y0 + 1, x0)
    v11, _ = _gather(img, y0 + 1, x0 + 1)
    return ((1 - ay) * ((1 - ax) * v00 + ax * v01)
            + ay * ((1 - ax) * v10 + ax * v11))


def bilinear_sample_backward(inp, grid, upstream_grad):
    """Gradients of ``bilinear_sample`` w.r.t. the input map and the grid coordinates.

    Returns ``(grad_input, grad_grid)`` shaped like ``inp`` and the grid coords.
    """
    img = np.asarray(inp, dtype=float)
    g = np.asarray(upstream_grad, dtype=float)
    rows, cols = img.shape[:2]
    _, _, x0, y0, ax, ay = _corners(_as_coords(grid))

    grad_input = np.zeros_like(img)
    corners = (
        (y0, x0, (1 - ay) * (1 - ax)),
        (y0, x0 + 1, (1 - ay) * ax),
        (y0 + 1, x0, ay * (1 - ax)),
        (y0 + 1, x0 + 1, ay * ax),
    )
    for yy, xx, wgt in corners:
        ok = (xx >= 0) & (xx < cols) & (yy >= 0) & (yy < rows)
        np.add.at(grad_input, (yy[ok], xx[ok]), wgt[ok][:, None] * g[ok])

    v00, _ = _gather(img, y0, x0)
    v01, _ = _gather(img, y0, x0 + 1)
    v10, _ = _gather(img, y0 + 1, x0)
    v11, _ = _gather(img, y0 + 1, x0 + 1)
    ax_, ay_ = ax[..., None], ay[..., None]
    d_du = (1 - ay_) * (v01 - v00) + ay_ * (v11 - v10)
    d_dv = (1 - ax_) * (v10 - v00) + ax_ * (v11 - v01)
    grad_grid = np.stack([(d_du * g).sum(-1), (d_dv * g).sum(-1)], axis=-1)
    return grad_input, grad_grid


def _road_rays(pixels, pose: CameraPose, k: CameraIntrinsics) -> np.ndarray:
    pix = np.atleast_2d(np.asarray(pixels, dtype=float))
    d_cam = np.column_stack([(pix[:, 0] - k.cx) / k.fx,
                             np.ones(len(pix)),
                             -(pix[:, 1] - k.cy) / k.fy])
    return d_cam @ pose_to_transform(pose).rotation.T


def below_horizon(pixels, pose: CameraPose, k: CameraIntrinsics) -> np.ndarray:
    """True for pixels whose viewing ray descends to the road plane."""
    rays = _road_rays(pixels, pose, k)
    return rays[:, 2] < -1e-12 * np.linalg.norm(rays, axis=1)


def flat_ground_backproject(image_points, pose: CameraPose, k: CameraIntrinsics) -> np.ndarray:
    """Intersect pixel rays with the z=0 road plane; returns (n, 3) road points.

    Raises UnprojectableError naming the offending indices when any ray does
    not reach the plane in front of the camera.
    """
    pix = np.atleast_2d(np.asarray(image_points, dtype=float))
    ok = below_horizon(pix, pose, k)
    if not ok.all():
        raise UnprojectableError(np.flatnonzero(~ok))
    xy = road_to_image_homography(pose, k).inverse().apply(pix)
    return np.column_stack([xy, np.zeros(len(xy))])
