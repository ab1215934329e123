"""Oriented-box geometry in bird's-eye view and perspective view.

All boxes live in a right-handed ego frame (x forward, y left, z up).
BEV operations work on the ground-plane footprint of a box; perspective
operations project boxes through a pinhole camera.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Polygon areas below this many square meters are treated as empty.
AREA_EPS = 1e-9
# Near-plane depth for perspective projection, meters. Corners at or behind
# the plane are dropped rather than clipped against the frustum.
DEPTH_EPS = 0.1


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box: center, size, and heading about the z axis.

    The heading is stored as (sin_yaw, cos_yaw) and renormalized on
    construction so sin^2 + cos^2 == 1.
    """

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    sin_yaw: float = 0.0
    cos_yaw: float = 1.0

    def __post_init__(self) -> None:
        if not (self.l > 0.0 and self.w > 0.0 and self.h > 0.0):
            raise ValueError(
                f"box dimensions must be positive: l={self.l}, w={self.w}, h={self.h}"
            )
        norm = math.hypot(self.sin_yaw, self.cos_yaw)
        if not math.isfinite(norm) or norm < 1e-12:
            raise ValueError("degenerate heading encoding")
        object.__setattr__(self, "sin_yaw", self.sin_yaw / norm)
        object.__setattr__(self, "cos_yaw", self.cos_yaw / norm)

    @classmethod
    def from_vector(cls, vec) -> "Box3D":
        """Build from an 8-vector [x, y, z, l, w, h, sin_yaw, cos_yaw]."""
        x, y, z, l, w, h, s, c = (float(v) for v in vec)
        return cls(x, y, z, l, w, h, s, c)

    def to_vector(self) -> np.ndarray:
        return np.array(
            [self.x, self.y, self.z, self.l, self.w, self.h, self.sin_yaw, self.cos_yaw]
        )

    @property
    def yaw(self) -> float:
        return math.atan2(self.sin_yaw, self.cos_yaw)

    @property
    def bev_center(self) -> tuple[float, float]:
        return (self.x, self.y)

    def corners_3d(self) -> np.ndarray:
        """All 8 corners in the ego frame, shape (8, 3)."""
        hl, hw, hh = self.l / 2.0, self.w / 2.0, self.h / 2.0
        s, c = self.sin_yaw, self.cos_yaw
        corners = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            cx = self.x + c * dx - s * dy
            cy = self.y + s * dx + c * dy
            corners.append((cx, cy, self.z - hh))
            corners.append((cx, cy, self.z + hh))
        return np.array(corners)


class BevRect:
    """Convex quadrilateral footprint on the BEV ground plane.

    Corners are stored counter-clockwise; construction normalizes the
    winding and rejects degenerate (zero-area) inputs.
    """

    __slots__ = ("corners", "area", "_aabb")

    def __init__(self, corners) -> None:
        pts = np.asarray(corners, dtype=float)
        if pts.shape != (4, 2):
            raise ValueError(f"expected 4 corner points, got shape {pts.shape}")
        signed = _signed_area(pts)
        if abs(signed) <= AREA_EPS:
            raise ValueError("degenerate footprint: zero area")
        if signed < 0.0:
            pts = pts[::-1].copy()
            signed = -signed
        self.corners = pts
        self.area = signed
        xs, ys = pts[:, 0], pts[:, 1]
        self._aabb = (xs.min(), ys.min(), xs.max(), ys.max())

    @property
    def center(self) -> tuple[float, float]:
        c = self.corners.mean(axis=0)
        return (float(c[0]), float(c[1]))

    def __repr__(self) -> str:
        return f"BevRect({self.corners.tolist()})"


@dataclass(frozen=True)
class ImageRect:
    """Axis-aligned rectangle in pixel coordinates."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self) -> None:
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError(f"inverted image rect: {self}")

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics plus a rigid ego-to-camera transform.

    ego_to_cam maps homogeneous ego-frame points into the camera frame
    (z forward, x right, y down).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int
    ego_to_cam: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self) -> None:
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        mat = np.asarray(self.ego_to_cam, dtype=float)
        if mat.shape != (4, 4):
            raise ValueError("ego_to_cam must be a 4x4 matrix")
        rot = mat[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-6:
            raise ValueError("ego_to_cam rotation block is not orthonormal")
        object.__setattr__(self, "ego_to_cam", mat)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.image_width,
            "height": self.image_height,
            "ego_to_cam": [float(v) for v in self.ego_to_cam.reshape(-1)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        mat = np.asarray(data["ego_to_cam"], dtype=float).reshape(4, 4)
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            image_width=int(data["width"]),
            image_height=int(data["height"]),
            ego_to_cam=mat,
        )


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_area(points) -> float:
    """Absolute shoelace area of a closed polygon.

    Fewer than 3 points, or collinear points, give 0.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        return 0.0
    return abs(_signed_area(pts))


def bev_footprint(box: Box3D) -> BevRect:
    """Ground-plane footprint of a box: the l x w rectangle centered at
    (x, y) rotated by yaw, corners counter-clockwise."""
    hl, hw = box.l / 2.0, box.w / 2.0
    s, c = box.sin_yaw, box.cos_yaw
    corners = []
    for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        corners.append((box.x + c * dx - s * dy, box.y + s * dx + c * dy))
    return BevRect(corners)


def _clip_polygon(subject: list[tuple[float, float]], clip: np.ndarray) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    output = subject
    n = len(clip)
    for i in range(n):
        if not output:
            return []
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        input_pts = output
        output = []
        px, py = input_pts[-1]
        prev_in = ex * (py - ay) - ey * (px - ax) >= 0.0
        for qx, qy in input_pts:
            cur_in = ex * (qy - ay) - ey * (qx - ax) >= 0.0
            if cur_in != prev_in:
                # Edge crossing: intersect segment (p, q) with the clip line.
                dx, dy = qx - px, qy - py
                denom = ex * dy - ey * dx
                if denom != 0.0:
                    t = (ey * (px - ax) - ex * (py - ay)) / denom
                    output.append((px + t * dx, py + t * dy))
            if cur_in:
                output.append((qx, qy))
            px, py, prev_in = qx, qy, cur_in
    return output


def _intersection_area(a: BevRect, b: BevRect) -> float:
    if (
        a._aabb[2] < b._aabb[0]
        or b._aabb[2] < a._aabb[0]
        or a._aabb[3] < b._aabb[1]
        or b._aabb[3] < a._aabb[1]
    ):
        return 0.0
    clipped = _clip_polygon([tuple(p) for p in a.corners], b.corners)
    area = polygon_area(clipped)
    return area if area > AREA_EPS else 0.0


def bev_iou(a: BevRect, b: BevRect) -> float:
    """Intersection-over-union of two BEV footprints via convex clipping."""
    # Canonical operand order makes the result exactly symmetric.
    if b._aabb < a._aabb:
        a, b = b, a
    inter = _intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = a.area + b.area - inter
    return min(max(inter / union, 0.0), 1.0)


def diou(a: BevRect, b: BevRect) -> float:
    """Distance-IoU between two footprints.

    1 - IoU plus the squared centroid distance normalized by the squared
    diagonal of the smallest axis-aligned box enclosing both footprints.
    Zero for identical rects; always below 2.
    """
    iou = bev_iou(a, b)
    ca, cb = a.center, b.center
    rho2 = (ca[0] - cb[0]) ** 2 + (ca[1] - cb[1]) ** 2
    if rho2 == 0.0 and iou == 1.0:
        return 0.0
    x_min = min(a._aabb[0], b._aabb[0])
    y_min = min(a._aabb[1], b._aabb[1])
    x_max = max(a._aabb[2], b._aabb[2])
    y_max = max(a._aabb[3], b._aabb[3])
    c2 = (x_max - x_min) ** 2 + (y_max - y_min) ** 2
    return 1.0 - iou + rho2 / c2


def rect_iou(a: ImageRect, b: ImageRect) -> float:
    """Axis-aligned IoU of two image rectangles."""
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def overlap_fraction(a: ImageRect, b: ImageRect) -> float:
    """Fraction of rectangle a covered by rectangle b (asymmetric)."""
    if a.area <= 0.0:
        return 0.0
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return min(iw * ih / a.area, 1.0)


def project_box(box: Box3D, cam: CameraModel) -> ImageRect | None:
    """Project a box into the image as the pixel bounding box of its
    visible corners, clipped to the image bounds.

    Returns None when every corner is at or behind the near plane or the
    clipped rectangle is empty.
    """
    corners = box.corners_3d()
    homo = np.hstack([corners, np.ones((8, 1))])
    cam_pts = (cam.ego_to_cam @ homo.T).T[:, :3]
    depths = cam_pts[:, 2]
    visible = depths > DEPTH_EPS
    if not visible.any():
        return None
    pts = cam_pts[visible]
    u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    u_min = max(float(u.min()), 0.0)
    u_max = min(float(u.max()), float(cam.image_width))
    v_min = max(float(v.min()), 0.0)
    v_max = min(float(v.max()), float(cam.image_height))
    if u_min >= u_max or v_min >= v_max:
        return None
    return ImageRect(u_min, v_min, u_max, v_max)
