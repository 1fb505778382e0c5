"""Pinhole camera model: world (mm, camera frame) <-> image (px, depth mm).

Camera frame convention: x right, y down (aligned with image v), z forward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["CameraIntrinsics", "world_to_image", "image_to_world", "ICVL_INTRINSICS"]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")


# 320x240 depth-sensor profile used by the synthetic generator defaults.
ICVL_INTRINSICS = CameraIntrinsics(fx=241.42, fy=241.42, cx=160.0, cy=120.0)


def world_to_image(points, intr):
    """(..., 3) world mm -> (..., 3) of (u px, v px, depth mm)."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise ValueError("cannot project points with z <= 0")
    out = np.empty_like(p)
    out[..., 0] = p[..., 0] * intr.fx / z + intr.cx
    out[..., 1] = p[..., 1] * intr.fy / z + intr.cy
    out[..., 2] = z
    return out


def image_to_world(uvz, intr):
    """(..., 3) of (u px, v px, depth mm) -> (..., 3) world mm."""
    q = np.asarray(uvz, dtype=np.float64)
    z = q[..., 2]
    if np.any(z <= 0):
        raise ValueError("cannot back-project with depth <= 0")
    out = np.empty_like(q)
    out[..., 0] = (q[..., 0] - intr.cx) * z / intr.fx
    out[..., 1] = (q[..., 1] - intr.cy) * z / intr.fy
    out[..., 2] = z
    return out
