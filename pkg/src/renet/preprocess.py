"""Depth-frame preprocessing: segmentation, metric cube crop, label
normalization, and patch-space augmentation.

The crop extracts the scene inside a metric cube (half-extent `cube_mm`,
default 150) centered at the hand centroid, resamples it to a square patch
and maps depth linearly to [-1, 1]; missing/background depth becomes
exactly +1. Every transform is invertible from the CropResult metadata.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, image_to_world

__all__ = [
    "DepthFrame",
    "HandAnnotation",
    "CropResult",
    "AugmentTransform",
    "AugmentRanges",
    "PreprocessConfig",
    "segment_foreground",
    "largest_component",
    "compute_centroid",
    "crop_cube",
    "normalize_joints",
    "denormalize_joints",
    "joints_in_cube",
    "augment",
    "sample_augment",
    "augment_random",
    "preprocess_frame",
]

DEFAULT_CUBE_MM = 150.0
DEFAULT_PATCH = 96


@dataclass
class DepthFrame:
    """Raw depth image; values in millimeters, 0 marks missing depth."""

    depth: np.ndarray  # (H, W) float32 mm
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float32)
        if d.ndim != 2:
            raise ValueError(f"depth must be 2-D (H, W), got shape {d.shape}")
        if np.any(d < 0):
            raise ValueError("depth values must be >= 0")
        self.depth = d

    @property
    def height(self):
        return self.depth.shape[0]

    @property
    def width(self):
        return self.depth.shape[1]


@dataclass
class HandAnnotation:
    """J hand joints, 3-D world coordinates in mm, shape (J, 3)."""

    joints: np.ndarray

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=np.float64)
        if j.ndim != 2 or j.shape[1] != 3:
            raise ValueError(f"joints must be (J, 3), got {j.shape}")
        self.joints = j

    @property
    def joint_count(self):
        return self.joints.shape[0]


@dataclass
class CropResult:
    """Normalized patch plus everything needed to invert the crop.

    `rotation_deg`/`scale` record in-plane augmentation applied on top of
    the base crop. The image-grid fields (u0, v0, du, dv) map patch pixels
    back to source-image pixels and are exact only for unrotated crops.
    """

    patch: np.ndarray  # (S, S) float32 in [-1, 1]
    centroid: np.ndarray  # (3,) world mm
    cube_mm: float = DEFAULT_CUBE_MM
    rotation_deg: float = 0.0
    scale: float = 1.0
    u0: float = 0.0
    v0: float = 0.0
    du: float = 1.0
    dv: float = 1.0

    def __post_init__(self):
        self.patch = np.asarray(self.patch, dtype=np.float32)
        self.centroid = np.asarray(self.centroid, dtype=np.float64).reshape(3)

    @property
    def out_size(self):
        return self.patch.shape[0]

    def denormalize_depth(self, values):
        """Patch value(s) in [-1, 1] -> clamped depth mm."""
        return np.asarray(values, dtype=np.float64) * self.cube_mm + self.centroid[2]


@dataclass(frozen=True)
class AugmentTransform:
    """A concrete augmentation: 3-D centroid shift (mm), cube scale factor,
    in-plane rotation (degrees)."""

    translate_mm: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    rotate_deg: float = 0.0

    def is_identity(self):
        return (
            self.scale == 1.0
            and self.rotate_deg == 0.0
            and all(t == 0.0 for t in self.translate_mm)
        )


@dataclass(frozen=True)
class AugmentRanges:
    """Uniform sampling ranges for random augmentation."""

    translate_mm: float = 10.0  # per axis, symmetric
    scale: tuple = (0.9, 1.1)
    rotate_deg: float = 180.0  # symmetric

    def __post_init__(self):
        if self.translate_mm < 0 or self.rotate_deg < 0:
            raise ValueError("augmentation ranges must be non-negative")
        if not 0 < self.scale[0] <= self.scale[1]:
            raise ValueError(f"bad scale range {self.scale}")


@dataclass
class PreprocessConfig:
    """Knobs of the frame -> patch pipeline."""

    cube_mm: float = DEFAULT_CUBE_MM
    out_size: int = DEFAULT_PATCH
    near_mm: float = 100.0
    far_mm: float = 700.0
    select_largest_component: bool = True


def segment_foreground(frame, near_mm, far_mm):
    """Mask of pixels with valid depth inside [near, far] mm."""
    if near_mm >= far_mm:
        raise ValueError(f"need near < far, got [{near_mm}, {far_mm}]")
    d = frame.depth
    return (d > 0) & (d >= near_mm) & (d <= far_mm)


def largest_component(mask):
    """Keep only the largest 8-connected component of a binary mask."""
    if not mask.any():
        return mask.copy()
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if count == 1:
        return mask.copy()
    sizes = np.bincount(labels.reshape(-1))
    sizes[0] = 0
    return labels == sizes.argmax()


def compute_centroid(frame, mask):
    """Mean of the back-projected 3-D points of the masked pixels (mm)."""
    vs, us = np.nonzero(mask)
    if vs.size == 0:
        raise ValueError("cannot compute centroid of an empty mask")
    z = frame.depth[vs, us].astype(np.float64)
    uvz = np.stack([us.astype(np.float64), vs.astype(np.float64), z], axis=1)
    pts = image_to_world(uvz, frame.intrinsics)
    return pts.mean(axis=0)


def _bilinear(img, us, vs, fill):
    """Sample img at float pixel coords (u=col, v=row); out-of-bounds -> fill."""
    h, w = img.shape
    u0 = np.floor(us)
    v0 = np.floor(vs)
    fu = us - u0
    fv = vs - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)

    def fetch(vi, ui):
        inside = (vi >= 0) & (vi < h) & (ui >= 0) & (ui < w)
        out = np.full(vi.shape, fill, dtype=np.float64)
        out[inside] = img[vi[inside], ui[inside]]
        return out

    p00 = fetch(v0, u0)
    p01 = fetch(v0, u0 + 1)
    p10 = fetch(v0 + 1, u0)
    p11 = fetch(v0 + 1, u0 + 1)
    top = p00 * (1 - fu) + p01 * fu
    bot = p10 * (1 - fu) + p11 * fu
    return top * (1 - fv) + bot * fv


def crop_cube(frame, centroid, cube_mm=DEFAULT_CUBE_MM, out=DEFAULT_PATCH):
    """Crop the metric cube around `centroid` into a normalized patch.

    Depth is clamped to [cz - cube, cz + cube] with missing pixels pushed to
    the far plane, resampled bilinearly over the cube's image-plane
    projection, then mapped linearly to [-1, 1].
    """
    c = np.asarray(centroid, dtype=np.float64).reshape(3)
    cx3, cy3, cz = c
    if cz <= 0:
        raise ValueError("degenerate projection: centroid depth must be > 0")
    intr = frame.intrinsics
    zlo, zhi = cz - cube_mm, cz + cube_mm
    umin = intr.fx * (cx3 - cube_mm) / cz + intr.cx
    umax = intr.fx * (cx3 + cube_mm) / cz + intr.cx
    vmin = intr.fy * (cy3 - cube_mm) / cz + intr.cy
    vmax = intr.fy * (cy3 + cube_mm) / cz + intr.cy

    d = frame.depth.astype(np.float64)
    clamped = np.where(d > 0, np.clip(d, zlo, zhi), zhi)

    du = (umax - umin) / out
    dv = (vmax - vmin) / out
    us = umin + (np.arange(out) + 0.5) * du
    vs = vmin + (np.arange(out) + 0.5) * dv
    uu, vv = np.meshgrid(us, vs)
    sampled = _bilinear(clamped, uu, vv, fill=zhi)
    patch = (sampled - cz) / cube_mm
    return CropResult(
        patch=patch.astype(np.float32),
        centroid=c,
        cube_mm=float(cube_mm),
        u0=float(umin),
        v0=float(vmin),
        du=float(du),
        dv=float(dv),
    )


def _rotation2(deg):
    """In-plane rotation matrix in (x-right, y-down) coordinates."""
    t = np.deg2rad(deg)
    ct, st = np.cos(t), np.sin(t)
    return np.array([[ct, -st], [st, ct]], dtype=np.float64)


def joints_in_cube(ann, crop, factor=2.0):
    """Per-joint mask: within `factor` x cube of the crop centroid on every axis."""
    off = np.abs(ann.joints - crop.centroid)
    return (off <= factor * crop.cube_mm).all(axis=1)


def normalize_joints(ann, crop):
    """World joints -> flat (3J,) normalized coords x1,y1,z1,...

    (joint - centroid) / cube per axis; the crop's in-plane rotation, if
    any, is applied to the x,y components. Joints further than 2x cube from
    the centroid are flagged with a warning, never clipped.
    """
    n = (ann.joints - crop.centroid) / crop.cube_mm
    if crop.rotation_deg:
        n = n.copy()
        n[:, :2] = n[:, :2] @ _rotation2(crop.rotation_deg).T
    if not joints_in_cube(ann, crop).all():
        warnings.warn("annotation has joints outside 2x the crop cube", stacklevel=2)
    return n.reshape(-1).astype(np.float32)


def denormalize_joints(pred, crop):
    """Exact inverse of normalize_joints: flat (3J,) -> world-mm joints."""
    n = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    if crop.rotation_deg:
        n = n.copy()
        n[:, :2] = n[:, :2] @ _rotation2(-crop.rotation_deg).T
    return HandAnnotation(n * crop.cube_mm + crop.centroid)


def sample_augment(ranges, rng):
    """Draw a concrete AugmentTransform uniformly from the given ranges."""
    t = rng.uniform(-ranges.translate_mm, ranges.translate_mm, size=3)
    s = rng.uniform(ranges.scale[0], ranges.scale[1])
    r = rng.uniform(-ranges.rotate_deg, ranges.rotate_deg)
    return AugmentTransform(translate_mm=tuple(t), scale=float(s), rotate_deg=float(r))


def augment(crop, ann, transform):
    """Apply a concrete augmentation consistently to patch and labels.

    The augmented pair is equivalent to re-cropping the same scene with the
    centroid shifted by `translate_mm`, the cube scaled by `scale`, and the
    patch rotated in-plane by `rotate_deg` about its center (patch
    resampling uses the within-cube orthographic approximation; labels are
    exact).
    """
    if transform.is_identity():
        return replace(crop, patch=crop.patch.copy()), HandAnnotation(ann.joints.copy())

    out = crop.out_size
    dx, dy, dz = transform.translate_mm
    s = float(transform.scale)
    theta = float(transform.rotate_deg)
    cube = crop.cube_mm
    half = out / 2.0

    # Output pixel grid -> source patch coords (relative to patch center).
    # The translation shift lives in world xy; rotate it into the source
    # patch frame in case this crop was already rotated.
    ii = np.arange(out) + 0.5 - half
    pu, pv = np.meshgrid(ii, ii)  # pu: +x (right), pv: +y (down)
    rot_inv = _rotation2(-theta)
    sx, sy = _rotation2(crop.rotation_deg) @ (dx, dy)
    src_u = (rot_inv[0, 0] * pu + rot_inv[0, 1] * pv) * s + half * sx / cube
    src_v = (rot_inv[1, 0] * pu + rot_inv[1, 1] * pv) * s + half * sy / cube
    sampled = _bilinear(
        crop.patch.astype(np.float64), src_u + half - 0.5, src_v + half - 0.5, fill=1.0
    )
    patch = np.clip((sampled - dz / cube) / s, -1.0, 1.0)

    new_crop = CropResult(
        patch=patch.astype(np.float32),
        centroid=crop.centroid + np.array([dx, dy, dz]),
        cube_mm=cube * s,
        rotation_deg=crop.rotation_deg + theta,
        scale=crop.scale * s,
        u0=crop.u0,
        v0=crop.v0,
        du=crop.du * s,
        dv=crop.dv * s,
    )
    return new_crop, HandAnnotation(ann.joints.copy())


def augment_random(crop, ann, ranges, rng):
    """Sample a transform from `ranges` with `rng` and apply it."""
    return augment(crop, ann, sample_augment(ranges, rng))


def preprocess_frame(frame, cfg=None, centroid=None):
    """Full frame -> CropResult pipeline: band segmentation, optional
    largest-component selection, centroid, cube crop."""
    cfg = cfg or PreprocessConfig()
    if centroid is None:
        mask = segment_foreground(frame, cfg.near_mm, cfg.far_mm)
        if cfg.select_largest_component:
            mask = largest_component(mask)
        centroid = compute_centroid(frame, mask)
    return crop_cube(frame, centroid, cfg.cube_mm, cfg.out_size)
