"""Procedural depth-hand generator.

Renders a palm ellipsoid plus five articulated capsule fingers through the
pinhole model by exact per-pixel ray casting, so every desk-scale
experiment runs without real captures. The annotation is the true joint
skeleton used by the renderer; the generator also reports its own clean
foreground mask and surface centroid for ground-truth checks.

Canonical skeleton, 16 joints: palm center, then per finger
(thumb, index, middle, ring, pinky) the knuckle, mid and tip joints.
Pose ranges are deliberately conservative (limited tilt and curl) so no
primitive occludes another finger's joints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import ICVL_INTRINSICS, world_to_image
from .preprocess import DepthFrame, HandAnnotation

__all__ = ["SynthConfig", "SynthSample", "synth_generate", "CANONICAL_JOINTS"]

CANONICAL_JOINTS = 16

# Per finger: attachment point on the palm (fractions of the semi-axes),
# spread angle from the finger axis (deg), segment lengths (mm), radius,
# curl scale (the short sideways thumb tolerates less flexion before its
# tip hides behind the proximal segment).
_FINGERS = (
    ("thumb", (-0.92, 0.15), -58.0, (30.0, 22.0), 8.0, 0.55),
    ("index", (-0.52, 0.80), -17.0, (36.0, 26.0), 7.0, 1.0),
    ("middle", (-0.17, 0.90), -2.0, (40.0, 28.0), 7.0, 1.0),
    ("ring", (0.18, 0.87), 12.0, (37.0, 26.0), 6.5, 1.0),
    ("pinky", (0.54, 0.76), 27.0, (28.0, 20.0), 6.0, 1.0),
)


@dataclass(frozen=True)
class SynthConfig:
    width: int = 320
    height: int = 240
    center_x_mm: tuple = (-50.0, 50.0)
    center_y_mm: tuple = (-35.0, 35.0)
    center_z_mm: tuple = (350.0, 450.0)
    palm_semi_mm: tuple = ((28.0, 38.0), (26.0, 34.0), (11.0, 14.0))
    roll_deg: float = 25.0
    tilt_deg: float = 8.0
    # Per-hinge flexion range; capped so no tip ever hides behind its own
    # proximal segment or a neighboring finger (keeps rendered depth at
    # every joint's pixel within the capsule-radius bound of the joint).
    curl_deg: tuple = (3.0, 13.0)
    length_jitter: float = 0.12
    noise_mm: float = 0.0


@dataclass
class SynthSample:
    frame: DepthFrame
    annotation: HandAnnotation
    mask: np.ndarray = field(repr=False)  # clean foreground from the renderer
    surface_centroid: np.ndarray = None  # mean back-projected surface point

    @property
    def center(self):
        return self.annotation.joints[0]


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _hand_geometry(rng, cfg):
    """Sample one hand: palm ellipsoid + capsule list + 16 world joints."""
    center = np.array(
        [
            rng.uniform(*cfg.center_x_mm),
            rng.uniform(*cfg.center_y_mm),
            rng.uniform(*cfg.center_z_mm),
        ]
    )
    semi = np.array([rng.uniform(*r) for r in cfg.palm_semi_mm])
    roll = np.deg2rad(rng.uniform(-cfg.roll_deg, cfg.roll_deg))
    tx = np.deg2rad(rng.uniform(-cfg.tilt_deg, cfg.tilt_deg))
    ty = np.deg2rad(rng.uniform(-cfg.tilt_deg, cfg.tilt_deg))
    rot = _rot_z(roll) @ _rot_x(tx) @ _rot_y(ty)  # hand frame -> camera frame

    joints = [center]
    capsules = []  # (A, B, radius)
    for _, (ax, ay), spread, lengths, radius, curl_scale in _FINGERS:
        base_local = np.array([ax * semi[0], ay * semi[1], 0.0])
        # Finger direction in the palm plane, then curl away from the camera
        # (toward +z in the hand frame; the palm normal faces the camera).
        direction = _rot_z(np.deg2rad(spread)) @ np.array([0.0, 1.0, 0.0])
        side = np.cross(direction, np.array([0.0, 0.0, 1.0]))  # curl hinge axis
        curl1 = np.deg2rad(rng.uniform(*cfg.curl_deg)) * curl_scale
        curl2 = np.deg2rad(rng.uniform(*cfg.curl_deg)) * curl_scale
        jitter = 1.0 + rng.uniform(-cfg.length_jitter, cfg.length_jitter, size=2)

        def bend(vec, angle):
            c, s = np.cos(angle), np.sin(angle)
            return vec * c + np.cross(side, vec) * s + side * (side @ vec) * (1 - c)

        d1 = bend(direction, curl1)
        d2 = bend(direction, curl1 + curl2)
        base = base_local
        mid = base + d1 * lengths[0] * jitter[0]
        tip = mid + d2 * lengths[1] * jitter[1]
        base_w, mid_w, tip_w = (center + rot @ v for v in (base, mid, tip))
        joints += [base_w, mid_w, tip_w]
        capsules.append((center + rot @ (base_local * 0.35), base_w, radius * 0.85))
        capsules.append((base_w, mid_w, radius))
        capsules.append((mid_w, tip_w, radius * 0.9))
    return center, rot, semi, capsules, np.array(joints)


def _ray_grid(cfg, intr, u0, u1, v0, v1):
    us = np.arange(u0, u1, dtype=np.float64)
    vs = np.arange(v0, v1, dtype=np.float64)
    uu, vv = np.meshgrid(us, vs)
    dx = (uu - intr.cx) / intr.fx
    dy = (vv - intr.cy) / intr.fy
    return dx, dy  # dz == 1, so the ray parameter equals depth


def _ellipsoid_depth(dx, dy, center, rot, semi):
    """Nearest positive ray parameter for the palm ellipsoid, inf on miss."""
    d = np.stack([dx, dy, np.ones_like(dx)], axis=-1) @ rot  # R^T applied rowwise
    d = d / semi
    o = (-center @ rot) / semi
    a = np.einsum("...k,...k->...", d, d)
    b = 2.0 * (d @ o)
    c = o @ o - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    t = np.full(dx.shape, np.inf)
    sq = np.sqrt(np.where(hit, disc, 0.0))
    tt = (-b - sq) / (2.0 * a)
    t[hit & (tt > 0)] = tt[hit & (tt > 0)]
    return t


def _capsule_depth(dx, dy, a_pt, b_pt, radius):
    """Nearest positive ray parameter for a capsule (cylinder + end caps)."""
    d = np.stack([dx, dy, np.ones_like(dx)], axis=-1)
    axis = b_pt - a_pt
    length = np.linalg.norm(axis)
    axis = axis / length
    m = -a_pt  # ray origin is the camera center

    d_par = d @ axis
    m_par = m @ axis
    n_perp = d - d_par[..., None] * axis
    m_perp = m - m_par * axis

    a = np.einsum("...k,...k->...", n_perp, n_perp)
    b = 2.0 * (n_perp @ m_perp)
    c = m_perp @ m_perp - radius * radius
    disc = b * b - 4.0 * a * c
    ok = (disc >= 0) & (a > 1e-12)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_cyl = np.where(ok, (-b - sq) / np.where(ok, 2.0 * a, 1.0), np.inf)
    s = t_cyl * d_par + m_par  # position along the axis at the hit
    t_cyl = np.where((t_cyl > 0) & (s >= 0) & (s <= length), t_cyl, np.inf)

    def sphere(center):
        mc = -center
        bb = 2.0 * (d @ mc)
        cc = mc @ mc - radius * radius
        dd = bb * bb - 4.0 * a_full * cc
        okk = dd >= 0
        sqq = np.sqrt(np.where(okk, dd, 0.0))
        ts = np.where(okk, (-bb - sqq) / (2.0 * a_full), np.inf)
        return np.where(ts > 0, ts, np.inf)

    a_full = np.einsum("...k,...k->...", d, d)
    return np.minimum(t_cyl, np.minimum(sphere(a_pt), sphere(b_pt)))


def _project_bbox(points, radius, intr, width, height, margin=2):
    """Conservative pixel bbox of spheres (point, radius) after projection."""
    us, vs = [], []
    for p in points:
        for dz in (-radius, radius):
            z = max(p[2] + dz, 1.0)
            for dr in (-radius, radius):
                us.append(intr.fx * (p[0] + dr) / z + intr.cx)
                vs.append(intr.fy * (p[1] + dr) / z + intr.cy)
    u0 = max(int(np.floor(min(us))) - margin, 0)
    u1 = min(int(np.ceil(max(us))) + margin, width)
    v0 = max(int(np.floor(min(vs))) - margin, 0)
    v1 = min(int(np.ceil(max(vs))) + margin, height)
    return u0, u1, v0, v1


def render_hand(center, rot, semi, capsules, cfg, intr):
    """Depth-render the hand; returns (depth f32 HxW mm, clean mask).

    Each primitive is ray-cast only inside its own projected bbox.
    """
    depth = np.full((cfg.height, cfg.width), np.inf)

    def blend(bbox, solver):
        u0, u1, v0, v1 = bbox
        if u1 <= u0 or v1 <= v0:
            return
        dx, dy = _ray_grid(cfg, intr, u0, u1, v0, v1)
        region = depth[v0:v1, u0:u1]
        np.minimum(region, solver(dx, dy), out=region)

    blend(
        _project_bbox([center], float(semi.max()), intr, cfg.width, cfg.height),
        lambda dx, dy: _ellipsoid_depth(dx, dy, center, rot, semi),
    )
    for a_pt, b_pt, radius in capsules:
        blend(
            _project_bbox([a_pt, b_pt], radius, intr, cfg.width, cfg.height),
            lambda dx, dy, a=a_pt, b=b_pt, r=radius: _capsule_depth(dx, dy, a, b, r),
        )
    np.nan_to_num(depth, copy=False, posinf=0.0)
    return depth.astype(np.float32), depth > 0


def synth_generate(count, joints=CANONICAL_JOINTS, seed=0, intrinsics=None, config=None):
    """Generate `count` annotated depth frames; deterministic in `seed`.

    `joints` <= 16 truncates the canonical skeleton (palm first, then
    fingers in order), matching reference-dataset joint counts.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 5 <= joints <= CANONICAL_JOINTS:
        raise ValueError(f"joints must be in [5, {CANONICAL_JOINTS}], got {joints}")
    cfg = config or SynthConfig()
    intr = intrinsics or ICVL_INTRINSICS
    samples = []
    for i in range(count):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        center, rot, semi, capsules, all_joints = _hand_geometry(rng, cfg)
        depth, mask = render_hand(center, rot, semi, capsules, cfg, intr)
        if cfg.noise_mm > 0:
            noisy = depth + rng.uniform(
                -cfg.noise_mm, cfg.noise_mm, size=depth.shape
            ).astype(np.float32)
            depth = np.where(mask, np.maximum(noisy, 1.0), 0.0).astype(np.float32)
        frame = DepthFrame(depth=depth, intrinsics=intr)
        vs, us = np.nonzero(mask)
        z = depth[vs, us].astype(np.float64)
        surf = np.stack(
            [(us - intr.cx) * z / intr.fx, (vs - intr.cy) * z / intr.fy, z], axis=1
        ).mean(axis=0)
        samples.append(
            SynthSample(
                frame=frame,
                annotation=HandAnnotation(all_joints[:joints]),
                mask=mask,
                surface_centroid=surf,
            )
        )
    return samples
