"""Dataset ingestion: text manifests, the binary sample cache, splits,
synthetic-dataset export, and the ICVL-style label-file adapter.

Manifest: UTF-8 text, `#key=value` header lines (name, joints,
intrinsics=fx,fy,cx,cy, split, optional exclude=i,j,...), then one sample
per line: `<frame-ref> <3J floats>` with world-mm joint coordinates.

Cache: magic "RENC", u32 version, u64 record count, then fixed-size
little-endian records: 96*96 f32 patch, 3J f32 normalized labels, 7 f32
transform (centroid xyz, cube mm, rotation deg, scale, reserved). The
joint count is recovered from the record size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, image_to_world
from .preprocess import (
    CropResult,
    DepthFrame,
    HandAnnotation,
    PreprocessConfig,
    augment_random,
    denormalize_joints,
    normalize_joints,
    preprocess_frame,
)

__all__ = [
    "DatasetManifest",
    "ManifestError",
    "SampleCache",
    "CacheError",
    "TrainingSet",
    "load_manifest",
    "save_manifest",
    "build_cache",
    "split",
    "save_synth_dataset",
    "convert_icvl",
    "load_depth",
    "save_depth",
    "CACHE_MAGIC",
    "PATCH_PIXELS",
]

CACHE_MAGIC = b"RENC"
CACHE_VERSION = 1
PATCH_SIDE = 96
PATCH_PIXELS = PATCH_SIDE * PATCH_SIDE
TRANSFORM_FLOATS = 7


class ManifestError(ValueError):
    """Malformed manifest content; the message names the offending line."""


class CacheError(ValueError):
    """Malformed or inconsistent cache file."""


@dataclass
class DatasetManifest:
    name: str
    joints: int
    intrinsics: CameraIntrinsics
    entries: list  # of (frame_ref: str, joints ndarray (J, 3))
    split: str = "train"
    base_dir: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.entries)

    def annotation(self, i):
        return HandAnnotation(self.entries[i][1])

    def frame_path(self, i):
        return Path(self.base_dir) / self.entries[i][0]

    def load_frame(self, i):
        return DepthFrame(depth=load_depth(self.frame_path(i)), intrinsics=self.intrinsics)


def load_depth(path):
    """Read a depth image in mm: .npy (float) or 16-bit .png."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float32)
    if path.suffix == ".png":
        from PIL import Image

        return np.asarray(Image.open(path), dtype=np.float32)
    raise ValueError(f"unsupported depth format: {path.name} (use .npy or .png)")


def save_depth(path, depth):
    path = Path(path)
    if path.suffix != ".npy":
        raise ValueError("depth frames are saved as .npy")
    np.save(path, np.asarray(depth, dtype=np.float32))


def load_manifest(path, exclude=()):
    """Parse and validate a manifest file.

    `exclude` (plus any `#exclude=` header) drops samples by 0-based
    ordinal, counted before exclusion.
    """
    path = Path(path)
    header = {}
    parsed = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "=" not in line:
                    raise ManifestError(f"{path.name}:{lineno}: header without '='")
                key, value = line[1:].split("=", 1)
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            ref, numbers = parts[0], parts[1:]
            try:
                values = np.array([float(x) for x in numbers], dtype=np.float64)
            except ValueError as exc:
                raise ManifestError(f"{path.name}:{lineno}: non-numeric annotation") from exc
            parsed.append((ref, values, lineno))

    excluded = set(exclude)
    if "exclude" in header:
        excluded |= {int(x) for x in header["exclude"].split(",") if x.strip()}
    entries = [e for i, e in enumerate(parsed) if i not in excluded]
    if not entries:
        raise ManifestError(f"{path.name}: empty dataset (no sample lines)")

    joints = int(header.get("joints", 0))
    if joints <= 0:
        first = entries[0][1]
        if first.size % 3:
            raise ManifestError(f"{path.name}: cannot infer joint count from {first.size} values")
        joints = first.size // 3
    expected = 3 * joints
    checked = []
    for ref, values, lineno in entries:
        if values.size != expected:
            raise ManifestError(
                f"{path.name}:{lineno}: expected {expected} numbers, got {values.size}"
            )
        checked.append((ref, values.reshape(joints, 3)))

    if "intrinsics" in header:
        fx, fy, cx, cy = (float(x) for x in header["intrinsics"].split(","))
        intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
    else:
        raise ManifestError(f"{path.name}: missing #intrinsics=fx,fy,cx,cy header")

    return DatasetManifest(
        name=header.get("name", path.stem),
        joints=joints,
        intrinsics=intr,
        entries=checked,
        split=header.get("split", "train"),
        base_dir=path.parent,
    )


def save_manifest(manifest, path):
    path = Path(path)
    intr = manifest.intrinsics
    lines = [
        f"#name={manifest.name}",
        f"#joints={manifest.joints}",
        f"#intrinsics={intr.fx},{intr.fy},{intr.cx},{intr.cy}",
        f"#split={manifest.split}",
    ]
    for ref, joints in manifest.entries:
        nums = " ".join(repr(float(v)) for v in np.asarray(joints).reshape(-1))
        lines.append(f"{ref} {nums}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def split(manifest, fractions, seed=0):
    """Seed-deterministic disjoint, exhaustive split by fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fr.sum()}")
    n = len(manifest.entries)
    order = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n]))).permutation(n)
    bounds = np.floor(np.cumsum(fr) * n + 0.5).astype(int)
    bounds[-1] = n
    parts = []
    start = 0
    tags = ["train", "test", "val"]
    for k, stop in enumerate(bounds):
        idx = sorted(order[start:stop])
        parts.append(
            replace(
                manifest,
                name=f"{manifest.name}-part{k}",
                entries=[manifest.entries[i] for i in idx],
                split=tags[k] if k < len(tags) else f"part{k}",
            )
        )
        start = stop
    return parts


# -- cache -------------------------------------------------------------------


class SampleCache:
    """Read-only view of a cache file; records decoded on access."""

    def __init__(self, path):
        self.path = Path(path)
        blob_size = self.path.stat().st_size
        with open(self.path, "rb") as f:
            head = f.read(16)
        if len(head) < 16 or head[:4] != CACHE_MAGIC:
            raise CacheError(f"{self.path.name}: bad magic, not a sample cache")
        (version,) = struct.unpack_from("<I", head, 4)
        if version != CACHE_VERSION:
            raise CacheError(f"unsupported cache version {version}")
        (count,) = struct.unpack_from("<Q", head, 8)
        if count == 0:
            raise CacheError(f"{self.path.name}: empty cache")
        payload = blob_size - 16
        if payload % (4 * count):
            raise CacheError(f"{self.path.name}: size inconsistent with {count} records")
        record_floats = payload // (4 * count)
        label_floats = record_floats - PATCH_PIXELS - TRANSFORM_FLOATS
        if label_floats <= 0 or label_floats % 3:
            raise CacheError(f"{self.path.name}: record size does not decode to 3J labels")
        self.count = count
        self.joints = label_floats // 3
        self._records = np.memmap(
            self.path, dtype="<f4", mode="r", offset=16, shape=(count, record_floats)
        )

    def __len__(self):
        return self.count

    def patch(self, i):
        return np.asarray(self._records[i, :PATCH_PIXELS]).reshape(PATCH_SIDE, PATCH_SIDE)

    def labels(self, i):
        return np.asarray(self._records[i, PATCH_PIXELS : PATCH_PIXELS + 3 * self.joints])

    def transform(self, i):
        return np.asarray(self._records[i, PATCH_PIXELS + 3 * self.joints :])

    def crop(self, i):
        t = self.transform(i).astype(np.float64)
        return CropResult(
            patch=self.patch(i),
            centroid=t[:3],
            cube_mm=float(t[3]),
            rotation_deg=float(t[4]),
            scale=float(t[5]),
        )

    def annotation(self, i):
        return denormalize_joints(self.labels(i), self.crop(i))

    def all_patches(self):
        return np.asarray(self._records[:, :PATCH_PIXELS]).reshape(-1, PATCH_SIDE, PATCH_SIDE)

    def all_labels(self):
        return np.asarray(self._records[:, PATCH_PIXELS : PATCH_PIXELS + 3 * self.joints])

    def all_transforms(self):
        return np.asarray(self._records[:, PATCH_PIXELS + 3 * self.joints :])


def encode_record(crop, labels):
    if crop.patch.shape != (PATCH_SIDE, PATCH_SIDE):
        raise CacheError(f"cache patches must be {PATCH_SIDE}x{PATCH_SIDE}")
    transform = np.array(
        [
            crop.centroid[0],
            crop.centroid[1],
            crop.centroid[2],
            crop.cube_mm,
            crop.rotation_deg,
            crop.scale,
            0.0,
        ],
        dtype="<f4",
    )
    parts = [
        np.ascontiguousarray(crop.patch, dtype="<f4").tobytes(),
        np.ascontiguousarray(labels, dtype="<f4").tobytes(),
        transform.tobytes(),
    ]
    return b"".join(parts)


def build_cache(manifest, prep_cfg, out_path, frames=None, skip_errors=False, log=None):
    """Preprocess every manifest sample once into a cache file.

    Deterministic for a fixed manifest + config (no rng anywhere in the
    path). `frames` may supply in-memory DepthFrames aligned with the
    manifest entries, bypassing file reads. Unreadable/unsegmentable
    samples are fatal unless `skip_errors`.
    """
    prep_cfg = prep_cfg or PreprocessConfig()
    if prep_cfg.out_size != PATCH_SIDE:
        raise CacheError(f"cache format is fixed at {PATCH_SIDE}x{PATCH_SIDE} patches")
    out_path = Path(out_path)
    records = []
    for i in range(len(manifest)):
        try:
            frame = frames[i] if frames is not None else manifest.load_frame(i)
            crop = preprocess_frame(frame, prep_cfg)
            labels = normalize_joints(manifest.annotation(i), crop)
        except Exception as exc:
            if skip_errors:
                if log:
                    log(f"skipping sample {i}: {exc}")
                continue
            raise
        records.append(encode_record(crop, labels))
    if not records:
        raise CacheError("no samples survived preprocessing")
    header = CACHE_MAGIC + struct.pack("<IQ", CACHE_VERSION, len(records))
    out_path.write_bytes(header + b"".join(records))
    return SampleCache(out_path)


# -- training set -------------------------------------------------------------


class TrainingSet:
    """Patches + normalized labels (+ crop transforms when augmentation is
    wanted), with per-sample reproducible augmentation."""

    def __init__(self, patches, labels, transforms=None):
        self.patches = np.asarray(patches, dtype=np.float32)
        self.labels = np.asarray(labels, dtype=np.float32)
        self.transforms = None if transforms is None else np.asarray(transforms, np.float64)
        if len(self.patches) != len(self.labels):
            raise ValueError("patch/label count mismatch")

    @classmethod
    def from_cache(cls, cache):
        return cls(cache.all_patches(), cache.all_labels(), cache.all_transforms())

    @classmethod
    def from_crops(cls, crops, anns):
        patches = np.stack([c.patch for c in crops])
        labels = np.stack([normalize_joints(a, c) for c, a in zip(crops, anns)])
        transforms = np.stack(
            [
                np.array([*c.centroid, c.cube_mm, c.rotation_deg, c.scale, 0.0])
                for c in crops
            ]
        )
        return cls(patches, labels, transforms)

    def __len__(self):
        return len(self.patches)

    @property
    def label_dim(self):
        return self.labels.shape[1]

    def crop(self, i):
        if self.transforms is None:
            raise ValueError("this training set has no crop transforms")
        t = self.transforms[i]
        return CropResult(
            patch=self.patches[i],
            centroid=t[:3],
            cube_mm=float(t[3]),
            rotation_deg=float(t[4]),
            scale=float(t[5]),
        )

    def sample(self, i, aug_ranges=None, rng=None):
        """(patch, label); augmented consistently when ranges are given."""
        if aug_ranges is None:
            return self.patches[i], self.labels[i]
        crop = self.crop(i)
        ann = denormalize_joints(self.labels[i], crop)
        crop2, ann2 = augment_random(crop, ann, aug_ranges, rng)
        return crop2.patch, normalize_joints(ann2, crop2)


# -- converters ---------------------------------------------------------------


def save_synth_dataset(samples, out_dir, name="synth", split_tag="train", intrinsics=None):
    """Write synthetic samples as .npy frames plus a manifest; returns the
    manifest path."""
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        ref = f"frames/{i:06d}.npy"
        save_depth(out_dir / ref, s.frame.depth)
        entries.append((ref, s.annotation.joints))
    manifest = DatasetManifest(
        name=name,
        joints=samples[0].annotation.joint_count,
        intrinsics=intrinsics or samples[0].frame.intrinsics,
        entries=entries,
        split=split_tag,
        base_dir=out_dir,
    )
    path = out_dir / "manifest.txt"
    save_manifest(manifest, path)
    return path


def convert_icvl(label_path, intrinsics, images_root=".", name="icvl", out_path=None):
    """Adapt an ICVL-style label file (one line: image path then u,v,depth
    triples in image coordinates) into a canonical world-mm manifest."""
    label_path = Path(label_path)
    entries = []
    with open(label_path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            try:
                uvz = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ManifestError(f"{label_path.name}:{lineno}: non-numeric label") from exc
            if uvz.size == 0 or uvz.size % 3:
                raise ManifestError(
                    f"{label_path.name}:{lineno}: expected u,v,depth triples, got {uvz.size} values"
                )
            world = image_to_world(uvz.reshape(-1, 3), intrinsics)
            entries.append((parts[0], world))
    if not entries:
        raise ManifestError(f"{label_path.name}: empty label file")
    joints = entries[0][1].shape[0]
    for (ref, w) in entries:
        if w.shape[0] != joints:
            raise ManifestError(f"{label_path.name}: inconsistent joint count at {ref}")
    manifest = DatasetManifest(
        name=name,
        joints=joints,
        intrinsics=intrinsics,
        entries=entries,
        base_dir=Path(images_root),
    )
    if out_path is not None:
        save_manifest(manifest, out_path)
    return manifest
