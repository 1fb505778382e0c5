"""Manifests, cache round trips, splits, training-set sampling, adapters."""

import numpy as np
import pytest

from renet.camera import CameraIntrinsics, world_to_image
from renet.data import (
    CacheError,
    ManifestError,
    SampleCache,
    TrainingSet,
    build_cache,
    convert_icvl,
    load_manifest,
    save_depth,
    save_manifest,
    save_synth_dataset,
    split,
)
from renet.preprocess import PreprocessConfig, denormalize_joints, normalize_joints, preprocess_frame
from renet.synth import synth_generate

INTR_LINE = "#intrinsics=241.42,241.42,160.0,120.0"


def write_manifest(tmp_path, lines, name="m.txt"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n")
    return path


def synth_dataset(tmp_path, count=4, seed=0, joints=16):
    samples = synth_generate(count, joints=joints, seed=seed)
    manifest_path = save_synth_dataset(samples, tmp_path / "ds", name="t")
    return load_manifest(manifest_path), samples


# -- manifest parsing ---------------------------------------------------------


def test_manifest_two_lines_j16(tmp_path):
    nums = " ".join(["1.0"] * 48)
    path = write_manifest(
        tmp_path, ["#name=two", "#joints=16", INTR_LINE, f"a.npy {nums}", f"b.npy {nums}"]
    )
    m = load_manifest(path)
    assert len(m) == 2 and m.joints == 16
    assert m.entries[0][1].shape == (16, 3)


def test_manifest_empty_rejected(tmp_path):
    path = write_manifest(tmp_path, ["#name=e", "#joints=16", INTR_LINE])
    with pytest.raises(ManifestError, match="empty"):
        load_manifest(path)


def test_manifest_wrong_count_names_line(tmp_path):
    nums47 = " ".join(["1.0"] * 47)
    path = write_manifest(
        tmp_path, ["#joints=16", INTR_LINE, f"a.npy {nums47}"]
    )
    with pytest.raises(ManifestError, match=":3"):
        load_manifest(path)


def test_manifest_non_numeric_names_line(tmp_path):
    path = write_manifest(tmp_path, ["#joints=16", INTR_LINE, "a.npy 1.0 oops 3.0"])
    with pytest.raises(ManifestError, match=":3"):
        load_manifest(path)


def test_manifest_missing_intrinsics(tmp_path):
    path = write_manifest(tmp_path, ["#joints=5", "a.npy " + " ".join(["0"] * 15)])
    with pytest.raises(ManifestError, match="intrinsics"):
        load_manifest(path)


def test_manifest_exclusion(tmp_path):
    nums = " ".join(["1.0"] * 15)
    lines = ["#joints=5", INTR_LINE, "#exclude=1"] + [f"f{i}.npy {nums}" for i in range(4)]
    m = load_manifest(write_manifest(tmp_path, lines))
    assert [e[0] for e in m.entries] == ["f0.npy", "f2.npy", "f3.npy"]
    m2 = load_manifest(write_manifest(tmp_path, lines), exclude={0})
    assert [e[0] for e in m2.entries] == ["f2.npy", "f3.npy"]


def test_manifest_save_load_round_trip(tmp_path):
    m, _ = synth_dataset(tmp_path, count=3, seed=1)
    path2 = tmp_path / "ds" / "again.txt"
    save_manifest(m, path2)
    m2 = load_manifest(path2)
    assert m2.joints == m.joints and len(m2) == len(m)
    for (r1, j1), (r2, j2) in zip(m.entries, m2.entries):
        assert r1 == r2
        np.testing.assert_array_equal(j1, j2)
    assert m2.intrinsics == m.intrinsics


def test_manifest_frame_loading(tmp_path):
    m, samples = synth_dataset(tmp_path, count=2, seed=2)
    f = m.load_frame(0)
    np.testing.assert_array_equal(f.depth, samples[0].frame.depth)


# -- cache ---------------------------------------------------------------------


def test_cache_build_deterministic_and_counted(tmp_path):
    m, _ = synth_dataset(tmp_path, count=4, seed=3)
    cfg = PreprocessConfig()
    c1 = build_cache(m, cfg, tmp_path / "a.renc")
    build_cache(m, cfg, tmp_path / "b.renc")
    assert (tmp_path / "a.renc").read_bytes() == (tmp_path / "b.renc").read_bytes()
    assert len(c1) == 4 and c1.joints == 16


def test_cache_header_and_magic(tmp_path):
    m, _ = synth_dataset(tmp_path, count=2, seed=4)
    build_cache(m, PreprocessConfig(), tmp_path / "c.renc")
    blob = (tmp_path / "c.renc").read_bytes()
    assert blob[:4] == b"RENC"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:16], "little") == 2
    record = 96 * 96 + 3 * 16 + 7
    assert len(blob) == 16 + 2 * record * 4


def test_cache_random_record_decodes_to_direct_preprocessing(tmp_path):
    m, samples = synth_dataset(tmp_path, count=5, seed=5)
    cfg = PreprocessConfig()
    cache = build_cache(m, cfg, tmp_path / "d.renc")
    i = 3
    crop = preprocess_frame(samples[i].frame, cfg)
    labels = normalize_joints(samples[i].annotation, crop)
    np.testing.assert_allclose(cache.labels(i), labels, atol=1e-3)
    np.testing.assert_allclose(cache.patch(i), crop.patch, atol=1e-6)
    np.testing.assert_allclose(cache.crop(i).centroid, crop.centroid, atol=1e-3)
    # world joints recoverable through the stored transform
    back = cache.annotation(i)
    assert np.abs(back.joints - samples[i].annotation.joints).max() < 0.05


def test_cache_rejects_bad_magic(tmp_path):
    p = tmp_path / "x.renc"
    p.write_bytes(b"WHAT" + b"\x00" * 20)
    with pytest.raises(CacheError):
        SampleCache(p)


def test_cache_rejects_wrong_patch_size(tmp_path):
    m, _ = synth_dataset(tmp_path, count=2, seed=6)
    with pytest.raises(CacheError):
        build_cache(m, PreprocessConfig(out_size=64), tmp_path / "bad.renc")


# -- split -----------------------------------------------------------------------


def test_split_all_train(tmp_path):
    m, _ = synth_dataset(tmp_path, count=4, seed=7)
    parts = split(m, (1.0, 0.0), seed=0)
    assert len(parts[0]) == 4 and len(parts[1]) == 0


def test_split_80_20_disjoint_exhaustive(tmp_path):
    nums = " ".join(["1.0"] * 15)
    lines = ["#joints=5", INTR_LINE] + [f"f{i}.npy {nums}" for i in range(100)]
    m = load_manifest(write_manifest(tmp_path, lines))
    a, b = split(m, (0.8, 0.2), seed=3)
    assert len(a) == 80 and len(b) == 20
    refs_a = {r for r, _ in a.entries}
    refs_b = {r for r, _ in b.entries}
    assert not refs_a & refs_b
    assert refs_a | refs_b == {f"f{i}.npy" for i in range(100)}
    # deterministic
    a2, b2 = split(m, (0.8, 0.2), seed=3)
    assert [r for r, _ in a2.entries] == [r for r, _ in a.entries]


def test_split_fraction_validation(tmp_path):
    m, _ = synth_dataset(tmp_path, count=2, seed=8)
    with pytest.raises(ValueError):
        split(m, (0.5, 0.4), seed=0)


# -- training set -----------------------------------------------------------------


def test_training_set_from_cache_sampling(tmp_path):
    m, _ = synth_dataset(tmp_path, count=3, seed=9)
    cache = build_cache(m, PreprocessConfig(), tmp_path / "t.renc")
    ts = TrainingSet.from_cache(cache)
    assert len(ts) == 3 and ts.label_dim == 48
    p, l = ts.sample(1)
    np.testing.assert_array_equal(p, cache.patch(1))
    np.testing.assert_array_equal(l, cache.labels(1))


def test_training_set_augmented_sample_reproducible(tmp_path):
    m, _ = synth_dataset(tmp_path, count=2, seed=10)
    cache = build_cache(m, PreprocessConfig(), tmp_path / "u.renc")
    ts = TrainingSet.from_cache(cache)
    from renet.preprocess import AugmentRanges

    def draw():
        rng = np.random.Generator(np.random.Philox(42))
        return ts.sample(0, AugmentRanges(), rng)

    p1, l1 = draw()
    p2, l2 = draw()
    np.testing.assert_array_equal(p1, p2)
    np.testing.assert_array_equal(l1, l2)
    assert p1.min() >= -1.0 and p1.max() <= 1.0


def test_training_set_augment_requires_transforms():
    ts = TrainingSet(np.zeros((2, 96, 96), np.float32), np.zeros((2, 48), np.float32))
    from renet.preprocess import AugmentRanges

    with pytest.raises(ValueError):
        ts.crop(0)


# -- adapters ----------------------------------------------------------------------


def test_convert_icvl_round_trips_world_coordinates(tmp_path):
    intr = CameraIntrinsics(fx=241.42, fy=241.42, cx=160.0, cy=120.0)
    rng = np.random.default_rng(11)
    world = rng.uniform(-100, 100, (2, 16, 3))
    world[..., 2] = rng.uniform(250, 500, (2, 16))
    lines = []
    for i in range(2):
        uvz = world_to_image(world[i], intr).reshape(-1)
        lines.append(f"img/{i}.png " + " ".join(f"{v:.6f}" for v in uvz))
    label_file = tmp_path / "labels.txt"
    label_file.write_text("\n".join(lines) + "\n")
    m = convert_icvl(label_file, intr, images_root=tmp_path, name="icvl-test")
    assert m.joints == 16 and len(m) == 2
    np.testing.assert_allclose(m.entries[0][1], world[0], atol=1e-4)
    out = tmp_path / "converted.txt"
    convert_icvl(label_file, intr, images_root=tmp_path, out_path=out)
    again = load_manifest(out)
    np.testing.assert_allclose(again.entries[1][1], world[1], atol=1e-4)


def test_convert_icvl_validation(tmp_path):
    intr = CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
    bad = tmp_path / "bad.txt"
    bad.write_text("img.png 1 2\n")
    with pytest.raises(ManifestError):
        convert_icvl(bad, intr)


def test_png_depth_round_trip(tmp_path):
    from PIL import Image

    depth = np.random.default_rng(12).integers(0, 1000, (24, 32)).astype(np.uint16)
    p = tmp_path / "d.png"
    Image.fromarray(depth).save(p)
    from renet.data import load_depth

    loaded = load_depth(p)
    np.testing.assert_array_equal(loaded, depth.astype(np.float32))
