"""Synthetic generator: determinism, joint counts, geometry consistency."""

import numpy as np
import pytest

from renet.camera import world_to_image
from renet.synth import SynthConfig, synth_generate


def test_same_seed_identical_output():
    a = synth_generate(3, seed=77)
    b = synth_generate(3, seed=77)
    for s1, s2 in zip(a, b):
        np.testing.assert_array_equal(s1.frame.depth, s2.frame.depth)
        np.testing.assert_array_equal(s1.annotation.joints, s2.annotation.joints)


def test_different_seeds_differ():
    a = synth_generate(1, seed=1)[0]
    b = synth_generate(1, seed=2)[0]
    assert not np.array_equal(a.frame.depth, b.frame.depth)


def test_joint_counts():
    assert synth_generate(1, joints=16, seed=0)[0].annotation.joint_count == 16
    assert synth_generate(1, joints=14, seed=0)[0].annotation.joint_count == 14
    with pytest.raises(ValueError):
        synth_generate(1, joints=4, seed=0)
    with pytest.raises(ValueError):
        synth_generate(0, seed=0)


def test_truncation_keeps_leading_joints():
    full = synth_generate(1, joints=16, seed=5)[0]
    part = synth_generate(1, joints=10, seed=5)[0]
    np.testing.assert_array_equal(part.annotation.joints, full.annotation.joints[:10])


def test_depth_at_joint_pixels_within_capsule_bound():
    for seed in (0, 1, 2):
        for s in synth_generate(10, seed=seed):
            uvz = world_to_image(s.annotation.joints, s.frame.intrinsics)
            u = np.clip(np.round(uvz[:, 0]).astype(int), 0, s.frame.width - 1)
            v = np.clip(np.round(uvz[:, 1]).astype(int), 0, s.frame.height - 1)
            d = s.frame.depth[v, u]
            assert (d > 0).all(), "every joint must project onto the hand"
            assert np.abs(d - uvz[:, 2]).max() < 25.0


def test_hand_fully_inside_frame():
    for s in synth_generate(20, seed=3):
        border = np.concatenate(
            [s.mask[0, :], s.mask[-1, :], s.mask[:, 0], s.mask[:, -1]]
        )
        assert not border.any()


def test_depth_range_sane():
    cfg = SynthConfig()
    for s in synth_generate(10, seed=4):
        vals = s.frame.depth[s.mask]
        assert vals.min() > cfg.center_z_mm[0] - 150
        assert vals.max() < cfg.center_z_mm[1] + 150


def test_noise_option_keeps_mask():
    cfg = SynthConfig(noise_mm=2.0)
    clean = synth_generate(1, seed=6)[0]
    noisy = synth_generate(1, seed=6, config=cfg)[0]
    np.testing.assert_array_equal(noisy.mask, clean.mask)
    delta = np.abs(noisy.frame.depth[noisy.mask] - clean.frame.depth[clean.mask])
    assert delta.max() <= 2.0 and delta.mean() > 0.1


def test_surface_centroid_close_to_palm():
    for s in synth_generate(5, seed=8):
        assert np.linalg.norm(s.surface_centroid - s.center) < 60.0
