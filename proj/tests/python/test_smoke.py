import math

import numpy as np
import pytest

import cyclediff as cd


def test_scene_shapes_and_ranges():
    rgb, depth = cd.scene("two-plane", 32, seed=7)
    assert rgb.shape == (3, 32, 32)
    assert depth.shape == (32, 32)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0
    assert np.isfinite(depth).all() and (depth > 0).all()
    # Two-plane depth histogram has exactly two values.
    assert len(np.unique(depth)) == 2


def test_identity_warp_is_exact():
    rgb, depth = cd.scene("two-plane", 32, seed=1)
    out_rgb, out_depth, mask = cd.forward_warp(rgb, depth, np.eye(4))
    assert (mask == 1).all()
    np.testing.assert_array_equal(out_rgb, rgb)
    np.testing.assert_array_equal(out_depth, depth)


def test_cycle_pair_has_holes_and_matches_target():
    rgb, depth = cd.scene("two-plane", 32, seed=3)
    cond, mask, target = cd.cycle_pair(rgb, depth, seed=11)
    np.testing.assert_array_equal(target, rgb)
    frac = 1.0 - mask.mean()
    assert 0.0 < frac < 0.5
    # Known condition pixels agree with the source frame up to the nearest
    # pixel resampling of the round trip; most survive bit for bit.
    known = mask.astype(bool)
    err = np.abs(cond[:, known] - rgb[:, known]).max(axis=0)
    assert (err == 0.0).mean() > 0.5
    assert np.quantile(err, 0.95) < 0.05
    # Hole pixels are zeroed.
    assert (cond[:, ~known] == 0.0).all()


def test_schedule_and_q_sample():
    bars = cd.alpha_bars(2, 0.1, 0.2)
    assert bars == pytest.approx([0.9, 0.72], abs=1e-15)
    z0 = np.full((1, 2, 2), 0.5)
    eps = np.full((1, 2, 2), 2.0)
    z1 = cd.q_sample(z0, 1, eps, T=1, beta_start=0.75, beta_end=0.75)
    assert z1 == pytest.approx(0.5 * 0.5 + math.sqrt(0.75) * 2.0, abs=1e-14)


def test_metrics():
    a = np.zeros((3, 16, 16))
    assert cd.psnr(a, a) == pytest.approx(99.0)
    b = a + 0.1  # MSE 0.01
    assert cd.psnr(a, b) == pytest.approx(20.0, abs=1e-9)
    assert cd.ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_gradcheck_small():
    assert cd.gradcheck(seed=0, size=8, per_tensor=1) < 1e-4


def test_train_demo_runs():
    losses = cd.train_demo(steps=3, size=16, seed=0)
    assert len(losses) == 3
    assert all(math.isfinite(v) for v in losses)
    assert losses[0] == pytest.approx(1.0, abs=0.1)


def test_checkpoint_roundtrip(tmp_path):
    path = str(tmp_path / "model.ckpt")
    cd.init_checkpoint(path, base_channels=8, T=5, seed=4)
    info = cd.checkpoint_info(path)
    assert info["base_channels"] == 8
    assert info["T"] == 5
    assert info["codec"] == "identity"
    assert info["n_params"] > 0


def test_rollout_composites_start(tmp_path):
    path = str(tmp_path / "model.ckpt")
    cd.init_checkpoint(path, base_channels=8, T=3, seed=2)
    rgb, depth = cd.scene("two-plane", 16, seed=5)
    frames = cd.sample_rollout(path, rgb, depth, np.eye(4), n_frames=1, composite=True)
    assert len(frames) == 2
    # Identity pose plus composite keeps every known pixel from the start.
    np.testing.assert_array_equal(frames[1], frames[0])


def test_errors_are_typed():
    with pytest.raises(cd.CoreError):
        cd.alpha_bars(0, 0.1, 0.2)
