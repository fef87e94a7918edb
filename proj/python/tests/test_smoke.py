import math

import numpy as np
import pytest

import nehad


def test_synth_and_metrics():
    d = nehad.synth("mixed", frames=3, gaussians=20, resolution=16, seed=0)
    assert len(d["images"]) == 3
    assert d["images"][0].shape == (16, 16, 3)
    assert d["times"] == pytest.approx([0.0, 0.5, 1.0])
    assert sum(d["is_static"]) == 10
    img = d["images"][1]
    assert math.isinf(nehad.psnr(img, img))
    assert nehad.ssim(img, img) == pytest.approx(1.0)
    assert len(d["gt"]) == 20


def test_render_matches_synth_frame():
    d = nehad.synth("pendulum", frames=1, gaussians=12, resolution=16, seed=1)
    cam = nehad.Camera.centered(16, 16, 16.0, 3.0)
    # A single frame is the canonical t = 0.5 configuration.
    np.testing.assert_allclose(nehad.render(d["gt"], cam), d["images"][0], atol=1e-12)
    arrays = d["gt"].arrays()
    assert arrays["mu"].shape == (12, 3)
    assert arrays["rot"].shape == (12, 4)


def test_scene_ply_round_trip(tmp_path):
    scene = nehad.synth("orbit", frames=1, gaussians=8, resolution=8)["init"]
    scene.save(tmp_path / "s.ply")
    back = nehad.Scene.load(tmp_path / "s.ply")
    np.testing.assert_allclose(back.arrays()["mu"], scene.arrays()["mu"], atol=1e-6)


def test_helmholtz_split():
    n = 8
    x = np.arange(n) / n
    field = np.zeros((n, n, n, 3))
    field[..., 0] = np.sin(2 * np.pi * x)[None, None, :] + 0.25  # depends on x only: curl-free
    cons, sol, mean = nehad.helmholtz(field)
    assert np.abs(sol).max() < 1e-10
    assert mean == pytest.approx([0.25, 0.0, 0.0])
    np.testing.assert_allclose(cons + sol + np.array(mean), field, atol=1e-12)
    with pytest.raises(nehad.Error):
        nehad.helmholtz(np.zeros((6, 6, 6, 3)))


def test_physics_helpers():
    assert nehad.verlet_position([0.5, -1, 2], [1, 2, 3], [0, 0, 0], 1.0) == [1.5, 1.0, 5.0]
    q = [0.0, 0.0, 1.0, 0.0]  # half turn about y
    c = nehad.clamp_rotation(q, 0.35)
    assert nehad.rotation_angle(c) < 0.35
    assert nehad.mip_level([4.0, 1.0, math.sqrt(2.0)]) == pytest.approx([3.0, 1.0, 1.5, 3.0])


def test_config_errors():
    text = nehad.config_text({"seed": 3}, toy=True)
    assert "seed=3" in text
    with pytest.raises(ValueError):
        nehad.config_text({"not_a_key": 1})


def test_train_and_evaluate(tmp_path):
    nehad.synth_to_dir("mixed", 3, 12, 16, 0, tmp_path / "data")
    overrides = {"iterations": 15, "base_resolution": 4, "channels": 4, "decoder_width": 8, "head_hidden": 8}
    losses = nehad.train(tmp_path / "data", tmp_path / "model.ckpt", overrides)
    assert len(losses) == 15
    assert all(math.isfinite(v) for v in losses)
    res = nehad.evaluate(tmp_path / "model.ckpt", tmp_path / "data")
    assert res["csv"].startswith("frame,t,psnr,ssim\n")
    assert res["mean_psnr"] > 10.0
