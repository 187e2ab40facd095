import math

import numpy as np
import pytest

import ovseg


def tiny_overrides():
    model = {
        "patch_size": 8, "vision_dim": 16, "vision_heads": 2, "spe_dim": 16, "spe_heads": 2,
        "text_hash_dim": 64, "text_hidden": 32, "refiner_conv_dim": 8, "refiner_qk_dim": 8,
        "refiner_heads": 2, "corr_dim": 8, "spatial_window": 2, "spatial_heads": 2,
        "class_heads": 2, "decoder_width1": 8, "decoder_width2": 4,
    }
    return {
        **{f"model.{k}": v for k, v in model.items()},
        "infer.resize": 64,
        "infer.window": 32,
        "infer.overlap": 16,
    }


def test_presets_and_config():
    names = ovseg.preset_names()
    assert "desk" in names
    cfg = ovseg.default_config("desk", {"train.iters": 7})
    assert cfg["train"]["iters"] == 7
    with pytest.raises(ValueError):
        ovseg.default_config("desk", {"train.iters": -1})


def test_plan_tiles():
    assert ovseg.plan_tiles(640, 640, 384, 128) == [(0, 0), (0, 256), (256, 0), (256, 256)]
    assert ovseg.plan_tiles(384, 384, 384, 128) == [(0, 0)]


def test_losses():
    p = np.full((1, 2, 2), 0.5)
    y = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    assert ovseg.focal_loss(p, y, 2.0) == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert ovseg.dice_loss(y, y, 1e-6) == pytest.approx(0.0, abs=1e-9)


def test_miou_hand_case():
    pred = np.array([[0, 1, 1, 1]], dtype=np.int32)
    gt = np.array([[0, 0, 1, 1]], dtype=np.int32)
    mean, per_class = ovseg.miou([pred], [gt], 2)
    assert mean == pytest.approx(7 / 12)
    assert per_class == pytest.approx([0.5, 2 / 3])
    _, per_class = ovseg.miou([pred], [gt], 3)
    assert per_class[2] is None


def test_ridge_and_partition():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(60, 8))
    assert ovseg.ridge_r2(x, x, 1e-8, 5, 0) == pytest.approx(1.0, abs=1e-3)
    seen, unseen = ovseg.partition_classes(np.eye(3), np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]]), 0.9)
    assert seen == [0] and unseen == [1]


def test_scene_and_model_inference(tmp_path):
    image, labels, names = ovseg.generate_scene(1, 3, 64, 8)
    assert image.shape == (64, 64, 3) and labels.shape == (64, 64)
    assert set(np.unique(labels)) <= {0, 1, 2}

    model = ovseg.Model("desk", tiny_overrides())
    assert model.num_params > 0
    g, loc = model.encode_text(names)
    assert g.shape == loc.shape and g.shape[0] == 3

    seg, logits = model.infer(image, names)
    assert seg.shape == (64, 64) and logits.shape == (3, 64, 64)
    assert np.array_equal(seg, logits.argmax(axis=0))

    model.save(str(tmp_path / "ck"))
    again = ovseg.Model.load(str(tmp_path / "ck"))
    seg2, _ = again.infer((image * 255).astype(np.uint8), names)
    assert seg2.shape == seg.shape
    assert again.config == model.config
