import numpy as np
import pytest

import dsegnet


def test_predict_shape_and_range():
    model = dsegnet.Model(dsegnet.ModelConfig.desk(), seed=1)
    x = np.random.default_rng(0).random((2, 3, 64, 96), dtype=np.float32)
    y = model.predict(x)
    assert y.shape == (2, 1, 64, 96)
    assert y.dtype == np.float32
    assert ((y > 0) & (y < 1)).all()


def test_bad_extent_raises_dimension_error():
    model = dsegnet.Model()
    with pytest.raises(dsegnet.DimensionError):
        model.predict(np.zeros((1, 3, 60, 64), dtype=np.float32))


def test_paper_preset_counts():
    cfg = dsegnet.ModelConfig.paper()
    params = dsegnet.Model(cfg).param_count()
    assert abs(params / 18.11e6 - 1) <= 0.20
    assert abs(dsegnet.count_macs(cfg, 256, 256) / 27.1e9 - 1) <= 0.25


def test_ablation_arms_differ():
    counts = set()
    for dcp in (True, False):
        for cbam in (True, False):
            cfg = dsegnet.ModelConfig.desk()
            cfg.use_dcp = dcp
            cfg.use_cbam = cbam
            counts.add(dsegnet.Model(cfg).param_count())
    assert len(counts) == 4


def test_metrics_examples():
    m = dsegnet.metrics(8, 2, 2, 13)
    assert m["dsc"] == pytest.approx(0.8, abs=1e-7)
    assert m["iou"] == pytest.approx(2 / 3, abs=1e-7)
    assert dsegnet.metrics(1, 1, 0)["f2"] == pytest.approx(2.5 / 3, abs=1e-6)


def test_confusion_counts():
    gt = np.zeros((5, 5), dtype=np.float32)
    gt.flat[:10] = 1
    pred = np.zeros_like(gt)
    pred.flat[:8] = 0.9
    pred.flat[20:22] = 0.7
    assert dsegnet.confusion(pred, gt) == (8, 2, 2, 13)


def test_colormap_endpoints():
    assert dsegnet.colormap_rgb(0.0) == (0, 0, 255)
    assert dsegnet.colormap_rgb(1.0) == (255, 0, 0)


def test_heatmap_range():
    model = dsegnet.Model(seed=2)
    _, image, _ = dsegnet.synth_sample(3)
    h = model.heatmap(image)
    assert h.shape == (1, 1, 64, 64)
    assert h.min() == 0.0 and h.max() == 1.0


def test_netpbm_and_weights_round_trip(tmp_path):
    _, image, mask = dsegnet.synth_sample(0)
    dsegnet.write_ppm(image, str(tmp_path / "a.ppm"))
    np.testing.assert_array_equal(dsegnet.read_ppm(str(tmp_path / "a.ppm")), image)
    dsegnet.write_pgm(mask, str(tmp_path / "a.pgm"))
    np.testing.assert_array_equal(dsegnet.read_pgm(str(tmp_path / "a.pgm")), mask)

    a = dsegnet.Model(seed=5)
    a.save_weights(str(tmp_path / "w.dsgw"))
    b = dsegnet.Model(seed=6)
    b.load_weights(str(tmp_path / "w.dsgw"))
    np.testing.assert_array_equal(a.predict(image), b.predict(image))
    with pytest.raises(dsegnet.IoError):
        b.load_weights(str(tmp_path / "a.ppm"))


def test_short_training_run():
    samples = [dsegnet.synth_sample(i) for i in range(8)]
    images = np.concatenate([s[1] for s in samples])
    masks = np.concatenate([s[2] for s in samples])
    model = dsegnet.Model(seed=3)
    h = model.train(images[:6], masks[:6], images[6:], masks[6:], batch_size=3, epochs=2)
    assert len(h["train_loss"]) == 2
    assert all(np.isfinite(h["val_loss"]))


def test_grad_suites_pass():
    results = dsegnet.grad_suites(seeds=2)
    assert results and all(r["pass"] for r in results)


def test_unknown_preset():
    with pytest.raises(dsegnet.ConfigError):
        dsegnet.ModelConfig.from_preset("huge")
