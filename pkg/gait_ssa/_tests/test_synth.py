import numpy as np
import pytest

from .._dataset import NUM_CLASSES
from .._synth import CLASS_RATIO_PRESETS, EGAIT_CLASS_RATIOS, SynthConfig, generate_synthetic


def test_default_config_follows_published_ratios():
    cfg = SynthConfig()
    assert cfg.n_samples == 400
    assert cfg.t == 120
    assert abs(sum(cfg.class_ratios) - 1.0) <= 1e-9
    counts = cfg.class_counts()
    assert counts.sum() == 400
    assert list(counts) == [220, 94, 58, 28]


def test_generated_dataset_shape_and_counts():
    cfg = SynthConfig(n_samples=40, seed=1)
    ds = generate_synthetic(cfg)
    assert ds.shape == (40, 120, 16, 3)
    assert ds.data.dtype == np.float32
    assert ds.is_labeled
    np.testing.assert_array_equal(ds.class_histogram(), cfg.class_counts())
    assert np.all(np.isfinite(ds.data))
    assert ds.groups.min() >= 0
    assert ds.groups.max() < cfg.n_actors


def test_generator_is_pure_function_of_config():
    a = generate_synthetic(SynthConfig(n_samples=12, seed=4))
    b = generate_synthetic(SynthConfig(n_samples=12, seed=4))
    c = generate_synthetic(SynthConfig(n_samples=12, seed=5))
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.data, c.data)


def test_classes_differ_in_walking_speed():
    cfg = SynthConfig.from_preset("balanced", n_samples=40, seed=2, noise=0.0)
    ds = generate_synthetic(cfg)
    root = ds.data[:, :, 0, :2]
    speed = np.linalg.norm(root[:, -1] - root[:, 0], axis=1) / ((cfg.t - 1) / cfg.fps)
    by_class = [speed[ds.labels == c].mean() for c in range(NUM_CLASSES)]
    # angry fastest, sad slowest
    assert np.argmax(by_class) == 0
    assert np.argmin(by_class) == 3


def test_presets_and_validation():
    assert CLASS_RATIO_PRESETS["egait"] == EGAIT_CLASS_RATIOS
    with pytest.raises(ValueError, match="preset"):
        SynthConfig.from_preset("unknown")
    with pytest.raises(ValueError):
        SynthConfig(class_ratios=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        SynthConfig(n_samples=0)
    with pytest.raises(ValueError, match="degenerate"):
        SynthConfig(speed=dict(angry=(2, 1), neutral=(1, 1), happy=(1, 1), sad=(1, 1)))
