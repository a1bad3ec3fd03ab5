import numpy as np
import pytest

from poe.datasets import (
    CIFAR10_RECORD,
    CIFAR100_RECORD,
    DatasetError,
    SyntheticSpec,
    cifar100_superclass_classes,
    cifar100_universe,
    generate_synthetic,
    load_cifar,
    normalize_images,
    synthetic_universe,
    task_view,
)


def write_cifar100(tmp_path, n_train=200, n_test=40, seed=0):
    """Fabricate train.bin/test.bin in the published cifar-100 record layout:
    coarse label, fine label, then 3072 pixel bytes. Fine class f belongs to
    coarse class f // 5 (5 fine classes per superclass, 20 superclasses)."""
    rng = np.random.default_rng(seed)

    def records(n):
        fine = rng.integers(0, 100, size=n, dtype=np.uint8)
        coarse = (fine // 5).astype(np.uint8)
        pixels = rng.integers(0, 256, size=(n, 3072), dtype=np.uint8)
        return np.concatenate([coarse[:, None], fine[:, None], pixels], axis=1)

    train = records(n_train)
    (tmp_path / "train.bin").write_bytes(train.tobytes())
    (tmp_path / "test.bin").write_bytes(records(n_test).tobytes())
    assert train.shape[1] == CIFAR100_RECORD
    return train


class TestSynthetic:
    def test_reproducible_bytes(self):
        spec = SyntheticSpec(seed=3, num_classes=12, per_class_train=5, per_class_eval=3, num_primitives=3)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert a.train_x.tobytes() == b.train_x.tobytes()
        assert a.eval_x.tobytes() == b.eval_x.tobytes()
        assert np.array_equal(a.train_y, b.train_y)

    def test_different_seed_differs(self):
        spec = dict(num_classes=8, per_class_train=4, per_class_eval=2, num_primitives=2)
        a = generate_synthetic(SyntheticSpec(seed=1, **spec))
        b = generate_synthetic(SyntheticSpec(seed=2, **spec))
        assert a.train_x.tobytes() != b.train_x.tobytes()

    def test_shapes_and_counts(self):
        spec = SyntheticSpec(seed=0, num_classes=6, per_class_train=7, per_class_eval=4,
                             num_primitives=2, image_size=10)
        ds = generate_synthetic(spec)
        assert ds.train_x.shape == (42, 3, 10, 10)
        assert ds.eval_x.shape == (24, 3, 10, 10)
        assert sorted(set(ds.train_y.tolist())) == list(range(6))

    def test_normalization_recorded_and_applied(self):
        ds = generate_synthetic(SyntheticSpec(seed=5, num_classes=4, per_class_train=10,
                                              per_class_eval=2, num_primitives=2))
        np.testing.assert_allclose(ds.train_x.mean(axis=(0, 2, 3)), 0.0, atol=1e-4)
        np.testing.assert_allclose(ds.train_x.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
        assert ds.norm_mean.shape == (3,)
        # eval uses the train constants, so it is near- but not exactly-normalized
        assert abs(float(ds.eval_x.mean())) < 0.5

    def test_universe_matches_grouping(self):
        spec = SyntheticSpec(seed=0, num_classes=24, num_primitives=6)
        uni = synthetic_universe(spec)
        assert len(uni.primitives) == 6
        assert all(len(t) == 4 for t in uni.primitives)
        assert uni.primitives[1].class_indices == (4, 5, 6, 7)

    def test_invalid_specs_rejected(self):
        with pytest.raises(DatasetError):
            SyntheticSpec(seed=0, num_classes=10, num_primitives=4)
        with pytest.raises(DatasetError):
            SyntheticSpec(seed=0, image_size=4)


class TestCifar:
    def test_record_arithmetic(self, tmp_path):
        write_cifar100(tmp_path, n_train=120, n_test=30)
        ds = load_cifar(str(tmp_path), "cifar-100")
        assert ds.train_x.shape == (120, 3, 32, 32)
        assert ds.eval_x.shape == (30, 3, 32, 32)
        assert ds.num_classes == 100

    def test_truncated_file_rejected(self, tmp_path):
        write_cifar100(tmp_path)
        raw = (tmp_path / "train.bin").read_bytes()
        (tmp_path / "train.bin").write_bytes(raw[:-7])
        with pytest.raises(DatasetError, match="truncated"):
            load_cifar(str(tmp_path), "cifar-100")

    def test_unknown_variant_rejected(self, tmp_path):
        with pytest.raises(DatasetError, match="variant"):
            load_cifar(str(tmp_path), "cifar-99")

    def test_restriction_remaps_labels_densely(self, tmp_path):
        train = write_cifar100(tmp_path, n_train=400)
        keep = [7, 42, 99]
        ds = load_cifar(str(tmp_path), "cifar-100", restriction=keep)
        expected = sum(int(f) in keep for f in train[:, 1])
        assert len(ds.train_y) == expected
        assert set(ds.train_y.tolist()) <= {0, 1, 2}
        assert ds.label_map == keep

    def test_superclass_selection(self, tmp_path):
        write_cifar100(tmp_path, n_train=4000)
        fine = cifar100_superclass_classes(str(tmp_path), [0, 3])
        assert fine == [0, 1, 2, 3, 4, 15, 16, 17, 18, 19]
        uni, keep = cifar100_universe(str(tmp_path), [0, 3])
        assert keep == fine
        assert [t.id for t in uni.primitives] == ["super00", "super03"]
        assert uni.primitives[0].class_indices == (0, 1, 2, 3, 4)
        assert uni.primitives[1].class_indices == (5, 6, 7, 8, 9)

    def test_cifar10_record_length_constant(self):
        assert CIFAR10_RECORD == 3073
        assert CIFAR100_RECORD == 3074


class TestTaskView:
    def test_filters_and_remaps(self):
        ds = generate_synthetic(SyntheticSpec(seed=1, num_classes=8, per_class_train=6,
                                              per_class_eval=3, num_primitives=2))
        view = task_view(ds, [4, 5, 6, 7])
        assert len(view.train_y) == 24
        assert set(view.train_y.tolist()) == {0, 1, 2, 3}
        assert view.label_map == [4, 5, 6, 7]
        # normalization inherited, not recomputed
        np.testing.assert_array_equal(view.norm_mean, ds.norm_mean)

    def test_normalize_images_helper_roundtrip(self):
        x = np.random.default_rng(0).uniform(0, 1, size=(4, 3, 5, 5)).astype(np.float32)
        mean, std = [0.4, 0.5, 0.6], [0.2, 0.2, 0.2]
        z = normalize_images(x, mean, std)
        back = z * np.asarray(std, dtype=np.float32).reshape(1, 3, 1, 1) + np.asarray(
            mean, dtype=np.float32
        ).reshape(1, 3, 1, 1)
        np.testing.assert_allclose(back, x, atol=1e-6)
