import struct
import tempfile
import unittest
import warnings
from pathlib import Path

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from spherelib.dataio import (
    IDX_IMAGES_MAGIC,
    IDX_LABELS_MAGIC,
    LabeledBatch,
    SyntheticSpec,
    export_features,
    import_features,
    load_idx,
    normalize_pixels,
    sample_pairs,
    split_batch,
    synth_blobs,
    write_idx,
)
from spherelib.exceptions import ConfigError, DimensionError, DomainError, IdxFormatError


class TestLabeledBatch(unittest.TestCase):
    def test_label_range(self):
        with self.assertRaises(DomainError):
            LabeledBatch(np.zeros((2, 2)), [0, 2], 2)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            LabeledBatch(np.zeros((3, 2)), [0, 1], 2)

    def test_subset(self):
        batch = LabeledBatch(np.arange(6.0).reshape(3, 2), [0, 1, 1], 2)
        part = batch.subset([2, 0])
        assert_array_equal(part.labels, [1, 0])
        assert_array_equal(part.features, [[4.0, 5.0], [0.0, 1.0]])
        self.assertEqual(part.class_count, 2)


class TestSyntheticSpec(unittest.TestCase):
    def test_invalid(self):
        for kwargs in (
            {"k_classes": 1},
            {"per_class": 0},
            {"dim": 1},
            {"angular_spread": 0.0},
            {"angular_spread": np.pi / 2},
            {"radius_jitter": -0.1},
        ):
            with self.subTest(**kwargs), self.assertRaises(ConfigError):
                SyntheticSpec(**kwargs)


class TestSynthBlobs(unittest.TestCase):
    def test_uniform_centers_in_two_dimensions(self):
        batch = synth_blobs(SyntheticSpec(k_classes=4, dim=2))
        centers = np.array(batch.metadata["centers"])
        angles = np.arctan2(centers[:, 1], centers[:, 0])
        assert_allclose(np.diff(np.unwrap(angles)), np.full(3, np.pi / 2), atol=1e-9)

    def test_samples_within_spread(self):
        spec = SyntheticSpec(k_classes=5, per_class=30, dim=6, angular_spread=0.25, seed=3)
        batch = synth_blobs(spec)
        centers = np.array(batch.metadata["centers"])
        unit = batch.features / np.linalg.norm(batch.features, axis=1, keepdims=True)
        cosines = np.sum(unit * centers[batch.labels], axis=1)
        self.assertTrue(np.all(np.arccos(np.clip(cosines, -1, 1)) <= 0.25 + 1e-9))

    def test_radius_jitter(self):
        batch = synth_blobs(SyntheticSpec(radius_jitter=0.2, seed=5))
        norms = np.linalg.norm(batch.features, axis=1)
        self.assertTrue(np.all(norms >= 0.8 - 1e-12))
        self.assertTrue(np.all(norms <= 1.2 + 1e-12))

    def test_deterministic(self):
        first = synth_blobs(SyntheticSpec(dim=5, seed=11))
        second = synth_blobs(SyntheticSpec(dim=5, seed=11))
        assert_array_equal(first.features, second.features)
        assert_array_equal(first.labels, second.labels)

    def test_ordered_by_class(self):
        batch = synth_blobs(SyntheticSpec(k_classes=3, per_class=4))
        assert_array_equal(batch.labels, np.repeat([0, 1, 2], 4))
        self.assertEqual(batch.class_count, 3)

    def test_overlap_warning(self):
        spec = SyntheticSpec(k_classes=8, dim=2, angular_spread=0.5)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            batch = synth_blobs(spec)
        self.assertEqual(len(caught), 1)
        self.assertEqual(len(batch.metadata["warnings"]), 1)

    def test_no_warning_when_separated(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            batch = synth_blobs(SyntheticSpec(k_classes=4, dim=2, angular_spread=0.3))
        self.assertEqual(batch.metadata["warnings"], [])


class TestSplitBatch(unittest.TestCase):
    def setUp(self):
        self.batch = synth_blobs(SyntheticSpec(k_classes=3, per_class=10, dim=3))

    def test_every_class_in_both_parts(self):
        first, second = split_batch(self.batch, 0.75, seed=0)
        self.assertEqual(len(first) + len(second), 30)
        for label in range(3):
            self.assertEqual(np.sum(first.labels == label), 8)
            self.assertEqual(np.sum(second.labels == label), 2)

    def test_disjoint(self):
        first, second = split_batch(self.batch, 0.5, seed=1)
        rows = {tuple(row) for row in first.features}
        self.assertFalse(any(tuple(row) in rows for row in second.features))

    def test_seeded(self):
        a, _ = split_batch(self.batch, 0.5, seed=2)
        b, _ = split_batch(self.batch, 0.5, seed=2)
        assert_array_equal(a.features, b.features)

    def test_fraction_range(self):
        with self.assertRaises(DomainError):
            split_batch(self.batch, 1.0, seed=0)


class TestSamplePairs(unittest.TestCase):
    def setUp(self):
        self.batch = LabeledBatch(np.eye(4), [0, 0, 1, 1], 2)

    def test_all_pairs(self):
        pairs = sample_pairs(self.batch)
        self.assertEqual(len(pairs), 6)
        self.assertEqual(sum(flag for _, _, flag in pairs), 2)

    def test_sampled_pairs(self):
        pairs = sample_pairs(self.batch, count=3, seed=4)
        self.assertEqual(len(pairs), 3)
        again = sample_pairs(self.batch, count=3, seed=4)
        for (a, b, flag), (c, d, other) in zip(pairs, again):
            assert_array_equal(a, c)
            assert_array_equal(b, d)
            self.assertEqual(flag, other)


class TestPixels(unittest.TestCase):
    def test_normalization(self):
        assert_array_equal(normalize_pixels([255, 127, 0]), [0.99609375, -0.00390625, -0.99609375])


class TestIdx(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.images_path = Path(self.directory.name) / "images.idx"
        self.labels_path = Path(self.directory.name) / "labels.idx"
        self.images = np.array([[[0, 255], [127, 128]], [[1, 2], [3, 4]]], dtype=np.uint8)
        self.labels = np.array([3, 1], dtype=np.uint8)
        write_idx(self.images, self.labels, self.images_path, self.labels_path)

    def tearDown(self):
        self.directory.cleanup()

    def test_round_trip(self):
        batch = load_idx(self.images_path, self.labels_path)
        assert_array_equal(batch.features, normalize_pixels(self.images.reshape(2, 4)))
        assert_array_equal(batch.labels, [3, 1])
        self.assertEqual(batch.class_count, 4)
        self.assertEqual(batch.metadata["image_shape"], [2, 2])

    def test_header_is_big_endian(self):
        data = self.images_path.read_bytes()
        self.assertEqual(struct.unpack(">4I", data[:16]), (IDX_IMAGES_MAGIC, 2, 2, 2))
        self.assertEqual(len(data), 16 + 8)
        data = self.labels_path.read_bytes()
        self.assertEqual(struct.unpack(">2I", data[:8]), (IDX_LABELS_MAGIC, 2))

    def test_bad_magic(self):
        data = bytearray(self.images_path.read_bytes())
        data[3] = 0x01
        self.images_path.write_bytes(bytes(data))
        with self.assertRaises(IdxFormatError) as context:
            load_idx(self.images_path, self.labels_path)
        self.assertEqual(context.exception.offset, 0)

    def test_truncated_images(self):
        self.images_path.write_bytes(self.images_path.read_bytes()[:-1])
        with self.assertRaises(IdxFormatError) as context:
            load_idx(self.images_path, self.labels_path)
        self.assertEqual(context.exception.offset, 23)

    def test_count_mismatch(self):
        other_images = Path(self.directory.name) / "other.idx"
        write_idx(self.images[:1], self.labels[:1], other_images, self.labels_path)
        with self.assertRaises(IdxFormatError):
            load_idx(self.images_path, self.labels_path)

    def test_pixel_range(self):
        with self.assertRaises(DomainError):
            write_idx(np.full((1, 1, 1), 256), [0], self.images_path, self.labels_path)


class TestFeatureCsv(unittest.TestCase):
    def setUp(self):
        self.directory = tempfile.TemporaryDirectory()
        self.path = Path(self.directory.name) / "features.csv"

    def tearDown(self):
        self.directory.cleanup()

    def test_round_trip_is_exact(self):
        features = np.array([[np.pi, -1e-300], [1 / 3, 2.5e17]])
        export_features(features, [1, 0], self.path)
        batch = import_features(self.path)
        assert_array_equal(batch.features, features)
        assert_array_equal(batch.labels, [1, 0])

    def test_header_and_rows(self):
        batch = synth_blobs(SyntheticSpec(k_classes=2, per_class=3, dim=3))
        export_features(batch, None, self.path)
        lines = self.path.read_text().splitlines()
        self.assertEqual(lines[0], "label,f0,f1,f2")
        self.assertEqual(len(lines), 7)

    def test_empty_batch(self):
        export_features(np.zeros((0, 2)), np.zeros(0), self.path)
        self.assertEqual(self.path.read_text(), "label,f0,f1\n")
        self.assertEqual(len(import_features(self.path)), 0)

    def test_label_count(self):
        with self.assertRaises(DimensionError):
            export_features(np.zeros((2, 2)), [0], self.path)


if __name__ == "__main__":
    unittest.main()
