import math
import unittest

import numpy as np
from numpy.testing import assert_allclose

from spherelib.dataio import LabeledBatch, SyntheticSpec, synth_blobs
from spherelib.evaluation import (
    AngleHistogram,
    EvalOptions,
    EvalReport,
    angular_fisher_score,
    cosine_score,
    evaluate,
    identification,
    intra_inter_angle_stats,
    pair_angle_histograms,
    verification,
    verification_from_scores,
)
from spherelib.exceptions import ConfigError, DimensionError, DomainError
from spherelib.numcore import make_rng


def cosine(a, b):
    return float(np.dot(a, b) / (math.sqrt(np.dot(a, a)) * math.sqrt(np.dot(b, b))))


def afs_oracle(features, labels):
    classes = sorted(set(labels.tolist()))
    global_mean = features.mean(axis=0)
    within, between = 0.0, 0.0
    for c in classes:
        members = [features[i] for i in range(len(labels)) if labels[i] == c]
        mean = np.mean(members, axis=0)
        for x in members:
            within += 1 - cosine(x, mean)
        between += len(members) * (1 - cosine(mean, global_mean))
    return within / between


def cmc_oracle(gallery, probes, max_rank):
    identities = sorted(set(gallery.labels.tolist()))
    correct = np.zeros(max_rank)
    for probe, label in zip(probes.features, probes.labels):
        scores = []
        for identity in identities:
            best = max(
                cosine(probe, g) for g, l in zip(gallery.features, gallery.labels) if l == identity
            )
            scores.append((-best, identity))
        ranking = [identity for _, identity in sorted(scores)]
        if label in ranking:
            position = ranking.index(label)
            correct[position:] += 1
    return [(r + 1, correct[r] / len(probes)) for r in range(max_rank)]


def angle_oracle(features, labels):
    intra, inter = 0.0, np.inf
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            angle = math.acos(max(-1.0, min(1.0, cosine(features[i], features[j]))))
            if labels[i] == labels[j]:
                intra = max(intra, angle)
            else:
                inter = min(inter, angle)
    return intra, inter


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class TestAngularFisherScore(unittest.TestCase):
    def setUp(self):
        self.rng = make_rng(0)

    def test_perfect_compactness(self):
        features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 2.0], [0.0, 2.0]])
        self.assertAlmostEqual(angular_fisher_score(features, [0, 0, 1, 1]), 0.0, places=12)

    def test_single_class(self):
        with self.assertRaises(DomainError):
            angular_fisher_score(self.rng.standard_normal((5, 3)), np.zeros(5, dtype=int))

    def test_zero_feature(self):
        features = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        with self.assertRaises(DomainError):
            angular_fisher_score(features, [0, 0, 1])

    def test_matches_oracle(self):
        for _ in range(20):
            features = self.rng.standard_normal((12, 2)) + [2.0, 0.0]
            labels = np.repeat([0, 1, 2], 4)
            with self.subTest():
                expected = afs_oracle(features, labels)
                result = angular_fisher_score(features, labels)
                self.assertLess(abs(result - expected), 1e-12 * expected)

    def test_rotation_and_scale_invariance(self):
        features = self.rng.standard_normal((30, 5)) + 1.0
        labels = self.rng.integers(0, 3, size=30)
        reference = angular_fisher_score(features, labels)
        rotated = features @ random_orthogonal(self.rng, 5)
        for transformed in (rotated, 7.5 * features):
            result = angular_fisher_score(transformed, labels)
            self.assertLess(abs(result - reference), 1e-10 * reference)

    def test_label_count(self):
        with self.assertRaises(DimensionError):
            angular_fisher_score(np.ones((3, 2)), [0, 1])


class TestCosineScore(unittest.TestCase):
    def test_values(self):
        self.assertAlmostEqual(cosine_score([1.0, 2.0], [1.0, 2.0]), 1.0, places=12)
        self.assertEqual(cosine_score([1.0, 0.0], [0.0, 3.0]), 0.0)

    def test_scale_invariance(self):
        a, b = np.array([0.3, -1.2, 2.0]), np.array([1.5, 0.2, -0.7])
        self.assertLess(abs(cosine_score(2 * a, 3 * b) - cosine_score(a, b)), 1e-12)

    def test_zero_vector(self):
        with self.assertRaises(DomainError):
            cosine_score([0.0, 0.0], [1.0, 0.0])


class TestVerification(unittest.TestCase):
    def test_hand_built_pairs(self):
        accuracy, threshold, _ = verification_from_scores(
            [0.9, 0.8, 0.3, 0.1], [True, True, False, False]
        )
        self.assertEqual(accuracy, 1.0)
        self.assertGreater(threshold, 0.3)
        self.assertLessEqual(threshold, 0.8)

    def test_feature_pairs(self):
        def pair(score, same):
            return (np.array([1.0, 0.0]), np.array([score, math.sqrt(1 - score**2)]), same)

        accuracy, threshold, roc = verification(
            [pair(0.9, True), pair(0.8, True), pair(0.3, False), pair(0.1, False)]
        )
        self.assertEqual(accuracy, 1.0)
        self.assertTrue(0.3 < threshold <= 0.8 + 1e-12)
        self.assertEqual(roc[0], (0.0, 0.0))
        self.assertEqual(roc[-1], (1.0, 1.0))

    def test_roc_is_monotone(self):
        rng = make_rng(1)
        scores = rng.uniform(-1, 1, size=200)
        same = rng.uniform(size=200) < 0.3
        _, _, roc = verification_from_scores(scores, same)
        roc = np.array(roc)
        self.assertTrue(np.all(np.diff(roc[:, 0]) >= 0))
        self.assertTrue(np.all(np.diff(roc[:, 1]) >= 0))

    def test_invariant_to_increasing_transform(self):
        rng = make_rng(2)
        scores = rng.uniform(-1, 1, size=100)
        same = scores + rng.normal(0, 0.5, size=100) > 0
        accuracy, _, _ = verification_from_scores(scores, same)
        transformed, _, _ = verification_from_scores(scores**3, same)
        self.assertEqual(accuracy, transformed)

    def test_random_labels_stay_near_prior(self):
        rng = make_rng(3)
        n = 2000
        scores = rng.uniform(-1, 1, size=n)
        same = rng.permutation(np.arange(n) < n // 2)
        accuracy, _, _ = verification_from_scores(scores, same)
        # the best of all thresholds exceeds the prior by a few standard deviations at most
        self.assertGreaterEqual(accuracy, 0.5)
        self.assertLess(accuracy, 0.5 + 4 / math.sqrt(n))

    def test_ties_go_to_lower_threshold(self):
        _, threshold, _ = verification_from_scores([0.5, 0.2, 0.0], [True, False, False])
        self.assertEqual(threshold, 0.5)
        _, threshold, _ = verification_from_scores([0.5, 0.5], [True, False])
        self.assertEqual(threshold, -1.0)

    def test_needs_both_kinds(self):
        with self.assertRaises(DomainError):
            verification_from_scores([0.1, 0.2], [True, True])
        with self.assertRaises(DomainError):
            verification([])


class TestIdentification(unittest.TestCase):
    def setUp(self):
        self.rng = make_rng(4)

    def test_identical_probe(self):
        gallery = LabeledBatch(np.eye(3), [0, 1, 2], 3)
        probes = LabeledBatch(np.array([[0.0, 1.0, 0.0]]), [1], 3)
        rank1, cmc = identification(gallery, probes, 3)
        self.assertEqual(rank1, 1.0)
        self.assertEqual(cmc[-1], (3, 1.0))

    def test_single_identity(self):
        gallery = LabeledBatch(self.rng.standard_normal((3, 2)), [0, 0, 0], 2)
        probes = LabeledBatch(self.rng.standard_normal((4, 2)), [0, 1, 0, 1], 2)
        rank1, _ = identification(gallery, probes, 1)
        self.assertEqual(rank1, 0.5)

    def test_matches_oracle(self):
        for _ in range(10):
            labels = np.repeat(np.arange(5), 4)
            batch = LabeledBatch(self.rng.standard_normal((20, 4)), labels, 5)
            gallery, probes = batch.subset(np.arange(0, 20, 2)), batch.subset(np.arange(1, 20, 2))
            _, cmc = identification(gallery, probes, 5)
            expected = cmc_oracle(gallery, probes, 5)
            with self.subTest():
                self.assertEqual([r for r, _ in cmc], [r for r, _ in expected])
                assert_allclose([a for _, a in cmc], [a for _, a in expected], rtol=0, atol=1e-12)
                self.assertEqual(cmc[-1][1], 1.0)

    def test_ties_broken_by_label(self):
        gallery = LabeledBatch(np.array([[1.0, 0.0], [1.0, 0.0]]), [1, 0], 2)
        probes = LabeledBatch(np.array([[1.0, 1.0], [1.0, 1.0]]), [0, 1], 2)
        rank1, _ = identification(gallery, probes, 2)
        self.assertEqual(rank1, 0.5)

    def test_errors(self):
        gallery = LabeledBatch(np.eye(2), [0, 1], 2)
        with self.assertRaises(DomainError):
            identification(gallery, gallery, 3)
        with self.assertRaises(DomainError):
            identification(gallery.subset([]), gallery, 1)


class TestPairAngleHistograms(unittest.TestCase):
    def test_identical_features(self):
        positive, negative = pair_angle_histograms(np.ones((4, 3)), [0, 0, 1, 1], bins=9)
        self.assertEqual(positive.counts[0], 2)
        self.assertEqual(negative.counts[0], 4)

    def test_orthogonal_classes(self):
        features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
        _, negative = pair_angle_histograms(features, [0, 0, 1, 1], bins=9)
        self.assertEqual(negative.counts[4], 4)
        self.assertEqual(negative.total, 4)

    def test_pair_counts(self):
        rng = make_rng(5)
        labels = np.array([0] * 5 + [1] * 3 + [2] * 7)
        positive, negative = pair_angle_histograms(rng.standard_normal((15, 3)), labels, bins=12)
        expected_positive = 5 * 4 // 2 + 3 * 2 // 2 + 7 * 6 // 2
        self.assertEqual(positive.total, expected_positive)
        self.assertEqual(negative.total, 15 * 14 // 2 - expected_positive)
        assert_allclose(positive.bin_edges, np.linspace(0, np.pi, 13))

    def test_errors(self):
        with self.assertRaises(DomainError):
            pair_angle_histograms(np.ones((3, 2)), [0, 1, 1], bins=0)
        with self.assertRaises(DomainError):
            pair_angle_histograms(np.ones((1, 2)), [0], bins=4)


class TestIntraInterAngleStats(unittest.TestCase):
    def test_singletons(self):
        features = np.array([[1.0, 0.0], [math.cos(math.pi / 3), math.sin(math.pi / 3)]])
        max_intra, min_inter = intra_inter_angle_stats(features, [0, 1])
        self.assertEqual(max_intra, 0.0)
        self.assertAlmostEqual(min_inter, math.pi / 3, places=12)

    def test_pair_at_known_angle(self):
        features = np.array([[1.0, 0.0], [math.cos(0.2), math.sin(0.2)], [-1.0, 0.0]])
        max_intra, _ = intra_inter_angle_stats(features, [0, 0, 1])
        self.assertAlmostEqual(max_intra, 0.2, places=12)

    def test_matches_oracle(self):
        rng = make_rng(6)
        for _ in range(10):
            features = rng.standard_normal((18, 3))
            labels = rng.integers(0, 3, size=18)
            labels[:3] = [0, 1, 2]
            result = intra_inter_angle_stats(features, labels)
            expected = angle_oracle(features, labels)
            with self.subTest():
                self.assertLess(abs(result[0] - expected[0]), 1e-9)
                self.assertLess(abs(result[1] - expected[1]), 1e-9)

    def test_single_class(self):
        with self.assertRaises(DomainError):
            intra_inter_angle_stats(np.eye(2), [0, 0])

    def test_labels_checked_against_weights(self):
        with self.assertRaises(DomainError):
            intra_inter_angle_stats(np.eye(2), [0, 2], weights=np.eye(2))


class TestEvalReport(unittest.TestCase):
    def setUp(self):
        histogram = AngleHistogram([0.0, math.pi / 2, math.pi], [3, 1])
        self.report = EvalReport(
            afs=0.25,
            verification_accuracy=0.75,
            best_threshold=0.5,
            rank1=0.5,
            roc=[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)],
            cmc=[(1, 0.5), (2, 1.0)],
            pos_angle_hist=histogram,
            neg_angle_hist=AngleHistogram([0.0, math.pi / 2, math.pi], [0, 2]),
        )

    def test_json_round_trip(self):
        self.assertEqual(EvalReport.from_json(self.report.to_json()), self.report)

    def test_json_fields(self):
        data = self.report.to_dict()
        self.assertEqual(
            sorted(data),
            sorted(
                [
                    "afs",
                    "verification_accuracy",
                    "best_threshold",
                    "rank1",
                    "roc",
                    "cmc",
                    "pos_angle_hist",
                    "neg_angle_hist",
                ]
            ),
        )
        self.assertEqual(data["roc"][1], [0.5, 1.0])
        self.assertEqual(data["pos_angle_hist"]["counts"], [3, 1])

    def test_validate_rejects_decreasing_roc(self):
        self.report.roc = [(0.0, 0.5), (0.5, 0.2)]
        with self.assertRaises(DomainError):
            self.report.validate()

    def test_validate_accepts_missing_measures(self):
        self.report.verification_accuracy = None
        self.report.best_threshold = None
        self.report.rank1 = None
        self.report.roc = []
        self.report.cmc = []
        self.report.validate()
        self.assertIsNone(self.report.to_dict()["rank1"])

    def test_validate_rejects_decreasing_cmc(self):
        self.report.cmc = [(1, 0.8), (2, 0.6)]
        with self.assertRaises(DomainError):
            self.report.validate()


class TestEvaluate(unittest.TestCase):
    def test_separable_blobs(self):
        batch = synth_blobs(SyntheticSpec(k_classes=4, per_class=12, dim=2, angular_spread=0.2))
        report = evaluate(batch.features, batch.labels, EvalOptions(bins=9, max_rank=3))
        self.assertGreater(report.afs, 0.0)
        self.assertLess(report.afs, 0.1)
        self.assertEqual(report.verification_accuracy, 1.0)
        self.assertEqual(report.rank1, 1.0)
        self.assertEqual(len(report.cmc), 3)
        self.assertEqual(report.pos_angle_hist.total, 4 * 12 * 11 // 2)

    def test_deterministic(self):
        batch = synth_blobs(SyntheticSpec(k_classes=3, per_class=10, dim=4, seed=8))
        options = EvalOptions(pair_count=50, pair_seed=3)
        first = evaluate(batch.features, batch.labels, options)
        second = evaluate(batch.features, batch.labels, options)
        self.assertEqual(first.to_json(), second.to_json())

    def test_single_sample_classes(self):
        features = np.eye(5) + 0.1
        with self.assertLogs("spherelib.evaluation", level="WARNING") as logs:
            report = evaluate(features, np.arange(5), EvalOptions(bins=6))
        self.assertEqual(len(logs.output), 2)
        self.assertIsNone(report.verification_accuracy)
        self.assertIsNone(report.best_threshold)
        self.assertIsNone(report.rank1)
        self.assertEqual(report.roc, [])
        self.assertEqual(report.cmc, [])
        self.assertAlmostEqual(report.afs, 0.0, places=12)
        self.assertEqual(report.pos_angle_hist.total, 0)
        self.assertEqual(report.neg_angle_hist.total, 10)
        self.assertEqual(EvalReport.from_json(report.to_json()), report)

    def test_options_validation(self):
        with self.assertRaises(ConfigError):
            EvalOptions(gallery_fraction=1.0)
        with self.assertRaises(ConfigError):
            EvalOptions(bins=0)


if __name__ == "__main__":
    unittest.main()
