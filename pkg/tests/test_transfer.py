from pathlib import Path
import tempfile
import unittest

import numpy as np

from scenekit.convnet import NetworkSpec, PixelFeatureMap, init_params
from scenekit.data import UNLABELED, ClassCatalog, DatasetSplit, SceneRecord
from scenekit.exceptions import ConfigError, DataWarning, EmptyDataError, FormatError
from scenekit.layers import LayerSpec
from scenekit.metric import MetricParams
from scenekit.sampling import RarityPartition
from scenekit.transfer import (ExemplarSet, KernelParams, PyramidConfig, QueryPixel, RetrievalConfig,
                               TransferIndex, TransferPixel, TransferSet, _vote, build_transfer_index,
                               build_transfer_set, global_belief, global_belief_map, knn_matching_score,
                               load_index, pool_global_feature, region_bounds, retrieve_exemplars, save_index,
                               similarity, transfer_beliefs)


def tiny_spec(num_classes = 3):
    return NetworkSpec((LayerSpec("conv", 3, 2), LayerSpec("relu"), LayerSpec("pool", 2, 0, 2),
                        LayerSpec("dense", 0, 4), LayerSpec("relu"), LayerSpec("dense", 0, num_classes),
                        LayerSpec("softmax")), 7)


def make_index(label_grids, d = 3, rare = (), seed = 0):
    """A hand-built index with random cell features."""
    rng = np.random.default_rng(seed)
    labels = tuple(np.asarray(g, dtype=np.int64) for g in label_grids)
    features = tuple(rng.normal(size=g.shape + (d,)) for g in labels)
    heights = tuple(np.linspace(0, 1, g.shape[0]) for g in labels)
    return TransferIndex(ClassCatalog(("a", "b", "c")), np.zeros((len(labels), 1)), features, labels, heights,
                         tuple(range(len(labels))), tuple(rare), PyramidConfig(), None, None)


def make_transfer(features, heights, labels):
    n = len(labels)
    return TransferSet(np.zeros(n, np.int64), np.arange(n), np.zeros(n, np.int64),
                       np.asarray(features, dtype=np.float64), np.asarray(heights, dtype=np.float64),
                       np.asarray(labels, dtype=np.int64), n)


class TestPyramid(unittest.TestCase):

    def test_constant_map(self):
        features = np.broadcast_to(np.arange(64, dtype=np.float64), (4, 6, 64))
        descriptor = pool_global_feature(features)
        self.assertEqual(descriptor.shape, (5 * 64,))
        np.testing.assert_allclose(descriptor.reshape(5, 64), np.broadcast_to(np.arange(64), (5, 64)))
        self.assertEqual(PyramidConfig().dimension(64), 320)

    def test_two_by_two_grid(self):
        features = np.arange(8, dtype=np.float64).reshape(2, 2, 2)
        descriptor = pool_global_feature(PixelFeatureMap(features, 8, (16, 16)))
        whole = features.mean(axis=(0, 1))
        np.testing.assert_allclose(descriptor, np.concatenate([whole, features.reshape(-1)]))

    def test_remainder_goes_to_the_last_region(self):
        self.assertEqual(region_bounds(3, 2), [(0, 1), (1, 3)])
        self.assertEqual(region_bounds(5, 3), [(0, 1), (1, 2), (2, 5)])
        features = np.random.default_rng(0).normal(size=(3, 3, 2))
        descriptor = pool_global_feature(features, PyramidConfig((2,)))
        np.testing.assert_allclose(descriptor[6:8], features[1:, 1:].mean(axis=(0, 1)))

    def test_small_grid(self):
        features = np.ones((1, 1, 2))
        descriptor = pool_global_feature(features, PyramidConfig((1, 2, 3)))
        np.testing.assert_allclose(descriptor, np.ones(14 * 2))

    def test_vertical_repeat_is_invariant(self):
        features = np.random.default_rng(1).normal(size=(2, 4, 3))
        stacked = np.concatenate([features, features])
        np.testing.assert_allclose(pool_global_feature(stacked, PyramidConfig((1,))),
                                   pool_global_feature(features, PyramidConfig((1,))))

    def test_invalid(self):
        with self.assertRaises(ConfigError):
            PyramidConfig(())
        with self.assertRaises(ConfigError):
            PyramidConfig((0, 1))


class TestRetrieval(unittest.TestCase):

    def test_exact_match_first(self):
        gallery = np.random.default_rng(0).normal(size=(10, 6))
        exemplars = retrieve_exemplars(gallery[7], gallery, 3)
        self.assertEqual(exemplars.indices[0], 7)
        self.assertEqual(exemplars.distances[0], 0.0)
        self.assertEqual(len(exemplars), 3)

    def test_whole_gallery_is_sorted(self):
        gallery = np.random.default_rng(1).normal(size=(12, 4))
        exemplars = retrieve_exemplars(np.zeros(4), gallery, 12)
        self.assertEqual(sorted(exemplars.indices.tolist()), list(range(12)))
        self.assertTrue(np.all(np.diff(exemplars.distances) >= 0))

    def test_ties_go_to_the_lower_index(self):
        gallery = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [5.0, 5.0]])
        self.assertEqual(retrieve_exemplars([0.0, 0.0], gallery, 3).indices.tolist(), [0, 1, 2])

    def test_against_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n, dim = int(rng.integers(1, 30)), int(rng.integers(1, 8))
            gallery = rng.normal(size=(n, dim))
            query = rng.normal(size=dim)
            size = int(rng.integers(1, n + 1))
            order = sorted(range(n), key=lambda i: (float(np.sqrt(np.sum((gallery[i] - query) ** 2))), i))
            self.assertEqual(retrieve_exemplars(query, gallery, size).indices.tolist(), order[:size])

    def test_invalid(self):
        gallery = np.zeros((3, 2))
        with self.assertRaises(ConfigError):
            retrieve_exemplars(np.zeros(2), gallery, 4)
        with self.assertRaises(ConfigError):
            retrieve_exemplars(np.zeros(3), gallery, 1)
        with self.assertRaises(ConfigError):
            retrieve_exemplars(np.zeros(2), np.zeros((0, 2)), 1)

    def test_matching_score(self):
        gallery = np.array([[0.0], [1.0], [10.0], [11.0]])
        scenes = [0, 1, 0, 0]
        score = knn_matching_score([[0.1], [10.4]], gallery, [0, 0], scenes, 2)
        self.assertAlmostEqual(score, 0.75)
        self.assertEqual(knn_matching_score([[10.4]], gallery, [0], scenes, 2), 1.0)
        self.assertEqual(knn_matching_score([[10.4]], gallery, [1], scenes, 2), 0.0)


class TestTransferSet(unittest.TestCase):

    def test_no_augmentation_when_rare_classes_suffice(self):
        index = make_index([[[0, 1], [1, 2]], [[2, 2], [0, 0]]])
        exemplars = ExemplarSet(np.array([0]), np.zeros(1))
        transfer = build_transfer_set(exemplars, index, 1, RarityPartition(frozenset({0}), frozenset({1, 2})))
        self.assertEqual(len(transfer), 4)
        self.assertEqual(transfer.auxiliary_count, 0)
        self.assertEqual(transfer.exemplar_count, 4)

    def test_rare_class_is_topped_up_to_k(self):
        grids = [np.zeros((10, 10), dtype=int) for _ in range(4)]
        grids[0][0] = 1
        for g in grids[1:]:
            g[:] = 1
        index = make_index(grids, rare=(1,))
        exemplars = ExemplarSet(np.array([0]), np.zeros(1))
        transfer = build_transfer_set(exemplars, index, 200, index.rarity, seed=1)
        self.assertEqual(transfer.exemplar_count, 100)
        self.assertEqual(transfer.auxiliary_count, 190)
        auxiliary = slice(transfer.exemplar_count, None)
        self.assertTrue(np.all(transfer.labels[auxiliary] == 1))
        self.assertTrue(np.all(transfer.sources[auxiliary] != 0))
        self.assertEqual(int(np.sum(transfer.labels == 1)), 200)
        pairs = set(zip(transfer.sources[auxiliary].tolist(), transfer.rows[auxiliary].tolist(),
                        transfer.cols[auxiliary].tolist()))
        self.assertEqual(len(pairs), 190)

        item = transfer[150]
        self.assertIsInstance(item, TransferPixel)
        self.assertEqual(item.label, 1)
        np.testing.assert_array_equal(item.feature, index.cell_features[item.source][item.cell])

    def test_small_pool_is_drawn_with_replacement(self):
        index = make_index([[[0, 0], [0, 1]], [[1, 0], [0, 0]]], rare=(1,))
        exemplars = ExemplarSet(np.array([0]), np.zeros(1))
        transfer = build_transfer_set(exemplars, index, 5, index.rarity)
        self.assertEqual(int(np.sum(transfer.labels == 1)), 5)
        self.assertTrue(np.all(transfer.sources[transfer.exemplar_count:] == 1))

    def test_unlabeled_cells_are_skipped(self):
        index = make_index([[[0, UNLABELED], [1, 1]]])
        transfer = build_transfer_set(ExemplarSet(np.array([0]), np.zeros(1)), index, 1, index.rarity)
        self.assertEqual(sorted(transfer.labels.tolist()), [0, 1, 1])

    def test_missing_rare_class_warns(self):
        index = make_index([[[0, 0], [1, 1]]], rare=(2,))
        exemplars = ExemplarSet(np.array([0]), np.zeros(1))
        with self.assertWarns(DataWarning):
            transfer = build_transfer_set(exemplars, index, 3, RarityPartition(frozenset({0, 1}), frozenset({2})))
        self.assertEqual(len(transfer), 4)

    def test_deterministic(self):
        grids = [np.zeros((6, 6), dtype=int) for _ in range(3)]
        grids[1][2:4] = 2
        grids[2][:, 1] = 2
        index = make_index(grids, rare=(2,))
        exemplars = ExemplarSet(np.array([0]), np.zeros(1))
        a = build_transfer_set(exemplars, index, 10, index.rarity, seed=3, stream=1)
        b = build_transfer_set(exemplars, index, 10, index.rarity, seed=3, stream=1)
        np.testing.assert_array_equal(a.rows, b.rows)
        np.testing.assert_array_equal(a.cols, b.cols)
        np.testing.assert_array_equal(a.sources, b.sources)


class TestGlobalBelief(unittest.TestCase):

    def test_similarity(self):
        a = QueryPixel(np.array([0.0, 0.0]), 0.3)
        self.assertEqual(similarity(a, a), 1.0)
        b = QueryPixel(np.array([0.06, 0.08]), 0.5)
        self.assertAlmostEqual(similarity(a, b), np.exp(-2.5), places=12)
        self.assertAlmostEqual(similarity(a, b), similarity(b, a), places=15)
        self.assertEqual(similarity(a, b, KernelParams(0.0, 0.0)), 1.0)
        self.assertAlmostEqual(similarity(a, b, metric=MetricParams.identity(2)), np.exp(-2.5), places=12)
        self.assertAlmostEqual(similarity(a, b, metric=MetricParams(2 * np.eye(2))), np.exp(-4.0), places=12)

    def test_unanimous_neighbors(self):
        transfer = make_transfer(np.random.default_rng(0).normal(size=(6, 3)), np.zeros(6), [1] * 6)
        belief = global_belief(QueryPixel(np.zeros(3), 0.5), transfer, 4, num_classes=3)
        np.testing.assert_array_equal(belief, [0.0, 1.0, 0.0])

    def test_equal_weights_split_evenly(self):
        transfer = make_transfer([[1.0, 0.0], [-1.0, 0.0], [9.0, 9.0]], [0.2, 0.2, 0.2], [0, 1, 1])
        belief = global_belief(QueryPixel(np.zeros(2), 0.2), transfer, 2, num_classes=2)
        np.testing.assert_allclose(belief, [0.5, 0.5])

    def test_against_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n, d, k = int(rng.integers(1, 40)), int(rng.integers(1, 5)), int(rng.integers(1, 8))
            transfer = make_transfer(rng.normal(size=(n, d)), rng.random(n), rng.integers(0, 4, size=n))
            query = QueryPixel(rng.normal(size=d), float(rng.random()))
            params = KernelParams(float(rng.uniform(0.5, 3)), float(rng.uniform(0, 3)))
            scored = sorted(range(n), key=lambda i: (params.alpha * np.sqrt(np.sum((transfer.features[i] - query.feature) ** 2))
                                                     + params.gamma * abs(transfer.heights[i] - query.height), i))
            votes = np.zeros(4)
            for i in scored[:k]:
                votes[transfer.labels[i]] += similarity(query, transfer[i], params)
            expected = votes / votes.sum()
            np.testing.assert_allclose(global_belief(query, transfer, k, params, num_classes=4), expected,
                                       rtol=0, atol=1e-12)

    def test_vote_is_scale_invariant(self):
        distances = np.array([[0.3, 1.2, 0.7, 2.0]])
        labels = np.array([0, 1, 1, 2])
        np.testing.assert_allclose(_vote(distances + 5.0, labels, 3, 3), _vote(distances, labels, 3, 3),
                                   atol=1e-12)

    def test_far_neighbors_do_not_underflow(self):
        transfer = make_transfer([[100.0], [101.0]], [0.0, 0.0], [0, 1])
        belief = global_belief(QueryPixel(np.zeros(1), 0.0), transfer, 2, KernelParams(15.0, 5.0), num_classes=2)
        np.testing.assert_allclose(belief, [1 / (1 + np.exp(-15.0)), np.exp(-15.0) / (1 + np.exp(-15.0))])

    def test_identity_metric(self):
        rng = np.random.default_rng(2)
        transfer = make_transfer(rng.normal(size=(30, 4)), rng.random(30), rng.integers(0, 3, size=30))
        query = QueryPixel(rng.normal(size=4), 0.4)
        np.testing.assert_allclose(global_belief(query, transfer, 7, metric=MetricParams.identity(4)),
                                   global_belief(query, transfer, 7), atol=1e-12)

    def test_empty_transfer_set(self):
        with self.assertRaises(EmptyDataError):
            global_belief(QueryPixel(np.zeros(2), 0.0), make_transfer(np.zeros((0, 2)), [], []), 3, num_classes=2)

    def test_belief_map(self):
        rng = np.random.default_rng(3)
        transfer = make_transfer(rng.normal(size=(20, 4)), rng.random(20), rng.integers(0, 3, size=20))
        fmap = PixelFeatureMap(rng.normal(size=(2, 3, 4)), 8, (16, 24))
        belief = global_belief_map(fmap, transfer, 5, 3)
        self.assertEqual(belief.probs.shape, (2, 3, 3))
        for r in range(2):
            for c in range(3):
                query = QueryPixel(fmap.features[r, c], fmap.heights[r])
                np.testing.assert_allclose(belief.probs[r, c], global_belief(query, transfer, 5, num_classes=3),
                                           atol=1e-15)


class TestTransferIndex(unittest.TestCase):

    def setUp(self):
        rng = np.random.default_rng(0)
        records = []
        for scene in (0, 1, 0):
            labels = np.zeros((12, 12), dtype=int)
            labels[6:] = 1 + scene
            image = np.array([[60, 90, 200], [200, 170, 90], [90, 200, 90]])[labels]
            records.append(SceneRecord(np.clip(image + rng.normal(scale=5, size=image.shape), 0, 255), labels, scene))
        self.split = DatasetSplit(ClassCatalog(("sky", "sand", "grass")), tuple(records))
        self.network = init_params(tiny_spec(), seed=0)

    def test_build(self):
        index = build_transfer_index(self.split, self.network, eta=0.05)
        self.assertEqual(len(index), 3)
        self.assertEqual(index.descriptors.shape, (3, 5 * 4))
        self.assertEqual(index.cell_features[0].shape, (6, 6, 4))
        self.assertEqual(index.cell_labels[1][5].tolist(), [2] * 6)
        self.assertEqual(index.scene_ids, (0, 1, 0))
        self.assertEqual(index.rare, ())
        self.assertIs(index.feature_network, index.descriptor_network)

    def test_round_trip(self):
        tuned = init_params(tiny_spec(), seed=1)
        for feature_network in (None, tuned):
            index = build_transfer_index(self.split, self.network, feature_network)
            with tempfile.TemporaryDirectory() as tmp:
                path = Path(tmp) / "index.pidx"
                save_index(index, path)
                loaded = load_index(path)
                data = path.read_bytes()
                self.assertTrue(data.startswith(b"PIDX"))
                path.write_bytes(data[:-10])
                with self.assertRaises(FormatError):
                    load_index(path)
            self.assertEqual(loaded.catalog, index.catalog)
            np.testing.assert_array_equal(loaded.descriptors, index.descriptors)
            for a, b in zip(loaded.cell_features, index.cell_features):
                np.testing.assert_array_equal(a, b)
            for a, b in zip(loaded.cell_labels, index.cell_labels):
                np.testing.assert_array_equal(a, b)
            self.assertEqual(loaded.scene_ids, index.scene_ids)
            self.assertTrue(loaded.descriptor_network.equals(self.network))
            self.assertEqual(loaded.feature_network is loaded.descriptor_network, feature_network is None)
            self.assertTrue(loaded.feature_network.equals(index.feature_network))

    def test_beliefs(self):
        index = build_transfer_index(self.split, self.network)
        config = RetrievalConfig(exemplars=10, k=20)
        belief = transfer_beliefs(index, self.split[0].image, config, seed=0, stream=0)
        self.assertEqual(belief.probs.shape, (6, 6, 3))
        self.assertEqual(belief.stride, 2)
        np.testing.assert_allclose(belief.probs.sum(axis=-1), 1.0, atol=1e-12)

    def test_retrieval_config(self):
        self.assertEqual(RetrievalConfig().exemplars, 5)
        self.assertEqual(RetrievalConfig().k, 200)
        self.assertEqual(RetrievalConfig.barcelona().exemplars, 100)
        self.assertEqual(RetrievalConfig().kernel, KernelParams(15.0, 5.0))
        with self.assertRaises(ConfigError):
            RetrievalConfig(k=0)
        with self.assertRaises(ConfigError):
            RetrievalConfig(alpha=-1.0)


if __name__ == "__main__":
    unittest.main()
