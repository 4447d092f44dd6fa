from pathlib import Path
import tempfile
import unittest

import numpy as np

from scenekit.data import UNLABELED, ClassCatalog
from scenekit.ensemble import LocalBeliefMap
from scenekit.exceptions import ConfigError, EmptyDataError
from scenekit.integration import EnergyMap, belief_energy, evaluate, infer_labels, integrate, local_energy
from scenekit.transfer import GlobalBeliefMap


def belief_pair(local, global_, stride = 1):
    local = np.asarray(local, dtype=np.float64)
    shape = (local.shape[0] * stride, local.shape[1] * stride)
    return (LocalBeliefMap(local, stride, shape),
            GlobalBeliefMap(np.asarray(global_, dtype=np.float64), stride, shape))


class TestEnergy(unittest.TestCase):

    def test_local_energy(self):
        np.testing.assert_allclose(local_energy([0.5, 0.5]), [np.log(2), np.log(2)])
        np.testing.assert_allclose(local_energy([1.0, 0.0]), [0.0, -np.log(1e-12)])
        self.assertTrue(np.all(np.isfinite(local_energy([[0.0, 0.0, 1.0]]))))
        with self.assertRaises(ConfigError):
            local_energy([0.5, 0.6])
        with self.assertRaises(ConfigError):
            local_energy([-0.5, 1.5])

    def test_integrate(self):
        local, global_ = belief_pair([[[0.6, 0.4]]], [[[0.3, 0.7]]])
        energy = integrate(local, global_)
        np.testing.assert_allclose(energy.energies[0, 0], [-np.log(0.18), -np.log(0.28)])
        self.assertEqual(infer_labels(energy).tolist(), [[1]])
        self.assertEqual(infer_labels(belief_energy(local)).tolist(), [[0]])

    def test_uniform_global_belief_keeps_the_local_labels(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(4), size=(3, 5))
        local, global_ = belief_pair(probs, np.full((3, 5, 4), 0.25), stride=2)
        labels = infer_labels(integrate(local, global_))
        np.testing.assert_array_equal(labels, infer_labels(belief_energy(local)))
        np.testing.assert_array_equal(labels[::2, ::2], np.argmax(probs, axis=-1))

    def test_geometry_mismatch(self):
        local, global_ = belief_pair(np.full((2, 2, 2), 0.5), np.full((2, 2, 2), 0.5))
        with self.assertRaises(ConfigError):
            integrate(local, GlobalBeliefMap(global_.probs, 2, global_.image_shape))
        with self.assertRaises(ConfigError):
            integrate(local, GlobalBeliefMap(np.full((2, 3, 2), 0.5), 1, local.image_shape))
        with self.assertRaises(ConfigError):
            integrate(local, GlobalBeliefMap(np.full((2, 2, 3), 1 / 3), 1, local.image_shape))


class TestInferLabels(unittest.TestCase):

    def test_ties_go_to_the_lowest_id(self):
        energy = EnergyMap(np.array([[[1.0, 1.0, 2.0], [3.0, 0.5, 0.5]]]), 1, (1, 2))
        self.assertEqual(infer_labels(energy).tolist(), [[0, 1]])

    def test_constant_offset(self):
        energies = np.random.default_rng(1).normal(size=(3, 3, 4))
        labels = infer_labels(EnergyMap(energies, 1, (3, 3)))
        np.testing.assert_array_equal(infer_labels(EnergyMap(energies + 7.5, 1, (3, 3))), labels)

    def test_replication(self):
        cells = np.arange(16).reshape(4, 4) % 3
        energies = np.eye(3)[cells] * -1.0
        labels = infer_labels(EnergyMap(energies, 2, (7, 8)))
        self.assertEqual(labels.shape, (7, 8))
        self.assertEqual(labels.dtype, np.int64)
        for r in range(7):
            for c in range(8):
                self.assertEqual(labels[r, c], cells[r // 2, c // 2])

    def test_non_finite(self):
        with self.assertRaises(ConfigError):
            infer_labels(EnergyMap(np.array([[[np.nan, 0.0]]]), 1, (1, 1)))


class TestEvaluate(unittest.TestCase):

    def setUp(self):
        self.catalog = ClassCatalog(("sky", "sea", "boat"))

    def test_perfect(self):
        truth = np.array([[0, 1, 2], [2, 1, 0]])
        report = evaluate(truth, truth, self.catalog)
        self.assertEqual(report.gpa, 1.0)
        self.assertEqual(report.aca, 1.0)
        np.testing.assert_array_equal(report.confusion, np.diag([2, 2, 2]))

    def test_gpa_and_aca(self):
        truth = np.array([[0, 0, 0, 1]])
        report = evaluate(np.zeros((1, 4), dtype=int), truth, self.catalog)
        self.assertEqual(report.gpa, 0.75)
        self.assertEqual(report.aca, 0.5)
        self.assertEqual(report.recall("sea"), 0.0)
        self.assertEqual(report.recall("boat"), 0.0)
        self.assertFalse(report.present[2])

    def test_balanced_classes(self):
        rng = np.random.default_rng(2)
        truth = np.repeat([0, 1, 2], 100).reshape(3, 100)
        predictions = np.where(rng.random(truth.shape) < 0.8, truth, rng.integers(0, 3, size=truth.shape))
        report = evaluate(predictions, truth, self.catalog)
        self.assertAlmostEqual(report.gpa, report.aca, places=12)

    def test_unlabeled_pixels_are_ignored(self):
        truth = np.array([[0, UNLABELED], [1, UNLABELED]])
        predictions = np.array([[0, 2], [1, 2]])
        report = evaluate(predictions, truth, self.catalog)
        self.assertEqual(report.total, 2)
        self.assertEqual(report.gpa, 1.0)
        self.assertEqual(report.confusion[:, 2].sum(), 0)

    def test_several_maps(self):
        truths = [np.array([[0, 1]]), np.array([[2, 2, 2]])]
        predictions = [np.array([[0, 0]]), np.array([[2, 2, 1]])]
        report = evaluate(predictions, truths, self.catalog)
        self.assertEqual(report.total, 5)
        self.assertAlmostEqual(report.gpa, 3 / 5)
        self.assertAlmostEqual(report.aca, (1 + 0 + 2 / 3) / 3)

    def test_invalid(self):
        with self.assertRaises(EmptyDataError):
            evaluate(np.zeros((2, 2), dtype=int), np.full((2, 2), UNLABELED), self.catalog)
        with self.assertRaises(ConfigError):
            evaluate(np.zeros((2, 2), dtype=int), np.zeros((2, 3), dtype=int), self.catalog)
        with self.assertRaises(ConfigError):
            evaluate(np.full((2, 2), 3), np.zeros((2, 2), dtype=int), self.catalog)
        with self.assertRaises(ConfigError):
            evaluate([np.zeros((2, 2), dtype=int)], [], self.catalog)

    def test_report_files(self):
        report = evaluate(np.zeros((1, 4), dtype=int), np.array([[0, 0, 0, 1]]), self.catalog)
        self.assertEqual(report.to_text(), "gpa\t0.75\naca\t0.5\nlabeled_pixels\t4\n"
                                           "recall.sky\t1.0\nrecall.sea\t0.0\n")
        self.assertEqual(report.to_csv(), "truth\\predicted,sky,sea,boat\nsky,3,0,0\nsea,1,0,0\nboat,0,0,0\n")
        with tempfile.TemporaryDirectory() as tmp:
            text_path, csv_path = Path(tmp) / "report.txt", Path(tmp) / "confusion.csv"
            report.write(text_path, csv_path)
            self.assertEqual(text_path.read_text(encoding="utf-8"), report.to_text())
            self.assertEqual(csv_path.read_text(encoding="utf-8"), report.to_csv())


if __name__ == "__main__":
    unittest.main()
