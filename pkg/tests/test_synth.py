import unittest

import numpy as np

from scenekit.data import UNLABELED, compute_class_frequencies, extract_patches, preprocess
from scenekit.exceptions import ConfigError
from scenekit.synth import (Band, ClassStyle, SceneCategory, SceneObject, SynthConfig, ambiguous_pairs,
                            desk_config, generate_synthetic_scenes, imbalanced_config)


class TestSynth(unittest.TestCase):

    def test_deterministic(self):
        config = desk_config(images_per_scene=2)
        a = generate_synthetic_scenes(config, seed=7)
        b = generate_synthetic_scenes(config, seed=7)
        self.assertEqual(a, b)
        for x, y in zip(a, b):
            self.assertEqual(x.image.tobytes(), y.image.tobytes())
        c = generate_synthetic_scenes(config, seed=8)
        self.assertNotEqual(a, c)

    def test_desk_layout(self):
        config = desk_config(images_per_scene=3)
        split = generate_synthetic_scenes(config, seed=0)
        names = split.catalog.names
        self.assertEqual(names, ("sky", "sun", "sand", "building", "grass", "water", "road"))
        self.assertEqual(split.scene_ids, [0, 0, 0, 1, 1, 1])
        self.assertEqual(split[0].name, "beach-0")
        self.assertEqual(split[3].name, "street-0")
        for record in split:
            self.assertEqual(record.shape, (64, 64))
            bottom = set(np.unique(record.labels[48:]).tolist())
            self.assertEqual(bottom, {names.index("water")} if record.scene_id == 0 else {names.index("road")})
            self.assertEqual(set(np.unique(record.labels[32:48]).tolist()), {names.index("grass")})
        self.assertEqual(split.role, "train")
        self.assertEqual(generate_synthetic_scenes(desk_config(1, role="test"), seed=0).role, "test")

    def test_band_proportions(self):
        config = SynthConfig((ClassStyle("a", (10, 10, 10)), ClassStyle("b", (200, 200, 200))),
                             (SceneCategory("s", (Band("a", 100), Band("b", 1))),),
                             height=101, width=8, images_per_scene=3)
        counts = compute_class_frequencies(generate_synthetic_scenes(config, seed=0)).counts
        self.assertAlmostEqual(counts[0] / counts[1], 100.0, delta=10.0)

    def test_objects(self):
        config = imbalanced_config(images_per_scene=6)
        split = generate_synthetic_scenes(config, seed=1)
        freqs = compute_class_frequencies(split).frequencies
        stone = split.catalog.index("stone")
        self.assertGreater(freqs[stone], 0)
        self.assertLess(freqs[stone], 0.05)
        for record in split:
            rows = np.nonzero(record.labels == stone)[0]
            self.assertTrue(np.all(rows >= int(0.3 * 32)))

    def test_unlabeled_border(self):
        config = SynthConfig((ClassStyle("a", (10, 10, 10)),), (SceneCategory("s", (Band("a"),)),),
                             height=10, width=12, images_per_scene=1, unlabeled_border=2)
        labels = generate_synthetic_scenes(config, seed=0)[0].labels
        self.assertTrue(np.all(labels[:2] == UNLABELED))
        self.assertTrue(np.all(labels[:, -2:] == UNLABELED))
        self.assertTrue(np.all(labels[2:-2, 2:-2] == 0))

    def test_ambiguous_pair(self):
        config = desk_config(images_per_scene=4)
        water, road = config.catalog.index("water"), config.catalog.index("road")
        self.assertEqual(ambiguous_pairs(config), [(water, road)])
        self.assertEqual(ambiguous_pairs(imbalanced_config()), [])

        split = generate_synthetic_scenes(config, seed=2)
        samples = {water: [], road: []}
        for record in split:
            rows, cols = np.nonzero((record.labels == water) | (record.labels == road))
            patches = extract_patches(preprocess(record.image), rows, cols, 17)
            samples[int(record.labels[rows[0], cols[0]])].append(patches)
        a = np.concatenate(samples[water])
        b = np.concatenate(samples[road])
        self.assertEqual(a.shape, b.shape)
        self.assertLess(abs(a.mean() - b.mean()), 0.05)
        self.assertLess(abs(a.std() - b.std()), 0.05)
        np.testing.assert_allclose(a.mean(axis=0), b.mean(axis=0), atol=0.1)

    def test_invalid(self):
        style = ClassStyle("a", (1, 2, 3))
        scene = SceneCategory("s", (Band("a"),))
        with self.assertRaises(ConfigError):
            generate_synthetic_scenes(SynthConfig((), (scene,)), seed=0)
        with self.assertRaises(ConfigError):
            generate_synthetic_scenes(SynthConfig((style,), ()), seed=0)
        with self.assertRaises(ConfigError):
            generate_synthetic_scenes(SynthConfig((style,), (SceneCategory("s", (Band("b"),)),)), seed=0)
        with self.assertRaises(ConfigError):
            generate_synthetic_scenes(SynthConfig((style,), (SceneCategory("s", (Band("a"),),
                                                                           (SceneObject("a", 99, 1),)),)), seed=0)


if __name__ == "__main__":
    unittest.main()
