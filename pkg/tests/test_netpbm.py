from dataclasses import replace
from pathlib import Path
import tempfile
import unittest

import numpy as np

from scenekit.data import UNLABELED, ClassCatalog, DatasetSplit, SceneRecord
from scenekit.exceptions import FormatError
from scenekit.netpbm import load_split, read_image, read_labels, save_split, write_image, write_labels
from scenekit.synth import desk_config, generate_synthetic_scenes


class TestNetpbm(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        config = replace(desk_config(images_per_scene=2, size=32), unlabeled_border=2)
        self.split = generate_synthetic_scenes(config, seed=5)
        self.manifest = self.root / "split.txt"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_split(self.split, self.manifest)
        loaded = load_split(self.manifest)
        self.assertEqual(loaded, self.split)
        self.assertEqual(loaded.catalog.names, self.split.catalog.names)
        self.assertEqual(loaded.scene_ids, [0, 0, 1, 1])
        self.assertTrue(np.any(loaded[0].labels == UNLABELED))

    def test_unknown_scene_ids(self):
        records = tuple(SceneRecord(r.image, r.labels) for r in self.split)
        split = DatasetSplit(self.split.catalog, records, "test")
        save_split(split, self.manifest)
        loaded = load_split(self.manifest)
        self.assertEqual(loaded.role, "test")
        self.assertEqual(loaded.scene_ids, [None] * 4)

    def test_raw_files(self):
        image = np.random.default_rng(0).integers(0, 256, size=(3, 5, 3), dtype=np.uint8)
        labels = np.array([[0, 1, 2, 3, UNLABELED]] * 3)
        write_image(image, self.root / "x.ppm")
        write_labels(labels, self.root / "x.pgm")
        np.testing.assert_array_equal(read_image(self.root / "x.ppm"), image)
        np.testing.assert_array_equal(read_labels(self.root / "x.pgm"), labels)
        self.assertTrue((self.root / "x.pgm").read_bytes().startswith(b"P5"))
        self.assertTrue((self.root / "x.ppm").read_bytes().startswith(b"P6"))

    def test_truncated_image_names_the_record(self):
        save_split(self.split, self.manifest)
        path = self.root / "images" / "00001.ppm"
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with self.assertRaisesRegex(FormatError, "line 3"):
            load_split(self.manifest)

    def test_missing_label_file(self):
        save_split(self.split, self.manifest)
        (self.root / "labels" / "00002.pgm").unlink()
        with self.assertRaisesRegex(FormatError, "line 4"):
            load_split(self.manifest)

    def test_label_outside_catalog(self):
        save_split(self.split, self.manifest)
        write_labels(np.full((32, 32), 7), self.root / "labels" / "00000.pgm")
        with self.assertRaisesRegex(FormatError, "Label value 7"):
            load_split(self.manifest)

    def test_size_mismatch(self):
        save_split(self.split, self.manifest)
        write_labels(np.zeros((16, 32), dtype=int), self.root / "labels" / "00000.pgm")
        with self.assertRaisesRegex(FormatError, "label map is 32x16"):
            load_split(self.manifest)

    def test_malformed_manifest(self):
        save_split(self.split, self.manifest)
        lines = self.manifest.read_text(encoding="utf-8").splitlines()
        for header in ("#scenekit-split 2 role=train classes=a,b",
                       "#scenekit-split 1 role=valid classes=a,b",
                       "#scenekit-split 1 classes=a,b",
                       "P6 nonsense"):
            self.manifest.write_text("\n".join([header] + lines[1:]) + "\n", encoding="utf-8")
            with self.assertRaises(FormatError):
                load_split(self.manifest)

        self.manifest.write_text(lines[0] + "\nimages/00000.ppm\n", encoding="utf-8")
        with self.assertRaisesRegex(FormatError, "3 tab-separated fields"):
            load_split(self.manifest)

        self.manifest.write_text("", encoding="utf-8")
        with self.assertRaises(FormatError):
            load_split(self.manifest)

    def test_wrong_pixmap_kind(self):
        save_split(self.split, self.manifest)
        write_labels(np.zeros((32, 32), dtype=int), self.root / "images" / "00000.ppm")
        with self.assertRaises(FormatError):
            load_split(self.manifest)

    def test_single_class_catalog(self):
        split = DatasetSplit(ClassCatalog(("ground",)),
                             (SceneRecord(np.zeros((2, 2, 3)), np.zeros((2, 2))),))
        save_split(split, self.manifest)
        self.assertEqual(load_split(self.manifest), split)


if __name__ == "__main__":
    unittest.main()
