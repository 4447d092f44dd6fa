"""Reading and writing dataset splits.

A split is a UTF-8 manifest plus one binary portable pixmap (P6) per
image and one 16-bit binary portable graymap (P5, maxval 65535) per label
map. The manifest starts with a header line

    #scenekit-split 1 role=<role> classes=<name>,<name>,...

followed by one record per line: image path, label path and scene id
(empty when unknown), separated by tabs. Paths are relative to the
manifest's directory.
"""
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .data import ClassCatalog, DatasetSplit, SceneRecord, UNLABELED
from .exceptions import ConfigError, FormatError

logger = logging.getLogger(__name__)

MANIFEST_MAGIC = "#scenekit-split"
MANIFEST_VERSION = 1


def write_image(image, path):
    Image.fromarray(np.asarray(image, dtype=np.uint8)).save(path, format="PPM")


def write_labels(labels, path):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > UNLABELED:
        raise ConfigError(f"Label values must fit in 16 bits to be written to {path}")
    Image.fromarray(labels.astype(np.int32)).save(path, format="PPM")


def read_image(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.format != "PPM" or img.mode != "RGB":
            raise FormatError(f"{path}: expected a binary RGB pixmap, found {img.format} {img.mode}")
        img.load()
        return np.asarray(img, dtype=np.uint8).copy()


def read_labels(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.format != "PPM" or img.mode not in ("I", "I;16", "I;16B"):
            raise FormatError(f"{path}: expected a 16-bit graymap, found {img.format} {img.mode}")
        img.load()
        return np.asarray(img).astype(np.int64)


def save_split(split: DatasetSplit, path):
    """Write `split` as a manifest at `path` with images and label maps
    stored in `images/` and `labels/` next to it."""
    path = Path(path)
    root = path.parent
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)

    lines = [f"{MANIFEST_MAGIC} {MANIFEST_VERSION} role={split.role} classes={','.join(split.catalog.names)}"]
    for i, record in enumerate(split):
        image_path = f"images/{i:05d}.ppm"
        label_path = f"labels/{i:05d}.pgm"
        write_image(record.image, root / image_path)
        write_labels(record.labels, root / label_path)
        scene = "" if record.scene_id is None else str(record.scene_id)
        lines.append(f"{image_path}\t{label_path}\t{scene}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("wrote %d records to %s", len(split), path)


def _parse_header(line: str, path):
    parts = line.split()
    if len(parts) != 4 or parts[0] != MANIFEST_MAGIC:
        raise FormatError(f"{path}: malformed split header: '{line}'")
    if parts[1] != str(MANIFEST_VERSION):
        raise FormatError(f"{path}: unsupported split version {parts[1]}")
    fields = {}
    for part in parts[2:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise FormatError(f"{path}: malformed split header field '{part}'")
        fields[key] = value
    if set(fields) != {"role", "classes"}:
        raise FormatError(f"{path}: split header needs exactly 'role' and 'classes'")
    if fields["role"] not in ("train", "test"):
        raise FormatError(f"{path}: unknown split role '{fields['role']}'")
    try:
        return fields["role"], ClassCatalog(tuple(fields["classes"].split(",")))
    except ConfigError as e:
        raise FormatError(f"{path}: {e}") from e


def load_split(path) -> DatasetSplit:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise FormatError(f"{path}: manifest is not UTF-8 text") from e
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    role, catalog = _parse_header(lines[0], path)

    records = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path}, record on line {number}"
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"{where}: expected 3 tab-separated fields, found {len(fields)}")
        image_path, label_path, scene = fields
        try:
            scene_id = int(scene) if scene else None
        except ValueError:
            raise FormatError(f"{where}: scene id '{scene}' is not an integer") from None
        try:
            image = read_image(path.parent / image_path)
            labels = read_labels(path.parent / label_path)
        except FileNotFoundError as e:
            raise FormatError(f"{where}: missing file {e.filename}") from e
        except FormatError as e:
            raise FormatError(f"{where}: {e}") from e
        except (OSError, ValueError, SyntaxError) as e:
            raise FormatError(f"{where}: cannot read image data ({e})") from e
        if labels.shape != image.shape[:2]:
            raise FormatError(f"{where}: label map is {labels.shape[1]}x{labels.shape[0]} "
                              f"but image is {image.shape[1]}x{image.shape[0]}")
        try:
            catalog.validate(labels)
        except ConfigError as e:
            raise FormatError(f"{where}: {e}") from e
        records.append(SceneRecord(image, labels, scene_id, Path(image_path).stem))

    return DatasetSplit(catalog, tuple(records), role)
