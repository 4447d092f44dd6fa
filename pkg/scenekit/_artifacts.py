"""Reading and writing the versioned binary artifacts.

Every artifact starts with a 4-byte magic string and a little-endian
uint16 format version. The payload is a sequence of length-prefixed
blocks: text, raw bytes, or arrays (dtype code, rank, shape, then the
little-endian values in row-major order).
"""
import io

import numpy as np

from .exceptions import FormatError

_DTYPES = {b"f8": np.dtype("<f8"), b"i8": np.dtype("<i8")}


class ArtifactWriter:

    def __init__(self, fp, magic: bytes, version: int):
        self.fp = fp
        fp.write(magic)
        fp.write(np.array([version], dtype="<u2").tobytes())

    def uint(self, value: int):
        self.fp.write(np.array([value], dtype="<u8").tobytes())

    def text(self, string: str):
        self.blob(string.encode("utf-8"))

    def blob(self, data: bytes):
        self.uint(len(data))
        self.fp.write(data)

    def array(self, values):
        values = np.asarray(values)
        code = b"i8" if np.issubdtype(values.dtype, np.integer) else b"f8"
        values = values.astype(_DTYPES[code])
        self.fp.write(code)
        self.uint(values.ndim)
        for n in values.shape:
            self.uint(n)
        self.fp.write(values.tobytes(order="C"))

    def floats(self, values):
        """Raw float64 values with no shape prefix (shape known from context)."""
        self.fp.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


class ArtifactReader:

    def __init__(self, fp, magic: bytes, versions, source = "<memory>"):
        self.fp = fp
        self.source = source
        found = self._read(4)
        if found != magic:
            raise FormatError(f"{source}: expected magic {magic!r}, found {found!r}")
        self.version = int(np.frombuffer(self._read(2), dtype="<u2")[0])
        if self.version not in versions:
            raise FormatError(f"{source}: unsupported {magic.decode()} version {self.version}")

    def _read(self, n: int) -> bytes:
        data = self.fp.read(n)
        if len(data) != n:
            raise FormatError(f"{self.source}: file is truncated")
        return data

    def uint(self) -> int:
        return int(np.frombuffer(self._read(8), dtype="<u8")[0])

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"{self.source}: invalid text block") from e

    def blob(self) -> bytes:
        return self._read(self.uint())

    def array(self) -> np.ndarray:
        code = self._read(2)
        if code not in _DTYPES:
            raise FormatError(f"{self.source}: unknown array type {code!r}")
        dtype = _DTYPES[code]
        shape = tuple(self.uint() for _ in range(self.uint()))
        count = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(self._read(count * dtype.itemsize), dtype=dtype)
        return values.reshape(shape).astype(dtype.newbyteorder("="))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self._read(count * 8), dtype="<f8").astype(np.float64)

    def finish(self):
        if self.fp.read(1):
            raise FormatError(f"{self.source}: unexpected trailing data")


def write_file(path, magic, version, write):
    """Call `write(writer)` and store the artifact at `path`."""
    buffer = io.BytesIO()
    write(ArtifactWriter(buffer, magic, version))
    with open(path, "wb") as fp:
        fp.write(buffer.getvalue())


def read_file(path, magic, versions, read):
    """Open `path`, check its header and return `read(reader)`."""
    try:
        with open(path, "rb") as fp:
            reader = ArtifactReader(fp, magic, versions, str(path))
            result = read(reader)
            reader.finish()
    except (ValueError, IndexError) as e:
        raise FormatError(f"{path}: {e}") from e
    return result


def to_bytes(magic, version, write) -> bytes:
    buffer = io.BytesIO()
    write(ArtifactWriter(buffer, magic, version))
    return buffer.getvalue()


def from_bytes(data: bytes, magic, versions, read, source = "<memory>"):
    reader = ArtifactReader(io.BytesIO(data), magic, versions, source)
    result = read(reader)
    reader.finish()
    return result
