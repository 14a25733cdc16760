"""Little-endian struct helpers shared by the checkpoint and data formats."""

import struct

import numpy as np


class FormatError(ValueError):
    """A file does not match the expected binary layout."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class Writer:
    def __init__(self, magic: bytes):
        self.parts = [magic]

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def f32(self, v):
        self.parts.append(struct.pack("<f", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def u32_array(self, values):
        self.parts.append(np.asarray(values, dtype="<u4").tobytes())

    def f32_array(self, values):
        self.parts.append(np.ascontiguousarray(values, dtype="<f4").tobytes())

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class Reader:
    def __init__(self, data: bytes, magic: bytes, version: int, path=None):
        self.data = data
        self.path = path
        self.pos = 0
        found = self._take(4)
        if found != magic:
            raise FormatError(f"bad magic {found!r}, expected {magic!r}", path)
        got = self.u32()
        if got != version:
            raise FormatError(f"unsupported {magic.decode()} version {got}", path)

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("truncated file", self.path)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def f32(self):
        return struct.unpack("<f", self._take(4))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def u32_array(self, count):
        return np.frombuffer(self._take(4 * count), dtype="<u4").astype(np.int64)

    def f32_array(self, shape):
        count = int(np.prod(shape))
        raw = np.frombuffer(self._take(4 * count), dtype="<f4")
        return raw.astype(np.float32).reshape(shape)

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.path)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def write_bytes(path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)
