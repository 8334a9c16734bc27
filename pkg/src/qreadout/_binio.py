"""Little-endian binary record helpers shared by the artifact file formats."""

import struct

import numpy as np


class FormatError(ValueError):
    """Raised when a binary artifact cannot be parsed.

    The byte offset at which parsing failed is kept on ``offset``.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class Reader:
    """Sequential reader over an in-memory buffer that tracks its offset."""

    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def _take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated payload reading {what}: need {n} bytes, "
                f"{len(self.buf) - self.pos} left", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def magic(self, expected: bytes):
        got = bytes(self._take(len(expected), "magic"))
        if got != expected:
            raise FormatError(f"bad magic {got!r}, expected {expected!r}", self.pos - len(expected))

    def version(self, supported: int):
        start = self.pos
        v = self.scalar("<H", "version")
        if v != supported:
            raise FormatError(f"unsupported version {v}", start)
        return v

    def scalar(self, fmt, what="field"):
        return struct.unpack(fmt, self._take(struct.calcsize(fmt), what))[0]

    def array(self, dtype, count, what="array"):
        dt = np.dtype(dtype).newbyteorder("<")
        chunk = self._take(dt.itemsize * count, what)
        return np.frombuffer(chunk, dtype=dt, count=count).astype(dt.newbyteorder("="))

    @property
    def remaining(self):
        return len(self.buf) - self.pos

    def finish(self):
        if self.remaining:
            raise FormatError(f"{self.remaining} trailing bytes", self.pos)


def pack(fmt, *values) -> bytes:
    return struct.pack(fmt, *values)


def le_bytes(arr, dtype) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


def read_source(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()


def write_destination(destination, payload: bytes):
    if hasattr(destination, "write"):
        destination.write(payload)
        return
    with open(destination, "wb") as fh:
        fh.write(payload)
