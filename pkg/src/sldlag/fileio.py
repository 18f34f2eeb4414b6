"""Binary file plumbing shared by the SLD* formats: framed reads with
distinct error types, and atomic writes (temp file + rename)."""

import os
import struct
import tempfile


class FormatError(Exception):
    """Base class for file-format problems."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(FormatError):
    """File ended before a complete record could be read."""


class Reader:
    """Cursor over an in-memory blob with typed, bounds-checked reads."""

    def __init__(self, data: bytes, name: str = "<blob>"):
        self.data = data
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(
                f"{self.name}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, expect: bytes):
        got = self.take(len(expect))
        if got != expect:
            raise BadMagic(f"{self.name}: magic {got!r}, expected {expect!r}")

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(
                f"{self.name}: {len(self.data) - self.pos} trailing bytes"
            )


def atomic_write(path, data: bytes):
    """Write via a temp file in the same directory and rename into place."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
