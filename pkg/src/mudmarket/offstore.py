"""Content-addressed blob store standing in for IPFS.

Blobs are kept as raw bytes under ``<root>/<d[0:2]>/<d[2:4]>/<d>`` where ``d``
is the SHA-256 hex digest of the content.  Every read re-hashes the blob, so
tampering on disk surfaces as :class:`~mudmarket.errors.IntegrityError`.
"""

from __future__ import annotations

import hashlib
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from .errors import BlobNotFound, EmptyContent, IntegrityError, StoreError


def digest_of(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


@dataclass(frozen=True, order=True)
class StoreIndex:
    digest: str

    def __post_init__(self):
        d = self.digest
        if len(d) != 64 or d != d.lower() or any(c not in "0123456789abcdef" for c in d):
            raise StoreError(f"not a 64-hex-digit index: {d!r}", code="bad-index")

    def __str__(self) -> str:
        return self.digest

    @classmethod
    def of(cls, content: bytes) -> "StoreIndex":
        return cls(digest_of(content))


class BlobStore:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, index: StoreIndex) -> Path:
        d = index.digest
        return self.root / d[:2] / d[2:4] / d

    def put(self, content: bytes) -> StoreIndex:
        if not content:
            raise EmptyContent("refusing to store empty content")
        index = StoreIndex.of(content)
        target = self.path_for(index)
        if target.exists():
            return index
        target.parent.mkdir(parents=True, exist_ok=True)
        # write-then-rename keeps concurrent puts of the same blob safe
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(content)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return index

    def get(self, index: StoreIndex | str) -> bytes:
        if isinstance(index, str):
            index = StoreIndex(index)
        path = self.path_for(index)
        try:
            content = path.read_bytes()
        except FileNotFoundError:
            raise BlobNotFound(f"no blob for index {index}") from None
        if digest_of(content) != index.digest:
            raise IntegrityError(f"blob {index} does not hash to its index")
        return content

    def __contains__(self, index: StoreIndex) -> bool:
        return self.path_for(index).exists()

    def verify(self, index: StoreIndex | str, content: bytes) -> bool:
        return verify(index, content)


def verify(index: StoreIndex | str, content: bytes) -> bool:
    """True iff ``content`` is non-empty and hashes to ``index``."""
    digest = index.digest if isinstance(index, StoreIndex) else str(index)
    return bool(content) and digest_of(content) == digest
