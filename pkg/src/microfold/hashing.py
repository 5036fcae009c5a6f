"""Content identity: SHA-256 digests rendered as 64 lowercase hex chars."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .errors import InvalidHash

_HEX64 = re.compile(r"^[0-9a-f]{64}$")

# Store path components carry the first 32 hex chars of a digest.
PREFIX_LEN = 32


@dataclass(frozen=True, order=True)
class ContentHash:
    """A SHA-256 digest, the sole notion of identity in the system."""

    hex: str

    def __post_init__(self):
        if not _HEX64.match(self.hex):
            raise InvalidHash(f"not a 64-char lowercase hex digest: {self.hex!r}")

    @classmethod
    def of_bytes(cls, data: bytes) -> "ContentHash":
        return cls(hashlib.sha256(data).hexdigest())

    @classmethod
    def parse(cls, text: str) -> "ContentHash":
        return cls(text)

    @property
    def prefix(self) -> str:
        return self.hex[:PREFIX_LEN]

    def __str__(self) -> str:
        return self.hex
