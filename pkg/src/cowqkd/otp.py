"""One-time pad over a key store that never hands out the same bit twice."""

from __future__ import annotations

import numpy as np


class KeyReuseError(ValueError):
    pass


class InsufficientKey(ValueError):
    pass


class KeyStore:
    """Final-key bits plus the half-open ranges already spent."""

    def __init__(self, bits):
        self._bits = np.asarray(bits, dtype=np.uint8).copy()
        self.spent: list[tuple[int, int]] = []

    def __len__(self):
        return len(self._bits)

    @property
    def available(self) -> int:
        return len(self._bits) - sum(b - a for a, b in self.spent)

    def next_offset(self) -> int:
        return max((b for _, b in self.spent), default=0)

    def take(self, nbits: int, offset: int | None = None) -> tuple[int, np.ndarray]:
        """Mark ``[offset, offset + nbits)`` spent and return those bits."""
        offset = self.next_offset() if offset is None else offset
        end = offset + nbits
        if nbits < 0 or offset < 0:
            raise ValueError("negative range")
        if end > len(self._bits):
            raise InsufficientKey(f"need bits [{offset}, {end}), store holds {len(self._bits)}")
        for a, b in self.spent:
            if offset < b and a < end:
                raise KeyReuseError(f"bits [{offset}, {end}) overlap spent range [{a}, {b})")
        if nbits:
            self.spent.append((offset, end))
        return offset, self._bits[offset:end].copy()


def _xor(store: KeyStore, data: bytes, offset: int | None) -> tuple[bytes, int]:
    msg = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))
    start, pad = store.take(len(msg), offset)
    return np.packbits(msg ^ pad).tobytes(), start


def otp_encrypt(store: KeyStore, plaintext: bytes, offset: int | None = None) -> tuple[bytes, int]:
    """Returns (ciphertext, key offset used)."""
    return _xor(store, plaintext, offset)


def otp_decrypt(store: KeyStore, ciphertext: bytes, offset: int | None = None) -> bytes:
    return _xor(store, ciphertext, offset)[0]
