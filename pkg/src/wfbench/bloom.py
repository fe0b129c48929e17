import hashlib

import numpy as np


class BloomFilter:
    """Fixed-size Bloom filter over byte strings.

    Uses double hashing on a single blake2b digest, so ``hash_count`` costs no
    extra hashing. False positives are possible; false negatives are not.
    """

    def __init__(self, bits: int, hash_count: int):
        if bits < 8 or hash_count < 1:
            raise ValueError(f"need bits >= 8 and hash_count >= 1, got {bits}, {hash_count}")
        self.bits = int(bits)
        self.hash_count = int(hash_count)
        self._array = np.zeros((self.bits + 7) // 8, dtype=np.uint8)
        self.inserted = 0

    def _positions(self, item: bytes):
        digest = hashlib.blake2b(item, digest_size=16).digest()
        h1 = int.from_bytes(digest[:8], "little")
        h2 = int.from_bytes(digest[8:], "little") | 1
        return [(h1 + i * h2) % self.bits for i in range(self.hash_count)]

    def __contains__(self, item: bytes) -> bool:
        return all(self._array[p >> 3] & (1 << (p & 7)) for p in self._positions(item))

    def add(self, item: bytes) -> bool:
        """Insert ``item``; returns True if it was (probably) already present."""
        present = True
        for p in self._positions(item):
            byte, bit = p >> 3, 1 << (p & 7)
            if not self._array[byte] & bit:
                present = False
                self._array[byte] |= bit
        if not present:
            self.inserted += 1
        return present
