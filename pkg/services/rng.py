"""
Counter-based random numbers for dirac-loc
Philox4x32-10 keyed by the 64-bit master seed, with counter words
(cell low, cell high, channel, stream). Every draw is a pure function of
(seed, cell, channel, stream), so words can be generated in any order.
"""

import numpy as np

PHILOX_M4x32_0 = np.uint64(0xD2511F53)
PHILOX_M4x32_1 = np.uint64(0xCD9E8D57)
PHILOX_W32_0 = 0x9E3779B9
PHILOX_W32_1 = 0xBB67AE85
PHILOX_ROUNDS = 10

MASK32 = np.uint64(0xFFFFFFFF)
SHIFT32 = np.uint64(32)
SEED_MODULUS = 1 << 64

# Stream tags
STREAM_DISORDER = 0
STREAM_SAMPLE_SEED = 0xD15C


def split_seed(seed: int) -> tuple[int, int]:
    """Split a 64-bit seed into the two Philox key words."""
    seed = int(seed) % SEED_MODULUS
    return seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF


def philox4x32(counter: np.ndarray, key: tuple[int, int]) -> np.ndarray:
    """
    Apply ten Philox rounds to an array of counters.
    counter has shape (..., 4) with 32-bit values; the result has the same
    shape and holds the four output words as uint64.
    """
    ctr = np.asarray(counter, dtype=np.uint64) & MASK32
    c0, c1, c2, c3 = (ctr[..., i] for i in range(4))
    k0, k1 = int(key[0]) & 0xFFFFFFFF, int(key[1]) & 0xFFFFFFFF

    for _ in range(PHILOX_ROUNDS):
        prod0 = c0 * PHILOX_M4x32_0
        prod1 = c2 * PHILOX_M4x32_1
        hi0, lo0 = prod0 >> SHIFT32, prod0 & MASK32
        hi1, lo1 = prod1 >> SHIFT32, prod1 & MASK32

        c0, c1, c2, c3 = (
            hi1 ^ c1 ^ np.uint64(k0),
            lo1,
            hi0 ^ c3 ^ np.uint64(k1),
            lo0,
        )
        k0 = (k0 + PHILOX_W32_0) & 0xFFFFFFFF
        k1 = (k1 + PHILOX_W32_1) & 0xFFFFFFFF

    return np.stack([c0, c1, c2, c3], axis=-1)


def _counters(cells: np.ndarray, channels: int, stream: int) -> np.ndarray:
    cell_words = np.asarray(cells, dtype=np.int64).astype(np.uint64)
    n_cells = cell_words.shape[0]
    counter = np.empty((n_cells, channels, 4), dtype=np.uint64)
    counter[..., 0] = (cell_words & MASK32)[:, None]
    counter[..., 1] = (cell_words >> SHIFT32)[:, None]
    counter[..., 2] = np.arange(channels, dtype=np.uint64)[None, :]
    counter[..., 3] = np.uint64(stream)
    return counter


def uniforms(seed: int, cells: np.ndarray, channels: int, stream: int = STREAM_DISORDER) -> np.ndarray:
    """
    Uniform doubles in [0, 1) for every (cell, channel) pair.
    The 53-bit mantissa is built from output words 0 and 1.
    """
    words = philox4x32(_counters(cells, channels, stream), split_seed(seed))
    mantissa = ((words[..., 0] >> np.uint64(5)) << np.uint64(26)) | (words[..., 1] >> np.uint64(6))
    return mantissa.astype(np.float64) * 2.0 ** -53


def derive_seed(seed: int, index: int, stream: int = STREAM_SAMPLE_SEED) -> int:
    """Independent 64-bit seed for sample number index."""
    words = philox4x32(_counters(np.array([index]), 1, stream), split_seed(seed))
    return int(words[0, 0, 0]) | (int(words[0, 0, 1]) << 32)


def sample_seed_chunks(seed: int, samples: int, workers: int) -> list:
    """Seeds of samples 0..samples-1 in contiguous chunks, one per worker."""
    seeds = [derive_seed(seed, k) for k in range(samples)]
    size = max(1, -(-samples // max(1, workers)))
    return [seeds[i:i + size] for i in range(0, samples, size)]
