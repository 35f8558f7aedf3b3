"""Prime-field arithmetic over moduli up to 61 bits.

Residues are kept canonical (non-negative, below the modulus) at every API
boundary.  Vectors are numpy ``uint64`` arrays, which is safe because two
canonical residues below 2^61 sum to less than 2^62.  Products can reach
122 bits, so multiplication routes through Python integers (``object``
dtype for vectors) instead of fixed-width words.
"""

from __future__ import annotations

import struct

import numpy as np

MAX_MODULUS_BITS = 61

# Witness set sufficient for deterministic Miller-Rabin on every 64-bit
# integer (Sorenson & Webster).
_MR_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


class FieldError(ValueError):
    """Invalid modulus, residue, or vector operand."""


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin primality test for n < 2^64."""
    if n < 2:
        return False
    for p in _MR_WITNESSES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_WITNESSES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


class FieldModulus(int):
    """A validated prime modulus in (2, 2^61).

    Subclasses ``int`` so it participates in arithmetic directly; the
    upper bound leaves three spare high bits in a 64-bit word.
    """

    def __new__(cls, value: int) -> "FieldModulus":
        value = int(value)
        if not 2 < value < (1 << MAX_MODULUS_BITS):
            raise FieldError(f"modulus {value} outside (2, 2^{MAX_MODULUS_BITS})")
        if not is_prime(value):
            raise FieldError(f"modulus {value} is not prime")
        return super().__new__(cls, value)


def find_prime_above(lower_bound: int) -> FieldModulus:
    """Smallest prime strictly greater than ``lower_bound``."""
    if lower_bound < 2:
        raise FieldError("lower bound must be at least 2")
    limit = 1 << MAX_MODULUS_BITS
    if lower_bound >= limit - (1 << 32):
        raise FieldError("no 61-bit prime can be guaranteed above this bound")
    n = lower_bound + 1
    if n % 2 == 0 and n > 2:
        n += 1
    while n < limit:
        if is_prime(n):
            return FieldModulus(n)
        n += 2
    raise FieldError("prime search exceeded the 61-bit modulus limit")


# -- scalar operations -------------------------------------------------------

def fe_add(a: int, b: int, r: int) -> int:
    return (a + b) % r


def fe_neg(a: int, r: int) -> int:
    return (-a) % r


def fe_sub(a: int, b: int, r: int) -> int:
    return (a - b) % r


def fe_mul(a: int, b: int, r: int) -> int:
    # Python ints are arbitrary precision; the 122-bit intermediate is safe.
    return a * b % r


def to_signed(a: int, r: int) -> int:
    """Absolute-minimum-remainder view: result in [-(r-1)/2, (r-1)/2]."""
    return a if a <= (r - 1) // 2 else a - r


def from_signed(s: int, r: int) -> int:
    half = (r - 1) // 2
    if not -half <= s <= half:
        raise FieldError(f"signed value {s} outside [-(r-1)/2, (r-1)/2]")
    return s % r


# -- vector operations -------------------------------------------------------

def vec_from_ints(values, r: int) -> np.ndarray:
    arr = np.asarray([v % r for v in values], dtype=np.uint64)
    return arr


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise FieldError(f"length mismatch: {a.shape} vs {b.shape}")


def vec_add(a: np.ndarray, b: np.ndarray, r: int) -> np.ndarray:
    _check_lengths(a, b)
    return (a + b) % np.uint64(r)


def vec_sub(a: np.ndarray, b: np.ndarray, r: int) -> np.ndarray:
    _check_lengths(a, b)
    return (a + (np.uint64(r) - b)) % np.uint64(r)


def vec_neg(a: np.ndarray, r: int) -> np.ndarray:
    return (np.uint64(r) - a) % np.uint64(r)


def vec_sum(vectors, r: int) -> np.ndarray:
    """Modular sum of a non-empty sequence of equal-length vectors."""
    it = iter(vectors)
    try:
        acc = next(it).copy()
    except StopIteration:
        raise FieldError("cannot sum an empty sequence of vectors") from None
    for v in it:
        acc = vec_add(acc, v, r)
    return acc


def vec_to_signed(a: np.ndarray, r: int) -> np.ndarray:
    """Signed representatives as int64 (valid since r < 2^61)."""
    half = np.uint64((r - 1) // 2)
    out = a.astype(np.int64)
    out[a > half] -= np.int64(r)
    return out


def vec_from_signed(s: np.ndarray, r: int) -> np.ndarray:
    half = (r - 1) // 2
    s = np.asarray(s, dtype=np.int64)
    if s.size and (int(s.max()) > half or int(s.min()) < -half):
        raise FieldError("signed vector outside the representable range")
    return np.where(s < 0, s + np.int64(r), s).astype(np.uint64)


def dot(a: np.ndarray, b: np.ndarray, r: int) -> int:
    """Modular dot product; exact via arbitrary-precision intermediates."""
    _check_lengths(a, b)
    if a.size == 0:
        return 0
    return int((a.astype(object) * b.astype(object)).sum() % r)


# -- serialization -----------------------------------------------------------
# Field elements travel as 8-byte little-endian words.  The standalone
# vector format (used for model files) carries a 4-byte element count;
# message payloads embed the raw words and recover the count from the
# frame's payload length.

def elem_to_bytes(a: int) -> bytes:
    return struct.pack("<Q", a)


def elem_from_bytes(data: bytes) -> int:
    if len(data) != 8:
        raise FieldError(f"field element must be 8 bytes, got {len(data)}")
    return struct.unpack("<Q", data)[0]


def vec_to_raw(a: np.ndarray) -> bytes:
    return a.astype("<u8").tobytes()


def vec_from_raw(data: bytes) -> np.ndarray:
    if len(data) % 8 != 0:
        raise FieldError("raw vector byte length must be a multiple of 8")
    return np.frombuffer(data, dtype="<u8").astype(np.uint64)


def vec_to_bytes(a: np.ndarray) -> bytes:
    return struct.pack("<I", a.size) + vec_to_raw(a)


def vec_from_bytes(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise FieldError("vector encoding shorter than its count prefix")
    (count,) = struct.unpack("<I", data[:4])
    body = data[4:]
    if len(body) != 8 * count:
        raise FieldError(f"vector encoding expects {8 * count} body bytes, got {len(body)}")
    return vec_from_raw(body)
