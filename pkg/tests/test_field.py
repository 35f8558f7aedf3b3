import random

import numpy as np
import pytest

from vsecagg import field
from vsecagg.field import (FieldError, FieldModulus, dot, fe_add, fe_mul,
                           find_prime_above, from_signed, is_prime, to_signed,
                           vec_add, vec_from_ints, vec_sub, vec_sum,
                           vec_to_signed, vec_from_signed)

R17 = 17
R97 = 97
# Computed once with an incremental search over the deterministic
# Miller-Rabin test and cross-checked against sympy.nextprime(2**60).
PRIME_ABOVE_2_60 = 1152921504606847009


def test_is_prime_against_trial_division():
    def trial(n):
        if n < 2:
            return False
        k = 2
        while k * k <= n:
            if n % k == 0:
                return False
            k += 1
        return True

    for n in range(2000):
        assert is_prime(n) == trial(n), n


def test_find_prime_above_small():
    assert find_prime_above(10) == 11
    assert find_prime_above(16) == 17


def test_find_prime_above_2_60():
    p = find_prime_above(1 << 60)
    assert p == PRIME_ABOVE_2_60
    assert is_prime(p)


def test_find_prime_above_idempotent():
    for bound in (10, 16, 100, 1 << 20):
        p = find_prime_above(bound)
        assert find_prime_above(p - 1) == p


def test_find_prime_above_rejects_out_of_range():
    with pytest.raises(FieldError):
        find_prime_above(1)
    with pytest.raises(FieldError):
        find_prime_above((1 << 61) - 1)


def test_modulus_validation():
    assert FieldModulus(17) == 17
    with pytest.raises(FieldError):
        FieldModulus(15)
    with pytest.raises(FieldError):
        FieldModulus(2)
    with pytest.raises(FieldError):
        FieldModulus((1 << 61) + 9)  # prime but too wide


def test_fe_add_examples():
    assert fe_add(16, 5, R17) == 4
    assert fe_add(0, 13, R17) == 13
    for x in range(R17):
        assert fe_add(x, (R17 - x) % R17, R17) == 0


def test_fe_mul_examples():
    assert fe_mul(5, 7, R17) == 1  # 35 mod 17
    for x in range(R17):
        assert fe_mul(1, x, R17) == x


def test_fe_mul_near_modulus_wide_intermediate():
    r = PRIME_ABOVE_2_60
    a = r - 3
    b = r - 5
    # Oracle: Python big-int arithmetic.
    assert fe_mul(a, b, r) == (a * b) % r == 15


def test_field_axioms_exhaustive_r17():
    for a in range(R17):
        for b in range(R17):
            assert fe_add(a, b, R17) == fe_add(b, a, R17)
            assert fe_mul(a, b, R17) == fe_mul(b, a, R17)
            for c in range(0, R17, 5):
                assert fe_add(fe_add(a, b, R17), c, R17) == fe_add(a, fe_add(b, c, R17), R17)
                assert fe_mul(fe_mul(a, b, R17), c, R17) == fe_mul(a, fe_mul(b, c, R17), R17)


def test_to_signed_examples():
    assert to_signed(16, R17) == -1
    assert to_signed(8, R17) == 8  # boundary (R-1)/2
    assert to_signed(0, R17) == 0
    assert to_signed(0, R97) == 0


def test_signed_round_trips():
    for r in (R17, R97, PRIME_ABOVE_2_60):
        half = (r - 1) // 2
        for s in (-half, -1, 0, 1, half):
            assert to_signed(from_signed(s, r), r) == s
        for a in (0, 1, half, half + 1, r - 1):
            assert from_signed(to_signed(a, r), r) == a
    with pytest.raises(FieldError):
        from_signed((R17 + 1) // 2, R17)


def test_dot_example():
    a = vec_from_ints([2, 3], R97)
    b = vec_from_ints([5, 7], R97)
    assert dot(a, b, R97) == 31
    zero = vec_from_ints([0, 0], R97)
    assert dot(zero, b, R97) == 0


def test_dot_length_mismatch():
    with pytest.raises(FieldError):
        dot(vec_from_ints([1], R97), vec_from_ints([1, 2], R97), R97)


def test_dot_linearity_randomized():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a = rng.integers(0, R97, 8, dtype=np.uint64)
        a2 = rng.integers(0, R97, 8, dtype=np.uint64)
        b = rng.integers(0, R97, 8, dtype=np.uint64)
        assert dot(vec_add(a, a2, R97), b, R97) == fe_add(dot(a, b, R97), dot(a2, b, R97), R97)


def test_vector_ops_stay_canonical_at_large_modulus():
    r = PRIME_ABOVE_2_60
    rng = np.random.default_rng(9)
    a = rng.integers(0, r, 100, dtype=np.uint64)
    b = rng.integers(0, r, 100, dtype=np.uint64)
    for out in (vec_add(a, b, r), vec_sub(a, b, r)):
        assert int(out.max()) < r
    # Oracle: elementwise Python-int arithmetic.
    assert [int(x) for x in vec_add(a, b, r)] == [(int(x) + int(y)) % r for x, y in zip(a, b)]
    assert [int(x) for x in vec_sub(a, b, r)] == [(int(x) - int(y)) % r for x, y in zip(a, b)]


def test_vec_signed_round_trip():
    r = R97
    rng = np.random.default_rng(3)
    a = rng.integers(0, r, 64, dtype=np.uint64)
    assert np.array_equal(vec_from_signed(vec_to_signed(a, r), r), a)


def test_vec_sum_matches_sequential_add():
    rng = np.random.default_rng(11)
    vecs = [rng.integers(0, R97, 5, dtype=np.uint64) for _ in range(7)]
    expected = [sum(int(v[i]) for v in vecs) % R97 for i in range(5)]
    assert [int(x) for x in vec_sum(vecs, R97)] == expected
    with pytest.raises(FieldError):
        vec_sum([], R97)


def test_serialization_round_trips():
    rng = random.Random(2)
    values = [rng.randrange(PRIME_ABOVE_2_60) for _ in range(10)]
    for v in values:
        encoded = field.elem_to_bytes(v)
        assert len(encoded) == 8
        assert field.elem_from_bytes(encoded) == v
    vec = vec_from_ints(values, PRIME_ABOVE_2_60)
    assert np.array_equal(field.vec_from_bytes(field.vec_to_bytes(vec)), vec)
    assert np.array_equal(field.vec_from_raw(field.vec_to_raw(vec)), vec)
    # Count-prefixed layout: 4-byte count, then 8 bytes per element.
    assert len(field.vec_to_bytes(vec)) == 4 + 8 * len(values)


def test_element_bytes_are_little_endian():
    assert field.elem_to_bytes(1) == b"\x01" + bytes(7)
    assert field.elem_to_bytes(0x0102) == b"\x02\x01" + bytes(6)
