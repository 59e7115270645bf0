import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from oracles import det_cofactor
from szegolab.errors import ValidationError
from szegolab.linalg import (
    LogDet,
    det2,
    flip_conjugate,
    fredholm_log_det,
    hankel_matrix,
    hankel_product_block,
    hankel_tail_hs,
    log_det,
    matrix_norms,
    toeplitz_matrix,
)
from szegolab.symbols import LaurentSeries, exp_symbol, phi_psi

I0_2, I1_2 = 2.2795853023360673, 1.5906368546373291


def random_series(rng, bw):
    return LaurentSeries({k: complex(*rng.normal(size=2)) for k in range(-bw, bw + 1)})


def test_toeplitz_examples():
    assert np.array_equal(toeplitz_matrix(LaurentSeries({0: 1}), 3), np.eye(3))
    a, b = 2 + 1j, -3
    assert np.array_equal(toeplitz_matrix(LaurentSeries({1: a, -1: b}), 2), [[0, b], [a, 0]])
    T = toeplitz_matrix(exp_symbol(LaurentSeries({1: 1, -1: 1}), 4), 2)
    assert np.allclose(T, [[I0_2, I1_2], [I1_2, I0_2]], atol=1e-14)


def test_toeplitz_rejects_bad_n():
    with pytest.raises(ValidationError):
        toeplitz_matrix(LaurentSeries({0: 1}), 0)


def test_hankel_matrix_entries():
    c = LaurentSeries({k: k + 0.5j for k in range(1, 12)})
    H = hankel_matrix(c, 3, 4, shift=2)
    for j in range(3):
        for l in range(4):
            assert H[j, l] == c[j + l + 1 + 2]


def test_hankel_block_examples():
    zero = hankel_product_block(LaurentSeries(), LaurentSeries({1: 1}), 0, 3, 3)
    assert not zero.matrix.any()
    K = hankel_product_block(LaurentSeries({1: 1}), LaurentSeries({1: 1}), 0, 2, 2).matrix
    assert np.array_equal(K, [[1, 0], [0, 0]])


def test_hankel_block_against_dense_multiply():
    phi, psi = phi_psi(LaurentSeries({1: 1, -1: 1}), 500)
    n, M = 3, 12
    block = hankel_product_block(phi, psi, n, M, 200).matrix
    Hphi = np.array([[phi[j + l + 1] for l in range(200)] for j in range(200)])
    Hpsi = np.array([[psi[j + l + 1] for l in range(200)] for j in range(200)])
    full = Hphi @ Hpsi
    assert np.allclose(block, full[n:n + M, n:n + M], atol=1e-15)


def test_hankel_block_tail_bound_covers_truncation():
    phi, psi = phi_psi(LaurentSeries({1: 0.9, -2: 0.7}), 400)
    n = 2
    small = hankel_product_block(phi, psi, n, 4, 4)
    big = hankel_product_block(phi, psi, n, 120, 120).matrix
    padded = np.zeros_like(big)
    padded[:4, :4] = small.matrix
    omitted_trace_norm = matrix_norms(big - padded).trace
    assert omitted_trace_norm <= small.tail_bound * (1 + 1e-9)


def test_flip_examples():
    assert np.array_equal(flip_conjugate(np.eye(3)), np.eye(3))
    assert np.array_equal(flip_conjugate(np.array([[1, 2], [3, 4]])), [[4, 3], [2, 1]])
    with pytest.raises(ValidationError):
        flip_conjugate(np.ones((2, 3)))


def test_flip_of_toeplitz_is_toeplitz_of_flip():
    c = random_series(np.random.default_rng(1), 5)
    T = toeplitz_matrix(c, 7)
    assert np.array_equal(flip_conjugate(T), toeplitz_matrix(c.flip(), 7))


def test_log_det_examples():
    assert log_det(np.eye(5)) == (0.0, 0.0)
    ld = log_det(np.diag([2.0, 3.0]))
    assert ld.log_modulus == pytest.approx(math.log(6)) and ld.phase == 0
    T = toeplitz_matrix(exp_symbol(LaurentSeries({1: 1, -1: 1}), 4), 2)
    ref = det_cofactor([[I0_2, I1_2], [I1_2, I0_2]])
    assert ref == pytest.approx(2.6663835, abs=1e-7)
    assert log_det(T).value == pytest.approx(ref, rel=1e-14)


def test_log_det_singular_and_large():
    assert log_det(np.ones((3, 3))).is_zero
    big = log_det(10 * np.eye(400))
    assert big.log_modulus == pytest.approx(400 * math.log(10))


def test_log_det_matches_cofactor():
    rng = np.random.default_rng(5)
    for _ in range(10):
        m = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        assert log_det(m).value == pytest.approx(det_cofactor(m.tolist()), rel=1e-12)


def test_log_det_multiplicative():
    rng = np.random.default_rng(6)
    for _ in range(20):
        A = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        B = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        lhs, rhs = log_det(A @ B), log_det(A) * log_det(B)
        assert lhs.log_modulus == pytest.approx(rhs.log_modulus, abs=1e-10)
        assert abs(math.remainder(lhs.phase - rhs.phase, 2 * math.pi)) < 1e-10


@given(st.integers(1, 8), st.complex_numbers(min_magnitude=0.1, max_magnitude=3, allow_nan=False, allow_infinity=False), st.integers(0, 10_000))
def test_det_scaling_and_transpose(n, lam, seed):
    c = random_series(np.random.default_rng(seed), 3)
    base = log_det(toeplitz_matrix(c, n))
    scaled = log_det(toeplitz_matrix(c * lam, n))
    expect = base * LogDet.from_complex(lam ** n)
    assert scaled.rel_distance(expect) < 1e-10
    flipped = log_det(toeplitz_matrix(c.flip(), n))
    assert flipped.rel_distance(base) < 1e-12


def test_logdet_plumbing():
    z = LogDet.from_complex(-2.0)
    assert z.phase == pytest.approx(math.pi) and z.value == pytest.approx(-2)
    assert LogDet.from_complex(0).is_zero and LogDet.from_complex(0).value == 0
    assert z.rel_distance(z) == 0
    assert LogDet.from_complex(1).rel_distance(LogDet.from_complex(1 + 1e-9)) == pytest.approx(1e-9, rel=1e-6)


def test_hankel_hs_norm_identity():
    c = LaurentSeries({k: 1 / k ** 2 for k in range(1, 60)})
    H = hankel_matrix(c, 300, 300)
    expect = math.fsum(k * abs(v) ** 2 for k, v in c.coeffs.items())
    assert np.linalg.norm(H) ** 2 == pytest.approx(expect, rel=1e-12)
    assert hankel_tail_hs(c, 0) ** 2 == pytest.approx(expect, rel=1e-14)


def test_fredholm_small_kernel_keeps_digits():
    K = 1e-9 * np.diag([1.0, 2.0, 3.0])
    got = fredholm_log_det(K).log()
    assert got.real == pytest.approx(sum(math.log1p(-x) for x in (1e-9, 2e-9, 3e-9)), rel=1e-12)


def test_det2_examples():
    d = det2(np.zeros((3, 3)))
    assert d.value == 1 and d.bound == 0
    assert det2(np.array([[0.5]])).value == pytest.approx(1.5 * math.exp(-0.5))
    assert det2(np.array([[0.5]])).value == pytest.approx(0.9097959, abs=1e-7)


def test_det2_inequality_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        A *= rng.uniform(0, 2) / np.linalg.norm(A)
        d = det2(A)
        assert abs(d.value - 1) <= d.bound


def test_matrix_norm_examples():
    assert matrix_norms(np.eye(3)) == pytest.approx((1, math.sqrt(3), 3))
    rng = np.random.default_rng(8)
    u = rng.normal(size=4) + 1j * rng.normal(size=4)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    assert matrix_norms(np.outer(u, v.conj())) == pytest.approx((1, 1, 1))


def test_matrix_norm_ordering():
    rng = np.random.default_rng(9)
    for _ in range(20):
        m = matrix_norms(rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
        assert m.trace >= m.hs >= m.op


def test_nonfinite_entries_rejected():
    with pytest.raises(ValidationError):
        log_det(np.array([[np.nan]]))
    with pytest.raises(ValidationError):
        matrix_norms(np.array([[np.inf, 0], [0, 1]]))
