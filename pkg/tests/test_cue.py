import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special, stats

from szegolab.cue import (
    CueSample,
    McEstimate,
    ScaledStatSpec,
    _run_chunks,
    _trace_powers,
    char_fn_mc,
    chunk_rng,
    eigenphases,
    haar_unitaries,
    linear_statistic,
    mock_gaussian_experiment,
    moment_suite,
    sample_cue,
    trace_powers,
    truncation_sweep,
)
from szegolab.engine import heine_determinant
from szegolab.errors import ValidationError
from szegolab.symbols import Schedule, SymbolSpec

CLASSICAL = SymbolSpec({1: 1.0}, Schedule.fixed({1: 1}))
J0_2 = 0.22389077914123567  # (1/2pi) int e^{2i cos t} dt, adaptive quadrature


def within(est, target, k=3.0):
    return abs(est.mean - target) <= k * est.stderr


# -- sampling -----------------------------------------------------------------------


def test_haar_unitaries_are_unitary():
    u = haar_unitaries(7, 5, np.random.default_rng(0))
    for m in u:
        assert np.allclose(m @ m.conj().T, np.eye(7), atol=1e-12)


def test_eigenphases_match_general_solver():
    u = haar_unitaries(40, 6, np.random.default_rng(1))
    ph = eigenphases(u)
    for m, p in zip(u, ph):
        ref = np.sort(np.angle(np.linalg.eigvals(m)))
        ref = np.where(ref >= np.pi, ref - 2 * np.pi, ref)
        assert np.allclose(np.exp(1j * np.sort(p)), np.exp(1j * np.sort(ref)), atol=1e-10)


def test_eigenphases_near_minus_one():
    # eigenvalue -1 makes I + U singular; the fallback solver must take over
    u = np.diag(np.exp(1j * np.array([np.pi, 0.3, -1.2])))
    ph = eigenphases(u)
    assert np.allclose(np.sort(np.exp(1j * ph)), np.sort(np.diag(u)), atol=1e-12)
    assert np.all(ph >= -np.pi) and np.all(ph < np.pi)


def test_sample_cue_shape_and_range():
    s = sample_cue(9, np.random.default_rng(2))
    assert s.phases.shape == (9,)
    assert np.all(s.phases >= -np.pi) and np.all(s.phases < np.pi)
    with pytest.raises(ValidationError):
        sample_cue(0, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        CueSample(2, np.array([0.0, 4.0]))


def test_n1_phase_uniform():
    ph = _run_chunks(1, 100_000, 3, "ks-test", lambda p: p[:, 0], chunk=4096)
    assert stats.kstest(ph, stats.uniform(loc=-np.pi, scale=2 * np.pi).cdf).pvalue > 0.01


def test_mean_trace_zero():
    tr = _run_chunks(16, 10_000, 4, "mean-trace", lambda p: _trace_powers(p, [1])[:, 0])
    assert within(McEstimate.from_values(tr, 4), 0)


def test_trace_power_second_moment():
    tr = _run_chunks(16, 10_000, 5, "k5", lambda p: _trace_powers(p, [5])[:, 0])
    assert within(McEstimate.from_values(np.abs(tr) ** 2, 5), 5)


def test_haar_invariance_under_diagonal_phases():
    rng = np.random.default_rng(6)
    d = np.exp(1j * rng.uniform(-np.pi, np.pi, 12))
    a, b = [], []
    for c in range(40):
        u = haar_unitaries(12, 64, chunk_rng(6, "inv", 12, c))
        a.append(np.trace(u, axis1=1, axis2=2).real)
        v = haar_unitaries(12, 64, chunk_rng(7, "inv", 12, c)) * d[None, None, :]
        b.append(np.trace(v, axis1=1, axis2=2).real)
    assert stats.ks_2samp(np.concatenate(a), np.concatenate(b)).pvalue > 0.01


def test_chunking_is_thread_independent():
    f = lambda p: _trace_powers(p, [1, 3])
    one = _run_chunks(8, 300, 9, "thr", f, threads=1)
    four = _run_chunks(8, 300, 9, "thr", f, threads=4)
    assert np.array_equal(one, four)


# -- trace powers and linear statistics ------------------------------------------------


def test_trace_powers_examples():
    zero = CueSample(5, np.zeros(5))
    assert trace_powers(zero, [1, 7]) == [5, 5]
    eq = CueSample(8, 2 * np.pi * np.arange(8) / 8 - np.pi)
    assert abs(trace_powers(eq, [1])[0]) < 1e-12
    assert trace_powers(eq, [0]) == [8]


def test_linear_statistic_examples():
    s = CueSample(6, np.zeros(6))
    assert linear_statistic(SymbolSpec({}, Schedule.fixed({})), 6, s) == 0
    assert linear_statistic(CLASSICAL, 6, s) == pytest.approx(12)


@given(st.integers(0, 10 ** 6), st.integers(2, 20))
@settings(max_examples=25)
def test_linear_statistic_real_for_hermitian(seed, n):
    rng = np.random.default_rng(seed)
    spec = SymbolSpec({1: complex(*rng.normal(size=2)), 3: complex(*rng.normal(size=2))}, Schedule.affine({3: 1.0}, {1: 2, 3: 1}))
    x = linear_statistic(spec, n, sample_cue(n, rng))
    assert abs(x.imag) <= 1e-12 * max(abs(x), 1)


# -- estimators -----------------------------------------------------------------------------


def test_mc_estimate_validation():
    with pytest.raises(ValidationError):
        McEstimate.from_values(np.array([1.0]), 0)
    est = McEstimate.from_values(np.array([1.0, 3.0]), 0)
    assert est.mean == 2 and est.stderr == pytest.approx(1.0)


def test_char_fn_n1_is_bessel():
    ref = integrate.quad(lambda t: math.cos(2 * math.cos(t)), 0, 2 * math.pi)[0] / (2 * math.pi)
    assert ref == pytest.approx(J0_2, abs=1e-14) and special.j0(2) == pytest.approx(J0_2, abs=1e-15)
    assert heine_determinant(CLASSICAL, 1) == pytest.approx(J0_2, abs=1e-14)
    assert within(char_fn_mc(CLASSICAL, 1, 20_000, 10), J0_2)


def test_char_fn_requires_samples():
    with pytest.raises(ValidationError):
        char_fn_mc(CLASSICAL, 4, 50, 0)


def test_char_fn_deterministic():
    a = char_fn_mc(CLASSICAL, 6, 200, 11)
    b = char_fn_mc(CLASSICAL, 6, 200, 11)
    c = char_fn_mc(CLASSICAL, 6, 200, 12)
    assert a == b and a != c


def test_phase_symmetry():
    spec = SymbolSpec({1: 0.8 + 0.3j, 2: 0.4}, Schedule.fixed({1: 1, 2: 3}))
    vals = _run_chunks(10, 8000, 13, "sym", lambda p: np.exp(1j * (_trace_powers(p, [1, -1, 3, -3]) @ np.array([0.8 + 0.3j, 0.8 - 0.3j, 0.4 / math.sqrt(3), 0.4 / math.sqrt(3)]))))
    assert within(McEstimate.from_values(vals.imag, 13), 0)
    est = char_fn_mc(spec, 10, 8000, 13)
    assert within(est, heine_determinant(spec, 10))


def test_moment_suite_targets():
    rows = moment_suite(8, [1, 3, 8, 12], 6000, 14)
    for r in rows:
        assert within(r.estimate, r.target, 3.5), r
    kinds = {r.quantity for r in rows}
    assert kinds == {"abs2", "cross", "re2", "im2", "re_im", "normalized_var"}
    with pytest.raises(ValidationError):
        moment_suite(8, [1, 1], 200, 0)


def test_moment_suite_replay():
    assert moment_suite(6, [1, 2], 150, 15) == moment_suite(6, [1, 2], 150, 15)


def test_truncation_sweep_basics():
    spec = SymbolSpec({j: 2.0 ** -j for j in range(1, 5)}, Schedule.fixed({j: j for j in range(1, 5)}))
    rows = truncation_sweep(spec, 8, [1, 2, 3, 4, 6], 800, 16)
    assert [r.holds for r in rows] == [True] * 5
    assert rows[-1].difference == 0 and rows[-2].difference == 0
    bounds = [r.bound for r in rows]
    assert all(b <= a for a, b in zip(bounds, bounds[1:]))


def test_truncation_needs_hermitian():
    spec = SymbolSpec({1: 1.0, -1: 0.5}, Schedule.fixed({1: 1}), hermitian=False)
    with pytest.raises(ValidationError):
        truncation_sweep(spec, 4, [1], 200, 0)


# -- mock-Gaussian ---------------------------------------------------------------------------


def _sobolev_oracle(stat):
    """(1/4pi^2) int int ((f(x)-f(y))/(x-y))^2 dx dy, which equals the |y|-weighted fhat integral."""
    s = stat.scale
    x, w = np.polynomial.legendre.leggauss(600)
    x, w = s * x, s * w
    f = stat.f(x)
    h = 1e-5
    fp = (stat.f(x + h) - stat.f(x - h)) / (2 * h)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    q = (f[:, None] - f[None, :]) / dx
    np.fill_diagonal(q, fp)
    inner = float(w @ (q ** 2) @ w)
    # pairs with one point outside the support: int_{|y|>s} dy / (x-y)^2 = 1/(s-x) + 1/(s+x)
    outer = integrate.quad(lambda t: float(stat.f(np.array([t]))[0]) ** 2 * (1 / (s - t) + 1 / (s + t)), -s, s, limit=200)[0]
    return (inner + 2 * outer) / (4 * math.pi ** 2)


def test_sigma2_against_sobolev_oracle():
    stat = ScaledStatSpec("bump_derivative", 0.5, math.pi)
    assert stat.sigma2_soshnikov() == pytest.approx(_sobolev_oracle(stat), rel=1e-6)


def test_sigma2_frozen_values():
    stat = ScaledStatSpec("bump_derivative", 0.5, math.pi)
    assert stat.sigma2_soshnikov() == pytest.approx(0.024723907356505596, rel=1e-9)
    assert stat.sigma2_mock() == pytest.approx(0.016203948298187835, rel=1e-9)
    assert stat.sigma2_mock() < stat.sigma2_soshnikov()


def test_bump_fhat_zero_mean():
    stat = ScaledStatSpec()
    assert stat.fhat(0) == 0
    assert integrate.quad(lambda x: float(stat.f(np.array([x]))[0]), -math.pi, math.pi)[0] == pytest.approx(0, abs=1e-14)


def test_bandlimited_family():
    stat = ScaledStatSpec("bandlimited", 1.0, table=((0, 1), (1, 1), (2, 0)))
    assert stat.fhat(0) == 0 and stat.fhat(1.5) == pytest.approx(0.5) and stat.fhat(-1.5) == pytest.approx(0.5)
    # f(0) = (1/2pi) int fhat
    assert stat.f([0.0])[0] == pytest.approx(1 / math.pi)
    # sigma^2 by direct integration of the piecewise-linear table
    ref = 2 * integrate.quad(lambda y: y * stat.fhat_abs2(y), 0, 2, points=[1])[0] / (4 * math.pi ** 2)
    assert stat.sigma2_soshnikov() == pytest.approx(ref, rel=1e-10)


def test_stat_validation():
    with pytest.raises(ValidationError):
        ScaledStatSpec(gamma=0)
    with pytest.raises(ValidationError):
        ScaledStatSpec(scale=4.0)
    with pytest.raises(ValidationError):
        ScaledStatSpec("bandlimited", table=((1, 1), (0, 1)))
    with pytest.raises(ValidationError):
        ScaledStatSpec("gaussian")


def test_mock_gaussian_zero_function():
    zero = ScaledStatSpec("bandlimited", 1.0, table=((0, 0), (1, 0)))
    r = mock_gaussian_experiment(zero, 16, 200, 0)
    assert r.variance.mean == 0 and r.mean.mean == 0
    assert r.sigma2_soshnikov == 0 and r.sigma2_mock == 0


def test_finite_n_variance_matches_mc():
    stat = ScaledStatSpec()
    r = mock_gaussian_experiment(stat, 32, 4000, 17)
    exact = stat.finite_n_variance(32)
    assert abs(r.variance.mean.real - exact) <= 3 * r.variance.stderr
    assert within(r.mean, 0)
    assert exact == pytest.approx(stat.sigma2_soshnikov(), rel=0.1)
