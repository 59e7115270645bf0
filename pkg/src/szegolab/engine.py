"""Toeplitz determinants of exp(g_n) and the machinery around them.

Everything here works at a fixed size n: the symbol g_n is built from a
:class:`~szegolab.symbols.SymbolSpec`, split into its low-frequency part g1
(|k| <= n) and high-frequency part g2 (|k| > n), and the factors
a = exp(g1), b = exp(g2) are examined separately.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import mpmath
import numpy as np

from .errors import DegenerateDeterminantError, ValidationError
from .linalg import (
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
from .rates import ConvergenceRow, RateFit, fit_log_log, fit_rate
from .symbols import (
    LaurentSeries,
    Schedule,
    SymbolSpec,
    build_symbol,
    exp_symbol,
    exp_tail_bound,
    multiply,
    phi_psi,
    project_half,
    split_symbol,
)

FREDHOLM_CAP = 4096
BOUND_SLACK = 1e-9


def _csum(values) -> complex:
    values = list(values)
    return complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))


class SzegoConstants(NamedTuple):
    c1: complex
    c2: complex
    c_total: complex


def szego_constants(spec: SymbolSpec, n: int) -> SzegoConstants:
    """C1 = sum over 0 < k_j <= n, C2 = sum over k_j > n of alpha_j alpha_{-j}."""
    ks = spec.frequencies(n)
    c1 = _csum(spec.alpha(j) * spec.alpha(-j) for j, k in ks.items() if k <= n)
    c2 = _csum(spec.alpha(j) * spec.alpha(-j) for j, k in ks.items() if k > n)
    return SzegoConstants(c1, c2, c1 + c2)


def symbol_parts(spec: SymbolSpec, n: int) -> Tuple[LaurentSeries, LaurentSeries, LaurentSeries]:
    g = build_symbol(spec, n)
    g1, g2 = split_symbol(g, n)
    return g, g1, g2


def toeplitz_log_det(g: LaurentSeries, n: int, tol: Optional[float] = None) -> LogDet:
    """log det T_n(exp(g))."""
    a = exp_symbol(g, n - 1, tol)
    return log_det(toeplitz_matrix(a, n))


def coefficient_range(g: LaurentSeries, at_least: int, eps: float = 1e-17) -> int:
    """Smallest K >= at_least beyond which exp(g) has Wiener mass <= eps * e^{||g||_W}."""
    w, B = g.wiener, g.bandwidth
    K = max(at_least, 0)
    if w == 0 or B == 0:
        return K
    target = eps * math.exp(w)
    while exp_tail_bound(w, B, K) > target:
        K = (K // B + 1) * B
    return K


# ---------------------------------------------------------------------------
# Borodin-Okounkov / Geronimo-Case
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BOResult:
    rhs: LogDet
    lhs: LogDet
    rel_discrepancy: float
    fredholm: LogDet
    fredholm_size: int
    kernel_tail: float
    capped: bool


def bo_evaluate(
    spec: SymbolSpec,
    n: int,
    fredholm_size: Optional[int] = None,
    tol: float = 1e-12,
    symbol_tol: Optional[float] = None,
    cap: int = FREDHOLM_CAP,
) -> BOResult:
    """Compare det T_n(a) with exp(C1) det(I - Q_n H(phi) H(psi) Q_n), a = exp(g1).

    The Fredholm section size starts at ``fredholm_size`` (default
    max(64, 2 * bandwidth(g1))) and doubles until the kernel's truncation
    bound is below ``tol`` or ``cap`` is reached; a capped result emits a
    warning and sets ``capped``.
    """
    _, g1, _ = symbol_parts(spec, n)
    c1 = szego_constants(spec, n).c1
    lhs = toeplitz_log_det(g1, n, symbol_tol)

    M = fredholm_size or max(64, 2 * g1.bandwidth)
    M = min(M, cap)
    while True:
        K = coefficient_range(g1, n + 2 * M)
        phi, psi = phi_psi(g1, K, symbol_tol)
        block = hankel_product_block(phi, psi, n, M, M)
        if block.tail_bound < tol or M >= cap:
            break
        M = min(2 * M, cap)
    capped = block.tail_bound >= tol
    if capped:
        warnings.warn(
            f"Fredholm section capped at M={M}; kernel tail bound {block.tail_bound:.3e} >= tol {tol:.1e}",
            RuntimeWarning,
        )
    fred = fredholm_log_det(block.matrix)
    rhs = LogDet.from_log(c1 + fred.log()) if not fred.is_zero else fred
    return BOResult(rhs, lhs, lhs.rel_distance(rhs), fred, M, block.tail_bound, capped)


class FredholmBound(NamedTuple):
    bound: float
    phi_moment: float
    psi_moment: float
    corollary: Optional[float]


def fredholm_bound(phi: LaurentSeries, psi: LaurentSeries, n: int, a1: Optional[float] = None) -> FredholmBound:
    """exp(sqrt(sum k|phi_{k+n}|^2) sqrt(sum k|psi_{k+n}|^2)) - 1.

    With ``a1`` given, also the comparison value A1 (e^{A1} - 1) / n for the
    weighted tail sums themselves.
    """
    pm = hankel_tail_hs(phi, n) ** 2
    qm = hankel_tail_hs(psi, n) ** 2
    bound = math.expm1(math.sqrt(pm * qm))
    corollary = None if a1 is None else a1 * math.expm1(a1) / n
    return FredholmBound(bound, pm, qm, corollary)


# ---------------------------------------------------------------------------
# Widom factorization and the approximate inverse
# ---------------------------------------------------------------------------


def _hankel_pair(x: LaurentSeries, y: LaurentSeries, n: int, inner: int) -> np.ndarray:
    """P_n H(x) H(y) P_n with the inner sum cut at ``inner``."""
    return hankel_matrix(x, n, inner) @ hankel_matrix(y, inner, n)


def widom_residual(a: LaurentSeries, b: LaurentSeries, n: int) -> float:
    """Relative Frobenius residual of T_n(ab) = T_n(a)T_n(b) + P_nH(a)H(b~)P_n + W_nH(a~)H(b)W_n.

    ``a`` and ``b`` are treated as the Laurent polynomials they store, for
    which the identity is exact.
    """
    ab = multiply(a, b)
    inner = max(a.bandwidth, b.bandwidth, 1)
    Tab = toeplitz_matrix(ab, n)
    R = (
        Tab
        - toeplitz_matrix(a, n) @ toeplitz_matrix(b, n)
        - _hankel_pair(a, b.flip(), n, inner)
        - flip_conjugate(_hankel_pair(a.flip(), b, n, inner))
    )
    denom = np.linalg.norm(Tab)
    if denom == 0:
        return float(np.linalg.norm(R))
    return float(np.linalg.norm(R) / denom)


def widom_check(spec: SymbolSpec, n: int, symbol_tol: Optional[float] = None) -> float:
    """widom_residual for a = exp(g1), b = exp(g2) of ``spec`` at n."""
    _, g1, g2 = symbol_parts(spec, n)
    a = exp_symbol(g1, coefficient_range(g1, 2 * n), symbol_tol)
    b = exp_symbol(g2, coefficient_range(g2, 2 * n), symbol_tol)
    return widom_residual(LaurentSeries(a.coeffs), LaurentSeries(b.coeffs), n)


class ApproxInverse(NamedTuple):
    trace_norm_residual: float
    det_bn_tna: complex


def approx_inverse_matrix(g1: LaurentSeries, n: int, symbol_tol: Optional[float] = None):
    """B_n and T_n(a) for a = exp(g1)."""
    plus = project_half(g1, "plus")
    minus = project_half(g1, "minus")
    K = coefficient_range(g1, 2 * n)
    inner = K - n + 1
    a = exp_symbol(g1, K, symbol_tol)
    a_inv = exp_symbol(-g1, K, symbol_tol)
    ap_inv = exp_symbol(-plus, K, symbol_tol)
    am_inv_flip = exp_symbol(-minus, K, symbol_tol).flip()
    B = (
        toeplitz_matrix(a_inv, n)
        - _hankel_pair(ap_inv, am_inv_flip, n, inner)
        - flip_conjugate(_hankel_pair(am_inv_flip, ap_inv, n, inner))
    )
    return B, toeplitz_matrix(a, n)


def approx_inverse_residual(g1: LaurentSeries, n: int, symbol_tol: Optional[float] = None) -> ApproxInverse:
    """Trace norm of B_n T_n(a) - I and det(B_n T_n(a)), a = exp(g1).

    B_n = T_n(a^{-1}) - P_n H(a_+^{-1}) H(a_-^{-1}~) P_n - W_n H(a_-^{-1}~) H(a_+^{-1}) W_n.
    """
    if g1.is_empty:
        return ApproxInverse(0.0, 1 + 0j)
    B, Ta = approx_inverse_matrix(g1, n, symbol_tol)
    prod = B @ Ta
    resid = matrix_norms(prod - np.eye(n)).trace
    return ApproxInverse(resid, log_det(prod).value)


# ---------------------------------------------------------------------------
# separation, lemma bounds
# ---------------------------------------------------------------------------


class SeparationResult(NamedTuple):
    ratio: complex
    log_ratio: complex


def separation_ratio(spec: SymbolSpec, n: int, symbol_tol: Optional[float] = None) -> SeparationResult:
    """det T_n(ab) / (det T_n(a) det T_n(b)) with a = exp(g1), b = exp(g2)."""
    g, g1, g2 = symbol_parts(spec, n)
    lab = toeplitz_log_det(g, n, symbol_tol)
    la = toeplitz_log_det(g1, n, symbol_tol)
    lb = toeplitz_log_det(g2, n, symbol_tol)
    if la.is_zero or lb.is_zero:
        raise DegenerateDeterminantError(f"det T_n(a) or det T_n(b) vanishes at n={n}")
    r = lab / (la * lb)
    if r.is_zero:
        return SeparationResult(0j, complex(-math.inf, 0))
    return SeparationResult(r.value, r.log())


@dataclass(frozen=True)
class BoundRow:
    quantity: str
    value: float
    bound: float

    @property
    def holds(self) -> bool:
        # some estimates are attained up to rounding (rank-one kernels), hence the slack
        return self.value <= self.bound * (1 + BOUND_SLACK)


def lemma_bound_checks(spec: SymbolSpec, n: int, symbol_tol: Optional[float] = None) -> List[BoundRow]:
    """Trace and Hilbert-Schmidt estimates for T_n(b - 1), b = exp(g2), plus the det_2 bound.

    * |Tr T_n(b-1) - C2| <= n (e^{A1/sqrt n} - 1)^2 - A1^2
    * ||T_n(b-1)||_2 <= sqrt(n) (e^{A1/sqrt n} - 1)^2
    * |det_2(I + T_n(b-1)) - 1| <= ||A||_2 exp((||A||_2 + 1)^2 / 2)
    """
    _, _, g2 = symbol_parts(spec, n)
    c2 = szego_constants(spec, n).c2
    a1 = spec.a1
    b = exp_symbol(g2, n - 1, symbol_tol)
    A = toeplitz_matrix(b - 1, n)
    x = math.expm1(a1 / math.sqrt(n))
    trace_val = abs(n * (b[0] - 1) - c2)
    trace_bound = n * x * x - a1 * a1
    hs_val = float(np.linalg.norm(A))
    hs_bound = math.sqrt(n) * x * x
    d2 = det2(A)
    return [
        BoundRow("trace_lemma", trace_val, max(trace_bound, 0.0)),
        BoundRow("hs_lemma", hs_val, hs_bound),
        BoundRow("det2_bound", abs(d2.value - 1), d2.bound),
    ]


def fredholm_bound_checks(spec: SymbolSpec, n: int, symbol_tol: Optional[float] = None) -> List[BoundRow]:
    """Fredholm-determinant estimate and the weighted-tail comparison for phi and psi."""
    _, g1, _ = symbol_parts(spec, n)
    bo = bo_evaluate(spec, n, symbol_tol=symbol_tol)
    K = coefficient_range(g1, n + 2 * bo.fredholm_size)
    phi, psi = phi_psi(g1, K, symbol_tol)
    fb = fredholm_bound(phi, psi, n, spec.a1)
    det_minus_one = abs(np.expm1(bo.fredholm.log())) if not bo.fredholm.is_zero else 1.0
    return [
        BoundRow("fredholm_lemma", float(det_minus_one), fb.bound),
        BoundRow("phi_tail_corollary", fb.phi_moment, fb.corollary),
        BoundRow("psi_tail_corollary", fb.psi_moment, fb.corollary),
    ]


# ---------------------------------------------------------------------------
# cancellation diagnostics
# ---------------------------------------------------------------------------


def _mp_taylor(g: LaurentSeries, degree: int) -> list:
    """Taylor coefficients 0..degree of exp(g), g supported on k >= 1, in mpmath."""
    terms = [(k, mpmath.mpc(c.real, c.imag) * k) for k, c in g.coeffs.items() if 1 <= k <= degree]
    E = [mpmath.mpc(1)] + [mpmath.mpc(0)] * degree
    for m in range(1, degree + 1):
        acc = mpmath.mpc(0)
        for k, kc in terms:
            if k > m:
                break
            acc += kc * E[m - k]
        E[m] = acc / m
    return E


def _mp_decay_cut(E: list, rel: float = 1e-40) -> int:
    """Index beyond which the (eventually decreasing) sequence is negligible."""
    mags = [abs(x) for x in E]
    top = max(mags)
    if top == 0:
        return 0
    cut = len(E) - 1
    while cut > 0 and mags[cut] < rel * top:
        cut -= 1
    return cut


class MpExpCoefficients:
    """Coefficients of exp(g) with unbounded exponent range.

    Deep coefficients of an entire symbol fall far below the smallest
    double; they are computed from the one-sided Taylor factors
    exp(g_+) and exp(g_-) in arbitrary-exponent arithmetic.
    """

    def __init__(self, g: LaurentSeries, top: int, bottom: int, extra: int = 200):
        if g[0] != 0:
            raise ValidationError("MpExpCoefficients expects g without a constant term")
        plus = project_half(g, "plus")
        minus_flipped = project_half(g, "minus").flip()
        self._Em = _mp_taylor(minus_flipped, max(-bottom, 0) + extra)
        self._Ep = _mp_taylor(plus, max(top, 0) + extra)
        self._pm = _mp_decay_cut(self._Em)
        self._pp = _mp_decay_cut(self._Ep)
        self._cache: Dict[int, mpmath.mpc] = {}

    def __getitem__(self, m: int):
        if m in self._cache:
            return self._cache[m]
        Ep, Em = self._Ep, self._Em
        acc = mpmath.mpc(0)
        if m >= 0:
            # (e^g)_m = sum_{p>=0} Ep[m+p] Em[p]
            last = min(self._pm, len(Ep) - 1 - m)
            for p in range(0, last + 1):
                acc += Ep[m + p] * Em[p]
        else:
            last = min(self._pp, len(Em) - 1 + m)
            for q in range(0, last + 1):
                acc += Ep[q] * Em[q - m]
        self._cache[m] = acc
        return acc


@dataclass(frozen=True)
class CancellationRow:
    n: int
    N: int
    S: complex
    scaled: float
    log_scaled: float


@dataclass(frozen=True)
class CompanionRow:
    n: int
    trace: complex
    scaled: float
    log_scaled: float


def _mp_log_abs(x) -> float:
    a = abs(x)
    return float(mpmath.log(a)) if a != 0 else -math.inf


def _mp_to_complex(x) -> complex:
    return complex(float(x.real), float(x.imag))


def cancellation_diagnostics(g1: LaurentSeries, n: int, N_list: Sequence[int]) -> List[CancellationRow]:
    """S(n, N) = sum_{|s| <= floor(sqrt n)} (a^{-1})_s a_{N-s}, reported with n^{3/4}|S|.

    a = exp(g1). Values are exact to working precision even when they
    underflow double range; ``log_scaled`` is the natural log of n^{3/4}|S|.
    """
    if any(N <= n for N in N_list):
        raise ValidationError("every N must exceed n")
    r = math.isqrt(n)
    top = max(N_list) + r
    a = MpExpCoefficients(g1, top, -r)
    a_inv = MpExpCoefficients(-g1, r, -r)
    rows = []
    for N in N_list:
        S = mpmath.fsum(a_inv[s] * a[N - s] for s in range(-r, r + 1))
        scaled = abs(S) * mpmath.power(n, 0.75)
        rows.append(CancellationRow(n, N, _mp_to_complex(S), float(scaled), _mp_log_abs(scaled)))
    return rows


def companion_trace(g1: LaurentSeries, g2: LaurentSeries, n: int) -> CompanionRow:
    """Tr T_n(a^{-1}) P_n H(a) H(g2~) P_n from its explicit double sum, with n^{1/4} scaling.

    The trace equals sum over frequencies K > n of (g2)_{-K}
    sum_{|s| < n} (a^{-1})_s a_{K-s} (n - |s|).
    """
    highs = [(K, c) for K, c in g2.coeffs.items() if K < -n]
    if not highs or g1.is_empty:
        return CompanionRow(n, 0j, 0.0, -math.inf)
    top = max(-K for K, _ in highs) + n
    a = MpExpCoefficients(g1, top, 0)
    a_inv = MpExpCoefficients(-g1, n, -n)
    total = mpmath.mpc(0)
    for K, c in highs:
        Kp = -K
        inner = mpmath.fsum(a_inv[s] * a[Kp - s] * (n - abs(s)) for s in range(-(n - 1), n))
        total += mpmath.mpc(c.real, c.imag) * inner
    scaled = abs(total) * mpmath.power(n, 0.25)
    return CompanionRow(n, _mp_to_complex(total), float(scaled), _mp_log_abs(scaled))


def companion_trace_dense(g1: LaurentSeries, g2: LaurentSeries, n: int) -> complex:
    """The same trace from explicit matrices (double precision)."""
    K = coefficient_range(g1, 2 * n + g2.bandwidth)
    a = exp_symbol(g1, K)
    a_inv = exp_symbol(-g1, n)
    inner = max(g2.bandwidth, 1)
    M = toeplitz_matrix(a_inv, n) @ _hankel_pair(a, g2.flip(), n, inner)
    return complex(np.trace(M))


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


class SweepResult(NamedTuple):
    rows: List[ConvergenceRow]
    fit: RateFit


def szego_sweep(spec: SymbolSpec, n_list: Sequence[int], tol: float = 1e-12) -> SweepResult:
    """det T_n(exp(g_n)) against exp(sum_{j>=1} alpha_j alpha_{-j}) for each n."""
    rows = []
    for n in n_list:
        t0 = time.perf_counter()
        g = build_symbol(spec, n)
        target = np.exp(szego_constants(spec, n).c_total)
        value = toeplitz_log_det(g, n).value
        rows.append(ConvergenceRow.make(n, value, target, runtime_ms=1e3 * (time.perf_counter() - t0)))
    return SweepResult(rows, fit_rate(rows, 10 * tol))


def heine_determinant(spec: SymbolSpec, n: int, symbol_tol: Optional[float] = None) -> complex:
    """det T_n(exp(i f_n)), which equals E[exp(i X_n)] over Haar U(n)."""
    f = build_symbol(spec, n)
    return toeplitz_log_det(1j * f, n, symbol_tol).value


def random_specs(
    count: int,
    seed: int,
    max_bandwidth: int = 4,
    high_frequency: Optional[str] = None,
    scale: float = 0.6,
) -> List[SymbolSpec]:
    """Hermitian specs with low frequencies in 1..max_bandwidth.

    ``high_frequency`` adds one more pair at k(n) = n + 1 (``"n+1"``) or
    k(n) = 2n (``"2n"``).
    """
    rng = np.random.default_rng(seed)
    specs = []
    for _ in range(count):
        nterms = int(rng.integers(1, max_bandwidth + 1))
        ks = sorted(rng.choice(np.arange(1, max_bandwidth + 1), size=nterms, replace=False).tolist())
        alphas = {}
        offset, slope = {}, {}
        for j, k in enumerate(ks, start=1):
            alphas[j] = complex(*(rng.uniform(-scale, scale, size=2)))
            offset[j] = int(k)
        if high_frequency is not None:
            j = len(ks) + 1
            alphas[j] = complex(*(rng.uniform(-scale, scale, size=2)))
            if high_frequency == "n+1":
                slope[j], offset[j] = 1.0, 1
            elif high_frequency == "2n":
                slope[j], offset[j] = 2.0, 0
            else:
                raise ValidationError(f"unknown high_frequency {high_frequency!r}")
        schedule = Schedule.affine(slope, offset) if slope else Schedule.fixed(offset)
        specs.append(SymbolSpec(alphas, schedule))
    return specs
