"""Laurent-series symbols on the unit circle.

Symbols are stored as sparse integer-keyed coefficient maps together with a
certified bound on the Wiener norm of everything that was left out. The
n-dependent symbols

    g_n(z) = sum_{j != 0} alpha_j z^{k_j(n)} / sqrt(min(|k_j(n)|, n))

are generated from a :class:`SymbolSpec` by :func:`build_symbol`.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import reduce
from types import MappingProxyType
from typing import Dict, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from .errors import TruncationError, ValidationError

__all__ = [
    "LaurentSeries",
    "Schedule",
    "SymbolSpec",
    "NormBundle",
    "build_symbol",
    "split_symbol",
    "project_half",
    "exp_symbol",
    "phi_psi",
    "norms",
    "majorant_coeff_bound",
    "multiply",
    "exp_tail_bound",
]

DEFAULT_REL_TOL = 1e-12
GRID_CAP = 2 ** 22


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ValidationError(f"complex pair must have two entries, got {value!r}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


@dataclass(frozen=True)
class LaurentSeries:
    """Finite Laurent polynomial plus a bound on the omitted Wiener mass."""

    coeffs: Mapping[int, complex] = field(default_factory=dict)
    tail_bound: float = 0.0

    def __post_init__(self):
        clean = {}
        for k, c in self.coeffs.items():
            c = complex(c)
            if not (math.isfinite(c.real) and math.isfinite(c.imag)):
                raise ValidationError(f"non-finite coefficient at frequency {k}")
            if c != 0:
                clean[int(k)] = c
        if not self.tail_bound >= 0:
            raise ValidationError(f"tail_bound must be nonnegative, got {self.tail_bound}")
        object.__setattr__(self, "coeffs", MappingProxyType(dict(sorted(clean.items()))))
        object.__setattr__(self, "tail_bound", float(self.tail_bound))

    # construction ---------------------------------------------------------

    @classmethod
    def from_dense(cls, values, lo: int, tail_bound: float = 0.0) -> "LaurentSeries":
        """Series whose coefficient at frequency ``lo + i`` is ``values[i]``."""
        values = np.asarray(values, dtype=complex)
        idx = np.flatnonzero(values)
        return cls({int(lo + i): complex(values[i]) for i in idx}, tail_bound)

    @classmethod
    def constant(cls, c=1.0) -> "LaurentSeries":
        return cls({0: c})

    # access ---------------------------------------------------------------

    def __getitem__(self, k: int) -> complex:
        return self.coeffs.get(k, 0j)

    def __len__(self) -> int:
        return len(self.coeffs)

    def __bool__(self) -> bool:
        return bool(self.coeffs)

    @property
    def is_empty(self) -> bool:
        return not self.coeffs

    @property
    def support(self) -> Tuple[int, int]:
        if not self.coeffs:
            return (0, 0)
        keys = list(self.coeffs)
        return keys[0], keys[-1]

    @property
    def bandwidth(self) -> int:
        lo, hi = self.support
        return max(-lo, hi)

    @property
    def wiener(self) -> float:
        """Wiener norm of the stored coefficients (tail excluded)."""
        return math.fsum(abs(c) for c in self.coeffs.values())

    def dense(self, lo: int, hi: int) -> np.ndarray:
        out = np.zeros(hi - lo + 1, dtype=complex)
        for k, c in self.coeffs.items():
            if lo <= k <= hi:
                out[k - lo] = c
        return out

    def evaluate(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.zeros(z.shape, dtype=complex)
        for k, c in self.coeffs.items():
            out += c * z ** k
        return out

    def evaluate_theta(self, theta):
        """Evaluate at ``exp(i*theta)``; exact for large frequencies."""
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape, dtype=complex)
        for k, c in self.coeffs.items():
            out += c * np.exp(1j * k * theta)
        return out

    # algebra --------------------------------------------------------------

    def flip(self) -> "LaurentSeries":
        """The series of c(1/z): coefficient c_k moves to -k."""
        return LaurentSeries({-k: c for k, c in self.coeffs.items()}, self.tail_bound)

    def conj(self) -> "LaurentSeries":
        return LaurentSeries({k: c.conjugate() for k, c in self.coeffs.items()}, self.tail_bound)

    def restrict(self, lo: int, hi: int) -> "LaurentSeries":
        kept = {k: c for k, c in self.coeffs.items() if lo <= k <= hi}
        dropped = math.fsum(abs(c) for k, c in self.coeffs.items() if not lo <= k <= hi)
        return LaurentSeries(kept, self.tail_bound + dropped)

    def __add__(self, other):
        if isinstance(other, LaurentSeries):
            out = dict(self.coeffs)
            for k, c in other.coeffs.items():
                out[k] = out.get(k, 0j) + c
            return LaurentSeries(out, self.tail_bound + other.tail_bound)
        return self + LaurentSeries.constant(other)

    __radd__ = __add__

    def __neg__(self):
        return LaurentSeries({k: -c for k, c in self.coeffs.items()}, self.tail_bound)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, LaurentSeries):
            return multiply(self, other)
        s = complex(other)
        return LaurentSeries({k: s * c for k, c in self.coeffs.items()}, abs(s) * self.tail_bound)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / complex(other))


def multiply(a: LaurentSeries, b: LaurentSeries, K: Optional[int] = None) -> LaurentSeries:
    """Coefficient convolution, optionally truncated to ``[-K, K]``."""
    if a.is_empty or b.is_empty:
        prod = LaurentSeries({})
    else:
        alo, ahi = a.support
        blo, bhi = b.support
        span = (ahi - alo + 1) * (bhi - blo + 1)
        if len(a) * len(b) <= 4096 or span > 1 << 26:
            out: Dict[int, complex] = {}
            for ka, ca in a.coeffs.items():
                for kb, cb in b.coeffs.items():
                    out[ka + kb] = out.get(ka + kb, 0j) + ca * cb
            prod = LaurentSeries(out)
        else:
            dense = np.convolve(a.dense(alo, ahi), b.dense(blo, bhi))
            prod = LaurentSeries.from_dense(dense, alo + blo)
    tail = a.wiener * b.tail_bound + b.wiener * a.tail_bound + a.tail_bound * b.tail_bound
    prod = LaurentSeries(prod.coeffs, tail)
    if K is not None:
        prod = prod.restrict(-K, K)
    return prod


# ---------------------------------------------------------------------------
# symbol families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Schedule:
    """Frequency rule j -> k_j(n) for j >= 1.

    ``kind`` is one of

    * ``"fixed"``: ``k_j(n) = offset[j]``
    * ``"affine"``: ``k_j(n) = floor(slope[j] * n) + offset[j]`` (missing
      slopes default to 0, so fixed and n-proportional frequencies can mix)
    * ``"table"``: ``k_j(n) = table[n][j]``
    """

    kind: str = "fixed"
    offset: Mapping[int, int] = field(default_factory=dict)
    slope: Mapping[int, float] = field(default_factory=dict)
    table: Mapping[int, Mapping[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("fixed", "affine", "table"):
            raise ValidationError(f"unknown schedule kind {self.kind!r}", "schedule.kind")
        object.__setattr__(self, "offset", MappingProxyType({int(j): int(v) for j, v in self.offset.items()}))
        object.__setattr__(self, "slope", MappingProxyType({int(j): float(v) for j, v in self.slope.items()}))
        object.__setattr__(
            self,
            "table",
            MappingProxyType({int(n): MappingProxyType({int(j): int(k) for j, k in row.items()}) for n, row in self.table.items()}),
        )
        if self.kind == "fixed" and self.slope:
            raise ValidationError("fixed schedule takes no slopes", "schedule.slope")

    @classmethod
    def fixed(cls, ks: Mapping[int, int]) -> "Schedule":
        return cls("fixed", offset=ks)

    @classmethod
    def affine(cls, slope: Mapping[int, float], offset: Optional[Mapping[int, int]] = None) -> "Schedule":
        return cls("affine", offset=offset or {}, slope=slope)

    @property
    def indices(self):
        if self.kind == "table":
            return sorted({j for row in self.table.values() for j in row})
        return sorted(set(self.offset) | set(self.slope))

    def k(self, j: int, n: int) -> int:
        if j < 0:
            return -self.k(-j, n)
        if self.kind == "table":
            try:
                return self.table[n][j]
            except KeyError:
                raise ValidationError(f"table schedule has no entry for n={n}, j={j}", "schedule.table") from None
        if self.kind == "fixed":
            if j not in self.offset:
                raise ValidationError(f"no frequency for index {j}", "schedule.offset")
            return self.offset[j]
        if j not in self.offset and j not in self.slope:
            raise ValidationError(f"no frequency for index {j}", "schedule")
        return int(math.floor(self.slope.get(j, 0.0) * n)) + self.offset.get(j, 0)

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "table":
            out["table"] = {str(n): {str(j): k for j, k in row.items()} for n, row in self.table.items()}
        else:
            out["offset"] = {str(j): v for j, v in self.offset.items()}
            if self.kind == "affine":
                out["slope"] = {str(j): v for j, v in self.slope.items()}
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schedule":
        kind = d.get("kind", "fixed")
        if kind == "table":
            table = {int(n): {int(j): int(k) for j, k in row.items()} for n, row in d.get("table", {}).items()}
            return cls("table", table=table)
        return cls(
            kind,
            offset={int(j): int(v) for j, v in d.get("offset", {}).items()},
            slope={int(j): float(v) for j, v in d.get("slope", {}).items()},
        )


@dataclass(frozen=True)
class SymbolSpec:
    """Coefficients alpha_j (j != 0) together with a frequency schedule.

    With ``hermitian=True`` only one of alpha_j, alpha_{-j} needs to be given;
    the other is filled in as the conjugate, and inconsistent pairs are
    rejected.
    """

    alphas: Mapping[int, complex]
    schedule: Schedule = field(default_factory=Schedule)
    hermitian: bool = True

    def __post_init__(self):
        alphas = {}
        for j, a in self.alphas.items():
            j = int(j)
            if j == 0:
                raise ValidationError("alpha_0 is not allowed", "spec.alphas")
            alphas[j] = _as_complex(a)
        if self.hermitian:
            for j in list(alphas):
                c = alphas[j].conjugate()
                if -j in alphas:
                    if alphas[-j] != c:
                        raise ValidationError(f"alpha_{-j} is not the conjugate of alpha_{j}", "spec.alphas")
                else:
                    alphas[-j] = c
        alphas = {j: a for j, a in sorted(alphas.items()) if a != 0}
        object.__setattr__(self, "alphas", MappingProxyType(alphas))
        missing = [j for j in self.indices if j not in self.schedule.indices]
        if missing and self.schedule.kind != "table":
            raise ValidationError(f"schedule has no frequency for indices {missing}", "spec.schedule")

    @property
    def indices(self):
        """Positive indices j with alpha_j or alpha_{-j} nonzero."""
        return sorted({abs(j) for j in self.alphas})

    def frequencies(self, n: int) -> Dict[int, int]:
        """Map j >= 1 -> k_j(n), validated to be distinct positive integers."""
        if n < 1:
            raise ValidationError(f"n must be positive, got {n}", "n")
        ks = {j: self.schedule.k(j, n) for j in self.indices}
        bad = [j for j, k in ks.items() if k <= 0]
        if bad:
            raise ValidationError(f"non-positive frequency at n={n} for indices {bad}", "spec.schedule")
        seen: Dict[int, int] = {}
        for j, k in ks.items():
            if k in seen:
                raise ValidationError(
                    f"schedule collision at n={n}: indices {seen[k]} and {j} both map to frequency {k}",
                    "spec.schedule",
                )
            seen[k] = j
        return ks

    def truncated(self, m: int) -> "SymbolSpec":
        return SymbolSpec({j: a for j, a in self.alphas.items() if abs(j) <= m}, self.schedule, self.hermitian)

    @property
    def a1(self) -> float:
        """Sum of |alpha_j| over all nonzero j."""
        return math.fsum(abs(a) for a in self.alphas.values())

    @property
    def a2(self) -> float:
        return math.sqrt(math.fsum(abs(a) ** 2 for a in self.alphas.values()))

    def alpha(self, j: int) -> complex:
        return self.alphas.get(j, 0j)

    def to_dict(self) -> dict:
        alphas = self.alphas
        if self.hermitian:
            alphas = {j: a for j, a in alphas.items() if j > 0 or -j not in alphas}
        return {
            "alphas": {str(j): [a.real, a.imag] for j, a in alphas.items()},
            "schedule": self.schedule.to_dict(),
            "hermitian": self.hermitian,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SymbolSpec":
        try:
            alphas = {int(j): _as_complex(a) for j, a in d.get("alphas", {}).items()}
        except (TypeError, ValueError) as exc:
            raise ValidationError(str(exc), "spec.alphas") from None
        return cls(alphas, Schedule.from_dict(d.get("schedule", {})), bool(d.get("hermitian", True)))


def build_symbol(spec: SymbolSpec, n: int, normalize: bool = True) -> LaurentSeries:
    """The symbol g_n of ``spec`` at size n (exact finite series)."""
    ks = spec.frequencies(n)
    out = {}
    for j, a in spec.alphas.items():
        k = ks[abs(j)] if j > 0 else -ks[abs(j)]
        w = 1.0 / math.sqrt(min(abs(k), n)) if normalize else 1.0
        out[k] = a * w
    return LaurentSeries(out)


def split_symbol(g: LaurentSeries, n: int) -> Tuple[LaurentSeries, LaurentSeries]:
    """Split into frequencies |k| <= n and |k| > n; a 0 term goes to the first part."""
    low = {k: c for k, c in g.coeffs.items() if abs(k) <= n}
    high = {k: c for k, c in g.coeffs.items() if abs(k) > n}
    return LaurentSeries(low, g.tail_bound), LaurentSeries(high)


def project_half(g: LaurentSeries, sign: str) -> LaurentSeries:
    """``plus`` keeps k >= 0, ``minus`` keeps k < 0."""
    if sign == "plus":
        return LaurentSeries({k: c for k, c in g.coeffs.items() if k >= 0}, g.tail_bound)
    if sign == "minus":
        return LaurentSeries({k: c for k, c in g.coeffs.items() if k < 0})
    raise ValidationError(f"sign must be 'plus' or 'minus', got {sign!r}")


# ---------------------------------------------------------------------------
# exponentials
# ---------------------------------------------------------------------------


def exp_tail_bound(w: float, bandwidth: int, L: int, moment: int = 0) -> float:
    """Bound on sum_{|j|>L} |j|^moment |(e^g)_j| for ||g||_W = w.

    Frequencies beyond L only occur in g^l with l*bandwidth > L, whose
    Wiener norm is at most w^l. ``moment=1`` weights each l by l*bandwidth.
    """
    if w == 0 or bandwidth == 0:
        return 0.0
    if L < 0:
        L0 = 0
    else:
        L0 = L // bandwidth + 1
    logw = math.log(w)
    total = 0.0
    l = max(L0, 0)
    while True:
        if l == 0:
            term = 1.0
        else:
            term = math.exp(l * logw - math.lgamma(l + 1))
        if moment:
            term *= (l * bandwidth) ** moment
        total += term
        if l > w and term <= 1e-18 * total:
            break
        if l > L0 + 100000:
            break
        l += 1
    return total


def _exp_one_sided(g: LaurentSeries, K: int) -> np.ndarray:
    """Taylor coefficients 0..K of exp(g) for g supported on k >= 0."""
    c0 = g[0]
    terms = [(k, k * c) for k, c in g.coeffs.items() if k > 0 and k <= K]
    E = np.zeros(K + 1, dtype=complex)
    E[0] = 1.0
    if terms:
        ks = np.array([k for k, _ in terms])
        kc = np.array([c for _, c in terms])
        for m in range(1, K + 1):
            sel = ks <= m
            E[m] = np.dot(kc[sel], E[m - ks[sel]]) / m
    if c0:
        E *= np.exp(c0)
    return E


def _exp_cached(items, tail_bound, coeff_range, tol, grid_cap):
    out = _exp_symbol(LaurentSeries(dict(items), tail_bound), coeff_range, tol, grid_cap)
    return dict(out.coeffs), out.tail_bound


_MEMORY = None


def _memory():
    """joblib cache rooted at $SZEGOLAB_CACHE_DIR, or None when unset."""
    global _MEMORY
    root = os.environ.get("SZEGOLAB_CACHE_DIR")
    if not root:
        return None
    if _MEMORY is None or _MEMORY[0] != root:
        import joblib

        _MEMORY = (root, joblib.Memory(root, verbose=0).cache(_exp_cached))
    return _MEMORY[1]


def exp_symbol(
    g: LaurentSeries,
    coeff_range: int,
    tol: Optional[float] = None,
    grid_cap: int = GRID_CAP,
) -> LaurentSeries:
    """Coefficients of exp(g) on ``[-coeff_range, coeff_range]``.

    Results are memoized on disk when ``SZEGOLAB_CACHE_DIR`` is set.
    See :func:`_exp_symbol` for the method.
    """
    cached = _memory()
    if cached is None:
        return _exp_symbol(g, coeff_range, tol, grid_cap)
    coeffs, tail = cached(tuple(g.coeffs.items()), g.tail_bound, int(coeff_range), tol, grid_cap)
    return LaurentSeries(coeffs, tail)


def _exp_symbol(
    g: LaurentSeries,
    coeff_range: int,
    tol: Optional[float] = None,
    grid_cap: int = GRID_CAP,
) -> LaurentSeries:
    """Coefficients of exp(g) on ``[-coeff_range, coeff_range]``.

    One-sided g uses the exact Taylor recurrence. Two-sided g is sampled on
    a uniform grid and transformed; the aliasing error is certified through
    the Wiener-norm bound on high frequencies and the grid doubled until it
    is below ``tol`` (default ``1e-12 * exp(||g||_W)``).

    The returned ``tail_bound`` covers aliasing, the mass outside the range,
    and the effect of ``g.tail_bound``.
    """
    K = int(coeff_range)
    if K < 0:
        raise ValidationError("coeff_range must be nonnegative")
    w = g.wiener
    if tol is None:
        tol = DEFAULT_REL_TOL * math.exp(w)
    if tol <= 0:
        raise ValidationError("tol must be positive")
    inherited = math.exp(w) * math.expm1(g.tail_bound) if g.tail_bound else 0.0

    if g.is_empty:
        return LaurentSeries({0: 1.0}, inherited)

    lo, hi = g.support
    B = g.bandwidth
    truncation = exp_tail_bound(w, B, K)

    if lo >= 0 or hi <= 0:
        h = g if lo >= 0 else g.flip()
        E = _exp_one_sided(LaurentSeries(h.coeffs), K)
        out = LaurentSeries.from_dense(E, 0)
        if hi <= 0 and lo < 0:
            out = out.flip()
        return LaurentSeries(out.coeffs, truncation + inherited)

    d = reduce(math.gcd, (abs(k) for k in g.coeffs))
    Kh, Bh = K // d, B // d
    N = 1 << max(3, math.ceil(math.log2(8 * (Kh + Bh))))
    while True:
        alias = exp_tail_bound(w, Bh, N - Kh - 1)
        if alias <= tol:
            break
        if 2 * N > grid_cap:
            raise TruncationError(f"exp_symbol: grid cap {grid_cap} reached", alias)
        N *= 2
    spectrum = np.zeros(N, dtype=complex)
    for k, c in g.coeffs.items():
        spectrum[(k // d) % N] += c
    samples = np.fft.ifft(spectrum) * N  # h(exp(2 pi i m / N))
    coeffs = np.fft.fft(np.exp(samples)) / N
    out = {}
    for kh in range(-Kh, Kh + 1):
        out[kh * d] = coeffs[kh % N]
    return LaurentSeries(out, alias + truncation + inherited)


def phi_psi(g1: LaurentSeries, coeff_range: int, tol: Optional[float] = None) -> Tuple[LaurentSeries, LaurentSeries]:
    """phi = a_+^{-1} a_- and psi = flip(a_+) flip(a_-^{-1}) for a = exp(g1).

    Both are exponentials of a single series, ``g1_- - g1_+`` and the flip
    of ``g1_+ - g1_-``, which avoids truncating a product of two infinite
    expansions.
    """
    plus = project_half(g1, "plus")
    minus = project_half(g1, "minus")
    phi = exp_symbol(minus - plus, coeff_range, tol)
    psi = exp_symbol(plus - minus, coeff_range, tol).flip()
    return phi, psi


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


class NormBundle(NamedTuple):
    wiener: float
    besov_half: float
    l2: float
    sup_estimate: float


def norms(g: LaurentSeries) -> NormBundle:
    """Wiener, B^{1/2}_2, L2 norms and a grid lower estimate of the sup norm."""
    if g.is_empty:
        return NormBundle(g.tail_bound, 0.0, 0.0, 0.0)
    wiener = g.wiener + g.tail_bound
    besov = math.sqrt(math.fsum((1 + abs(k)) * abs(c) ** 2 for k, c in g.coeffs.items()))
    l2 = math.sqrt(math.fsum(abs(c) ** 2 for c in g.coeffs.values()))
    d = reduce(math.gcd, (abs(k) for k in g.coeffs if k), 0) or 1
    Bh = g.bandwidth // d
    N = max(16, 1 << math.ceil(math.log2(max(4 * Bh, 1))))
    spectrum = np.zeros(N, dtype=complex)
    for k, c in g.coeffs.items():
        spectrum[(k // d) % N] += c
    sup = float(np.abs(np.fft.ifft(spectrum) * N).max())
    return NormBundle(wiener, besov, l2, sup)


def majorant_coeff_bound(t: LaurentSeries, k: int) -> float:
    """Upper bound for |(e^t)_{N+k}| from the positive-coefficient majorant.

    ``t`` carries its 1/sqrt(j) weights, so F_t(z) = sum_j |t_j| sqrt(j) z^j;
    vanishing coefficients simply do not appear in F_t. The bound is
    (F_t (e^{F_t} - 1))_{N+k} / sqrt(k (N+k)) with N the top frequency.
    """
    if k < 1:
        raise ValidationError(f"k must be a positive integer, got {k}")
    if t.is_empty:
        return 0.0
    lo, N = t.support
    if lo <= 0:
        raise ValidationError("majorant bound needs t supported on positive frequencies")
    F = LaurentSeries({j: abs(c) * math.sqrt(j) for j, c in t.coeffs.items()})
    top = N + k
    E = _exp_one_sided(F, top).real
    E[0] -= 1.0
    val = math.fsum(Fj.real * E[top - j] for j, Fj in F.coeffs.items() if top - j >= 0)
    return val / math.sqrt(k * top)
