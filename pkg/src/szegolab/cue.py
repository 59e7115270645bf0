"""Haar-random unitaries and Monte Carlo estimates of their eigenvalue statistics.

Samples are drawn in fixed-size chunks. Each chunk owns a Philox stream
keyed by (seed, experiment tag, n, chunk index), so results do not depend
on how chunks are scheduled across threads.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, linalg

from .errors import NumericError, ValidationError
from .symbols import SymbolSpec

CHUNK = 64


@dataclass(frozen=True)
class CueSample:
    n: int
    phases: np.ndarray

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        if ph.shape != (self.n,):
            raise ValidationError(f"expected {self.n} phases, got shape {ph.shape}")
        if np.any(ph < -math.pi) or np.any(ph >= math.pi):
            raise ValidationError("phases must lie in [-pi, pi)")
        object.__setattr__(self, "phases", ph)


@dataclass(frozen=True)
class McEstimate:
    mean: complex
    stderr: float
    samples: int
    seed: int

    @classmethod
    def from_values(cls, values: np.ndarray, seed: int) -> "McEstimate":
        values = np.asarray(values)
        m = values.size
        if m < 2:
            raise ValidationError("an estimate needs at least 2 samples")
        mean = complex(values.mean())
        # stderr of a complex mean: sqrt(E|x - mean|^2 / m)
        var = float(np.sum(np.abs(values - mean) ** 2)) / (m - 1)
        return cls(mean, math.sqrt(var / m), m, seed)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def chunk_rng(seed: int, tag: str, n: int, chunk: int) -> np.random.Generator:
    tag_key = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    ss = np.random.SeedSequence([seed & (2 ** 64 - 1), tag_key, n, chunk])
    return np.random.Generator(np.random.Philox(ss))


def haar_unitaries(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` Haar unitaries of size n, shape (count, n, n)."""
    z = (rng.standard_normal((count, n, n)) + 1j * rng.standard_normal((count, n, n))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=1, axis2=2)
    # Q R = (Q L)(L^{-1} R) with L = diag(d / |d|); L^{-1} R has a positive diagonal
    return q * (d / np.abs(d))[:, None, :]


def _wrap_phases(theta: np.ndarray) -> np.ndarray:
    theta = np.where(theta >= math.pi, theta - 2 * math.pi, theta)
    return np.where(theta < -math.pi, theta + 2 * math.pi, theta)


def eigenphases(u: np.ndarray, seed: Optional[int] = None) -> np.ndarray:
    """Sorted eigenphases in [-pi, pi) of a stack of unitaries.

    Goes through the Cayley transform H = i (I + U)^{-1} (I - U), which is
    Hermitian with eigenvalues tan(theta / 2), so a symmetric eigensolver
    does the work. Each matrix is checked against its trace and recomputed
    with a general eigensolver if the check fails.
    """
    single = u.ndim == 2
    if single:
        u = u[None]
    n = u.shape[-1]
    eye = np.eye(n)
    try:
        h = 1j * np.linalg.solve(eye + u, eye - u)
        h = 0.5 * (h + np.conj(np.swapaxes(h, 1, 2)))
        theta = 2 * np.arctan(np.linalg.eigvalsh(h))
        bad = np.abs(np.exp(1j * theta).sum(axis=1) - np.trace(u, axis1=1, axis2=2)) > 1e-8 * n
    except np.linalg.LinAlgError:
        theta = np.empty(u.shape[:2])
        bad = np.ones(u.shape[0], dtype=bool)
    for i in np.flatnonzero(bad):
        try:
            theta[i] = np.angle(linalg.eigvals(u[i], check_finite=False))
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericError(f"eigensolver failed: {exc}", seed=seed) from exc
    theta = np.sort(_wrap_phases(theta), axis=1)
    return theta[0] if single else theta


def sample_cue(n: int, rng: np.random.Generator) -> CueSample:
    """Eigenphases of one Haar-random n x n unitary."""
    if n < 1:
        raise ValidationError(f"n must be positive, got {n}")
    return CueSample(n, eigenphases(haar_unitaries(n, 1, rng)[0]))


def _run_chunks(
    n: int,
    samples: int,
    seed: int,
    tag: str,
    reduce: Callable[[np.ndarray], np.ndarray],
    threads: int = 1,
    chunk: int = CHUNK,
) -> np.ndarray:
    """Draw ``samples`` eigenphase vectors and apply ``reduce`` to each chunk.

    ``reduce`` maps a (count, n) phase array to a (count, ...) array; the
    results are concatenated in chunk order.
    """
    if samples < 2:
        raise ValidationError("samples must be at least 2")
    nchunks = -(-samples // chunk)

    def work(c: int) -> np.ndarray:
        count = min(chunk, samples - c * chunk)
        rng = chunk_rng(seed, tag, n, c)
        return reduce(eigenphases(haar_unitaries(n, count, rng), seed=seed))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(nchunks)))
    else:
        parts = [work(c) for c in range(nchunks)]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# statistics of one sample
# ---------------------------------------------------------------------------


def _trace_powers(phases: np.ndarray, ks: Sequence[int]) -> np.ndarray:
    ks = np.asarray(ks, dtype=float)
    return np.exp(1j * phases[..., None, :] * ks[:, None]).sum(axis=-1)


def trace_powers(sample: CueSample, ks: Sequence[int]) -> List[complex]:
    """Tr U^k = sum over eigenphases of exp(i k theta) for each k."""
    return [complex(v) for v in _trace_powers(sample.phases, ks)]


def _statistic_weights(spec: SymbolSpec, n: int) -> Tuple[List[int], np.ndarray]:
    ks = spec.frequencies(n)
    freqs, weights = [], []
    for j, k in ks.items():
        scale = 1 / math.sqrt(min(k, n))
        freqs += [k, -k]
        weights += [spec.alpha(j) * scale, spec.alpha(-j) * scale]
    return freqs, np.asarray(weights, dtype=complex)


def _linear_statistic(spec: SymbolSpec, n: int, phases: np.ndarray) -> np.ndarray:
    freqs, weights = _statistic_weights(spec, n)
    if not freqs:
        return np.zeros(phases.shape[:-1], dtype=complex)
    return _trace_powers(phases, freqs) @ weights


def linear_statistic(spec: SymbolSpec, n: int, sample: CueSample) -> complex:
    """X_n = sum over eigenphases of f_n(exp(i theta))."""
    return complex(_linear_statistic(spec, n, sample.phases))


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------


def _check_samples(samples: int, minimum: int = 100):
    if samples < minimum:
        raise ValidationError(f"samples must be at least {minimum}, got {samples}")


def char_fn_mc(spec: SymbolSpec, n: int, samples: int, seed: int, threads: int = 1) -> McEstimate:
    """Estimate E exp(i X_n) over Haar U(n)."""
    _check_samples(samples)
    vals = _run_chunks(n, samples, seed, "char_fn", lambda ph: np.exp(1j * _linear_statistic(spec, n, ph)), threads)
    return McEstimate.from_values(vals, seed)


@dataclass(frozen=True)
class MomentRow:
    quantity: str
    k: int
    l: int
    estimate: McEstimate
    target: float


def moment_suite(n: int, ks: Sequence[int], samples: int, seed: int, threads: int = 1) -> List[MomentRow]:
    """Second moments of traces of powers.

    For every pair k <= l: E[Tr U^k conj(Tr U^l)] (target delta_{kl} min(k, n)).
    For every k: E[(Re Tr U^k)^2], E[(Im Tr U^k)^2] (target min(k, n)/2 each),
    E[Re Tr U^k Im Tr U^k] (target 0) and the normalised variance
    E|Tr U^k|^2 / min(k, n) (target 1).
    """
    ks = [int(k) for k in ks]
    if len(set(ks)) != len(ks) or any(k < 1 for k in ks):
        raise ValidationError("ks must be distinct positive integers")
    _check_samples(samples)
    tr = _run_chunks(n, samples, seed, "moments", lambda ph: _trace_powers(ph, ks), threads)
    rows = []
    for a, k in enumerate(ks):
        for b in range(a, len(ks)):
            l = ks[b]
            est = McEstimate.from_values(tr[:, a] * np.conj(tr[:, b]), seed)
            rows.append(MomentRow("cross" if a != b else "abs2", k, l, est, float(min(k, n)) if a == b else 0.0))
    for a, k in enumerate(ks):
        t = tr[:, a]
        rows.append(MomentRow("re2", k, k, McEstimate.from_values(t.real ** 2, seed), min(k, n) / 2))
        rows.append(MomentRow("im2", k, k, McEstimate.from_values(t.imag ** 2, seed), min(k, n) / 2))
        rows.append(MomentRow("re_im", k, k, McEstimate.from_values(t.real * t.imag, seed), 0.0))
        rows.append(
            MomentRow("normalized_var", k, k, McEstimate.from_values(np.abs(t) ** 2 / min(k, n), seed), 1.0)
        )
    return rows


@dataclass(frozen=True)
class TruncationRow:
    m: int
    difference: float
    stderr: float
    bound: float
    full: McEstimate
    truncated: McEstimate

    @property
    def holds(self) -> bool:
        return self.difference <= self.bound + 3 * self.stderr


def truncation_sweep(
    spec: SymbolSpec, n: int, m_list: Sequence[int], samples: int, seed: int, threads: int = 1
) -> List[TruncationRow]:
    """|E e^{i X_n} - E e^{i X_{n,m}}| against (sum_{|j|>m} |alpha_j|^2)^{1/2}.

    X_{n,m} keeps only |j| <= m. Both expectations use the same unitaries,
    and ``stderr`` is the standard error of the paired difference.
    """
    if not spec.hermitian:
        raise ValidationError("truncation_sweep needs a hermitian spec (real-valued f_n)")
    _check_samples(samples)
    m_list = [int(m) for m in m_list]
    truncs = [spec.truncated(m) for m in m_list]

    def reduce(ph):
        cols = [np.exp(1j * _linear_statistic(spec, n, ph))]
        cols += [np.exp(1j * _linear_statistic(t, n, ph)) for t in truncs]
        return np.stack(cols, axis=1)

    vals = _run_chunks(n, samples, seed, "truncation", reduce, threads)
    full = McEstimate.from_values(vals[:, 0], seed)
    rows = []
    for i, m in enumerate(m_list):
        part = McEstimate.from_values(vals[:, i + 1], seed)
        diff = McEstimate.from_values(vals[:, 0] - vals[:, i + 1], seed)
        tail = math.sqrt(math.fsum(abs(spec.alpha(j)) ** 2 + abs(spec.alpha(-j)) ** 2 for j in spec.indices if j > m))
        rows.append(TruncationRow(m, abs(diff.mean), diff.stderr, tail, full, part))
    return rows


# ---------------------------------------------------------------------------
# mock-Gaussian statistics
# ---------------------------------------------------------------------------


def _bump(x: np.ndarray, s: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = x / s
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    out[inside] = np.exp(-1 / (1 - u[inside] ** 2))
    return out


def _bump_derivative(x: np.ndarray, s: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    u = x / s
    out = np.zeros_like(u)
    inside = np.abs(u) < 1
    ui = u[inside]
    w = 1 - ui ** 2
    out[inside] = np.exp(-1 / w) * (-2 * ui / (s * w ** 2))
    return out


@dataclass(frozen=True)
class ScaledStatSpec:
    """Test function f and scaling exponent gamma for X_n = sum f(n^gamma theta).

    ``family`` is ``"bump_derivative"`` (f = d/dx exp(-1/(1-(x/s)^2)) on |x| < s)
    or ``"bandlimited"`` (f given by a piecewise-linear table of fhat on
    y >= 0, extended evenly, with fhat(0) forced to 0).
    """

    family: str = "bump_derivative"
    gamma: float = 0.5
    scale: float = math.pi
    table: Tuple[Tuple[float, float], ...] = field(default=())

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValidationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.family == "bump_derivative":
            if not 0 < self.scale <= math.pi:
                raise ValidationError(f"scale must lie in (0, pi], got {self.scale}")
        elif self.family == "bandlimited":
            tab = tuple((float(y), float(v)) for y, v in self.table)
            if len(tab) < 2 or any(b[0] <= a[0] for a, b in zip(tab, tab[1:])) or tab[0][0] != 0:
                raise ValidationError("bandlimited table needs increasing y starting at 0")
            tab = ((0.0, 0.0),) + tab[1:]
            object.__setattr__(self, "table", tab)
        else:
            raise ValidationError(f"unknown test function family {self.family!r}")

    @property
    def is_zero(self) -> bool:
        return self.family == "bandlimited" and all(v == 0 for _, v in self.table)

    @property
    def support(self) -> float:
        """Half-width of the support of f (inf for bandlimited f)."""
        return self.scale if self.family == "bump_derivative" else math.inf

    def f(self, x) -> np.ndarray:
        if self.family == "bump_derivative":
            return _bump_derivative(x, self.scale)
        # f(x) = (1/2pi) int fhat(y) e^{ixy} dy = (1/pi) int_0^Y fhat(y) cos(xy) dy
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros_like(x)
        for (y0, v0), (y1, v1) in zip(self.table, self.table[1:]):
            out += _linear_cos_integral(x, y0, v0, y1, v1)
        return out / math.pi

    def fhat(self, y: float) -> complex:
        """int f(x) e^{-ixy} dx."""
        y = abs(float(y)) if self.family == "bandlimited" else float(y)
        if self.family == "bandlimited":
            ys = [t[0] for t in self.table]
            if y >= ys[-1]:
                return 0j
            return complex(np.interp(y, ys, [t[1] for t in self.table]))
        # f = psi' with psi even, so fhat(y) = i y psihat(y), psihat(y) = 2 int_0^s psi cos(xy) dx
        s = self.scale
        val, _ = integrate.quad(lambda x: float(_bump(x, s)), 0, s, weight="cos", wvar=y, limit=200)
        return 1j * y * 2 * val

    def fhat_abs2(self, y: float) -> float:
        return abs(self.fhat(y)) ** 2

    @property
    def fhat_cutoff(self) -> float:
        """A y beyond which |fhat|^2 is negligible."""
        if self.family == "bandlimited":
            return self.table[-1][0]
        # psihat decays like exp(-sqrt(2 s y)); this cut leaves < 1e-30 relative
        return 2500.0 / self.scale

    def sigma2(self, weight: Callable[[float], float], rel_tol: float = 1e-8) -> float:
        """(1/4pi^2) int weight(|y|) |fhat(y)|^2 dy over the real line."""
        if self.is_zero:
            return 0.0
        top = self.fhat_cutoff
        if self.family == "bandlimited":
            breaks = [t[0] for t in self.table] + [1.0]
        else:
            breaks = [0.0, 1.0] + list(np.geomspace(2.0, top, 12))
        breaks = sorted({b for b in breaks if 0 <= b <= top} | {top})
        parts, errs = [], []
        for lo, hi in zip(breaks, breaks[1:]):
            val, err = integrate.quad(lambda y: weight(y) * self.fhat_abs2(y), lo, hi, epsrel=rel_tol, limit=200)
            parts.append(val)
            errs.append(err)
        total = math.fsum(parts)
        # the inner transform is itself a quadrature, so allow its noise on top of rel_tol
        if not math.isfinite(total) or math.fsum(errs) > 100 * rel_tol * abs(total) + 1e-14:
            raise NumericError(f"sigma^2 quadrature did not converge (error estimate {math.fsum(errs):.2e})")
        return 2 * total / (4 * math.pi ** 2)

    def sigma2_soshnikov(self) -> float:
        return self.sigma2(lambda y: y)

    def sigma2_mock(self) -> float:
        return self.sigma2(lambda y: min(y, 1.0))

    def finite_n_variance(self, n: int, kmax: Optional[int] = None) -> float:
        """Exact Var X_n at size n: sum_k |c_k|^2 min(|k|, n), c_k = fhat(k / n^gamma) / (2 pi n^gamma).

        Valid when the support of f(n^gamma theta) lies inside (-pi, pi).
        """
        if self.support * 1.0 / n ** self.gamma > math.pi:
            raise ValidationError("the scaled test function does not fit on the circle")
        scale = n ** self.gamma
        kmax = kmax or int(math.ceil(self.fhat_cutoff * scale))
        total = math.fsum(
            self.fhat_abs2(k / scale) * min(k, n) for k in range(1, kmax + 1)
        )
        return 2 * total / (2 * math.pi * scale) ** 2

    def statistic(self, phases: np.ndarray, n: int) -> np.ndarray:
        return self.f(n ** self.gamma * phases).reshape(np.shape(phases)).sum(axis=-1)


def _linear_cos_integral(x, y0, v0, y1, v1):
    """int_{y0}^{y1} (linear interpolant of v) cos(x y) dy, vectorized in x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-8
    out[small] = 0.5 * (v0 + v1) * (y1 - y0)
    xs = x[~small]
    slope = (v1 - v0) / (y1 - y0)
    # antiderivative of (v0 + slope (y - y0)) cos(xy)
    def F(y, v):
        return v * np.sin(xs * y) / xs + slope * np.cos(xs * y) / xs ** 2
    out[~small] = F(y1, v1) - F(y0, v0)
    return out


@dataclass(frozen=True)
class MockGaussianResult:
    variance: McEstimate
    mean: McEstimate
    sigma2_soshnikov: float
    sigma2_mock: float
    fourth_moment_ratio: float


def mock_gaussian_experiment(
    stat: ScaledStatSpec, n: int, samples: int, seed: int, threads: int = 1
) -> MockGaussianResult:
    """Empirical mean and variance of X_n = sum f(n^gamma theta) next to both sigma^2 formulas.

    The variance estimate is the sample mean of (X - mean X)^2 with its own
    standard error. ``fourth_moment_ratio`` is E(X - mean)^4 / Var^2, which is
    3 for a Gaussian.
    """
    _check_samples(samples)
    if stat.is_zero:
        zero = McEstimate(0j, 0.0, samples, seed)
        return MockGaussianResult(zero, zero, 0.0, 0.0, math.nan)
    x = _run_chunks(n, samples, seed, "mock_gaussian", lambda ph: stat.statistic(ph, n), threads).real
    mean = McEstimate.from_values(x, seed)
    dev2 = (x - x.mean()) ** 2
    var = McEstimate.from_values(dev2 * samples / (samples - 1), seed)
    kurt = float(np.mean(dev2 ** 2) / np.mean(dev2) ** 2) if np.any(dev2) else math.nan
    return MockGaussianResult(var, mean, stat.sigma2_soshnikov(), stat.sigma2_mock(), kurt)
