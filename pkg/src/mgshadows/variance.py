"""Variance-bound calculators and sample-count planning.

The closed-form bounds are triple sums of products of binomial ratios that
overflow doubles near n ~ 1000, so the heavy paths run in log space with
max-shifted summation (all addends are positive, so there is no
cancellation).  Exact big-rational versions back the tests at small n.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import gammaln

from .skewlin import ValidationError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class EstimationPlan:
    """Median-of-means plan: K subsamples of size L."""

    epsilon: float
    delta: float
    observables: int
    b_max: float
    k: int
    l: int

    @property
    def total(self) -> int:
        return self.k * self.l


def _snap(x: float) -> float:
    r = round(x)
    if abs(x - r) <= 1e-9 * max(1.0, abs(x)):
        return float(r)
    return x


def plan_samples(eps: float, delta: float, observables: int, b_max: float) -> EstimationPlan:
    """K = ceil(18 ln(M/delta)), L = ceil(24 b_max / eps^2)."""
    if eps <= 0 or delta <= 0:
        raise ValidationError("eps and delta must be positive")
    if observables < 1:
        raise ValidationError("need at least one observable")
    k = math.ceil(_snap(18 * math.log(observables / delta)))
    k = max(k, 1)
    l = max(math.ceil(_snap(24 * b_max / eps**2)), 1)
    return EstimationPlan(epsilon=eps, delta=delta, observables=observables, b_max=b_max, k=k, l=l)


# ---------------------------------------------------------------------------
# log-domain tables
# ---------------------------------------------------------------------------


class LogBinomialTable:
    """Precomputed ln(k!) up to 4n+1, with vectorized binomial/multinomial
    log values (-inf on invalid arguments)."""

    def __init__(self, max_n: int):
        self.max_n = max_n
        self.log_fact = gammaln(np.arange(4 * max_n + 2, dtype=float) + 1.0)

    def log_binom(self, a, b):
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        ok = (b >= 0) & (b <= a) & (a >= 0)
        bs = np.where(ok, b, 0)
        as_ = np.where(ok, a, 0)
        out = self.log_fact[as_] - self.log_fact[bs] - self.log_fact[as_ - bs]
        return np.where(ok, out, -np.inf)

    def log_multinomial(self, total: int, parts):
        """ln C(total; p1, p2, ..., rest); -inf when any part or the rest is
        negative."""
        parts = [np.asarray(p, dtype=np.int64) for p in parts]
        rest = total - sum(parts)
        ok = rest >= 0
        for p in parts:
            ok = ok & (p >= 0)
        restc = np.where(ok, rest, 0)
        acc = self.log_fact[total] - self.log_fact[restc]
        for p in parts:
            acc = acc - self.log_fact[np.where(ok, p, 0)]
        return np.where(ok, acc, -np.inf)


# ---------------------------------------------------------------------------
# alpha and kappa
# ---------------------------------------------------------------------------


def alpha_exact(n: int, l1: int, l2: int, l3: int) -> Fraction:
    """The weight multiplying each disjoint-triple count in the second-moment
    formula, as an exact rational."""
    if min(l1, l2, l3) < 0 or l1 + l2 + l3 > n:
        raise ValidationError("need l_i >= 0 and l1 + l2 + l3 <= n")
    rest = n - l1 - l2 - l3
    mn = math.comb(n, l1) * math.comb(n - l1, l2) * math.comb(n - l1 - l2, l3)
    m2n = (
        math.comb(2 * n, 2 * l1)
        * math.comb(2 * n - 2 * l1, 2 * l2)
        * math.comb(2 * n - 2 * l1 - 2 * l2, 2 * l3)
    )
    out = Fraction(mn, m2n)
    out *= Fraction(math.comb(2 * n, 2 * (l1 + l3)), math.comb(n, l1 + l3))
    out *= Fraction(math.comb(2 * n, 2 * (l2 + l3)), math.comb(n, l2 + l3))
    return out


def alpha(n: int, l1: int, l2: int, l3: int) -> float:
    return float(alpha_exact(n, l1, l2, l3))


def kappa(n: int, zeta: int, l1: int, l2: int, l3: int) -> int:
    """Number of disjoint index triples compatible with the overlap
    observable's pairing condition (exact integer count)."""
    if zeta % 2:
        raise ValidationError("kappa is defined for even fermion counts")
    if not 0 <= zeta <= n:
        raise ValidationError("need 0 <= zeta <= n")
    half = zeta // 2
    total = 0
    for j in range(half + 1):
        parts = (l1 - half + j, l2 - half + j, l3 - j)
        rest = (n - zeta) - sum(parts)
        if min(parts) < 0 or rest < 0:
            continue
        m = math.comb(n - zeta, parts[0]) * math.comb(n - zeta - parts[0], parts[1]) * math.comb(
            n - zeta - parts[0] - parts[1], parts[2]
        )
        total += math.comb(zeta, 2 * j) * m
    return (1 << zeta) * total


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _merge_logsum(acc: tuple[float, float], mx: float, sm: float) -> tuple[float, float]:
    m0, s0 = acc
    if sm == 0.0 or mx == -np.inf:
        return acc
    m1 = max(m0, mx)
    return m1, s0 * math.exp(m0 - m1) + sm * math.exp(mx - m1)


def _log_ratio_table(n: int, table: LogBinomialTable) -> np.ndarray:
    return np.array(
        [float(table.log_binom(2 * n, 2 * k) - table.log_binom(n, k)) for k in range(n + 1)]
    )


def _convolved_slice(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """ln of sum over (u, v) of exp(a[u] + b[v] + c[u+v]); -inf if empty.

    The inner sums run over nonnegative addends after max shifts, so the
    only rounding is benign accumulation; the order is fixed by
    np.convolve, keeping results thread- and chunk-independent.
    """
    if a.size == 0 or b.size == 0 or c.size == 0:
        return -np.inf
    am, bm = a.max(), b.max()
    if not (np.isfinite(am) and np.isfinite(bm)):
        return -np.inf
    conv = np.convolve(np.exp(a - am), np.exp(b - bm))
    c = c[: conv.shape[0]]
    conv = conv[: c.shape[0]]
    valid = np.isfinite(c) & (conv > 0)
    if not np.any(valid):
        return -np.inf
    cm = c[valid].max()
    total = float(np.dot(np.exp(c[valid] - cm), conv[valid]))
    if total <= 0.0:
        return -np.inf
    return float(am + bm + cm + math.log(total))


def _bound_overlap_partial(n: int, zeta: int, table: LogBinomialTable, ratio: np.ndarray, l1: int):
    """(max, shifted sum) of one l1 slice, the inner (l2, l3) plane
    collapsed to a convolution over l2 + l3."""
    lf = table.log_fact
    half = zeta // 2
    acc = (-np.inf, 0.0)
    rem = n - l1
    for j in range(half + 1):
        m1 = l1 - half + j
        if m1 < 0:
            continue
        u0 = max(0, half - j)
        v0 = j
        if u0 > rem or v0 > rem:
            continue
        u = np.arange(u0, rem + 1)
        v = np.arange(v0, rem + 1)
        s = np.arange(u0 + v0, 2 * rem + 1)
        a_vec = -lf[u] + lf[2 * u] - lf[u - half + j]
        b_vec = -lf[v] + lf[2 * v] + ratio[l1 + v] - lf[v - j]
        rest = n - l1 - s
        ok = rest - j >= 0
        c_vec = np.where(
            ok,
            -lf[np.maximum(rest, 0)]
            + lf[np.maximum(2 * rest, 0)]
            + ratio[np.minimum(s, n)]
            - lf[np.maximum(rest - j, 0)],
            -np.inf,
        )
        const = (
            lf[n]
            - lf[l1]
            - lf[2 * n]
            + lf[2 * l1]
            + lf[n - zeta]
            - lf[m1]
            + zeta * LN2
            + float(table.log_binom(zeta, 2 * j))
            - 2 * n * LN2
        )
        contrib = _convolved_slice(a_vec, b_vec, c_vec)
        if np.isfinite(contrib):
            acc = _merge_logsum(acc, contrib + const, 1.0)
    return acc


def bound_overlap(n: int, zeta: int, threads: int = 1) -> float:
    """The overlap-estimator variance bound b(n, zeta): the alpha-weighted
    count sum, in log domain with max-shifted accumulation.

    Per-l1 partials are merged in index order regardless of thread count,
    so results are bitwise thread-independent.
    """
    if zeta % 2:
        raise ValidationError("pad to an even fermion count first")
    if not 0 <= zeta <= n:
        raise ValidationError("need 0 <= zeta <= n")
    table = LogBinomialTable(n)
    ratio = _log_ratio_table(n, table)
    work = lambda l1: _bound_overlap_partial(n, zeta, table, ratio, l1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, range(n + 1)))
    else:
        parts = [work(l1) for l1 in range(n + 1)]
    acc = (-np.inf, 0.0)
    for mx, sm in parts:
        acc = _merge_logsum(acc, mx, sm)
    best, total = acc
    if total == 0.0:
        return 0.0
    return float(math.exp(best) * total)


def bound_gaussian(n: int) -> float:
    """The Gaussian-observable variance bound, written as the literal
    squared-multinomial expression (an independent code path from
    bound_overlap(n, 0), for cross-validation)."""
    table = LogBinomialTable(n)
    lf = table.log_fact
    ratio = _log_ratio_table(n, table)
    acc = (-np.inf, 0.0)
    for l1 in range(n + 1):
        rem = n - l1
        u = np.arange(rem + 1)
        v = np.arange(rem + 1)
        s = np.arange(2 * rem + 1)
        rest = n - l1 - s
        a_vec = -2 * lf[u] + lf[2 * u]
        b_vec = -2 * lf[v] + lf[2 * v] + ratio[l1 + v]
        c_vec = np.where(
            rest >= 0,
            -2 * lf[np.maximum(rest, 0)] + lf[np.maximum(2 * rest, 0)] + ratio[np.minimum(s, n)],
            -np.inf,
        )
        const = 2 * lf[n] - 2 * lf[l1] - lf[2 * n] + lf[2 * l1] - 2 * n * LN2
        contrib = _convolved_slice(a_vec, b_vec, c_vec)
        if np.isfinite(contrib):
            acc = _merge_logsum(acc, contrib + const, 1.0)
    best, total = acc
    return float(math.exp(best) * total)


def bound_overlap_exact(n: int, zeta: int) -> Fraction:
    """Big-rational evaluation of b(n, zeta); test oracle for n <= 20."""
    if n > 20:
        raise ValidationError("the exact backend is intended for n <= 20")
    total = Fraction(0)
    for l1 in range(n + 1):
        for l2 in range(n - l1 + 1):
            for l3 in range(n - l1 - l2 + 1):
                total += alpha_exact(n, l1, l2, l3) * kappa(n, zeta, l1, l2, l3)
    return total / 4**n


def bound_local(n: int, k: int) -> float:
    """Variance bound C(2n, k)/C(n, k/2) for a weight-k Majorana product."""
    if k % 2:
        raise ValidationError("Majorana products of odd weight estimate to zero")
    if not 0 <= k <= 2 * n:
        raise ValidationError("need 0 <= k <= 2n")
    return float(Fraction(math.comb(2 * n, k), math.comb(n, k // 2)))


def exact_variance_smalln(rho: np.ndarray, obs: np.ndarray, ensemble: str = "clifford") -> float:
    """Exact Var[o_hat] at n <= 3 (the two ensembles share all three moments,
    so the closed-form second moment applies to either)."""
    if ensemble not in ("haar", "clifford"):
        raise ValidationError(f"unknown ensemble {ensemble!r}")
    from .oracle import exact_variance_bound

    second = exact_variance_bound(rho, obs)
    mean = complex(np.trace(obs @ rho))
    return float(second - abs(mean) ** 2)


# ---------------------------------------------------------------------------
# table generation
# ---------------------------------------------------------------------------

DEFAULT_N_GRID = (4, 8, 16, 32, 64, 128, 256, 512, 1000)
DEFAULT_ZETA_GRID = (0, 2, 10, 50, 100, 200, 500)
SLOW_GRID_POINT = (1000, 500)


def variance_table(
    ns=DEFAULT_N_GRID,
    zetas=DEFAULT_ZETA_GRID,
    include_slow: bool = False,
    threads: int = 1,
):
    """Yield (n, zeta, bound) rows over the grid, skipping zeta > n and the
    flagged slow point unless requested."""
    for n in ns:
        for zeta in zetas:
            if zeta > n:
                continue
            if (n, zeta) == SLOW_GRID_POINT and not include_slow:
                continue
            yield n, zeta, bound_overlap(n, zeta, threads=threads)
