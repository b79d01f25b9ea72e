"""The estimator suite.

Per-sample estimates of local Majorana products, Gaussian-state fidelities,
and Slater-determinant overlaps from matchgate shadow samples, all reduced
to Pfaffian evaluations of small antisymmetric matrices; median-of-means
aggregation; and the end-to-end overlap protocol that plans sample counts
from the variance bounds, collects shadows once per parity class, and reuses
them for every observable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .fermion import (
    GaussianStateSpec,
    SlaterSpec,
    bits_from_string,
    covariance_of_basis_state,
    pad_for_overlap,
    perp_plus_psi,
    rotate_covariance,
    slater_orthogonal,
    validate_majorana_set,
    w_matrix,
)
from .simulator import ShadowSample, _collect_chunk, validate_statevector
from .skewlin import (
    ComplexPolynomial,
    OrthogonalLabel,
    ValidationError,
    linear_pfaffian_coeffs,
    pfaffian,
    pfaffian_batch,
    poly_from_values,
    roots_of_unity,
)
from .variance import EstimationPlan, bound_overlap, plan_samples


def inverse_channel_coeff(n: int, ell: int) -> float:
    """C(2n, 2l) / C(n, l): the weight the inverse channel puts on grade 2l.

    Exact integer arithmetic up to n = 64; log-gamma beyond (the ratio
    stays well inside double range even when the binomials do not).
    """
    if not 0 <= ell <= n:
        raise ValidationError("need 0 <= l <= n")
    if n <= 64:
        return float(Fraction(math.comb(2 * n, 2 * ell), math.comb(n, ell)))
    lg = math.lgamma
    num = lg(2 * n + 1) - lg(2 * ell + 1) - lg(2 * (n - ell) + 1)
    den = lg(n + 1) - lg(ell + 1) - lg(n - ell + 1)
    return math.exp(num - den)


def _inverse_coeff_vector(n: int, count: int) -> np.ndarray:
    return np.array([inverse_channel_coeff(n, ell) for ell in range(count)])


def sample_covariance(sample: ShadowSample) -> np.ndarray:
    """Covariance Q^T C_b Q of the back-rotated outcome state."""
    return rotate_covariance(covariance_of_basis_state(sample.b), sample.q)


# ---------------------------------------------------------------------------
# local Majorana products
# ---------------------------------------------------------------------------


def estimate_majorana_product(
    sample: ShadowSample,
    s: Sequence[int],
    frame: OrthogonalLabel | None = None,
) -> complex:
    """Single-sample estimate of tr(g~_S rho) for an even product of
    Majorana operators in the (optional) rotated frame Q'."""
    n = sample.q.n
    s = validate_majorana_set(s, n)
    if len(s) % 2:
        raise ValidationError("odd products estimate to zero; pass an even set")
    if len(s) == 0:
        return 1.0 + 0.0j
    c = sample_covariance(sample)
    if frame is not None:
        qp = frame.matrix()
        c = qp @ c @ qp.T
    idx = np.asarray(s)
    restricted = 1j * c[np.ix_(idx, idx)]
    return inverse_channel_coeff(n, len(s) // 2) * pfaffian(restricted, validate=False)


# ---------------------------------------------------------------------------
# Gaussian-state fidelities
# ---------------------------------------------------------------------------


def _canonical_pairs(spec: GaussianStateSpec, cutoff: float = 1e-12):
    """Reorder the spec's frame so pairs with |lam| > cutoff come first;
    returns (q1 rows, nonzero lambdas)."""
    lam = np.real(spec.lam)
    nonzero = [j for j in range(spec.n) if abs(lam[j]) > cutoff]
    zero = [j for j in range(spec.n) if abs(lam[j]) <= cutoff]
    rows = []
    for j in nonzero + zero:
        rows += [2 * j, 2 * j + 1]
    q1 = spec.frame.matrix()[rows, :]
    return q1, lam[nonzero]


def gaussian_grade_poly(spec: GaussianStateSpec, c2: np.ndarray) -> ComplexPolynomial:
    """The polynomial whose z^l coefficient is tr(rho1 P_2l(rho2)), where
    rho1 is the spec and rho2 has covariance ``c2``.

    Cubic-time derivative recursion on pf(-C'^-1 + z X) when pf(C') is
    comfortably nonzero; roots-of-unity interpolation otherwise.
    """
    spec.require_state()
    n = spec.n
    q1, lam = _canonical_pairs(spec)
    r = lam.shape[0]
    pf_c = float(np.prod(lam)) if r else 1.0
    if r == 0:
        return ComplexPolynomial.from_coefficients([2.0**-n])
    minus_cinv = np.zeros((2 * r, 2 * r))
    for j, v in enumerate(lam):
        minus_cinv[2 * j, 2 * j + 1] = 1.0 / v
        minus_cinv[2 * j + 1, 2 * j] = -1.0 / v
    x = (q1 @ c2 @ q1.T)[: 2 * r, : 2 * r]
    scale = pf_c / 2.0**n
    if abs(pf_c) > 1e-12:
        poly = linear_pfaffian_coeffs(minus_cinv, x)
        coeffs = scale * poly.coefficients
        if coeffs.shape[0] < r + 1:
            coeffs = np.pad(coeffs, (0, r + 1 - coeffs.shape[0]))
        return ComplexPolynomial.from_coefficients(coeffs, trim=False)
    nodes = roots_of_unity(r + 1)
    mats = minus_cinv[None] + nodes[:, None, None] * x[None]
    values = scale * pfaffian_batch(mats)
    return poly_from_values(values)


def estimate_gaussian_fidelity(sample: ShadowSample, spec: GaussianStateSpec) -> float:
    """Single-sample unbiased estimate of tr(rho_spec rho)."""
    if spec.n != sample.q.n:
        raise ValidationError("spec and sample mode counts differ")
    poly = gaussian_grade_poly(spec, sample_covariance(sample))
    coeffs = poly.coefficients
    inv = _inverse_coeff_vector(spec.n, coeffs.shape[0])
    est = complex(np.dot(inv, coeffs))
    return float(est.real)


def gaussian_overlap(g1: GaussianStateSpec, g2: GaussianStateSpec) -> float:
    """tr(rho1 rho2) via the z = 1 value of the grade polynomial."""
    if g1.n != g2.n:
        raise ValidationError("mode counts differ")
    g2.require_state()
    poly = gaussian_grade_poly(g1, g2.covariance())
    return float(complex(np.sum(poly.coefficients)).real)


# ---------------------------------------------------------------------------
# Slater-determinant overlap observables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SlaterKernel:
    """Precomputed pieces of the overlap polynomial for one Slater spec."""

    n: int
    zeta: int
    g: np.ndarray  # W* Q~, applied to sample covariances
    c0_restricted: np.ndarray
    sbar: np.ndarray
    prefactor: complex
    degree: int


def _slater_kernel(slater: SlaterSpec) -> _SlaterKernel:
    if slater.zeta % 2:
        raise ValidationError("odd fermion counts need the ancilla padding first")
    n, zeta = slater.n, slater.zeta
    w, sbar = w_matrix(zeta, n)
    qtilde = slater_orthogonal(slater).matrix()
    g = w.conj() @ qtilde
    c0 = covariance_of_basis_state("0" * n)[np.ix_(sbar, sbar)]
    prefactor = (1j) ** (zeta // 2) / 2 ** (n - zeta // 2)
    return _SlaterKernel(
        n=n,
        zeta=zeta,
        g=g,
        c0_restricted=c0,
        sbar=sbar,
        prefactor=prefactor,
        degree=n - zeta // 2,
    )


def slater_grade_poly(slater: SlaterSpec, c2: np.ndarray) -> ComplexPolynomial:
    """The polynomial whose z^l coefficient is tr(|phi><0| P_2l(rho2));
    degree at most n - zeta/2, recovered at roots of unity."""
    kern = _slater_kernel(slater)
    a = (kern.g @ c2 @ kern.g.T)[np.ix_(kern.sbar, kern.sbar)]
    nodes = roots_of_unity(kern.degree + 1)
    mats = kern.c0_restricted[None] + nodes[:, None, None] * a[None]
    values = kern.prefactor * pfaffian_batch(mats)
    return poly_from_values(values)


def estimate_slater_overlap_op(sample: ShadowSample, slater: SlaterSpec) -> complex:
    """Single-sample unbiased estimate of tr(|phi><0| rho)."""
    if slater.n != sample.q.n:
        raise ValidationError("spec and sample mode counts differ")
    poly = slater_grade_poly(slater, sample_covariance(sample))
    coeffs = poly.coefficients
    inv = _inverse_coeff_vector(slater.n, coeffs.shape[0])
    return complex(np.dot(inv, coeffs))


def _slater_estimates_batch(
    qs: np.ndarray, bits: np.ndarray, slater: SlaterSpec, chunk: int = 8192
) -> np.ndarray:
    """Vectorized per-sample Slater-overlap estimates.

    ``qs`` is a stack of dense orthogonal matrices (batch, 2n, 2n); ``bits``
    the outcomes (batch, n).  Identical numerics to the scalar route, one
    Pfaffian batch per interpolation node.
    """
    kern = _slater_kernel(slater)
    n = kern.n
    count = qs.shape[0]
    nodes = roots_of_unity(kern.degree + 1)
    inv = _inverse_coeff_vector(n, kern.degree + 1)
    out = np.empty(count, dtype=complex)
    for start in range(0, count, chunk):
        q = qs[start : start + chunk]
        b = bits[start : start + chunk]
        m = q.shape[0]
        signs = 1.0 - 2.0 * b
        cb = np.zeros((m, 2 * n, 2 * n))
        ar = np.arange(n)
        cb[:, 2 * ar, 2 * ar + 1] = signs
        cb[:, 2 * ar + 1, 2 * ar] = -signs
        crot = np.matmul(np.matmul(q.transpose(0, 2, 1), cb), q)
        gc = np.matmul(kern.g[None], crot.astype(complex))
        a = np.matmul(gc, kern.g.T[None])
        a = a[:, kern.sbar[:, None], kern.sbar[None, :]]
        values = np.empty((m, nodes.shape[0]), dtype=complex)
        for t, z in enumerate(nodes):
            values[:, t] = pfaffian_batch(kern.c0_restricted[None] + z * a)
        coeffs = np.fft.fft(kern.prefactor * values, axis=1) / nodes.shape[0]
        out[start : start + chunk] = coeffs @ inv
    return out


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def median_of_means(values: Sequence[complex], k: int, l: int) -> complex:
    """Median over k means of consecutive length-l blocks; real and
    imaginary parts take the (lower, for even k) median independently."""
    values = np.asarray(values, dtype=complex)
    if values.shape[0] < k * l:
        raise ValidationError(f"need at least {k * l} values, got {values.shape[0]}")
    blocks = values[: k * l].reshape(k, l).mean(axis=1)
    pos = (k - 1) // 2
    re = np.sort(blocks.real)[pos]
    im = np.sort(blocks.imag)[pos]
    return complex(re, im)


@dataclass(frozen=True)
class EstimateSeries:
    """Aggregated estimate with its block-mean spread."""

    estimate: complex
    stderr: float
    n_samples: int
    k: int
    l: int


def aggregate(values: Sequence[complex], plan: EstimationPlan) -> EstimateSeries:
    values = np.asarray(values, dtype=complex)
    k, l = plan.k, plan.l
    est = median_of_means(values, k, l)
    blocks = values[: k * l].reshape(k, l).mean(axis=1)
    stderr = float(np.sqrt((blocks.real.var(ddof=1) + blocks.imag.var(ddof=1)) / k)) if k > 1 else 0.0
    return EstimateSeries(estimate=est, stderr=stderr, n_samples=k * l, k=k, l=l)


# ---------------------------------------------------------------------------
# the end-to-end overlap protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OverlapResult:
    estimates: list[complex]
    series: list[EstimateSeries]
    plan: EstimationPlan
    samples_per_class: dict[int, int]


def algorithm1(
    psi: np.ndarray,
    slaters: Sequence[SlaterSpec],
    eps: float,
    delta: float,
    ensemble: str = "clifford",
    seed: int = 0,
    threads: int = 1,
) -> OverlapResult:
    """Estimate <psi|phi_i> for a batch of Slater determinants.

    Pads each target per its fermion-count parity (the two parity classes
    need different initial states, so shadows are collected once per class
    present and reused across that class's observables), plans K and L from
    the worst variance bound over all observables, and returns 2x the
    median-of-means estimates of tr(|Phi_i><perp| rho).
    """
    psi, n = validate_statevector(psi)
    if not slaters:
        return OverlapResult([], [], plan_samples(eps, delta, 1, 1.0), {})
    problems = [pad_for_overlap(psi, s) for s in slaters]
    b_max = max(bound_overlap(p.n, p.target_slater.zeta) for p in problems)
    plan = plan_samples(eps, delta, len(slaters), b_max)

    by_parity: dict[int, list[int]] = {}
    for i, s in enumerate(slaters):
        by_parity.setdefault(s.zeta % 2, []).append(i)

    estimates: list[complex | None] = [None] * len(slaters)
    series: list[EstimateSeries | None] = [None] * len(slaters)
    samples_per_class: dict[int, int] = {}
    for parity, indices in sorted(by_parity.items()):
        problem = problems[indices[0]]
        state = perp_plus_psi(problem)
        qs, bits = _collect_arrays(
            state, problem.n, ensemble, plan.total, seed=seed + parity, threads=threads
        )
        samples_per_class[parity] = plan.total

        def estimate_index(i):
            per_sample = _slater_estimates_batch(qs, bits, problems[i].target_slater)
            agg = aggregate(per_sample, plan)
            return i, EstimateSeries(
                estimate=problems[i].scale * agg.estimate,
                stderr=problems[i].scale * agg.stderr,
                n_samples=agg.n_samples,
                k=agg.k,
                l=agg.l,
            )

        if threads > 1 and len(indices) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                scaled_all = list(pool.map(estimate_index, indices))
        else:
            scaled_all = [estimate_index(i) for i in indices]
        for i, scaled in scaled_all:
            series[i] = scaled
            estimates[i] = scaled.estimate
    return OverlapResult(
        estimates=list(estimates), series=list(series), plan=plan, samples_per_class=samples_per_class
    )


def _collect_arrays(
    state: np.ndarray, n: int, ensemble: str, count: int, seed: int, threads: int = 1, chunk: int = 8192
) -> tuple[np.ndarray, np.ndarray]:
    """Array-level shadow collection (dense labels + outcome bits), sharing
    the per-sample RNG contract with collect_shadows."""
    from concurrent.futures import ThreadPoolExecutor

    spans = [(s, min(chunk, count - s)) for s in range(0, count, chunk)]

    def work(span):
        start, size = span
        qs, perms, signs, bits = _collect_chunk(state, n, ensemble, seed, start, size)
        return start, qs, bits

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = {s: (q, b) for s, q, b in pool.map(work, spans)}
        ordered = [parts[s] for s, _ in spans]
    else:
        ordered = [work(span)[1:] for span in spans]
    qs = np.concatenate([q for q, _ in ordered]) if ordered else np.zeros((0, 2 * n, 2 * n))
    bits = np.concatenate([b for _, b in ordered]) if ordered else np.zeros((0, n), dtype=np.uint8)
    return qs, bits


def samples_to_arrays(samples: Sequence[ShadowSample]) -> tuple[np.ndarray, np.ndarray]:
    """Dense label stack and outcome bits for the batched estimators."""
    if not samples:
        raise ValidationError("no samples given")
    n = samples[0].q.n
    qs = np.stack([s.q.matrix() for s in samples])
    bits = np.stack([bits_from_string(s.b) for s in samples])
    return qs, bits
