"""General-observable machinery via Grassmann (Berezin) integration.

A small symbolic Grassmann algebra serves as the brute-force oracle; the
production path turns traces of operator products (anticommuting linear
combinations of Majorana operators, Gaussian densities with possibly
complex weights, Gaussian unitaries) into Gaussian-weighted integrals
g(B, M) and evaluates them with a recursion that tolerates singular M.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fermion import GaussianStateSpec, covariance_of_basis_state, covariance_of_gaussian
from .skewlin import (
    ComplexPolynomial,
    OrthogonalLabel,
    ResourceLimitError,
    ValidationError,
    antisym_canonical,
    orthogonal_log,
    pfaffian,
    poly_from_values,
    roots_of_unity,
)

MAX_SYMBOLIC_GENERATORS = 12
COS_DEGENERACY_TOL = 1e-12


# ---------------------------------------------------------------------------
# symbolic oracle
# ---------------------------------------------------------------------------


class GrassmannElement:
    """Sparse element of a Grassmann algebra on ``ngen`` generators.

    Terms map bitmasks (bit mu set: generator mu present, ascending order)
    to complex coefficients; products track anticommutation signs.
    """

    __slots__ = ("ngen", "terms")

    def __init__(self, ngen: int, terms: dict[int, complex] | None = None):
        if ngen > MAX_SYMBOLIC_GENERATORS:
            raise ResourceLimitError(
                f"symbolic algebra capped at {MAX_SYMBOLIC_GENERATORS} generators"
            )
        self.ngen = ngen
        self.terms = dict(terms or {})

    @classmethod
    def scalar(cls, ngen: int, c: complex) -> "GrassmannElement":
        return cls(ngen, {0: complex(c)} if c else {})

    @classmethod
    def linear(cls, ngen: int, coeffs: Sequence[complex]) -> "GrassmannElement":
        terms = {1 << mu: complex(c) for mu, c in enumerate(coeffs) if c}
        return cls(ngen, terms)

    def __add__(self, other: "GrassmannElement") -> "GrassmannElement":
        out = dict(self.terms)
        for mask, c in other.terms.items():
            out[mask] = out.get(mask, 0.0) + c
            if out[mask] == 0:
                del out[mask]
        return GrassmannElement(self.ngen, out)

    def scale(self, c: complex) -> "GrassmannElement":
        if c == 0:
            return GrassmannElement(self.ngen, {})
        return GrassmannElement(self.ngen, {m: v * c for m, v in self.terms.items()})

    def __mul__(self, other: "GrassmannElement") -> "GrassmannElement":
        out: dict[int, complex] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                if ma & mb:
                    continue
                # sign: each generator of mb crosses the generators of ma above it
                crossings = 0
                rest = mb
                while rest:
                    b = (rest & -rest).bit_length() - 1
                    crossings += int(ma >> (b + 1)).bit_count()
                    rest &= rest - 1
                sign = -1.0 if crossings % 2 else 1.0
                key = ma | mb
                out[key] = out.get(key, 0.0) + sign * ca * cb
                if out[key] == 0:
                    del out[key]
        return GrassmannElement(self.ngen, out)

    def exp_even(self) -> "GrassmannElement":
        """exp of a (nilpotent) even element, by the finite power series."""
        if any(int(m).bit_count() % 2 for m in self.terms):
            raise ValidationError("exp is implemented for even elements only")
        out = GrassmannElement.scalar(self.ngen, 1.0)
        power = GrassmannElement.scalar(self.ngen, 1.0)
        fact = 1.0
        for k in range(1, self.ngen // 2 + 1):
            power = power * self
            fact *= k
            if not power.terms:
                break
            out = out + power.scale(1.0 / fact)
        return out

    def top_coefficient(self) -> complex:
        return complex(self.terms.get((1 << self.ngen) - 1, 0.0))


@dataclass(frozen=True)
class GrassmannIntegralSpec:
    """prefactor * integral of (B chi)_1 ... (B chi)_K exp(chi^T M chi / 2)."""

    prefactor: complex
    b: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=complex))
        m = np.asarray(self.m, dtype=complex)
        two_n = m.shape[0]
        if m.shape != (two_n, two_n) or two_n % 2:
            raise ValidationError("M must be antisymmetric of even dimension")
        if two_n and np.max(np.abs(m + m.T)) > 1e-10 * max(1.0, float(np.max(np.abs(m)))):
            raise ValidationError("M must be antisymmetric")
        if b.size == 0:
            b = b.reshape(0, two_n)
        if b.shape[1] != two_n:
            raise ValidationError("B must have 2N columns")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "m", (m - m.T) / 2)

    def value(self) -> complex:
        return self.prefactor * evaluate_integral(self.b, self.m)


def grassmann_integrate_brute(spec: GrassmannIntegralSpec) -> complex:
    """Symbolic expansion of the integrand; exponential cost, 2N <= 12."""
    two_n = spec.m.shape[0]
    element = GrassmannElement.scalar(two_n, 1.0)
    for row in spec.b:
        element = element * GrassmannElement.linear(two_n, row)
    quad = GrassmannElement(two_n, {})
    for mu in range(two_n):
        for nu in range(mu + 1, two_n):
            if spec.m[mu, nu]:
                quad = quad + GrassmannElement(
                    two_n, {(1 << mu) | (1 << nu): complex(spec.m[mu, nu])}
                )
    element = element * quad.exp_even()
    return spec.prefactor * element.top_coefficient()


# ---------------------------------------------------------------------------
# Algorithm for g(B, M), singular M included
# ---------------------------------------------------------------------------


def _split_singular(m: np.ndarray, rank_tol: float = 1e-10):
    """Unimodular G with G^T M G = diag(M', 0); returns (G, M', 2r).

    Right singular vectors supply a complement/kernel split; the kernel is
    nonempty here, so det(G) = 1 is arranged by rescaling one kernel
    column (which leaves the congruence untouched).
    """
    u, s, vh = np.linalg.svd(m)
    rank = int(np.sum(s > rank_tol * s[0]))
    if rank % 2:  # antisymmetric matrices have even rank; split the pair
        rank -= 1
    g = vh.conj().T.copy()
    det = np.linalg.det(g)
    g[:, -1] /= det
    mprime = (g.T @ m @ g)[:rank, :rank]
    return g, (mprime - mprime.T) / 2, rank


def _evaluate(b: np.ndarray, m: np.ndarray, depth: int, rank_tol: float) -> tuple[complex, int]:
    k, two_n = b.shape
    if k % 2 == 1 or k > two_n:
        return 0.0 + 0.0j, depth
    if k == two_n:
        return complex(np.linalg.det(b)) if k else 1.0 + 0.0j, depth
    if two_n == 0:
        return 1.0 + 0.0j, depth
    svals = np.linalg.svd(m, compute_uv=False)
    if svals[0] > 0 and svals[-1] > rank_tol * svals[0]:
        minv_bt = np.linalg.solve(m, b.T)
        gram = -b @ minv_bt
        inner = pfaffian((gram - gram.T) / 2, validate=False) if k else 1.0
        return complex(pfaffian(m, validate=False) * inner), depth
    if svals[0] == 0:
        # M = 0: only the scalar term of the exponential survives
        return 0.0 + 0.0j, depth  # here K < 2N, so the top grade is unreachable
    g, mprime, rank = _split_singular(m, rank_tol)
    bg = b @ g
    b_range, b_kernel = bg[:, :rank], bg[:, rank:]
    new_m = b_range @ np.linalg.solve(mprime, b_range.T) if k else np.zeros((0, 0), dtype=complex)
    new_m = (new_m - new_m.T) / 2 if k else new_m
    sign = (-1) ** (two_n // 2 + k // 2)
    inner, reached = _evaluate(b_kernel.T, new_m, depth + 1, rank_tol)
    return sign * pfaffian(-mprime, validate=False) * inner, reached


def evaluate_integral(b: np.ndarray, m: np.ndarray, rank_tol: float = 1e-10) -> complex:
    """g(B, M) for a K x 2N matrix B and antisymmetric M.

    Total function: odd or oversized K gives 0, K = 2N gives det(B),
    invertible M gives pf(M) pf(-B M^-1 B^T), and singular M recurses on a
    canonical split whose fourth argument strictly shrinks.
    """
    value, _ = _evaluate(np.atleast_2d(np.asarray(b, dtype=complex)), np.asarray(m, dtype=complex), 0, rank_tol)
    return value


def evaluate_integral_with_depth(b: np.ndarray, m: np.ndarray) -> tuple[complex, int]:
    return _evaluate(np.atleast_2d(np.asarray(b, dtype=complex)), np.asarray(m, dtype=complex), 0, 1e-10)


# ---------------------------------------------------------------------------
# operator descriptors and the trace transform
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MajoranaFactors:
    """Product L_1 ... L_l of mutually anticommuting linear combinations of
    Majorana operators; row p holds the coefficients of L_p."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=complex))
        object.__setattr__(self, "rows", rows)
        gram = rows @ rows.T
        off = gram - np.diag(np.diag(gram))
        if off.size and np.max(np.abs(off)) > 1e-10 * max(1.0, float(np.max(np.abs(rows))) ** 2):
            raise ValidationError("rows must define mutually anticommuting factors")


@dataclass(frozen=True)
class GaussianDensityOp:
    """prod_j (I - i lam_j g~_{2j} g~_{2j+1}) / 2, allowing complex lam;
    carried by its (possibly complex antisymmetric) covariance matrix."""

    n: int
    cov: np.ndarray

    @classmethod
    def from_spec(cls, spec: GaussianStateSpec) -> "GaussianDensityOp":
        return cls(n=spec.n, cov=covariance_of_gaussian(spec))

    @classmethod
    def vacuum(cls, n: int) -> "GaussianDensityOp":
        return cls(n=n, cov=covariance_of_basis_state("0" * n))


@dataclass(frozen=True)
class GaussianUnitaryOp:
    """phase * (gamma_1 if gamma1_factor) * U_R with R in SO(2n); U_R is the
    exponential of the quadratic generator with h = log(R)/2."""

    r: np.ndarray
    phase: complex = 1.0
    gamma1_factor: bool = False

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        object.__setattr__(self, "r", r)
        if np.linalg.det(r) < 0:
            raise ValidationError("R must be special orthogonal; carry reflections as gamma1")


@dataclass(frozen=True)
class IdentityOp:
    pass


@dataclass(frozen=True)
class ParityOp:
    """(-i)^n gamma_1 ... gamma_2n."""


OperatorDescriptor = MajoranaFactors | GaussianDensityOp | GaussianUnitaryOp | IdentityOp | ParityOp


@dataclass(frozen=True)
class _Primitive:
    rows: np.ndarray | None
    mblock: np.ndarray | None
    scalar: complex


def _rotation_primitive(op: GaussianUnitaryOp, n: int) -> _Primitive:
    h = orthogonal_log(op.r)
    canon = antisym_canonical(h)
    qprime = canon.rotation.matrix()
    sigmas = np.zeros(n)
    sigmas[: canon.lambdas.shape[0]] = canon.lambdas
    degenerate = np.abs(np.cos(sigmas)) <= COS_DEGENERACY_TOL
    tans = np.where(degenerate, 0.0, np.tan(np.where(degenerate, 0.0, sigmas)))
    blocks = np.zeros((2 * n, 2 * n))
    idx = np.arange(n)
    blocks[2 * idx, 2 * idx + 1] = tans
    blocks[2 * idx + 1, 2 * idx] = -tans
    t_r = qprime.T @ blocks @ qprime
    c = complex(np.prod(np.cos(sigmas[~degenerate]))) if np.any(~degenerate) else 1.0 + 0.0j
    rows = None
    if np.any(degenerate):
        pair_rows = []
        for j in np.where(degenerate)[0]:
            pair_rows.append(qprime[2 * j])
            pair_rows.append(qprime[2 * j + 1])
        rows = np.asarray(pair_rows, dtype=complex)
    return _Primitive(rows=rows, mblock=t_r.astype(complex), scalar=op.phase * c)


def _expand(op: OperatorDescriptor, n: int) -> list[_Primitive]:
    if isinstance(op, MajoranaFactors):
        if op.rows.shape[1] != 2 * n:
            raise ValidationError("factor rows must have 2n columns")
        return [_Primitive(rows=op.rows, mblock=None, scalar=1.0)]
    if isinstance(op, GaussianDensityOp):
        if op.cov.shape != (2 * n, 2 * n):
            raise ValidationError("covariance must be 2n x 2n")
        return [_Primitive(rows=None, mblock=-1j * np.asarray(op.cov, dtype=complex), scalar=2.0**-n)]
    if isinstance(op, GaussianUnitaryOp):
        out = []
        if op.gamma1_factor:
            e1 = np.zeros((1, 2 * n), dtype=complex)
            e1[0, 0] = 1.0
            out.append(_Primitive(rows=e1, mblock=None, scalar=1.0))
        out.append(_rotation_primitive(op, n))
        return out
    if isinstance(op, IdentityOp):
        return [_Primitive(rows=None, mblock=None, scalar=1.0)]
    if isinstance(op, ParityOp):
        return [_Primitive(rows=np.eye(2 * n, dtype=complex), mblock=None, scalar=(-1j) ** n)]
    raise ValidationError(f"unknown operator descriptor {type(op).__name__}")


def trace_to_integral(
    ops: Sequence[OperatorDescriptor], n: int, parity_shortcut: bool = False
) -> GrassmannIntegralSpec:
    """Assemble tr(A_1 ... A_m) as a Grassmann integral specification.

    Each operator owns a block of 2n generators; exponential blocks land on
    the diagonal of M and the alternating-sign identity skeleton couples
    the blocks.  An identity is appended when the expanded operator count
    is odd.  With ``parity_shortcut``, a trailing ParityOp is integrated
    out analytically, shrinking the problem by one block.
    """
    ops = list(ops)
    shortcut_scalar = 1.0 + 0.0j
    if parity_shortcut:
        if not ops or not isinstance(ops[-1], ParityOp):
            raise ValidationError("the parity shortcut needs a trailing ParityOp")
        ops = ops[:-1]
        shortcut_scalar = (-1j) ** n

    primitives: list[_Primitive] = []
    for op in ops:
        primitives.extend(_expand(op, n))
    m_count = len(primitives) + (1 if parity_shortcut else 0)
    if m_count % 2:
        primitives.append(_Primitive(rows=None, mblock=None, scalar=1.0))
        m_count += 1
    blocks = len(primitives)

    dim = 2 * n * blocks
    m = np.zeros((dim, dim), dtype=complex)
    eye = np.eye(2 * n)
    for i in range(blocks):
        for j in range(i + 1, blocks):
            s_ij = (-1) ** (i + j + 1)  # blocks counted 1-based: (-1)^{(i+1)+(j+1)+1}
            m[2 * n * i : 2 * n * (i + 1), 2 * n * j : 2 * n * (j + 1)] = s_ij * eye
            m[2 * n * j : 2 * n * (j + 1), 2 * n * i : 2 * n * (i + 1)] = -s_ij * eye
    scalar = 2.0**n * (-1) ** ((n * m_count * (m_count - 1) // 2) % 2) * shortcut_scalar
    rows = []
    for i, prim in enumerate(primitives):
        scalar *= prim.scalar
        if prim.mblock is not None:
            m[2 * n * i : 2 * n * (i + 1), 2 * n * i : 2 * n * (i + 1)] += prim.mblock
        if prim.rows is not None:
            for row in prim.rows:
                full = np.zeros(dim, dtype=complex)
                full[2 * n * i : 2 * n * (i + 1)] = row
                rows.append(full)
    b = np.asarray(rows, dtype=complex) if rows else np.zeros((0, dim), dtype=complex)
    return GrassmannIntegralSpec(prefactor=scalar, b=b, m=m)


def evaluate_trace(ops: Sequence[OperatorDescriptor], n: int, parity_shortcut: bool = False) -> complex:
    return trace_to_integral(ops, n, parity_shortcut=parity_shortcut).value()


# ---------------------------------------------------------------------------
# the general estimator: gamma~_S |phi><0| for pure Gaussian |phi>
# ---------------------------------------------------------------------------


def general_grade_poly(
    s: Sequence[int],
    qtilde: np.ndarray,
    phase: complex,
    r: np.ndarray,
    sample_cov: np.ndarray,
    n: int,
) -> ComplexPolynomial:
    """Coefficients of z -> tr(g~_S |phi><0| P_2l(rho_z)) by evaluating the
    assembled integral at n + 1 roots of unity."""
    s = tuple(s)
    if len(s) % 2:
        raise ValidationError("gamma~_S |phi><0| is odd for odd |S|; estimate is undefined")
    factor_ops: list[OperatorDescriptor] = []
    if s:
        factor_ops.append(MajoranaFactors(np.asarray(qtilde, dtype=complex)[list(s), :]))
    unitary = GaussianUnitaryOp(r=r, phase=phase)
    vacuum = GaussianDensityOp.vacuum(n)
    nodes = roots_of_unity(n + 1)
    values = np.empty(n + 1, dtype=complex)
    for t, z in enumerate(nodes):
        ops = factor_ops + [unitary, vacuum, GaussianDensityOp(n=n, cov=z * sample_cov)]
        values[t] = evaluate_trace(ops, n)
    return poly_from_values(values)


def estimate_general(
    sample,
    s: Sequence[int],
    qtilde: np.ndarray | OrthogonalLabel | None,
    phase: complex,
    r: np.ndarray,
) -> complex:
    """Single-sample estimate of tr(g~_S |phi><0| rho) where |phi> is the
    pure Gaussian state phase * U_R |0...0>."""
    from .shadows import _inverse_coeff_vector, sample_covariance

    n = sample.q.n
    if qtilde is None:
        qtilde = np.eye(2 * n)
    elif isinstance(qtilde, OrthogonalLabel):
        qtilde = qtilde.matrix()
    poly = general_grade_poly(s, qtilde, phase, r, sample_covariance(sample), n)
    coeffs = poly.coefficients
    inv = _inverse_coeff_vector(n, coeffs.shape[0])
    return complex(np.dot(inv, coeffs))
