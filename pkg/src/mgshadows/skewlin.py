"""Skew-symmetric and orthogonal numerical kernels.

Pfaffians (scalar and batched), canonical forms of real antisymmetric
matrices, principal logarithms of rotations, random-ensemble sampling over
O(2n) and the signed permutations B(2n), and the polynomial machinery
(roots-of-unity interpolation, cubic-time Pfaffian-of-pencil coefficients)
that the shadow estimators are built on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ResourceLimitError(RuntimeError):
    """Raised when an exact computation would exceed desk-scale limits."""


# ---------------------------------------------------------------------------
# orthogonal labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrthogonalLabel:
    """A 2n x 2n real orthogonal matrix labelling a matchgate circuit.

    Stored either densely or as a signed permutation (row mu carries
    ``signs[mu]`` in column ``perm[mu]``).  Indices are 0-based.
    """

    n: int
    dense: np.ndarray | None = None
    perm: np.ndarray | None = None
    signs: np.ndarray | None = None
    _det: float = field(default=0.0, compare=False)

    @classmethod
    def from_dense(cls, q: np.ndarray, validate: bool = True) -> "OrthogonalLabel":
        q = np.asarray(q, dtype=float)
        dim = q.shape[0]
        if q.shape != (dim, dim) or dim % 2:
            raise ValidationError(f"orthogonal label must be 2n x 2n, got {q.shape}")
        if validate:
            err = np.max(np.abs(q.T @ q - np.eye(dim)))
            if err > 1e-12 * max(1.0, dim):
                raise ValidationError(f"matrix is not orthogonal (|QtQ - I| = {err:.3e})")
        det = float(np.sign(np.linalg.det(q)))
        return cls(n=dim // 2, dense=q, _det=det)

    @classmethod
    def from_signed_permutation(
        cls, perm: Sequence[int], signs: Sequence[int]
    ) -> "OrthogonalLabel":
        perm = np.asarray(perm, dtype=np.intp)
        signs = np.asarray(signs, dtype=np.int8)
        dim = perm.shape[0]
        if dim % 2 or sorted(perm.tolist()) != list(range(dim)):
            raise ValidationError("perm must be a permutation of 0..2n-1")
        if signs.shape != (dim,) or not np.all(np.abs(signs) == 1):
            raise ValidationError("signs must be a vector of +-1 of length 2n")
        det = float(permutation_parity(perm) * np.prod(signs))
        return cls(n=dim // 2, perm=perm, signs=signs, _det=det)

    @classmethod
    def identity(cls, n: int) -> "OrthogonalLabel":
        return cls.from_signed_permutation(np.arange(2 * n), np.ones(2 * n, dtype=np.int8))

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def det(self) -> float:
        return self._det

    @property
    def is_signed_permutation(self) -> bool:
        return self.perm is not None

    def matrix(self) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        q = np.zeros((self.dim, self.dim))
        q[np.arange(self.dim), self.perm] = self.signs
        return q


def permutation_parity(perm: np.ndarray) -> int:
    """Sign of a permutation, via cycle counting."""
    perm = np.asarray(perm, dtype=np.intp)
    seen = np.zeros(perm.shape[0], dtype=bool)
    parity = 1
    for start in range(perm.shape[0]):
        if seen[start]:
            continue
        length = 0
        j = start
        while not seen[j]:
            seen[j] = True
            j = perm[j]
            length += 1
        if length % 2 == 0:
            parity = -parity
    return parity


# ---------------------------------------------------------------------------
# Pfaffians
# ---------------------------------------------------------------------------


def _check_antisymmetric(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    m = a.shape[0]
    if a.ndim != 2 or a.shape != (m, m):
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if m % 2:
        raise ValidationError("antisymmetric matrices must have even dimension")
    if m:
        scale = np.max(np.abs(a))
        if scale and np.max(np.abs(a + a.T)) > 1e-12 * scale * max(1.0, m):
            raise ValidationError("matrix is not antisymmetric within tolerance")
    # symmetrize so the diagonal is exactly zero
    return (a - a.T) / 2


def pfaffian(a: np.ndarray, validate: bool = True) -> complex:
    """Pfaffian of an even-dimensional antisymmetric matrix.

    Skew-symmetric Gaussian elimination (Parlett-Reid) with partial
    pivoting, O(m^3), supporting complex entries.
    """
    a = _check_antisymmetric(a) if validate else np.array(a)
    m = a.shape[0]
    if m == 0:
        return 1.0 + 0.0j
    a = a.astype(complex)
    pf = 1.0 + 0.0j
    for k in range(0, m - 1, 2):
        # pivot on the largest entry below the diagonal in column k
        rel = int(np.argmax(np.abs(a[k + 1 :, k])))
        piv = k + 1 + rel
        if a[piv, k] == 0:
            return 0.0 + 0.0j
        if piv != k + 1:
            a[[k + 1, piv], :] = a[[piv, k + 1], :]
            a[:, [k + 1, piv]] = a[:, [piv, k + 1]]
            pf = -pf
        pf *= a[k, k + 1]
        if k + 2 < m:
            tau = a[k, k + 2 :] / a[k, k + 1]
            col = a[k + 2 :, k + 1]
            a[k + 2 :, k + 2 :] += np.outer(tau, col) - np.outer(col, tau)
    return complex(pf)


def pfaffian_batch(a: np.ndarray) -> np.ndarray:
    """Pfaffians of a stack of antisymmetric matrices, shape (..., m, m).

    Same Parlett-Reid elimination as :func:`pfaffian`, vectorized over the
    leading axes.  No validation; intended for inner loops.
    """
    a = np.asarray(a, dtype=complex)
    lead = a.shape[:-2]
    m = a.shape[-1]
    if m % 2:
        raise ValidationError("antisymmetric matrices must have even dimension")
    if m == 0:
        return np.ones(lead, dtype=complex)
    a = a.reshape(-1, m, m).copy()
    batch = a.shape[0]
    rows = np.arange(batch)
    pf = np.ones(batch, dtype=complex)
    alive = np.ones(batch, dtype=bool)
    for k in range(0, m - 1, 2):
        rel = np.argmax(np.abs(a[:, k + 1 :, k]), axis=1)
        piv = k + 1 + rel
        swap = piv != k + 1
        if np.any(swap):
            idx = rows[swap]
            p = piv[swap]
            a[idx, k + 1, :], a[idx, p, :] = a[idx, p, :].copy(), a[idx, k + 1, :].copy()
            a[idx, :, k + 1], a[idx, :, p] = a[idx, :, p].copy(), a[idx, :, k + 1].copy()
            pf[swap] = -pf[swap]
        pivval = a[:, k, k + 1]
        dead = pivval == 0
        alive &= ~dead
        pf[dead] = 0.0
        pf[alive] *= pivval[alive]
        if k + 2 < m:
            safe = np.where(alive, pivval, 1.0)
            tau = a[:, k, k + 2 :] / safe[:, None]
            col = a[:, k + 2 :, k + 1]
            a[:, k + 2 :, k + 2 :] += np.einsum("bi,bj->bij", tau, col) - np.einsum(
                "bi,bj->bij", col, tau
            )
    return pf.reshape(lead)


# ---------------------------------------------------------------------------
# canonical form of real antisymmetric matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AntisymCanonicalForm:
    """A = R^T (direct sum of [[0, lam], [-lam, 0]]) R with lam >= 0.

    ``rank2`` is the rank 2r; ``lambdas[j] = 0`` for j >= r.  R is
    orthogonal with det +-1 (cached on the label): when pf(A) < 0 and A has
    full rank, no det +1 rotation with nonnegative blocks exists, since
    pf(A) = det(R) * prod(lambdas).
    """

    rotation: OrthogonalLabel
    lambdas: np.ndarray
    rank2: int

    def block_matrix(self) -> np.ndarray:
        m = 2 * self.lambdas.shape[0]
        lam = np.zeros((m, m))
        for j, v in enumerate(self.lambdas):
            lam[2 * j, 2 * j + 1] = v
            lam[2 * j + 1, 2 * j] = -v
        return lam

    def reconstruct(self) -> np.ndarray:
        r = self.rotation.matrix()
        return r.T @ self.block_matrix() @ r


def antisym_canonical(a: np.ndarray, tol: float | None = None) -> AntisymCanonicalForm:
    """Canonical 2x2-block form of a real antisymmetric matrix.

    Real Schur decomposition followed by block extraction; blocks with
    |lam| below ``tol`` (default 1e-12 * max|A|) are zeroed and sorted to
    the back.
    """
    a = np.asarray(a)
    if np.iscomplexobj(a) and np.max(np.abs(a.imag)) > 0:
        raise ValidationError("canonical form is defined for real antisymmetric matrices")
    a = _check_antisymmetric(np.real(a).astype(float))
    m = a.shape[0]
    if tol is None:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(a)))) if m else 1e-12
    if m == 0:
        return AntisymCanonicalForm(OrthogonalLabel.from_dense(np.zeros((0, 0)), validate=False), np.zeros(0), 0)
    t, z = scipy.linalg.schur(a, output="real")
    # the Schur form of a normal antisymmetric matrix is block diagonal with
    # 2x2 blocks [[0, lam], [-lam, 0]]; walk the superdiagonal to collect them
    cols: list[int] = []
    lams: list[float] = []
    zero_cols: list[int] = []
    i = 0
    while i < m:
        if i + 1 < m and abs(t[i, i + 1]) > tol:
            lam = t[i, i + 1]
            if lam >= 0:
                cols += [i, i + 1]
            else:
                cols += [i + 1, i]
                lam = -lam
            lams.append(lam)
            i += 2
        else:
            zero_cols.append(i)
            i += 1
    order = cols + zero_cols
    zp = z[:, order]
    lambdas = np.array(lams + [0.0] * (len(zero_cols) // 2))
    rank2 = 2 * len(lams)
    rotation = OrthogonalLabel.from_dense(zp.T, validate=False)
    return AntisymCanonicalForm(rotation=rotation, lambdas=lambdas, rank2=rank2)


def orthogonal_log(r: OrthogonalLabel | np.ndarray) -> np.ndarray:
    """Principal logarithm h = log(R)/2 of a rotation R, so exp(2h) = R.

    Computed from the real Schur form; plane angles lie in (-pi, pi], and
    -1 eigenvalue pairs are paired into angle-pi blocks.  Raises for
    det(R) = -1 (factor out a reflection first).
    """
    if isinstance(r, OrthogonalLabel):
        if r.det < 0:
            raise ValidationError("orthogonal_log requires det(R) = +1")
        r = r.matrix()
    r = np.asarray(r, dtype=float)
    m = r.shape[0]
    if np.linalg.det(r) < 0:
        raise ValidationError("orthogonal_log requires det(R) = +1")
    t, z = scipy.linalg.schur(r, output="real")
    h = np.zeros((m, m))
    minus_ones: list[int] = []
    i = 0
    while i < m:
        if i + 1 < m and abs(t[i + 1, i]) > 1e-12:
            # rotation block [[c, s], [-s, c]] in rows (i, i+1)
            phi = float(np.arctan2(t[i, i + 1], t[i, i]))
            if phi <= -np.pi + 1e-15:
                phi = np.pi
            half = phi / 2
            zi, zj = z[:, i], z[:, i + 1]
            h += half * (np.outer(zi, zj) - np.outer(zj, zi))
            i += 2
        else:
            if t[i, i] < 0:
                minus_ones.append(i)
            i += 1
    for a_idx, b_idx in zip(minus_ones[0::2], minus_ones[1::2]):
        zi, zj = z[:, a_idx], z[:, b_idx]
        h += (np.pi / 2) * (np.outer(zi, zj) - np.outer(zj, zi))
    return (h - h.T) / 2


# ---------------------------------------------------------------------------
# random ensembles
# ---------------------------------------------------------------------------


def haar_orthogonal(n: int, rng: np.random.Generator) -> OrthogonalLabel:
    """Haar-random element of O(2n): QR of a standard-normal matrix with the
    sign fix that makes the triangular factor's diagonal positive."""
    if n < 1:
        raise ValidationError("need at least one mode")
    g = rng.standard_normal((2 * n, 2 * n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return OrthogonalLabel.from_dense(q * d, validate=False)


def uniform_signed_permutation(n: int, rng: np.random.Generator) -> OrthogonalLabel:
    """Uniform element of B(2n): uniform permutation plus independent fair signs."""
    if n < 1:
        raise ValidationError("need at least one mode")
    perm = rng.permutation(2 * n)
    signs = rng.integers(0, 2, size=2 * n).astype(np.int8) * 2 - 1
    return OrthogonalLabel.from_signed_permutation(perm, signs)


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComplexPolynomial:
    """Dense complex polynomial, coefficients[k] multiplying z^k."""

    coefficients: np.ndarray

    @classmethod
    def from_coefficients(cls, coeffs: Sequence[complex], trim: bool = True) -> "ComplexPolynomial":
        c = np.atleast_1d(np.asarray(coeffs, dtype=complex))
        if trim and c.shape[0] > 1:
            cutoff = 1e-12 * np.max(np.abs(c)) if np.max(np.abs(c)) else 0.0
            last = c.shape[0] - 1
            while last > 0 and abs(c[last]) <= cutoff:
                last -= 1
            c = c[: last + 1]
        return cls(coefficients=c)

    @property
    def degree(self) -> int:
        return self.coefficients.shape[0] - 1

    def __call__(self, z: complex) -> complex:
        return complex(np.polyval(self.coefficients[::-1], z))


def roots_of_unity(count: int) -> np.ndarray:
    """The nodes exp(2*pi*i*m/count) for m = 0..count-1."""
    return np.exp(2j * np.pi * np.arange(count) / count)


def poly_from_values(values: Sequence[complex]) -> ComplexPolynomial:
    """Exact coefficients of the degree < N polynomial taking the given
    values at the N-th roots of unity (inverse discrete Fourier sum)."""
    values = np.asarray(values, dtype=complex)
    count = values.shape[0]
    if count == 0:
        raise ValidationError("need at least one sample value")
    coeffs = np.fft.fft(values) / count
    return ComplexPolynomial.from_coefficients(coeffs)


def linear_pfaffian_coeffs(b: np.ndarray, c: np.ndarray) -> ComplexPolynomial:
    """All coefficients of z -> pf(B + z C) in O(r^3), for invertible B.

    One eigendecomposition of B^-1 C supplies everything: pf(B + zC)^2 =
    det(B) det(I + z B^-1 C), so the 2r eigenvalues come in duplicate pairs
    and pf(B + zC) = pf(B) prod_i (1 + z w_i) over one copy of each pair.
    Expanding that product root by root is stable where the power-sum
    recursion of the derivative formulation is not.  Raises when pf(B) = 0
    (callers fall back to interpolation).
    """
    b = _check_antisymmetric(b).astype(complex)
    c = _check_antisymmetric(c).astype(complex)
    m = b.shape[0]
    if c.shape != b.shape:
        raise ValidationError("B and C must have matching shapes")
    pf_b = pfaffian(b, validate=False)
    if pf_b == 0 or not np.isfinite(pf_b):
        raise ValidationError("B must be invertible (pf(B) != 0)")
    r = m // 2
    if m == 0:
        return ComplexPolynomial.from_coefficients([1.0])
    w = np.linalg.eigvals(np.linalg.solve(b, c))
    roots = _collapse_duplicate_pairs(w)
    coeffs = np.zeros(r + 1, dtype=complex)
    coeffs[0] = 1.0
    for k, v in enumerate(roots):
        coeffs[1 : k + 2] += v * coeffs[0 : k + 1]
    coeffs *= pf_b
    return ComplexPolynomial.from_coefficients(coeffs, trim=False)


def _collapse_duplicate_pairs(w: np.ndarray) -> np.ndarray:
    """Each eigenvalue of B^-1 C appears twice; greedily match every value
    with its nearest unused partner and return one (averaged) copy per pair."""
    order = np.lexsort((w.imag, w.real))
    w = w[order]
    used = np.zeros(w.shape[0], dtype=bool)
    out = []
    for i in range(w.shape[0]):
        if used[i]:
            continue
        used[i] = True
        rest = np.where(~used)[0]
        j = rest[np.argmin(np.abs(w[rest] - w[i]))]
        used[j] = True
        out.append((w[i] + w[j]) / 2)
    return np.asarray(out)
