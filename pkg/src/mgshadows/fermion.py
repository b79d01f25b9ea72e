"""Domain model: Majorana index algebra, covariance matrices, Gaussian and
Slater state specifications, and the ancilla paddings that reduce overlap
estimation to expectation values of even operators.

Conventions: mode j (0-based) owns Majorana indices 2j and 2j+1; bit j of a
bitstring is the occupation of mode j, with bit 0 the leftmost character of
the serialized string.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .skewlin import OrthogonalLabel, ValidationError, _check_antisymmetric


# ---------------------------------------------------------------------------
# small index/bitstring helpers
# ---------------------------------------------------------------------------


def validate_majorana_set(indices: Sequence[int], n: int) -> tuple[int, ...]:
    """Sorted, unique Majorana indices in 0..2n-1."""
    s = tuple(int(i) for i in indices)
    if list(s) != sorted(set(s)):
        raise ValidationError("Majorana index set must be sorted and duplicate-free")
    if s and (s[0] < 0 or s[-1] >= 2 * n):
        raise ValidationError(f"Majorana indices must lie in 0..{2 * n - 1}")
    return s


def bits_from_string(b: str) -> np.ndarray:
    if not all(ch in "01" for ch in b):
        raise ValidationError(f"bitstring must contain only 0/1, got {b!r}")
    return np.frombuffer(b.encode(), dtype=np.uint8) - ord("0")


def bits_to_string(bits: Sequence[int]) -> str:
    return "".join("1" if int(x) else "0" for x in bits)


def bits_from_index(index: int, n: int) -> np.ndarray:
    """Amplitude index to bit array; bit 0 is the most significant bit."""
    return np.array([(index >> (n - 1 - j)) & 1 for j in range(n)], dtype=np.uint8)


def index_from_bits(bits: Sequence[int]) -> int:
    out = 0
    for b in bits:
        out = (out << 1) | int(b)
    return out


# ---------------------------------------------------------------------------
# covariance matrices
# ---------------------------------------------------------------------------


def validate_covariance(c: np.ndarray) -> np.ndarray:
    """Antisymmetric with all singular values <= 1 + 1e-10 (state validity)."""
    c = _check_antisymmetric(c)
    if c.shape[0]:
        top = np.linalg.norm(c, 2)
        if top > 1 + 1e-10:
            raise ValidationError(f"covariance has singular value {top:.12f} > 1")
    return c


def covariance_of_basis_state(bits: str | Sequence[int]) -> np.ndarray:
    """Block-diagonal covariance of a computational basis state: each mode
    contributes [[0, (-1)^b], [-(-1)^b, 0]]."""
    b = bits_from_string(bits) if isinstance(bits, str) else np.asarray(bits, dtype=np.uint8)
    n = b.shape[0]
    c = np.zeros((2 * n, 2 * n))
    signs = 1.0 - 2.0 * b
    c[2 * np.arange(n), 2 * np.arange(n) + 1] = signs
    c[2 * np.arange(n) + 1, 2 * np.arange(n)] = -signs
    return c


def rotate_covariance(c: np.ndarray, q: OrthogonalLabel) -> np.ndarray:
    """Q^T C Q, the covariance of the back-rotated state.

    Signed-permutation labels use O(n^2) index arithmetic instead of dense
    multiplication.
    """
    c = np.asarray(c)
    if c.shape[0] != q.dim:
        raise ValidationError("covariance and orthogonal label dimensions differ")
    if q.is_signed_permutation:
        out = np.empty_like(c)
        scaled = (q.signs[:, None] * q.signs[None, :]) * c
        out[np.ix_(q.perm, q.perm)] = scaled
        return out
    m = q.matrix()
    return m.T @ c @ m


# ---------------------------------------------------------------------------
# state specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianStateSpec:
    """A Gaussian state: product of (I - i lam_j g~_{2j} g~_{2j+1})/2 factors
    in the Majorana frame g~ = Q gamma.

    ``lam`` entries in [-1, 1] describe a physical state (pure iff all
    |lam_j| = 1).  Complex lam are allowed for the generalized operators the
    Grassmann machinery manipulates; those fail :meth:`require_state`.
    """

    n: int
    lam: np.ndarray
    frame: OrthogonalLabel

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam))
        object.__setattr__(self, "lam", lam)
        if lam.shape != (self.n,):
            raise ValidationError(f"need {self.n} lambda coefficients, got {lam.shape}")
        if self.frame.n != self.n:
            raise ValidationError("frame dimension does not match mode count")

    @property
    def is_physical(self) -> bool:
        return bool(np.all(np.abs(self.lam.imag) < 1e-14) and np.all(np.abs(self.lam) <= 1 + 1e-10))

    @property
    def is_pure(self) -> bool:
        return self.is_physical and bool(np.all(np.abs(np.abs(self.lam) - 1) <= 1e-10))

    def require_state(self) -> None:
        if not self.is_physical:
            raise ValidationError("lambda coefficients must be real in [-1, 1] for a state")

    def parity(self) -> float:
        """tr(P rho) = det(Q) * prod(lam); +-1 for pure states."""
        return float(self.frame.det) * complex(np.prod(self.lam)).real

    def covariance(self) -> np.ndarray:
        return covariance_of_gaussian(self)

    @classmethod
    def vacuum(cls, n: int) -> "GaussianStateSpec":
        return cls(n=n, lam=np.ones(n), frame=OrthogonalLabel.identity(n))

    @classmethod
    def maximally_mixed(cls, n: int) -> "GaussianStateSpec":
        return cls(n=n, lam=np.zeros(n), frame=OrthogonalLabel.identity(n))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "lambda": [float(x) for x in np.real(self.lam)],
            "q": self.frame.matrix().tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "GaussianStateSpec":
        return cls(
            n=int(d["n"]),
            lam=np.asarray(d["lambda"], dtype=float),
            frame=OrthogonalLabel.from_dense(np.asarray(d["q"], dtype=float)),
        )


def covariance_of_gaussian(spec: GaussianStateSpec) -> np.ndarray:
    """Q^T (direct sum of lam_j [[0,1],[-1,0]]) Q."""
    n = spec.n
    lam = np.real(spec.lam) if spec.is_physical else spec.lam
    blocks = np.zeros((2 * n, 2 * n), dtype=np.asarray(lam).dtype)
    blocks[2 * np.arange(n), 2 * np.arange(n) + 1] = lam
    blocks[2 * np.arange(n) + 1, 2 * np.arange(n)] = -lam
    if spec.frame.is_signed_permutation:
        return rotate_covariance(blocks, spec.frame)
    q = spec.frame.matrix()
    return q.T @ blocks @ q


@dataclass(frozen=True)
class SlaterSpec:
    """A zeta-fermion Slater determinant: rows of ``v`` are the occupied
    single-particle orbitals (orthonormal, zeta x n complex)."""

    n: int
    zeta: int
    v: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.v, dtype=complex))
        if self.zeta == 0:
            v = v.reshape(0, self.n)
        object.__setattr__(self, "v", v)
        if not 0 <= self.zeta <= self.n:
            raise ValidationError("fermion count must satisfy 0 <= zeta <= n")
        if v.shape != (self.zeta, self.n):
            raise ValidationError(f"v must be {self.zeta} x {self.n}, got {v.shape}")
        if self.zeta:
            gram = v @ v.conj().T
            if np.max(np.abs(gram - np.eye(self.zeta))) > 1e-10:
                raise ValidationError("rows of v must be orthonormal")

    def completed_unitary(self) -> np.ndarray:
        """Extend v to an n x n unitary by Gram-Schmidt against the canonical
        basis vectors, in deterministic column order."""
        rows = [self.v[j] for j in range(self.zeta)]
        for k in range(self.n):
            cand = np.zeros(self.n, dtype=complex)
            cand[k] = 1.0
            for r in rows:
                cand = cand - np.vdot(r, cand) * r
            norm = np.linalg.norm(cand)
            if norm > 1e-8:
                rows.append(cand / norm)
            if len(rows) == self.n:
                break
        if len(rows) < self.n:
            raise ValidationError("could not complete v to a unitary (rank-deficient rows)")
        return np.stack(rows)

    def to_json_dict(self) -> dict:
        flat = [[float(x.real), float(x.imag)] for x in self.v.reshape(-1)]
        return {"n": self.n, "zeta": self.zeta, "v": flat}

    @classmethod
    def from_json_dict(cls, d: dict) -> "SlaterSpec":
        n, zeta = int(d["n"]), int(d["zeta"])
        flat = np.asarray(d["v"], dtype=float)
        if flat.size != 2 * zeta * n:
            raise ValidationError("v must hold zeta*n [re, im] pairs (row-major)")
        v = (flat[:, 0] + 1j * flat[:, 1]).reshape(zeta, n) if zeta else np.zeros((0, n))
        return cls(n=n, zeta=zeta, v=v)


def slater_orthogonal(spec: SlaterSpec) -> OrthogonalLabel:
    """The SO(2n) matrix of the number-conserving rotation defined by the
    completed unitary V: 2x2 blocks [[Re V, -Im V], [Im V, Re V]]."""
    u = spec.completed_unitary()
    n = spec.n
    q = np.zeros((2 * n, 2 * n))
    q[0::2, 0::2] = u.real
    q[0::2, 1::2] = -u.imag
    q[1::2, 0::2] = u.imag
    q[1::2, 1::2] = u.real
    return OrthogonalLabel.from_dense(q)


def w_matrix(zeta: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """The mode-pair change of basis used by the Slater overlap formula,
    plus the retained index set.

    Returns the 2n x 2n unitary (1/sqrt2 [[1, -i], [1, i]] on the first zeta
    pairs, identity elsewhere) and the 0-based sorted indices of
    [2n] minus the first Majorana index of each of the first zeta modes.
    """
    if zeta % 2:
        raise ValidationError("the overlap route requires an even fermion count")
    if not 0 <= zeta <= n:
        raise ValidationError("need 0 <= zeta <= n")
    w = np.eye(2 * n, dtype=complex)
    for j in range(zeta):
        w[2 * j, 2 * j] = 1 / np.sqrt(2)
        w[2 * j, 2 * j + 1] = -1j / np.sqrt(2)
        w[2 * j + 1, 2 * j] = 1 / np.sqrt(2)
        w[2 * j + 1, 2 * j + 1] = 1j / np.sqrt(2)
    sbar = np.array([mu for mu in range(2 * n) if not (mu % 2 == 0 and mu < 2 * zeta)])
    return w, sbar


# ---------------------------------------------------------------------------
# ancilla paddings (overlap -> expectation-value reductions)
# ---------------------------------------------------------------------------


def _pad_statevector(psi: np.ndarray, ancillas: int) -> np.ndarray:
    """|psi> -> |psi> |1...1> with the ancillas appended as least significant
    qubits."""
    psi = np.asarray(psi, dtype=complex)
    out = np.zeros(psi.shape[0] << ancillas, dtype=complex)
    mask = (1 << ancillas) - 1
    out[np.arange(psi.shape[0]) * (1 << ancillas) + mask] = psi
    return out


@dataclass(frozen=True)
class PaddedOverlapProblem:
    """Even-operator reformulation of an overlap: estimate
    tr(|target><perp| rho) with rho built from (|perp> + |psi_padded>)/sqrt2;
    the overlap is ``scale`` times that expectation value."""

    psi: np.ndarray
    target_slater: SlaterSpec | None
    target_gaussian: GaussianStateSpec | None
    n: int
    scale: float = 2.0


def pad_for_overlap(psi: np.ndarray, slater: SlaterSpec) -> PaddedOverlapProblem:
    """Append one ancilla in |1> for odd zeta, two for even zeta, making the
    padded Slater's fermion count even and |Phi><perp| an even operator.
    The perp state is the padded vacuum; inner products are preserved."""
    ancillas = 1 if slater.zeta % 2 else 2
    n_pad = slater.n + ancillas
    v_pad = np.zeros((slater.zeta + ancillas, n_pad), dtype=complex)
    v_pad[: slater.zeta, : slater.n] = slater.v
    for k in range(ancillas):
        v_pad[slater.zeta + k, slater.n + k] = 1.0
    padded = SlaterSpec(n=n_pad, zeta=slater.zeta + ancillas, v=v_pad)
    return PaddedOverlapProblem(
        psi=_pad_statevector(psi, ancillas),
        target_slater=padded,
        target_gaussian=None,
        n=n_pad,
    )


def pad_for_gaussian_overlap(psi: np.ndarray, gaussian: GaussianStateSpec) -> PaddedOverlapProblem:
    """Same reduction for an arbitrary pure Gaussian target; the ancilla
    count follows the target's parity (one for odd, two for even)."""
    if not gaussian.is_pure:
        raise ValidationError("overlap padding is defined for pure Gaussian states")
    parity = gaussian.parity()
    ancillas = 1 if parity < 0 else 2
    n_pad = gaussian.n + ancillas
    lam_pad = np.concatenate([np.real(gaussian.lam), -np.ones(ancillas)])
    q_old = gaussian.frame.matrix()
    q_pad = np.eye(2 * n_pad)
    q_pad[: 2 * gaussian.n, : 2 * gaussian.n] = q_old
    padded = GaussianStateSpec(n=n_pad, lam=lam_pad, frame=OrthogonalLabel.from_dense(q_pad))
    return PaddedOverlapProblem(
        psi=_pad_statevector(psi, ancillas),
        target_slater=None,
        target_gaussian=padded,
        n=n_pad,
    )


def perp_plus_psi(problem: PaddedOverlapProblem) -> np.ndarray:
    """The initial state (|perp> + |Psi>)/sqrt2 of the overlap protocol."""
    out = problem.psi / np.sqrt(2)
    out[0] += 1 / np.sqrt(2)
    return out


# ---------------------------------------------------------------------------
# JSON state files
# ---------------------------------------------------------------------------


def load_state_file(path: str) -> tuple[str, object]:
    """Parse a state file: a statevector ({"n", "amplitudes"}) or a
    GaussianStateSpec ({"n", "lambda", "q"}).  Returns (kind, payload)."""
    with open(path) as fh:
        d = json.load(fh)
    if "amplitudes" in d:
        n = int(d["n"])
        amps = np.asarray(d["amplitudes"], dtype=float)
        if amps.shape != (1 << n, 2):
            raise ValidationError(f"expected {1 << n} [re, im] amplitude pairs")
        psi = amps[:, 0] + 1j * amps[:, 1]
        norm = np.linalg.norm(psi)
        if abs(norm - 1) > 1e-10:
            raise ValidationError(f"statevector norm {norm:.12f} != 1")
        return "statevector", psi
    if "lambda" in d:
        spec = GaussianStateSpec.from_json_dict(d)
        spec.require_state()
        return "gaussian", spec
    raise ValidationError("state file must contain 'amplitudes' or 'lambda'")
