"""Desk-scale measurement primitive.

Applies a matchgate circuit (compiled on the fly into adjacent-plane
rotations plus at most one reflection) to a dense statevector and samples a
computational-basis outcome; pure-Gaussian inputs take an O(n^3) covariance
path instead.  Collection is batched internally but each sample owns an RNG
stream derived from (seed, sample index), so results are independent of
batch size and worker count.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fermion import (
    GaussianStateSpec,
    bits_from_index,
    bits_to_string,
    covariance_of_gaussian,
    validate_covariance,
)
from .skewlin import (
    OrthogonalLabel,
    ResourceLimitError,
    ValidationError,
)

MAX_QUBITS = 14


@dataclass(frozen=True)
class ShadowSample:
    """One measurement record: ensemble tag, circuit label Q, outcome b."""

    ensemble: str
    q: OrthogonalLabel
    b: str

    def __post_init__(self):
        if self.ensemble not in ("haar", "clifford"):
            raise ValidationError(f"unknown ensemble {self.ensemble!r}")
        if len(self.b) != self.q.n:
            raise ValidationError("outcome length does not match the label's mode count")


def validate_statevector(psi: np.ndarray) -> tuple[np.ndarray, int]:
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    n = psi.shape[0].bit_length() - 1
    if 1 << n != psi.shape[0]:
        raise ValidationError("statevector length must be a power of two")
    if n > MAX_QUBITS:
        raise ResourceLimitError(f"statevector path is capped at n = {MAX_QUBITS}")
    if abs(np.linalg.norm(psi) - 1) > 1e-10:
        raise ValidationError("statevector is not normalized")
    return psi, n


# ---------------------------------------------------------------------------
# Givens compilation
# ---------------------------------------------------------------------------


def givens_steps(dim: int) -> list[tuple[int, int]]:
    """Fixed (column, plane) schedule eliminating sub-diagonal entries
    column by column in adjacent planes, bottom row upward."""
    steps = []
    for col in range(dim):
        for row in range(dim - 2, col - 1, -1):
            steps.append((col, row))
    return steps


def decompose_orthogonal_batch(qs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Decompose a stack of orthogonal matrices into the fixed schedule of
    adjacent-plane rotations plus a final-axis reflection.

    Q = G_{mu_1}(phi_1) ... G_{mu_k}(phi_k) * diag(1, ..., 1, det); the
    returned angles are ordered so applying the unitaries of
    ``reversed(steps)`` after the reflection reproduces U_Q.  Shapes:
    angles (batch, steps), reflection (batch,).
    """
    a = np.asarray(qs, dtype=float).copy()
    if a.ndim == 2:
        a = a[None]
    batch, dim, _ = a.shape
    steps = givens_steps(dim)
    angles = np.empty((batch, len(steps) + dim - 1))
    for t, (col, row) in enumerate(steps):
        x = a[:, row, col]
        y = a[:, row + 1, col]
        phi = np.arctan2(y, x)
        c, s = np.cos(phi), np.sin(phi)
        upper = c[:, None] * a[:, row, :] + s[:, None] * a[:, row + 1, :]
        lower = -s[:, None] * a[:, row, :] + c[:, None] * a[:, row + 1, :]
        a[:, row, :] = upper
        a[:, row + 1, :] = lower
        angles[:, t] = phi
    # the residue is diagonal +-1; push any -1s to the last axis with
    # pi-rotations, pairs annihilating along the way
    for i in range(dim - 1):
        neg = a[:, i, i] < 0
        phi = np.where(neg, np.pi, 0.0)
        angles[:, len(steps) + i] = phi
        flip = np.where(neg, -1.0, 1.0)
        a[:, i, i] *= flip
        a[:, i + 1, i + 1] *= flip
    reflection = a[:, dim - 1, dim - 1] < 0
    return angles, reflection


def _apply_plane_rotations(states: np.ndarray, angles: np.ndarray, n: int) -> np.ndarray:
    """Apply the compiled circuit to a batch of statevectors.

    The factorization is Q = prod_t G_{mu_t}(phi_t) * D, so the state picks
    up U_D first and the step-t rotation unitaries in reverse order, each
    U = exp((phi/2) gamma_mu gamma_mu+1): a Z rotation for even mu (0-based),
    an XX rotation on adjacent qubits for odd mu.
    """
    dim = 2 * n
    steps = givens_steps(dim)
    planes = [row for _, row in steps] + list(range(dim - 1))
    batch = states.shape[0]
    psi = states.reshape(batch, -1)
    for t in range(len(planes) - 1, -1, -1):
        mu = planes[t]
        phi = angles[:, t]
        # inverse rotation G(phi)^T = G(-phi)
        half = -phi / 2
        if mu % 2 == 0:
            qubit = mu // 2
            shaped = psi.reshape(batch, 1 << qubit, 2, -1)
            phase = np.exp(1j * half)[:, None, None]
            shaped[:, :, 0, :] *= phase
            shaped[:, :, 1, :] *= np.conj(phase)
        else:
            qubit = (mu - 1) // 2
            shaped = psi.reshape(batch, 1 << qubit, 4, -1)
            c = np.cos(half)[:, None, None]
            s = (1j * np.sin(half))[:, None, None]
            a00 = shaped[:, :, 0, :].copy()
            a01 = shaped[:, :, 1, :].copy()
            shaped[:, :, 0, :] *= c
            shaped[:, :, 0, :] += s * shaped[:, :, 3, :]
            shaped[:, :, 3, :] *= c
            shaped[:, :, 3, :] += s * a00
            shaped[:, :, 1, :] *= c
            shaped[:, :, 1, :] += s * shaped[:, :, 2, :]
            shaped[:, :, 2, :] *= c
            shaped[:, :, 2, :] += s * a01
    return psi


def _apply_reflection(psi: np.ndarray, which: np.ndarray) -> None:
    """X on the last qubit for the flagged batch rows."""
    if not np.any(which):
        return
    batch = psi.shape[0]
    shaped = psi.reshape(batch, -1, 2)
    rows = np.where(which)[0]
    shaped[rows] = shaped[rows][:, :, ::-1]


def apply_matchgate(psi: np.ndarray, q: OrthogonalLabel) -> np.ndarray:
    """U_Q psi, up to global phase."""
    psi, n = validate_statevector(psi)
    if q.n != n:
        raise ValidationError("label mode count does not match the statevector")
    angles, reflection = decompose_orthogonal_batch(q.matrix()[None])
    out = psi[None].copy()
    _apply_reflection(out, reflection)
    out = _apply_plane_rotations(out, angles, n)
    return out[0]


# ---------------------------------------------------------------------------
# outcome sampling
# ---------------------------------------------------------------------------


def sample_outcome(psi: np.ndarray, rng: np.random.Generator) -> str:
    """Sample a computational-basis outcome with Born probabilities."""
    psi, n = validate_statevector(psi)
    probs = np.abs(psi) ** 2
    probs = probs / probs.sum()
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    idx = min(idx, (1 << n) - 1)
    return bits_to_string(bits_from_index(idx, n))


def _condition_covariance_batch(c: np.ndarray, mode: int, outcome_sign: np.ndarray) -> np.ndarray:
    """Condition a batch of covariances on measuring mode ``mode`` with
    outcome sign c_j = (-1)^{b_j}; rank-2 update of the trailing block."""
    p, q = 2 * mode, 2 * mode + 1
    m = c[:, p, q]
    denom = 1 + outcome_sign * m
    denom = np.where(np.abs(denom) < 1e-14, 1e-14, denom)
    factor = (outcome_sign / denom)[:, None, None]
    update = np.einsum("bi,bj->bij", c[:, :, p], c[:, q, :]) - np.einsum(
        "bi,bj->bij", c[:, :, q], c[:, p, :]
    )
    return c + factor * update


def _gaussian_outcomes_batch(
    c_rot: np.ndarray, uniforms: np.ndarray
) -> np.ndarray:
    """Sequentially sample bits from a batch of rotated covariances.

    Bit j has marginal P(b_j) = (1 + (-1)^{b_j} C'_{2j,2j+1}) / 2 on the
    conditioned covariance; returns an integer bit array (batch, n).
    """
    batch, dim, _ = c_rot.shape
    n = dim // 2
    c = c_rot.copy()
    bits = np.empty((batch, n), dtype=np.uint8)
    for j in range(n):
        p0 = np.clip((1 + c[:, 2 * j, 2 * j + 1]) / 2, 0.0, 1.0)
        b = (uniforms[:, j] >= p0).astype(np.uint8)
        bits[:, j] = b
        sign = 1.0 - 2.0 * b
        c = _condition_covariance_batch(c, j, sign)
    return bits


def sample_gaussian_outcome(
    c: np.ndarray, q: OrthogonalLabel, rng: np.random.Generator
) -> str:
    """Sample ⟨b|U_Q rho U_Q^dag|b⟩ from a covariance matrix in O(n^3)."""
    c = validate_covariance(c)
    n = q.n
    from .fermion import rotate_covariance

    # measuring U rho U^dag: covariance rotates with Q on the left
    c_rot = rotate_covariance(c, OrthogonalLabel.from_dense(q.matrix().T, validate=False))
    uniforms = rng.random(n)[None, :]
    bits = _gaussian_outcomes_batch(c_rot[None], uniforms)[0]
    return bits_to_string(bits)


def gaussian_outcome_distribution(c: np.ndarray, q: OrthogonalLabel) -> np.ndarray:
    """Exact outcome distribution of the Gaussian fast path, enumerated by
    recursive conditioning (test support, n <= 12)."""
    c = validate_covariance(c)
    n = q.n
    from .fermion import rotate_covariance

    c_rot = rotate_covariance(c, OrthogonalLabel.from_dense(q.matrix().T, validate=False))
    probs = np.zeros(1 << n)

    def recurse(cov, mode, prefix_prob, prefix_bits):
        if mode == n:
            idx = 0
            for b in prefix_bits:
                idx = (idx << 1) | b
            probs[idx] = prefix_prob
            return
        p0 = np.clip((1 + cov[2 * mode, 2 * mode + 1]) / 2, 0.0, 1.0)
        for b, pb in ((0, p0), (1, 1 - p0)):
            if pb <= 1e-16:
                continue
            sign = np.array([1.0 - 2.0 * b])
            newcov = _condition_covariance_batch(cov[None], mode, sign)[0]
            recurse(newcov, mode + 1, prefix_prob * pb, prefix_bits + [b])

    recurse(c_rot, 0, 1.0, [])
    return probs


# ---------------------------------------------------------------------------
# shadow collection
# ---------------------------------------------------------------------------


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _draw_labels(n: int, ensemble: str, seed: int, start: int, count: int):
    """Per-sample randomness: the circuit label draw followed by the
    uniforms spent on the measurement (1 for statevector, n for Gaussian)."""
    dim = 2 * n
    if ensemble == "haar":
        gauss = np.empty((count, dim, dim))
        uniforms = np.empty((count, n))
        for i in range(count):
            rng = _sample_rng(seed, start + i)
            gauss[i] = rng.standard_normal((dim, dim))
            uniforms[i] = rng.random(n)
        q, r = np.linalg.qr(gauss)
        d = np.sign(np.einsum("bii->bi", r))
        d[d == 0] = 1.0
        qs = q * d[:, None, :]
        return qs, None, None, uniforms
    perms = np.empty((count, dim), dtype=np.intp)
    signs = np.empty((count, dim), dtype=np.int8)
    uniforms = np.empty((count, n))
    for i in range(count):
        rng = _sample_rng(seed, start + i)
        perms[i] = rng.permutation(dim)
        signs[i] = rng.integers(0, 2, size=dim) * 2 - 1
        uniforms[i] = rng.random(n)
    qs = np.zeros((count, dim, dim))
    qs[np.arange(count)[:, None], np.arange(dim)[None, :], perms] = signs
    return qs, perms, signs, uniforms


def _collect_chunk(source, n, ensemble, seed, start, count):
    qs, perms, signs, uniforms = _draw_labels(n, ensemble, seed, start, count)
    if isinstance(source, GaussianStateSpec):
        cov = covariance_of_gaussian(source)
        c_rot = np.einsum("bik,kl,bjl->bij", qs, cov, qs)
        bits = _gaussian_outcomes_batch(c_rot, uniforms)
    else:
        angles, reflection = decompose_orthogonal_batch(qs)
        states = np.broadcast_to(source, (count, source.shape[0])).copy()
        _apply_reflection(states, reflection)
        states = _apply_plane_rotations(states, angles, n)
        probs = np.abs(states) ** 2
        probs /= probs.sum(axis=1, keepdims=True)
        cum = np.cumsum(probs, axis=1)
        idx = np.minimum(
            (cum < uniforms[:, :1]).sum(axis=1), (1 << n) - 1
        )
        bits = ((idx[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1).astype(np.uint8)
    return qs, perms, signs, bits


def collect_shadows(
    source: np.ndarray | GaussianStateSpec,
    ensemble: str,
    count: int,
    seed: int,
    threads: int = 1,
    chunk: int = 4096,
) -> list[ShadowSample]:
    """Draw ``count`` shadow samples of the given state.

    ``source`` is a statevector (any state) or a GaussianStateSpec (fast
    covariance path).  Deterministic given (seed, count); sample j depends
    only on (seed, j).
    """
    if ensemble not in ("haar", "clifford"):
        raise ValidationError(f"unknown ensemble {ensemble!r}")
    if isinstance(source, GaussianStateSpec):
        source.require_state()
        n = source.n
    else:
        source, n = validate_statevector(source)
    if count < 0:
        raise ValidationError("count must be nonnegative")
    spans = [(s, min(chunk, count - s)) for s in range(0, count, chunk)]

    def work(span):
        start, size = span
        return start, _collect_chunk(source, n, ensemble, seed, start, size)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = dict(pool.map(work, spans))
        results = [parts[s] for s, _ in spans]
    else:
        results = [work(span)[1] for span in spans]

    samples: list[ShadowSample] = []
    for qs, perms, signs, bits in results:
        for i in range(qs.shape[0]):
            if perms is not None:
                label = OrthogonalLabel.from_signed_permutation(perms[i], signs[i])
            else:
                label = OrthogonalLabel.from_dense(qs[i], validate=False)
            samples.append(ShadowSample(ensemble=ensemble, q=label, b=bits_to_string(bits[i])))
    return samples


# ---------------------------------------------------------------------------
# shadow files (JSON lines)
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def shadow_record_line(sample: ShadowSample) -> str:
    if sample.q.is_signed_permutation:
        qpart = '"q":{"perm":[%s],"signs":[%s]}' % (
            ",".join(str(int(p)) for p in sample.q.perm),
            ",".join(str(int(s)) for s in sample.q.signs),
        )
    else:
        rows = ",".join(
            "[" + ",".join(_fmt(x) for x in row) + "]" for row in sample.q.matrix()
        )
        qpart = '"q":{"dense":[%s]}' % rows
    return '{"n":%d,"ensemble":"%s",%s,"b":"%s"}' % (
        sample.q.n,
        sample.ensemble,
        qpart,
        sample.b,
    )


def write_shadows(path: str, samples, append: bool = False) -> int:
    """Stream shadow samples to a JSONL file; returns the record count."""
    mode = "a" if append else "w"
    count = 0
    with open(path, mode) as fh:
        for sample in samples:
            fh.write(shadow_record_line(sample))
            fh.write("\n")
            count += 1
    return count


def read_shadows(path: str) -> list[ShadowSample]:
    samples = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            qd = d["q"]
            if "perm" in qd:
                label = OrthogonalLabel.from_signed_permutation(
                    np.asarray(qd["perm"], dtype=np.intp),
                    np.asarray(qd["signs"], dtype=np.int8),
                )
            else:
                label = OrthogonalLabel.from_dense(np.asarray(qd["dense"], dtype=float))
            samples.append(ShadowSample(ensemble=d["ensemble"], q=label, b=d["b"]))
    return samples
