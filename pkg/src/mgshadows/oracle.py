"""Brute-force dense references (exponential cost, n <= 4-5).

Dense Majorana matrices under the Jordan-Wigner convention, grade
projectors, the exhaustively-enumerated measurement channel and twirl
channels over the signed-permutation group, closed-form twirl projectors,
and the exact second-moment formula.  Everything here exists to pin down
the fast implementations; nothing is performance-critical beyond keeping
the n = 2 and n = 3 enumerations comfortable.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache
from math import comb

import numpy as np

from .fermion import GaussianStateSpec, SlaterSpec, bits_from_index
from .skewlin import OrthogonalLabel, ResourceLimitError, ValidationError

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@lru_cache(maxsize=None)
def majorana_matrix(n: int, mu: int) -> np.ndarray:
    """Dense 2^n x 2^n Majorana operator: Z...Z X I... for even mu (0-based),
    Z...Z Y I... for odd mu.  Cached; treat the result as read-only."""
    if n > 5:
        raise ResourceLimitError("dense Majorana matrices are capped at n = 5")
    if not 0 <= mu < 2 * n:
        raise ValidationError(f"Majorana index {mu} out of range for n = {n}")
    j = mu // 2
    op = np.ones((1, 1), dtype=complex)
    for k in range(n):
        if k < j:
            factor = _Z
        elif k == j:
            factor = _X if mu % 2 == 0 else _Y
        else:
            factor = np.eye(2, dtype=complex)
        op = np.kron(op, factor)
    op.flags.writeable = False
    return op


def all_majoranas(n: int) -> list[np.ndarray]:
    return [majorana_matrix(n, mu) for mu in range(2 * n)]


@lru_cache(maxsize=1 << 16)
def gamma_product(n: int, indices) -> np.ndarray:
    """gamma_S: ordered product of the indexed Majorana operators.  Cached;
    treat the result as read-only."""
    indices = tuple(indices)
    if not indices:
        out = np.eye(1 << n, dtype=complex)
    else:
        out = gamma_product(n, indices[:-1]) @ majorana_matrix(n, indices[-1])
    out.flags.writeable = False
    return out


def _subsets(n: int):
    return itertools.chain.from_iterable(
        itertools.combinations(range(2 * n), k) for k in range(2 * n + 1)
    )


def subset_list(n: int) -> list[tuple[int, ...]]:
    return list(_subsets(n))


def subset_index_map(n: int) -> dict[tuple[int, ...], int]:
    return {s: i for i, s in enumerate(_subsets(n))}


def grade_project(a: np.ndarray, k: int, n: int | None = None) -> np.ndarray:
    """Projection of a dense operator onto the span of grade-k Majorana
    products: sum over |S| = k of gamma_S tr(gamma_S^dag A) / 2^n."""
    dim = a.shape[0]
    if n is None:
        n = dim.bit_length() - 1
    out = np.zeros_like(a, dtype=complex)
    for s in itertools.combinations(range(2 * n), k):
        g = gamma_product(n, s)
        out += g * (np.trace(g.conj().T @ a) / dim)
    return out


def grade_coefficients(a: np.ndarray, n: int) -> np.ndarray:
    """Coordinates of A in the orthonormal basis gamma_S / sqrt(2^n),
    ordered as subset_list(n)."""
    dim = 1 << n
    coeffs = np.empty(4**n, dtype=complex)
    for i, s in enumerate(_subsets(n)):
        g = gamma_product(n, s)
        coeffs[i] = np.trace(g.conj().T @ a) / np.sqrt(dim)
    return coeffs


def operator_from_grade_coefficients(coeffs: np.ndarray, n: int) -> np.ndarray:
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    for i, s in enumerate(_subsets(n)):
        if coeffs[i] != 0:
            out += coeffs[i] * gamma_product(n, s) / np.sqrt(dim)
    return out


# ---------------------------------------------------------------------------
# dense states and unitaries
# ---------------------------------------------------------------------------


def dense_gaussian_density(spec: GaussianStateSpec) -> np.ndarray:
    """Dense density operator prod_j (I - i lam_j g~_{2j} g~_{2j+1}) / 2."""
    n = spec.n
    q = spec.frame.matrix()
    gammas = all_majoranas(n)
    rotated = [sum(q[mu, nu] * gammas[nu] for nu in range(2 * n)) for mu in range(2 * n)]
    rho = np.eye(1 << n, dtype=complex)
    for j in range(n):
        rho = rho @ (np.eye(1 << n) - 1j * spec.lam[j] * rotated[2 * j] @ rotated[2 * j + 1]) / 2
    return rho


def dense_slater_state(spec: SlaterSpec) -> np.ndarray:
    """Dense statevector a~_1^dag ... a~_zeta^dag |vac> for the Slater spec."""
    n = spec.n
    gammas = all_majoranas(n)
    vac = np.zeros(1 << n, dtype=complex)
    vac[0] = 1.0
    state = vac
    for j in range(spec.zeta - 1, -1, -1):
        adag = np.zeros((1 << n, 1 << n), dtype=complex)
        for k in range(n):
            adag += spec.v[j, k].conjugate() * (gammas[2 * k] - 1j * gammas[2 * k + 1]) / 2
        state = adag @ state
    norm = np.linalg.norm(state)
    if abs(norm - 1) > 1e-8:
        raise ValidationError("Slater construction lost normalization")
    return state


def dense_rotation_unitary(r: np.ndarray) -> np.ndarray:
    """Dense U_R = exp(sum_{mu<nu} h_{mu nu} gamma_mu gamma_nu) with
    h = log(R)/2, the det-+1 Gaussian unitary the Grassmann encoding uses."""
    import scipy.linalg

    from .skewlin import orthogonal_log

    h = orthogonal_log(np.asarray(r, dtype=float))
    n = h.shape[0] // 2
    gammas = all_majoranas(n)
    gen = np.zeros((1 << n, 1 << n), dtype=complex)
    for mu in range(2 * n):
        for nu in range(mu + 1, 2 * n):
            if h[mu, nu] != 0:
                gen += h[mu, nu] * (gammas[mu] @ gammas[nu])
    return scipy.linalg.expm(gen)


# ---------------------------------------------------------------------------
# the signed-permutation group and its action on the Majorana basis
# ---------------------------------------------------------------------------


def enumerate_signed_permutations(n: int):
    """All of B(2n): permutations in lexicographic order x sign masks."""
    dim = 2 * n
    for perm in itertools.permutations(range(dim)):
        for mask in range(1 << dim):
            signs = np.fromiter(
                (1 - 2 * ((mask >> i) & 1) for i in range(dim)), dtype=np.int8, count=dim
            )
            yield OrthogonalLabel.from_signed_permutation(np.array(perm), signs)


def signed_perm_group_size(n: int) -> int:
    from math import factorial

    return factorial(2 * n) * (1 << (2 * n))


def basis_action_of_signed_perm(label: OrthogonalLabel, n: int) -> tuple[np.ndarray, np.ndarray]:
    """The conjugation action U_Q^dag gamma_S U_Q = sign * gamma_S' as a
    signed permutation of the 4^n subset basis: returns (target index,
    sign) arrays ordered like subset_list(n)."""
    subsets = subset_list(n)
    index = subset_index_map(n)
    perm = label.perm
    signs = label.signs
    tgt = np.empty(len(subsets), dtype=np.intp)
    sgn = np.empty(len(subsets), dtype=np.int8)
    for i, s in enumerate(subsets):
        imgs = [perm[mu] for mu in s]
        sign = 1
        for mu in s:
            sign *= signs[mu]
        # sort the image indices, tracking the permutation parity
        order = np.argsort(imgs)
        inv = 0
        for a in range(len(imgs)):
            for b in range(a + 1, len(imgs)):
                if imgs[a] > imgs[b]:
                    inv += 1
        sign *= (-1) ** inv
        tgt[i] = index[tuple(sorted(imgs))]
        sgn[i] = sign
    return tgt, sgn


# ---------------------------------------------------------------------------
# measurement channel and twirls
# ---------------------------------------------------------------------------


def _basis_state_coefficients(n: int) -> np.ndarray:
    """Grade coordinates of every |b><b|, shape (2^n, 4^n); row b has
    (-i)^|T| (-1)^{sum of b over T} / sqrt(2^n) at the pair subsets."""
    index = subset_index_map(n)
    out = np.zeros((1 << n, 4**n), dtype=complex)
    for t_size in range(n + 1):
        for t in itertools.combinations(range(n), t_size):
            s = tuple(sorted(itertools.chain.from_iterable((2 * j, 2 * j + 1) for j in t)))
            col = index[s]
            for b in range(1 << n):
                bits = bits_from_index(b, n)
                out[b, col] = (-1j) ** t_size * (-1) ** int(sum(bits[list(t)])) / np.sqrt(1 << n)
    return out


def exact_channel(n: int, ensemble: str = "clifford") -> np.ndarray:
    """The measurement channel, averaged exactly over B(2n), as a dense
    matrix on the 4^n-dimensional Majorana-basis coordinates."""
    if ensemble != "clifford":
        raise ValidationError("exact enumeration is defined for the discrete ensemble")
    if n > 3:
        raise ResourceLimitError("exact channel enumeration is capped at n = 3")
    dim = 4**n
    basis_coeffs = _basis_state_coefficients(n)
    out = np.zeros((dim, dim), dtype=complex)
    count = 0
    for label in enumerate_signed_permutations(n):
        tgt, sgn = basis_action_of_signed_perm(label, n)
        for b in range(1 << n):
            x = np.zeros(dim, dtype=complex)
            x[tgt] = sgn * basis_coeffs[b]
            out += np.outer(x, x.conj())
        count += 1
    return out / count


def channel_formula_matrix(n: int) -> np.ndarray:
    """Closed-form channel: diagonal in the Majorana basis, weight
    C(n, l)/C(2n, 2l) on grade 2l, zero on odd grades."""
    diag = np.zeros(4**n)
    for i, s in enumerate(_subsets(n)):
        k = len(s)
        if k % 2 == 0:
            diag[i] = comb(n, k // 2) / comb(2 * n, k)
    return np.diag(diag)


def inverse_channel_matrix(n: int) -> np.ndarray:
    diag = np.zeros(4**n)
    for i, s in enumerate(_subsets(n)):
        k = len(s)
        if k % 2 == 0:
            diag[i] = comb(2 * n, k) / comb(n, k // 2)
    return np.diag(diag)


def apply_inverse_channel_dense(a: np.ndarray, n: int) -> np.ndarray:
    """M^-1 applied to a dense operator (even part only; odd part is not in
    the channel's image and is dropped)."""
    coeffs = grade_coefficients(a, n)
    coeffs = inverse_channel_matrix(n) @ coeffs
    return operator_from_grade_coefficients(coeffs, n)


def exact_twirl(n: int, j: int, ensemble: str = "clifford", threads: int = 1) -> np.ndarray:
    """The j-fold twirl averaged exactly over B(2n), as a dense matrix on
    the (4^n)^j tensor coordinates."""
    if ensemble != "clifford":
        raise ValidationError("exact enumeration is defined for the discrete ensemble")
    if j not in (1, 2, 3):
        raise ValidationError("j must be 1, 2, or 3")
    if (j == 3 and n > 2) or n > 3:
        raise ResourceLimitError("exact twirl enumeration is capped at n=3 (j<=2) / n=2 (j=3)")
    dim = 4**n
    full = dim**j
    labels = list(enumerate_signed_permutations(n))

    def accumulate(chunk):
        acc = np.zeros((full, full))
        src = np.arange(full)
        for label in chunk:
            tgt1, sgn1 = basis_action_of_signed_perm(label, n)
            tgt, sgn = tgt1, sgn1.astype(np.int64)
            for _ in range(j - 1):
                tgt = (tgt[:, None] * dim + tgt1[None, :]).ravel()
                sgn = (sgn[:, None] * sgn1[None, :]).ravel()
            acc[tgt, src] += sgn
        return acc

    if threads > 1:
        chunks = [labels[i::threads] for i in range(threads)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(accumulate, chunks))
        total = parts[0]
        for p in parts[1:]:
            total += p
    else:
        total = accumulate(labels)
    return total / len(labels)


def _pair_product_vector(n: int, a1, a2) -> tuple[int, int]:
    """gamma_{A1} gamma_{A2} = sign * gamma_{A1 union A2} for disjoint sets;
    returns (basis index, sign)."""
    imgs = list(a1) + list(a2)
    inv = 0
    for x in range(len(imgs)):
        for y in range(x + 1, len(imgs)):
            if imgs[x] > imgs[y]:
                inv += 1
    return subset_index_map(n)[tuple(sorted(imgs))], (-1) ** inv


def closed_form_twirl(n: int, j: int) -> np.ndarray:
    """Closed-form twirl projector built from the Majorana product bases
    with the disjointness constraints."""
    dim = 4**n
    index = subset_index_map(n)
    if j == 1:
        out = np.zeros((dim, dim))
        out[0, 0] = 1.0
        return out
    if j == 2:
        out = np.zeros((dim * dim, dim * dim))
        for k in range(2 * n + 1):
            vec = np.zeros(dim * dim)
            for s in itertools.combinations(range(2 * n), k):
                i = index[s]
                vec[i * dim + i] = 1.0
            vec /= np.sqrt(comb(2 * n, k))
            out += np.outer(vec, vec)
        return out
    if j == 3:
        full = dim**3
        out = np.zeros((full, full))
        modes = list(range(2 * n))
        groups: dict[tuple[int, int, int], list[tuple]] = {}
        for assignment in itertools.product(range(4), repeat=2 * n):
            a1 = tuple(m for m, g in zip(modes, assignment) if g == 1)
            a2 = tuple(m for m, g in zip(modes, assignment) if g == 2)
            a3 = tuple(m for m, g in zip(modes, assignment) if g == 3)
            groups.setdefault((len(a1), len(a2), len(a3)), []).append((a1, a2, a3))
        for (k1, k2, k3), triples in groups.items():
            norm = _multinomial(2 * n, (k1, k2, k3))
            vec = np.zeros(full)
            for a1, a2, a3 in triples:
                i12, s12 = _pair_product_vector(n, a1, a2)
                i23, s23 = _pair_product_vector(n, a2, a3)
                i31, s31 = _pair_product_vector(n, a3, a1)
                vec[(i12 * dim + i23) * dim + i31] += s12 * s23 * s31
            vec /= np.sqrt(norm)
            out += np.outer(vec, vec)
        return out
    raise ValidationError("j must be 1, 2, or 3")


def _multinomial(total: int, parts) -> int:
    rest = total - sum(parts)
    if rest < 0 or any(p < 0 for p in parts):
        return 0
    out = 1
    remaining = total
    for p in list(parts) + [rest]:
        out *= comb(remaining, p)
        remaining -= p
    return out


# ---------------------------------------------------------------------------
# Monte Carlo Haar twirl (probe application)
# ---------------------------------------------------------------------------


def haar_action_matrix(q: np.ndarray, n: int) -> np.ndarray:
    """Dense Majorana-basis matrix of the conjugation action for an
    arbitrary orthogonal Q: entries det(Q restricted to (S, S'))."""
    return haar_action_matrices_batch(np.asarray(q)[None], n)[0]


def haar_action_matrices_batch(qs: np.ndarray, n: int) -> np.ndarray:
    """Conjugation-action matrices for a stack of orthogonal labels, with
    the minors of each grade determinant-batched."""
    index = subset_index_map(n)
    dim = 4**n
    batch = qs.shape[0]
    out = np.zeros((batch, dim, dim))
    out[:, 0, 0] = 1.0
    for k in range(1, 2 * n + 1):
        combos = list(itertools.combinations(range(2 * n), k))
        rows = np.array(combos)
        pair_src = np.array([index[s] for s in combos for _ in combos])
        pair_tgt = np.array([index[sp] for _ in combos for sp in combos])
        src_rows = np.repeat(rows, len(combos), axis=0)  # (P, k)
        tgt_cols = np.tile(rows, (len(combos), 1))
        stacked = qs[:, src_rows[:, :, None], tgt_cols[:, None, :]]  # (B, P, k, k)
        dets = np.linalg.det(stacked)
        out[:, pair_tgt, pair_src] = dets
    return out


def mc_haar_twirl_apply(vectors: np.ndarray, n: int, j: int, draws: int, seed: int, chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimate (mean, standard error) of the Haar twirl applied
    to the given probe vectors, shape (count, (4^n)^j)."""
    from .skewlin import haar_orthogonal

    rng = np.random.default_rng(seed)
    dim = 4**n
    vecs = np.asarray(vectors, dtype=complex)
    acc = np.zeros_like(vecs)
    acc2 = np.zeros(vecs.shape)
    done = 0
    while done < draws:
        size = min(chunk, draws - done)
        qs = np.stack([haar_orthogonal(n, rng).matrix() for _ in range(size)])
        ps = haar_action_matrices_batch(qs, n)
        work = np.array(
            np.broadcast_to(
                vecs.reshape((1, -1) + (dim,) * j), (size, vecs.shape[0]) + (dim,) * j
            )
        )
        pst = np.ascontiguousarray(ps.transpose(0, 2, 1))
        for axis in range(2, j + 2):  # contract each tensor factor with P_Q
            moved = np.moveaxis(work, axis, -1)  # (size, count, ..., dim)
            shape = moved.shape
            contracted = (moved.reshape(size, -1, dim) @ pst).reshape(shape)
            work = np.moveaxis(contracted, -1, axis)
        flat = work.reshape(size, *vecs.shape)
        acc += flat.sum(axis=0)
        acc2 += (np.abs(flat) ** 2).sum(axis=0)
        done += size
    mean = acc / draws
    var = np.maximum(acc2 / draws - np.abs(mean) ** 2, 0.0)
    stderr = np.sqrt(var / draws)
    return mean, stderr


# ---------------------------------------------------------------------------
# exact second moments
# ---------------------------------------------------------------------------


def exact_variance_bound(rho: np.ndarray, obs: np.ndarray, frame: OrthogonalLabel | None = None) -> float:
    """E[|o_hat|^2] from the closed-form triple sum over disjoint index
    triples, evaluated with dense traces.  ``obs`` must be even."""
    n = rho.shape[0].bit_length() - 1
    if n > 3:
        raise ResourceLimitError("triple-sum enumeration is capped at n = 3")
    gammas = all_majoranas(n)
    if frame is not None:
        q = frame.matrix()
        gammas = [sum(q[mu, nu] * gammas[nu] for nu in range(2 * n)) for mu in range(2 * n)]
    odd = sum(
        np.linalg.norm(grade_project(obs, k, n)) for k in range(1, 2 * n + 1, 2)
    )
    if odd > 1e-10:
        raise ValidationError("the second-moment formula applies to even observables")

    def gprod(indices):
        out = np.eye(1 << n, dtype=complex)
        for mu in indices:
            out = out @ gammas[mu]
        return out

    total = 0.0 + 0.0j
    obs_dag = obs.conj().T
    for assignment in itertools.product(range(4), repeat=2 * n):
        a1 = [m for m in range(2 * n) if assignment[m] == 1]
        a2 = [m for m in range(2 * n) if assignment[m] == 2]
        a3 = [m for m in range(2 * n) if assignment[m] == 3]
        if len(a1) % 2 or len(a2) % 2 or len(a3) % 2:
            continue
        l1, l2, l3 = len(a1) // 2, len(a2) // 2, len(a3) // 2
        if l1 + l2 + l3 > n:
            continue
        weight = (
            (-1) ** (l1 + l2 + l3)
            * _multinomial(n, (l1, l2, l3))
            / _multinomial(2 * n, (2 * l1, 2 * l2, 2 * l3))
            * comb(2 * n, 2 * (l2 + l3))
            / comb(n, l2 + l3)
            * comb(2 * n, 2 * (l3 + l1))
            / comb(n, l3 + l1)
        )
        t1 = np.trace(gprod(a1) @ gprod(a2) @ rho)
        t2 = np.trace(gprod(a2) @ gprod(a3) @ obs)
        t3 = np.trace(gprod(a3) @ gprod(a1) @ obs_dag)
        total += weight * t1 * t2 * t3
    total /= 4**n
    if abs(total.imag) > 1e-8 * max(1.0, abs(total.real)):
        raise ValidationError(f"second moment came out non-real: {total}")
    return float(total.real)


def enumerate_second_moment(rho: np.ndarray, obs: np.ndarray, per_sample) -> complex:
    """E[|o_hat|^2] by full enumeration of B(2n) x outcomes, weighting the
    caller's per-sample estimator by the exact outcome probabilities."""
    n = rho.shape[0].bit_length() - 1
    total = 0.0
    count = 0
    for label in enumerate_signed_permutations(n):
        u = dense_matchgate_unitary(label, n)
        probs = np.real(np.einsum("bi,ij,bj->b", u, rho, u.conj()))
        for b in range(1 << n):
            if probs[b] < 1e-15:
                continue
            total += probs[b] * abs(per_sample(label, b)) ** 2
        count += 1
    return total / count


def enumerate_estimator_mean(rho: np.ndarray, per_sample, n: int) -> complex:
    """Exact expectation of a per-sample estimator under full enumeration of
    the discrete ensemble and measurement outcomes."""
    total = 0.0 + 0.0j
    count = 0
    for label in enumerate_signed_permutations(n):
        u = dense_matchgate_unitary(label, n)
        probs = np.real(np.einsum("bi,ij,bj->b", u, rho, u.conj()))
        for b in range(1 << n):
            if probs[b] < 1e-16:
                continue
            total += probs[b] * per_sample(label, b)
        count += 1
    return total / count


def dense_matchgate_unitary(label: OrthogonalLabel, n: int) -> np.ndarray:
    """Dense U_Q built by running the circuit compiler on each basis state."""
    from .simulator import apply_matchgate

    dim = 1 << n
    u = np.empty((dim, dim), dtype=complex)
    for col in range(dim):
        e = np.zeros(dim, dtype=complex)
        e[col] = 1.0
        u[:, col] = apply_matchgate(e, label)
    return u
