import math
from fractions import Fraction

import numpy as np
import pytest

from mgshadows.oracle import gamma_product
from mgshadows.skewlin import ValidationError
from mgshadows.variance import (
    DEFAULT_N_GRID,
    DEFAULT_ZETA_GRID,
    EstimationPlan,
    LogBinomialTable,
    alpha,
    alpha_exact,
    bound_gaussian,
    bound_local,
    bound_overlap,
    bound_overlap_exact,
    exact_variance_smalln,
    kappa,
    plan_samples,
    variance_table,
)


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def test_log_binom_table_matches_exact_integers():
    table = LogBinomialTable(15)
    for a in range(61):
        for b in range(0, a + 1, 7):
            exact = math.comb(a, b)
            assert float(np.exp(table.log_binom(a, b))) == pytest.approx(exact, rel=1e-13)


def test_log_binom_invalid_arguments():
    table = LogBinomialTable(4)
    assert table.log_binom(3, 5) == -np.inf
    assert table.log_binom(3, -1) == -np.inf


# ---------------------------------------------------------------------------
# alpha and kappa
# ---------------------------------------------------------------------------


def test_alpha_all_zero():
    assert alpha(5, 0, 0, 0) == 1.0


def test_alpha_spec_value():
    # (2,1,0,0): (2/6) * 3 * 1 = 1
    assert alpha(2, 1, 0, 0) == pytest.approx(1.0)


def test_alpha_matches_exact_randomly():
    rng = np.random.default_rng(0)
    n = 6
    for _ in range(20):
        while True:
            l = rng.integers(0, n + 1, size=3)
            if l.sum() <= n:
                break
        exact = alpha_exact(n, *map(int, l))
        assert alpha(n, *map(int, l)) == pytest.approx(float(exact), rel=1e-12)


def test_alpha_domain():
    with pytest.raises(ValidationError):
        alpha(2, 2, 2, 2)


def test_kappa_zeta_zero_is_multinomial():
    n = 7
    for l in ((1, 2, 3), (0, 0, 0), (2, 2, 3)):
        expected = (
            math.comb(n, l[0]) * math.comb(n - l[0], l[1]) * math.comb(n - l[0] - l[1], l[2])
        )
        assert kappa(n, 0, *l) == expected


def test_kappa_vanishes_below_support():
    # l1 < zeta/2 with l3 = 0 leaves a negative multinomial argument everywhere
    assert kappa(4, 2, 0, 2, 0) == 0


def test_kappa_matches_set_enumeration():
    # count disjoint (A1, A2, A3) triples with the pairing condition at 2n = 8
    import itertools

    n, zeta = 4, 2
    s_zeta = set(range(0, 2 * zeta, 2))  # tilde indices {2j} for j < zeta (0-based)

    def pairs_condition(a):
        for j in range(n):
            if ((2 * j) in a) != ((2 * j + 1) in a):
                return False
        return True

    counts = {}
    universe = list(range(2 * n))
    for assignment in itertools.product(range(4), repeat=2 * n):
        a1 = {m for m in universe if assignment[m] == 1}
        a2 = {m for m in universe if assignment[m] == 2}
        a3 = {m for m in universe if assignment[m] == 3}
        if any(len(a) % 2 for a in (a1, a2, a3)):
            continue
        if pairs_condition((a2 | a3) ^ s_zeta) and pairs_condition((a3 | a1) ^ s_zeta):
            key = (len(a1) // 2, len(a2) // 2, len(a3) // 2)
            counts[key] = counts.get(key, 0) + 1
    for (l1, l2, l3), count in counts.items():
        assert kappa(n, zeta, l1, l2, l3) == count
    assert kappa(n, zeta, 1, 1, 1) == counts.get((1, 1, 1), 0)


def test_kappa_rejects_odd_zeta():
    with pytest.raises(ValidationError):
        kappa(4, 1, 0, 0, 0)


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def test_bound_overlap_n1_exact_rational():
    assert bound_overlap_exact(1, 0) == Fraction(1)
    assert bound_overlap(1, 0) == pytest.approx(1.0, rel=1e-14)


def test_two_path_agreement_small():
    for n in (1, 2, 3, 5, 8, 13, 20):
        assert bound_overlap(n, 0) == pytest.approx(bound_gaussian(n), rel=1e-12)


@pytest.mark.slow
def test_two_path_agreement_up_to_300():
    for n in (40, 80, 150, 300):
        assert bound_overlap(n, 0) == pytest.approx(bound_gaussian(n), rel=1e-12)


def test_log_domain_matches_exact_rational_to_20():
    for n in (4, 9, 14, 20):
        for zeta in (0, 2, 6):
            if zeta > n:
                continue
            exact = float(bound_overlap_exact(n, zeta))
            assert bound_overlap(n, zeta) == pytest.approx(exact, rel=1e-10)


def test_bound_thread_count_invariance():
    assert bound_overlap(30, 4, threads=1) == bound_overlap(30, 4, threads=3)


def test_sqrtn_logn_ratio_bounded_and_eventually_decreasing():
    ns = [16, 32, 64, 128, 200]
    ratios = [bound_overlap(n, 0) / (math.sqrt(n) * math.log(n)) for n in ns]
    assert max(ratios) < 1.0
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_zeta_ordering_on_tested_grid():
    violations = []
    for n in (4, 8, 16, 32, 64, 128, 200):
        base = bound_overlap(n, 0)
        for zeta in (2, 10, 50):
            if zeta > n:
                continue
            if bound_overlap(n, zeta) > base:
                violations.append((n, zeta))
    assert violations == []


def test_bound_local_values():
    assert bound_local(3, 0) == 1.0
    assert bound_local(2, 2) == 3.0
    assert bound_local(4, 4) == pytest.approx(70 / 6)
    with pytest.raises(ValidationError):
        bound_local(2, 3)


def test_exact_variance_below_closed_form_bounds():
    rng = np.random.default_rng(1)
    n = 2
    dim = 1 << n
    a = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = a @ a.conj().T
    rho /= np.trace(rho)
    parity = (-1j) ** n * gamma_product(n, tuple(range(2 * n)))
    rho = (rho + parity @ rho @ parity.conj().T) / 2
    g = gamma_product(n, (0, 2))
    assert exact_variance_smalln(rho, g) <= bound_local(n, 2) + 1e-10

    from mgshadows.fermion import GaussianStateSpec
    from mgshadows.oracle import dense_gaussian_density
    from mgshadows.skewlin import haar_orthogonal

    spec = GaussianStateSpec(n=n, lam=rng.uniform(-1, 1, n), frame=haar_orthogonal(n, rng))
    obs = dense_gaussian_density(spec)
    assert exact_variance_smalln(rho, obs) <= bound_gaussian(n) + 1e-10


# ---------------------------------------------------------------------------
# planning
# ---------------------------------------------------------------------------


def test_plan_k_constant():
    # ln(M/delta) = 1  =>  K = 18
    plan = plan_samples(0.5, 1 / math.e, 1, 1.0)
    assert plan.k == 18


def test_plan_l_quadruples_when_eps_halves():
    p1 = plan_samples(0.2, 0.1, 3, 1.2)
    p2 = plan_samples(0.1, 0.1, 3, 1.2)
    assert p2.l == 4 * p1.l


def test_plan_total():
    plan = plan_samples(0.1, 0.05, 5, 2.0)
    assert plan.total == plan.k * plan.l
    assert plan.k == math.ceil(18 * math.log(5 / 0.05))


def test_plan_validation():
    with pytest.raises(ValidationError):
        plan_samples(0.0, 0.1, 1, 1.0)


# ---------------------------------------------------------------------------
# table generation
# ---------------------------------------------------------------------------


def test_variance_table_skips_slow_point_and_zeta_gt_n():
    rows = list(variance_table(ns=(4, 1000), zetas=(0, 500)))
    keys = {(n, z) for n, z, _ in rows}
    assert (4, 500) not in keys
    assert (1000, 500) not in keys
    assert (4, 0) in keys and (1000, 0) in keys


def test_default_grid_shape():
    assert DEFAULT_N_GRID[-1] == 1000
    assert DEFAULT_ZETA_GRID[0] == 0
