import math
from math import comb

import numpy as np
import pytest

from privsmc import streams
from privsmc.models import UniformSource
from privsmc.parametrized import (
    CiState, FamilySpec, empirical_min, interval_radius, rademacher_average, run_ci_smc,
)
from privsmc.sprt import Hypothesis
from privsmc.stl import Not, parse_stl, satisfies

from _oracles import rademacher_exact

NESTED = FamilySpec("x0 >= {theta_0}", [(0.1,), (0.2,), (0.3,)], ("a", "b", "c"))


def _ones_radius_first_n(alpha, target):
    """First N where the exact constant-one Rademacher average gives d_N < target."""
    for n in range(1, 10_000):
        r = sum(comb(n, k) * abs(2 * k - n) for k in range(n + 1)) / 2**n / n
        if 2 * r + math.sqrt(-9 * math.log(alpha) / (2 * n)) < target:
            return n


# family --------------------------------------------------------------------


def test_family_members():
    assert len(NESTED) == 3
    assert NESTED.members[2] == parse_stl("x0 >= 0.3")
    neg = FamilySpec("x0 >= {theta_0}", [(0.5,)], negate=True)
    assert neg.members[0] == Not(parse_stl("x0 >= 0.5"))
    two = FamilySpec("{theta_0}*x0 - x1 >= {theta_1}", [(1, 2), (-0.5, 0)])
    assert two.labels == ("1.0,2.0", "-0.5,0.0")


@pytest.mark.parametrize("grid,labels", [([], ()), ([(1,), (1, 2)], ()), ([(1,)], ("a", "b"))])
def test_family_validation(grid, labels):
    with pytest.raises(ValueError):
        FamilySpec("x0 >= {theta_0}", grid, labels)


def test_family_bad_template():
    with pytest.raises(ValueError):
        FamilySpec("x0 >= >= {theta_0}", [(1,)])
    with pytest.raises(KeyError):
        FamilySpec("x0 >= {theta_3}", [(1,)])


def test_family_from_files(tmp_path):
    (tmp_path / "t.stl").write_text("F[0,{theta_1}] (x0 >= {theta_0})\n")
    (tmp_path / "g.csv").write_text("label,theta_1,theta_0\nlow,2,0.5\nhigh,4,0.7\n")
    fam = FamilySpec.from_files(tmp_path / "t.stl", tmp_path / "g.csv")
    assert fam.labels == ("low", "high")
    assert fam.grid == ((0.5, 2.0), (0.7, 4.0))
    assert fam.members[1] == parse_stl("F[0,4] (x0 >= 0.7)")
    (tmp_path / "e.csv").write_text("theta_0\n")
    with pytest.raises(ValueError):
        FamilySpec.from_files(tmp_path / "t.stl", tmp_path / "e.csv")


# empirical minimum -----------------------------------------------------------


def test_empirical_min_examples():
    assert empirical_min([7], 7) == 1.0
    assert empirical_min([3, 5, 2], 10) == 0.2
    with pytest.raises(ValueError):
        empirical_min([1], 0)
    with pytest.raises(ValueError):
        empirical_min([11], 10)
    with pytest.raises(ValueError):
        empirical_min([], 10)


def test_nested_family_min_is_strictest_member():
    rng = np.random.default_rng(0)
    fam = FamilySpec("x0 >= {theta_0}", [(t,) for t in np.linspace(0.05, 0.6, 12)])
    for n in (1, 10, 250):
        sigs = [UniformSource().next_signal(rng) for _ in range(n)]
        matrix = np.array([[satisfies(f, s) for s in sigs] for f in fam.members])
        counts = matrix.sum(axis=1)
        brute = min(matrix[i].sum() for i in range(len(fam))) / n
        assert empirical_min(counts, n) == brute == counts[-1] / n


# Rademacher average ----------------------------------------------------------


def test_rademacher_exact_oracle_values():
    assert rademacher_exact([[1, 1, 1, 1]]) == 0.375
    assert rademacher_exact([[1]]) == 1.0
    assert rademacher_exact([[0, 0, 0]]) == 0.0


def test_rademacher_trivial_cases():
    rng = np.random.default_rng(1)
    assert rademacher_average(np.zeros((1, 9)), 50, rng) == 0.0
    assert rademacher_average(np.zeros((4, 9)), 50, rng) == 0.0
    assert rademacher_average(np.ones((1, 1)), 50, rng) == 1.0
    with pytest.raises(ValueError):
        rademacher_average(np.zeros((0, 0)), 5, rng)
    with pytest.raises(ValueError):
        rademacher_average(np.ones((1, 3)), 0, rng)


def test_rademacher_monte_carlo_close_to_exact():
    rng = streams.stream(0, streams.RADEMACHER, 0)
    est = rademacher_average(np.ones((1, 4)), 100_000, rng)
    assert abs(est - 0.375) <= 0.01
    m = np.array([[1, 0, 1, 1, 0, 1], [0, 0, 1, 1, 1, 1], [1, 1, 1, 0, 0, 0]])
    est = rademacher_average(m, 100_000, np.random.default_rng(2))
    assert abs(est - rademacher_exact(m)) <= 0.01


def test_rademacher_seeded_and_duplication_invariant():
    m = (np.random.default_rng(3).random((3, 40)) < 0.6).astype(float)
    a = rademacher_average(m, 300, np.random.default_rng(9))
    b = rademacher_average(m, 300, np.random.default_rng(9))
    dup = rademacher_average(np.vstack([m, m[1:2]]), 300, np.random.default_rng(9))
    assert a == b == dup
    assert 0 < a <= 1


def test_rademacher_zero_only_for_zero_columns():
    rng = np.random.default_rng(4)
    for _ in range(50):
        m = (rng.random((2, int(rng.integers(1, 8)))) < 0.3).astype(float)
        r = rademacher_average(m, 200, rng)
        assert (r == 0) == (not m.any())


# radius ----------------------------------------------------------------------


def test_interval_radius_examples():
    assert interval_radius(0.0, 0.05, 1000) == pytest.approx(math.sqrt(9 * math.log(20) / 2000))
    assert interval_radius(0.0, 0.05, 1000) == pytest.approx(0.1161, abs=1e-4)
    n = 45
    assert interval_radius(0.0, math.exp(-2 * n / 9), n) == pytest.approx(1.0)
    assert interval_radius(0.1, 0.05, 1000) == pytest.approx(0.2 + 0.1161, abs=1e-4)
    seq = [interval_radius(0.0, 0.05, n) for n in range(1, 500)]
    assert all(b < a for a, b in zip(seq, seq[1:]))
    for bad in ((0.0, 0.0, 5), (0.0, 1.0, 5), (0.0, 0.5, 0), (-0.1, 0.5, 5)):
        with pytest.raises(ValueError):
            interval_radius(*bad)


def test_ci_state_growth():
    st = CiState(2)
    for i in range(150):
        st.add(np.array([1, i % 2]))
    assert st.n == 150 and st.counts.tolist() == [150, 75]
    assert st.matrix().shape == (2, 150) and st.matrix()[1, :4].tolist() == [0, 1, 0, 1]


# sequential check ------------------------------------------------------------


def test_constant_false_family():
    fam = FamilySpec("false", [()])
    r = run_ci_smc(UniformSource(), fam, 0.5, 0.05)
    # R_N = 0 for a zero column, so the stop is the first N with sqrt(9 ln 20 / 2N) < 0.5
    assert r.outcome is Hypothesis.ALT
    assert r.tau == math.floor(18 * math.log(20)) + 1 == 54
    assert r.extra["rademacher"] == 0.0


def test_constant_true_family():
    fam = FamilySpec("true", [()])
    target = _ones_radius_first_n(0.05, 0.5)
    assert target == 112
    taus = []
    for i in range(10):
        r = run_ci_smc(UniformSource(), fam, 0.5, 0.05, index=i)
        assert r.outcome is Hypothesis.NULL
        taus.append(r.tau)
    assert all(0.85 * target <= t <= 1.2 * target for t in taus)


def test_run_record_contents():
    r = run_ci_smc(UniformSource(), NESTED, 0.5, 0.05, seed=1)
    assert r.algorithm == "ci-rademacher"
    counts = r.extra["member_counts"]
    assert set(counts) == {"a", "b", "c"} and counts["a"] >= counts["b"] >= counts["c"]
    assert r.k == counts["c"] and r.extra["p_lower"] == counts["c"] / r.tau
    assert r.extra["radius"] >= math.sqrt(-9 * math.log(0.05) / (2 * r.tau))
    assert r.extra["p_lower"] - r.extra["radius"] > 0.5
    again = run_ci_smc(UniformSource(), NESTED, 0.5, 0.05, seed=1)
    assert again.to_json() == r.to_json()


def test_min_error_bounded_by_member_errors():
    # |p_N - p*| <= max_f |empirical_f - p_f| with p_f = 1 - theta known in closed form
    rng = np.random.default_rng(6)
    truth = np.array([1 - t for (t,) in NESTED.grid])
    for n in (20, 200, 2000):
        u = rng.random(n)
        counts = np.array([(u >= t).sum() for (t,) in NESTED.grid])
        lhs = abs(empirical_min(counts, n) - truth.min())
        assert lhs <= np.max(np.abs(counts / n - truth)) + 1e-15


def test_cap_and_validation():
    fam = FamilySpec("x0 >= {theta_0}", [(0.5,)])
    r = run_ci_smc(UniformSource(), fam, 0.5, 0.05, cap=30)
    assert r.outcome is None and r.tau == 30
    with pytest.raises(ValueError):
        run_ci_smc(UniformSource(), fam, 1.5, 0.05)
    with pytest.raises(ValueError):
        run_ci_smc(UniformSource(), fam, 0.5, 0.05, cap=0)


def test_negated_family_checks_maximum():
    # max_f P(x0 >= theta) = 0.9 over theta in {0.1, 0.6}; labels stay in the
    # original frame, so H_null reads "max exceeds p"
    fam = FamilySpec("x0 >= {theta_0}", [(0.1,), (0.6,)], negate=True)
    r = run_ci_smc(UniformSource(), fam, 0.5, 0.05, seed=2)
    assert r.outcome is Hypothesis.NULL
    r = run_ci_smc(UniformSource(), fam, 0.97, 0.05, seed=2)
    assert r.outcome is Hypothesis.ALT


def test_coverage_small():
    # true minimum 0.7 > p = 0.5
    outs = [run_ci_smc(UniformSource(), NESTED, 0.5, 0.05, seed=11, index=i).outcome
            for i in range(200)]
    assert outs.count(Hypothesis.NULL) / 200 >= 0.95
