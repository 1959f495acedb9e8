import itertools
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from privsmc import streams
from privsmc.models import BERNOULLI_ATOM, BernoulliOracle, TrafficSurrogate
from privsmc.sprt import (
    Hypothesis, SprtConfig, SprtState, counterexample_pair, k1_threshold, likelihood_ratio,
    run_bits, run_sprt, step,
)
from privsmc.stl import parse_stl

CFG = SprtConfig(0.5, 0.1, 0.01)


def test_config_validation():
    for bad in [(0.0, 0.1, 0.01), (0.5, 0.0, 0.01), (0.05, 0.1, 0.01), (0.95, 0.1, 0.01),
                (0.5, 0.1, 0.5), (0.5, 0.1, 0.0)]:
        with pytest.raises(ValueError):
            SprtConfig(*bad)
    with pytest.raises(ValueError):
        SprtConfig(0.5, 0.1, 0.01, cap=0)


def test_increments_and_bound():
    assert CFG.s_plus == pytest.approx(math.log(1.5))
    assert CFG.s_minus == pytest.approx(math.log(1.5))
    assert CFG.bound == pytest.approx(math.log(99))
    c = SprtConfig(0.3, 0.05, 0.05)
    assert c.s_plus == pytest.approx(math.log(0.35 / 0.25))
    assert c.s_minus == pytest.approx(math.log(0.75 / 0.65))


def test_likelihood_ratio_examples():
    assert likelihood_ratio(0, 0, CFG) == 1.0
    assert likelihood_ratio(1, 1, CFG) == pytest.approx(1.5, rel=1e-12)
    assert likelihood_ratio(0, 1, CFG) == pytest.approx(0.4 / 0.6, rel=1e-12)
    with pytest.raises(ValueError):
        likelihood_ratio(3, 2, CFG)


@pytest.mark.parametrize("p,delta", [(0.5, 0.1), (0.3, 0.05), (0.8, 0.15)])
def test_likelihood_ratio_against_product_form(p, delta):
    cfg = SprtConfig(p, delta, 0.05)
    for k, n in [(0, 3), (2, 5), (7, 7), (4, 11)]:
        direct = ((p + delta) ** k * (1 - p - delta) ** (n - k)
                  / ((p - delta) ** k * (1 - p + delta) ** (n - k)))
        assert likelihood_ratio(k, n, cfg) == pytest.approx(direct, rel=1e-12)


def test_step_examples():
    s = step(SprtState.start(CFG), True)
    assert s.log_ratio == pytest.approx(0.4054651081, abs=1e-10)
    s0 = step(SprtState.start(CFG), False)
    assert s0.log_ratio == pytest.approx(-math.log(1.5), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=400), st.sampled_from([CFG, SprtConfig(0.3, 0.05, 0.05)]))
def test_log_ratio_consistency(bits, cfg):
    s = SprtState.start(cfg)
    for b in bits:
        s = step(s, b)
        assert 0 <= s.k <= s.n
        assert abs(s.log_ratio - (s.k * cfg.s_plus - (s.n - s.k) * cfg.s_minus)) <= 1e-9
    assert math.exp(s.log_ratio) == pytest.approx(likelihood_ratio(s.k, s.n, cfg), rel=1e-12)


def test_degenerate_sources_stop_at_twelve():
    expected = math.ceil(math.log(99) / math.log(1.5))
    assert expected == 12
    r1 = run_sprt(BernoulliOracle(1.0), BERNOULLI_ATOM, CFG, seed=3)
    r0 = run_sprt(BernoulliOracle(0.0), BERNOULLI_ATOM, CFG, seed=3)
    assert (r1.outcome, r1.tau) == (Hypothesis.NULL, 12)
    assert (r0.outcome, r0.tau) == (Hypothesis.ALT, 12)


def test_decision_soundness_and_trajectory():
    cfg = SprtConfig(0.5, 0.05, 0.05)
    for i in range(50):
        r = run_sprt(BernoulliOracle(0.55), BERNOULLI_ATOM, cfg, seed=1, index=i)
        lam = r.k * cfg.s_plus - (r.tau - r.k) * cfg.s_minus
        if r.outcome is Hypothesis.NULL:
            assert likelihood_ratio(r.k, r.tau, cfg) >= (1 - cfg.alpha) / cfg.alpha * (1 - 1e-12)
            assert lam >= cfg.bound
        else:
            assert lam <= -cfg.bound
        # the generic monitoring loop sees the same draws as the fast path
        rt = run_sprt(BernoulliOracle(0.55), BERNOULLI_ATOM, cfg, seed=1, index=i, trajectory=True)
        assert (rt.outcome, rt.tau, rt.k) == (r.outcome, r.tau, r.k)
        assert len(rt.trajectory) == rt.tau and rt.trajectory[-1] == pytest.approx(lam, abs=1e-12)
        assert all(abs(x) < cfg.bound for x in rt.trajectory[:-1])


def test_table_regime_without_noise():
    cfg = SprtConfig(0.5, 0.01, 0.01)
    wins = sum(run_sprt(BernoulliOracle(0.64), BERNOULLI_ATOM, cfg, 0, i).outcome is Hypothesis.NULL
               for i in range(1000))
    assert wins / 1000 >= 0.99


def test_reproducible_per_index():
    a = run_sprt(BernoulliOracle(0.55), BERNOULLI_ATOM, CFG, seed=8, index=4)
    b = run_sprt(BernoulliOracle(0.55), BERNOULLI_ATOM, CFG, seed=8, index=4)
    assert a.to_json() == b.to_json()


def test_cap_gives_undecided():
    cfg = SprtConfig(0.5, 0.001, 0.001, cap=50)
    r = run_sprt(BernoulliOracle(0.5), BERNOULLI_ATOM, cfg)
    assert r.outcome is None and r.tau == 50
    d = r.to_dict()
    assert d["outcome"] == "undecided" and d["algorithm"] == "sprt-deterministic"
    assert d["rng"] == streams.RNG_ALGORITHM
    json.loads(r.to_json())


def test_negated_check_reports_in_the_original_frame():
    # !phi is tested against 1 - p; the verdict is mapped back to the claim about phi
    cfg = SprtConfig(0.5, 0.1, 0.01, negate=True)
    r = run_sprt(BernoulliOracle(0.2), BERNOULLI_ATOM, cfg, seed=2)
    plain = run_sprt(BernoulliOracle(0.2), BERNOULLI_ATOM, SprtConfig(0.5, 0.1, 0.01), seed=2)
    assert plain.outcome is Hypothesis.ALT
    # symmetric at p = 0.5: same walk mirrored, same verdict and time
    assert r.outcome is Hypothesis.ALT and r.tau == plain.tau
    cfg2 = SprtConfig(0.3, 0.05, 0.01, negate=True)
    assert cfg2.tested_config.p == pytest.approx(0.7)
    assert cfg2.tested_config.s_plus == pytest.approx(math.log(0.75 / 0.65))
    outs = [run_sprt(BernoulliOracle(0.1), BERNOULLI_ATOM, cfg2, 0, i).outcome for i in range(50)]
    assert outs.count(Hypothesis.ALT) >= 49
    outs = [run_sprt(BernoulliOracle(0.5), BERNOULLI_ATOM, cfg2, 0, i).outcome for i in range(50)]
    assert outs.count(Hypothesis.NULL) >= 49


def test_generic_source_path():
    m = TrafficSurrogate(13.0, 3.0, horizon=20)
    f = parse_stl("F[0,20] ((e < 0.20) & (e > -0.20))")
    r = run_sprt(m, f, SprtConfig(0.5, 0.05, 0.05), seed=0)
    assert r.outcome is not None and r.tau >= 1


# K1 and the counterexample ---------------------------------------------------


@pytest.mark.parametrize("cfg,k1", [
    (SprtConfig(0.5, 0.1, 0.01), 11),
    (SprtConfig(0.5, 0.1, 0.4999), 0),
    (SprtConfig(0.5, 0.3, 0.05), 2),
])
def test_k1_threshold(cfg, k1):
    assert k1_threshold(cfg) == k1
    assert k1 * cfg.s_plus < cfg.bound <= (k1 + 1) * cfg.s_plus


def test_k1_brute_force():
    for p, d, a in itertools.product([0.3, 0.5, 0.7], [0.02, 0.1, 0.2], [0.01, 0.05, 0.2]):
        cfg = SprtConfig(p, d, a)
        k = 0
        while ((p + d) / (p - d)) ** (k + 1) < (1 - a) / a:
            k += 1
        assert k1_threshold(cfg) == k


def test_counterexample_pair():
    first, second = counterexample_pair(CFG)
    a = list(itertools.islice(first, 200))
    b = list(itertools.islice(second, 200))
    assert sum(x != y for x, y in zip(a, b)) == 1 and a[11] != b[11]
    f, s = counterexample_pair(CFG)
    r1 = run_bits(f, CFG)
    assert (r1.outcome, r1.tau) == (Hypothesis.NULL, 12)
    for cap in (1000, 10**6):
        cfg = SprtConfig(0.5, 0.1, 0.01, cap=cap)
        _, s = counterexample_pair(cfg)
        r2 = run_bits(s, cfg)
        assert r2.outcome is None and r2.tau == cap
        assert abs(r2.tau - r1.tau) >= cap - 12


def test_run_bits_short_sequence():
    with pytest.raises(ValueError):
        run_bits([1, 0, 1], CFG)


def test_error_rates_small():
    cfg = SprtConfig(0.5, 0.05, 0.05)
    n = 500
    wrong_at_null = sum(run_sprt(BernoulliOracle(0.55), BERNOULLI_ATOM, cfg, 4, i).outcome
                        is Hypothesis.ALT for i in range(n))
    wrong_at_alt = sum(run_sprt(BernoulliOracle(0.45), BERNOULLI_ATOM, cfg, 5, i).outcome
                       is Hypothesis.NULL for i in range(n))
    limit = 0.05 + 3 * math.sqrt(0.05 / n)
    assert wrong_at_null / n <= limit and wrong_at_alt / n <= limit


def test_termination_with_drift():
    cfg = SprtConfig(0.5, 0.05, 0.05)
    outs = [run_sprt(BernoulliOracle(0.52), BERNOULLI_ATOM, cfg, 6, i).outcome for i in range(300)]
    assert None not in outs
