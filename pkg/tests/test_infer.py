import json
from dataclasses import replace

import numpy as np
import pytest

from enumeration import cr_paths, distribution, empirical, total_variation
from switchlab.design import DesignPolicy, lagged_outcome_balance_spec, run_experiment
from switchlab.estimate import sate_no_carryover
from switchlab.infer import impute_sharp_null, invert_test, randomization_pvalue
from switchlab.population import NoCarryoverOutcomes, make_ar1_first_order_carryover, make_ar1_no_carryover
from switchlab.streams import stream

SRSB = DesignPolicy("srsb", acceptance=0.05, balance=lagged_outcome_balance_spec())


@pytest.fixture(scope="module")
def small_traj():
    pop = make_ar1_no_carryover(12, 4, seed=2)
    return run_experiment(pop, SRSB, stream(1, 1))


def test_impute_examples(small_traj):
    tab = impute_sharp_null(small_traj, 0.0)
    assert np.array_equal(tab.y0, small_traj.Y) and np.array_equal(tab.y1, small_traj.Y)
    tab = impute_sharp_null(small_traj, 0.5)
    assert np.allclose(tab.y1 - tab.y0, 0.5)
    assert np.array_equal(tab.observe_path(small_traj.W), small_traj.Y)


def test_impute_hand_value():
    from switchlab.design import Trajectory
    W = np.array([[1], [0]], dtype=np.int8)
    traj = Trajectory(W, np.array([[2.0], [1.0]]), np.zeros((2, 1, 0)), np.full((1, 2), np.nan),
                      np.ones(1, dtype=np.int64), np.zeros(1, dtype=bool), "none", DesignPolicy("cr"))
    tab = impute_sharp_null(traj, 0.5)
    assert tab.y0[0, 0] == 1.5 and tab.y1[0, 0] == 2.0
    assert tab.y0[1, 0] == 1.0 and tab.y1[1, 0] == 1.5


def test_pvalue_formula_and_bounds(small_traj):
    res = randomization_pvalue(small_traj, 0.3, draws=39, rng=4)
    hits = int((np.abs(res.simulated) >= abs(res.observed)).sum())
    assert res.pvalue == (1 + hits) / 40
    assert 1 / 40 <= res.pvalue <= 1
    assert res.observed == sate_no_carryover(small_traj).estimate


def test_pvalue_extremes():
    # all-zero outcomes: every replicate statistic ties the observed one
    pop = NoCarryoverOutcomes(np.zeros((8, 3)), np.zeros((8, 3)))
    traj = run_experiment(pop, DesignPolicy("cr"), stream(0, 1))
    assert randomization_pvalue(traj, 0.0, draws=20, rng=0).pvalue == 1.0
    # a huge observed effect under a null of zero effect is never matched
    pop = make_ar1_no_carryover(40, 6, seed=1, effect=50.0)
    traj = run_experiment(pop, DesignPolicy("cr"), stream(0, 1))
    assert randomization_pvalue(traj, 0.0, draws=19, rng=0).pvalue == 1 / 20


def test_pvalue_deterministic_and_serializable(small_traj):
    a = randomization_pvalue(small_traj, 0.2, draws=25, rng=9)
    b = randomization_pvalue(small_traj, 0.2, draws=25, rng=9)
    assert a.pvalue == b.pvalue and np.array_equal(a.simulated, b.simulated)
    doc = json.loads(a.to_json())
    assert doc["pvalue"] == a.pvalue and len(doc["simulated"]) == 25


def test_pvalue_shift_invariant(small_traj):
    shifted = replace(small_traj, Y=small_traj.Y + 7.25)
    a = randomization_pvalue(small_traj, 0.1, draws=30, rng=3)
    b = randomization_pvalue(shifted, 0.1, draws=30, rng=3)
    assert a.pvalue == b.pvalue
    assert np.allclose(a.simulated, b.simulated)


def test_rejects_carryover_and_bad_draws(small_traj):
    pop = make_ar1_first_order_carryover(8, 3, seed=0)
    traj = run_experiment(pop, DesignPolicy("cr"), stream(0, 1))
    with pytest.raises(ValueError, match="carryover"):
        randomization_pvalue(traj, 0.0, draws=5)
    with pytest.raises(ValueError):
        randomization_pvalue(small_traj, 0.0, draws=0)
    with pytest.raises(ValueError):
        randomization_pvalue(small_traj, 0.0, draws=5, alternative="sideways")


def test_one_sided(small_traj):
    g = randomization_pvalue(small_traj, 0.0, draws=50, rng=2, alternative="greater")
    l = randomization_pvalue(small_traj, 0.0, draws=50, rng=2, alternative="less")
    assert np.array_equal(g.simulated, l.simulated)
    ties = int((g.simulated == g.observed).sum())
    assert g.pvalue + l.pvalue == pytest.approx((52 + ties) / 51)


def test_replay_matches_enumeration():
    pop = make_ar1_no_carryover(4, 2, seed=5)
    traj = run_experiment(pop, DesignPolicy("cr"), stream(0, 1))
    delta = 0.4
    table = impute_sharp_null(traj, delta)
    exact = distribution((sate_no_carryover(_traj(W, table)).estimate, p) for W, p in cr_paths(4, 2))
    res = randomization_pvalue(traj, delta, draws=10_000, rng=1)
    assert total_variation(empirical(res.simulated), exact) < 0.05


def _traj(W, table):
    from switchlab.design import Trajectory
    n, T = W.shape
    return Trajectory(W, table.observe_path(W), np.zeros((n, T, 0)), np.full((T, 2), np.nan),
                      np.ones(T, dtype=np.int64), np.zeros(T, dtype=bool), "none", DesignPolicy("cr"))


def test_invert_small_alpha_retains_all(small_traj):
    cs = invert_test(small_traj, None, np.linspace(-1, 1, 5), alpha=1 / 21 - 1e-9, draws=20, rng=0)
    assert np.array_equal(cs.retained, cs.grid)
    assert cs.resolution == pytest.approx(0.5)
    assert cs.bounds == (-1.0, 1.0)


def test_invert_validation(small_traj):
    with pytest.raises(ValueError):
        invert_test(small_traj, None, [], draws=5)
    with pytest.raises(ValueError):
        invert_test(small_traj, None, [1.0, 0.0], draws=5)


@pytest.mark.slow
def test_invert_retains_truth():
    pop = make_ar1_no_carryover(20, 4, seed=3, effect=0.3)
    pol = DesignPolicy("srsb", acceptance=0.05, balance=lagged_outcome_balance_spec())
    reps, kept, alpha = 100, 0, 0.1
    for r in range(reps):
        traj = run_experiment(pop, pol, stream(50, 1, r))
        cs = invert_test(traj, pol, [0.3], alpha=alpha, draws=39, rng=r)
        kept += cs.retained.size
    assert kept / reps >= 1 - alpha - 0.07
