import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from conftest import scenario
from rotec.errors import ConfigError, InvalidInputError
from rotec.scheduler_sim import (
    FishhookReference,
    FixedExec,
    PiecewiseReference,
    SineReference,
    TaskSet,
    TaskSpec,
    WeibullExec,
    governor_budget,
    make_reference,
    min_schedulable_period,
    performance_index,
    refined_performance_index,
    run_seeds,
    sample_exec_time,
    simulate,
    steps_for_budget,
    task_rngs,
    utilization,
)

PIVOTAL = WeibullExec(shape=2.0, location=0.020, scale=0.004, truncation=0.030)


def shared_tasks():
    return TaskSet((TaskSpec("pivotal", 0.030, 0.1, PIVOTAL), TaskSpec("governor", 0.1, 0.1, governor=True)))


def test_min_period_exact():
    assert min_schedulable_period(2, 0.2) == 2.5
    with pytest.raises(InvalidInputError):
        min_schedulable_period(1, 1.0)


def test_utilization_examples():
    assert utilization(TaskSet()) == (0.0, True)
    ts = TaskSet((TaskSpec("a", 1.0, 2.0), TaskSpec("b", 1.0, 2.0)))
    assert utilization(ts) == (1.0, True)
    ts = TaskSet((TaskSpec("a", 1.0, 2.0), TaskSpec("b", 1.1, 2.0)))
    assert not utilization(ts)[1]


def test_task_validation():
    with pytest.raises(InvalidInputError):
        TaskSpec("a", 0.2, 0.1)
    with pytest.raises(InvalidInputError):
        TaskSet((TaskSpec("a", 0.1, 0.1, governor=True), TaskSpec("b", 0.1, 0.1, governor=True)))
    with pytest.raises(InvalidInputError):
        WeibullExec(2.0, 0.02, 0.004, 0.01)


def test_weibull_lower_bound():
    assert PIVOTAL.quantile(0.0) == 0.020


def test_weibull_truncated_mean():
    pdf = lambda x: (2.0 / 0.004) * ((x - 0.020) / 0.004) * math.exp(-(((x - 0.020) / 0.004) ** 2))
    mass = integrate.quad(pdf, 0.020, 0.030)[0]
    mean = integrate.quad(lambda x: x * pdf(x), 0.020, 0.030)[0] / mass
    assert mean * 1e3 == pytest.approx(20 + 4 * math.gamma(1.5), abs=0.1)
    rng = np.random.default_rng(0)
    spec = TaskSpec("pivotal", 0.030, 0.1, PIVOTAL)
    x = np.array([sample_exec_time(spec, rng) for _ in range(100000)])
    assert abs(x.mean() - mean) * 1e3 <= 0.1
    assert x.max() <= 0.030 and x.min() >= 0.020


def test_budget_examples():
    alone = TaskSet((TaskSpec("governor", 0.1, 0.1, governor=True),))
    assert governor_budget(alone, 0, task_rngs(alone, 0)) == 0.1
    ts = shared_tasks()
    rngs = task_rngs(ts, 3)
    assert governor_budget(ts, 0, rngs, override=1e-5) == 1e-5
    budgets = [governor_budget(ts, k, rngs) for k in range(2000)]
    assert min(budgets) >= 0.070 and max(budgets) <= 0.080


def test_budget_dispatch_unequal_periods():
    ts = TaskSet((TaskSpec("fast", 0.01, 0.05, FixedExec(0.01)), TaskSpec("governor", 0.1, 0.1, governor=True)))
    # two 10 ms jobs of the 50 ms task fall due inside the 100 ms window
    assert governor_budget(ts, 4, task_rngs(ts, 0)) == pytest.approx(0.08, abs=1e-12)
    ts = TaskSet((TaskSpec("slow", 0.05, 0.2, FixedExec(0.05)), TaskSpec("governor", 0.1, 0.1, governor=True)))
    # the 200 ms task's deadline is later than the governor's, so it never preempts
    assert governor_budget(ts, 0, task_rngs(ts, 0)) == pytest.approx(0.1, abs=1e-12)


def test_task_streams_independent_and_reproducible():
    ts = shared_tasks()
    a = [rng.random() for rng in task_rngs(ts, 5)]
    b = [rng.random() for rng in task_rngs(ts, 5)]
    c = [rng.random() for rng in task_rngs(ts, 6)]
    assert a == b and a != c and a[0] != a[1]


@pytest.mark.parametrize(("budget", "cost", "steps"), [(0.0, 1e-3, 0), (-1.0, 1e-3, 0), (1e-5, 7.5e-3, 1),
                                                       (0.075, 7.5e-3, 10), (0.1, 1e-3, 100)])
def test_steps_for_budget(budget, cost, steps):
    assert steps_for_budget(budget, cost) == steps


def test_performance_index_closed_forms():
    r = np.ones((50, 2))
    assert performance_index(r, r, 0.1) == 0.0
    d = np.array([0.3, -0.4])
    assert performance_index(r + d, r, 0.1) == pytest.approx(0.25 * 5.0, rel=1e-12)
    with pytest.raises(InvalidInputError):
        performance_index(np.ones((3, 1)), np.ones((4, 1)), 0.1)


def test_refined_pi_constant_reference():
    ref = make_reference({"kind": "constant", "level": [2.0]})
    v = np.full((10, 1), 1.5)
    assert refined_performance_index(v, np.arange(10) * 0.1, 0.1, ref, 0.01) == pytest.approx(0.25, rel=1e-12)
    with pytest.raises(InvalidInputError):
        refined_performance_index(v, np.arange(10) * 0.1, 0.1, ref, 0.03)


def test_references():
    pw = PiecewiseReference([1.0, 2.0], [[3.0], [4.0]])
    assert pw.at(0.5)[0] == 0.0 and pw.at(1.0)[0] == 3.0 and pw.at(5.0)[0] == 4.0
    sine = SineReference(130.0, 3.0, 0.5)
    assert sine.at(0.2)[0] == 0.0 and sine.at(1.25)[0] == pytest.approx(130.0)
    with pytest.raises(ConfigError):
        make_reference({"kind": "square"})


def test_fishhook_switch_logic():
    fh = FishhookReference(steer=100.0, countersteer=-100.0, start=0.0, rate_index=0)
    # roll rate stays positive: no switch
    for k in range(5):
        assert fh.value(k, 0.1 * k, np.array([0.5 + k]))[0] == 100.0
    assert fh.switch_k is None
    # sign change between k = 5 and k = 6 switches from k = 6 on
    assert fh.value(6, 0.6, np.array([-0.1]))[0] == -100.0
    assert fh.switch_k == 6
    assert fh.value(7, 0.7, np.array([0.3]))[0] == -100.0
    fh.reset()
    assert fh.switch_k is None


def test_simulation_bit_reproducible(vehicle_setup):
    sc = scenario("vehicle_case3").with_(n_samples=40)
    a, b = simulate(sc, 11, vehicle_setup), simulate(sc, 11, vehicle_setup)
    for f in ("z", "v", "u", "y", "budget", "flow_steps", "accepted", "rejected"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert a.pi == b.pi and a.metadata == b.metadata
    assert not np.array_equal(a.budget, simulate(sc, 12, vehicle_setup).budget)


def test_zero_budget_run_closed_form(vehicle_setup):
    sc = scenario("vehicle_stress").with_(budget_override=0.0)
    tr = simulate(sc, 0, vehicle_setup)
    assert np.all(tr.v == 0.0) and tr.total_flow_steps == 0
    assert tr.pi == pytest.approx(90.0**2 * sc.n_samples * sc.delta_t, rel=1e-12)


def test_interior_constant_reference_converges(vehicle_setup):
    tr = simulate(scenario("vehicle_stress").with_(budget_override=None), 0, vehicle_setup)
    assert tr.violation_count == 0
    assert np.all(np.abs(tr.v[-100:] - 90.0) <= 1e-3)


def test_fishhook_single_switch_and_safe():
    sc = scenario("vehicle_fishhook")
    for tr in run_seeds(sc, range(5)):
        assert tr.metadata["switch_k"] is not None
        r = tr.r[:, 0]
        assert np.count_nonzero(np.diff(np.sign(r[r != 0]))) == 1
        assert tr.violation_count == 0 and np.max(np.abs(tr.y)) <= 1.0


def test_oracle_governor_run(vehicle_setup):
    tr = simulate(scenario("vehicle_case1").with_(n_samples=30), 0)
    assert tr.violation_count == 0 and np.all(tr.accepted) and tr.total_flow_steps == 0


def test_scenario_validation():
    sc = scenario("vehicle_case3")
    with pytest.raises(ConfigError):
        sc.with_(governor="magic")
    with pytest.raises(ConfigError):
        sc.with_(n_samples=0)
    with pytest.raises(ConfigError):
        sc.with_(A_d=[[1.0]])
    with pytest.raises(ConfigError):
        sc.with_(tasks=[{"id": "gov", "wcet": 0.2, "period": 0.2, "governor": True}]).task_set()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.2), st.floats(0.001, 0.05))
def test_budget_never_exceeds_period(wcet_frac, _):
    ts = TaskSet((TaskSpec("p", 0.1 * max(wcet_frac, 1e-3), 0.1, FixedExec(0.1 * wcet_frac)),
                  TaskSpec("governor", 0.1, 0.1, governor=True)))
    b = governor_budget(ts, 0, task_rngs(ts, 0))
    assert 0.0 <= b <= 0.1
    assert b == pytest.approx(0.1 - 0.1 * wcet_frac, abs=1e-15)
