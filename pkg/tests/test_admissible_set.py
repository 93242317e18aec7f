import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import sample_inside, scenario, small_system
from rotec import admissible_set as adm
from rotec import plant as pl
from rotec.errors import DesignError, HorizonOverflowError, InfeasibleTighteningError, InvalidInputError
from rotec.scheduler_sim import build_system


@pytest.fixture(scope="module")
def di_set(di_system):
    sys, ybar = di_system
    return sys, adm.build_admissible_set(sys, ybar, 0.01)


def lp_max(obj, A, b):
    res = linprog(-obj, A_ub=A, b_ub=b, bounds=[(None, None)] * obj.size, method="highs")
    assert res.status == 0
    return -res.fun


def assert_extra_rows_redundant(sys, aset, extra=50):
    """Brute-force oracle: every prediction row past s* is implied by the kept rows."""
    A = np.hstack([aset.C, aset.H])
    for i in range(sys.n_out):
        for s in range(aset.s_star + 1, aset.s_star + extra + 1):
            row = adm.prediction_row(sys, i, s, aset.ybar[i], aset.epsilon)
            val = lp_max(np.concatenate([row.c, row.h]), A, aset.b)
            assert val <= row.b + 1e-9 * max(1.0, abs(row.b)), (i, s, val, row.b)


def test_row_at_zero_horizon(di_system):
    sys, ybar = di_system
    for i in range(sys.n_out):
        row = adm.prediction_row(sys, i, 0, ybar[i])
        np.testing.assert_array_equal(row.c, sys.C[i])
        np.testing.assert_allclose(row.h, sys.D[i], atol=1e-15)


def test_row_hand_multiplication(di_system):
    sys, ybar = di_system
    row = adm.prediction_row(sys, 0, 1, ybar[0])
    np.testing.assert_allclose(row.c, sys.C[0] @ sys.A_c, atol=1e-14)
    np.testing.assert_allclose(row.h, sys.C[0] @ sys.B @ sys.G + sys.D[0], atol=1e-14)


def test_steady_state_row_is_limit(di_system):
    sys, ybar = di_system
    for i in range(sys.n_out):
        h200 = adm.prediction_row(sys, i, 200, ybar[i]).h
        hinf = adm.prediction_row(sys, i, adm.INF_HORIZON, ybar[i]).h
        assert np.linalg.norm(hinf - h200) <= 1e-8


def test_di_s_star_redundancy(di_set):
    sys, aset = di_set
    assert aset.s_star >= 1
    assert_extra_rows_redundant(sys, aset)


def test_vehicle_s_star_redundancy(vehicle_setup):
    assert_extra_rows_redundant(vehicle_setup.sys, vehicle_setup.aset)


def test_deadbeat_horizon():
    sys, ybar = build_system(scenario("deadbeat"))
    assert np.allclose(np.linalg.matrix_power(sys.A_c, 2), 0)
    assert adm.compute_s_star(sys, ybar) <= 1


def test_row_count_and_nonzero_h(di_set, vehicle_setup):
    for aset in (di_set[1], vehicle_setup.aset, vehicle_setup.problem.aset):
        assert aset.n_rows == aset.n_out * (aset.s_star + 2)


def test_h_matches_markov_sum(di_set, vehicle_setup):
    # h_s = D_i + sum_{j<s} C_i A_c^j B G; a row is flat only when the command cannot reach output i
    # within s samples (s = 0 with D_i = 0, or the input delay), or has zero DC gain (steady-state row)
    for sys, aset in ((di_set[0], di_set[1]), (vehicle_setup.sys, vehicle_setup.aset)):
        dc = sys.C @ np.linalg.solve(np.eye(sys.nz) - sys.A_c, sys.B @ sys.G) + sys.D
        for j in range(aset.n_rows):
            i, s = aset.output_index[j], aset.horizon[j]
            if s == adm.INF_HORIZON:
                ref = dc[i]
            else:
                ref = sys.D[i] + sum((sys.C[i] @ np.linalg.matrix_power(sys.A_c, k) @ sys.B @ sys.G
                                      for k in range(s)), np.zeros(sys.n_cmd))
            assert np.allclose(aset.H[j], ref, rtol=1e-9, atol=1e-13)
            if np.linalg.norm(ref) > 1e-12:
                assert np.linalg.norm(aset.H[j]) > 1e-12


def test_horizon_cap():
    # lightly damped oscillator: predictions keep overshooting for many samples
    c, s = 0.995 * math.cos(0.05), 0.995 * math.sin(0.05)
    dp = pl.DiscretePlant([[c, -s], [s, c]], [[1.0], [0.0]], 1.0)
    K, G = pl.design_tracking_gains(dp, [[1.0, 0.0]], [[0.0]], {"open_loop": True})
    sys = pl.augment(dp, K, G, [[1.0, 0.0], [-1.0, 0.0]], np.zeros((2, 1)))
    with pytest.raises(HorizonOverflowError) as err:
        adm.compute_s_star(sys, [1.0, 1.0], cap=5)
    assert err.value.output is not None


def test_unobservable_rejected():
    dp = pl.DiscretePlant(np.eye(2) * 0.5, [[1.0], [1.0]], 1.0)
    sys = pl.augment(dp, np.zeros((1, 3)), [[0.5]], [[1.0, 0.0]], [[0.0]])
    with pytest.raises(DesignError):
        adm.compute_s_star(sys, [1.0])


def test_tighten_bound_example(di_set):
    _, aset = di_set
    t = adm.tighten(aset, 1e5)
    j = aset.row_index(0, 0)
    assert t.effective_bounds()[j] == pytest.approx(aset.b[j] - 1e-5, abs=1e-15)
    assert aset.b[j] == pytest.approx(0.1)
    # ybar = 1 case: bound 0.99999
    _, box = small_system()
    assert adm.tighten(box, 1e5).effective_bounds()[0] == pytest.approx(0.99999, abs=1e-15)


def test_zero_margin_is_plain_inequality(di_set):
    _, aset = di_set
    t = adm.tighten(aset, 1e3)
    rng = np.random.default_rng(0)
    for _ in range(2000):
        z, v = rng.uniform(-0.3, 0.3, 3), rng.uniform(-1, 1, 1)
        f = adm.residuals(t, z, v)
        assert adm.contains(t, z, v, 0.0) == bool(np.all(f <= 0))


def test_infeasible_tightening():
    sys, _ = build_system(scenario("deadbeat"))
    thin = adm.build_admissible_set(sys, [1e-6, 1e-6], 0.01)
    assert adm.interior_margin(thin) < 1e-5
    with pytest.raises(InfeasibleTighteningError) as err:
        adm.tighten(thin, 1e5)
    assert err.value.required == pytest.approx(1e-5)


def test_tighten_rejects_bad_parameters(di_set):
    _, aset = di_set
    with pytest.raises(InvalidInputError):
        adm.tighten(aset, 0.0)
    with pytest.raises(InvalidInputError):
        adm.tighten(aset, 1e5, -1.0)


def test_origin_interior():
    _, aset = small_system()
    t = adm.tighten(aset, 1e5)
    f = adm.residuals(t, np.zeros(aset.nz), np.zeros(1))
    # box rows have b = ybar = 1 (or 1.5), steady rows (1 - eps) ybar
    np.testing.assert_allclose(f, -t.b + 1e-5, atol=1e-15)
    assert adm.contains(t, np.zeros(aset.nz), np.zeros(1))


def test_boundary_case():
    _, aset = small_system()
    t = adm.tighten(aset, 1e5, 1e-3)
    z = np.zeros(aset.nz)
    # steady-state row of output 0 reads h v <= 0.95 - 1e-5
    j = aset.row_index(0, adm.INF_HORIZON)
    v = np.array([(t.b[j] - t.shift) / t.H[j, 0]])
    assert adm.residuals(t, z, v)[j] == pytest.approx(0.0, abs=1e-15)
    assert adm.contains(t, z, v * (1 - 1e-12), 0.0)
    assert not adm.contains(t, z, v * (1 - 1e-12), 1e-3)


def test_contains_matches_direct_inequalities(vehicle_setup):
    t = vehicle_setup.problem.aset
    rng = np.random.default_rng(1)
    for _ in range(10000):
        z = rng.normal(size=t.nz) * [0.05, 0.3, 0.3, 0.3, 100.0]
        v = rng.uniform(-300, 300, 1)
        direct = all(t.C[j] @ z + t.H[j] @ v <= t.b[j] - 1.0 / t.beta for j in range(t.n_rows))
        assert adm.contains(t, z, v) == direct


def test_positive_invariance(vehicle_setup, di_setup):
    rng = np.random.default_rng(2)
    for setup, box, cbox in ((vehicle_setup, 0.5, 200.0), (di_setup, 0.5, 1.0)):
        sys, t = setup.sys, setup.problem.aset
        bad = 0
        for _ in range(5000):
            z, v = sample_inside(rng, t, box=box, cmd_box=cbox)
            z[-1] = rng.uniform(-cbox, cbox) if sys.nz == 5 else z[-1]
            if not adm.contains(t, z, v):
                continue
            zn = pl.step(sys, z, pl.control(sys, z, v))
            bad += not adm.contains(t, zn, v, -1e-9)
        assert bad == 0


def test_extended_rows_never_shrink(di_set):
    sys, aset = di_set
    ext = adm.build_admissible_set(sys, aset.ybar, aset.epsilon, s_star=aset.s_star + 50)
    rng = np.random.default_rng(4)
    for _ in range(5000):
        z, v = rng.uniform(-0.5, 0.5, 3), rng.uniform(-1, 1, 1)
        if adm.contains(aset, z, v):
            assert np.all(adm.residuals(ext, z, v) <= 1e-12)


def test_save_load_round_trip(tmp_path, di_set, vehicle_setup):
    for aset in (di_set[1], vehicle_setup.problem.aset):
        path = tmp_path / "set.txt"
        adm.save(aset, path)
        assert adm.sets_equal(adm.load(path), aset)


def test_load_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("hello\n")
    with pytest.raises(InvalidInputError):
        adm.load(path)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 0.95), st.floats(0.1, 2.0), st.floats(0.005, 0.2))
def test_scalar_set_horizon_is_redundant(a, ybar, eps):
    dp = pl.DiscretePlant([[a]], [[1.0]], 1.0)
    K, G = pl.design_tracking_gains(dp, [[1.0]], [[0.0]], {"open_loop": True})
    sys = pl.augment(dp, K, G, [[1.0], [-1.0]], np.zeros((2, 1)))
    aset = adm.build_admissible_set(sys, [ybar, ybar], eps)
    assert aset.n_rows == 2 * (aset.s_star + 2)
    assert_extra_rows_redundant(sys, aset, extra=10)
