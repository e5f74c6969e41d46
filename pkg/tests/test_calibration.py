import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mzimesh.calibration import (
    AVERAGING,
    EXACT,
    InterferenceCondition,
    argmin_theta,
    averaged_transmission,
    calibration_plan,
    closed_form_shift,
    measurement_point_count,
    simulate_calibration,
    transmission,
    truncated_average_error,
    two_stage_transmission,
)
from mzimesh.mzi import VoltagePhaseModel
from mzimesh.propagation import MeshState, propagate_fields
from mzimesh.topology import build

PI = np.pi
GRID = np.linspace(-PI, PI, 400_001)


def dense_argmin(values):
    return GRID[int(np.argmin(values))]


def test_dark_bottom_is_sin_squared():
    th = np.linspace(-3, 3, 13)
    assert np.allclose(transmission(th, InterferenceCondition()), np.sin(th / 2) ** 2)
    assert abs(argmin_theta(lambda t: transmission(t, InterferenceCondition()))) < 1e-9


def test_leak_shift_examples():
    c20 = InterferenceCondition.from_ratio_db(-20)
    x = argmin_theta(lambda t: transmission(t, c20))
    assert x == pytest.approx(-2 * math.atan(0.1), abs=1e-9)
    assert abs(abs(x) - 0.06 * PI) < 0.01 * PI
    c10 = InterferenceCondition.from_ratio_db(-10, PI)
    y = argmin_theta(lambda t: transmission(t, c10))
    assert y == pytest.approx(2 * math.atan(math.sqrt(0.1)), abs=1e-9)
    assert y / PI == pytest.approx(0.195, abs=1e-3)
    assert abs(y - 0.18 * PI) < 0.02 * PI
    assert closed_form_shift(0.1, PI) == pytest.approx(y, abs=1e-9)


def test_full_span_average_is_error_free():
    for db in (-30, -10, -3, -1):
        c = InterferenceCondition.from_ratio_db(db, 0.7)
        assert abs(argmin_theta(lambda t: averaged_transmission(t, c))) < 1e-6
        th = np.linspace(-3, 3, 7)
        assert np.allclose(averaged_transmission(th, c),
                           np.sin(th / 2) ** 2 + c.ratio * np.cos(th / 2) ** 2, atol=1e-12)
    with pytest.raises(ValueError):
        averaged_transmission(0.0, InterferenceCondition(), span=0)


def oracle_truncated(ratio_db, span):
    """Worst start phase, closed-form mean of the transmission, dense-grid argmin."""
    r = 10 ** (ratio_db / 10)
    s, c = np.sin(GRID / 2), np.cos(GRID / 2)
    worst = 0.0
    for d0 in np.linspace(0, 2 * PI, 181):
        mean_cos = (np.sin(d0 + span) - np.sin(d0)) / span
        worst = max(worst, abs(dense_argmin(s * s + r * c * c + 2 * np.sqrt(r) * s * c * mean_cos)))
    return worst


@pytest.mark.parametrize("span,paper", [(2 * PI - 0.4 * PI, 0.053), (2 * PI + 0.4 * PI, 0.036)])
def test_truncated_average(span, paper):
    got = truncated_average_error(-10, span)
    assert got == pytest.approx(oracle_truncated(-10, span), abs=1e-4)
    assert abs(got - paper * PI) < 0.005 * PI


def test_two_stage_examples():
    c = InterferenceCondition.from_ratio_db(-10, 0.3)
    assert abs(argmin_theta(lambda t: two_stage_transmission(t, PI, c))) < 1e-9
    th = np.linspace(-3, 3, 9)
    dark = InterferenceCondition()
    assert np.allclose(two_stage_transmission(th, 1.0, dark), np.sin(th / 2) ** 2 * np.sin(0.5) ** 2)
    # independent oracle: dense grid on the expanded expression
    c10 = InterferenceCondition.from_ratio_db(-10)
    expr = np.abs(np.exp(1j * GRID / 2) * np.sin(GRID / 2) * np.sin(0.55 * PI)
                  + np.cos(0.55 * PI) * np.sqrt(0.1)) ** 2
    got = argmin_theta(lambda t: two_stage_transmission(t, 1.1 * PI, c10))
    assert got == pytest.approx(dense_argmin(expr), abs=2e-5)
    assert abs(got) / PI == pytest.approx(0.03178, abs=1e-4)


def test_measurement_counts():
    m = VoltagePhaseModel()
    assert measurement_point_count(m) == 400
    assert measurement_point_count(m, dims=2) == 1600
    assert measurement_point_count(m, span_v=0.0) == 0
    assert measurement_point_count(VoltagePhaseModel(resolution=0.02)) == 200
    with pytest.raises(ValueError):
        measurement_point_count(m, dims=3)


def test_four_delta_samples_give_exact_average():
    c = InterferenceCondition.from_ratio_db(-10, 0.4)
    th = np.linspace(-3, 3, 11)
    d = 0.4 + np.arange(4) * PI / 2
    four = np.mean([transmission(th, InterferenceCondition.from_ratio_db(-10, x)) for x in d], axis=0)
    assert np.allclose(four, averaged_transmission(th, c), atol=1e-12)


@given(st.floats(0, 0.2), st.floats(0, 0.2))
def test_closed_form_and_monotone(r1, r2):
    lo, hi = sorted((r1, r2))
    c = InterferenceCondition(0.0, 10 * math.log10(hi) if hi > 0 else -math.inf)
    assert argmin_theta(lambda t: transmission(t, c)) == pytest.approx(closed_form_shift(hi), abs=1e-9)
    assert abs(closed_form_shift(lo)) <= abs(closed_form_shift(hi))


@given(st.floats(0, 2 * PI), st.floats(-30, 0))
def test_full_average_shift_invariant(d0, db):
    th = np.linspace(-3, 3, 5)
    a = averaged_transmission(th, InterferenceCondition.from_ratio_db(db, 0.0))
    b = averaged_transmission(th, InterferenceCondition.from_ratio_db(db, d0))
    assert np.allclose(a, b, atol=1e-12)


def test_bokun_plan_anchor():
    step = calibration_plan(build("bokun", 8)).step_for(16)
    assert step.light_input == "I'3" and step.detector_output == "O1"
    assert all(step.required_states[m] == "cross" for m in (12, 13, 14, 15))
    # 17 and 18 follow 16 and are not yet calibrated: they sit on the detection path
    assert {17, 18} <= set(step.downstream)
    assert all(step.required_states[m] in ("cross", "free") for m in (17, 18))
    assert step.classification == EXACT


def test_reck_plan_anchor():
    step = calibration_plan(build("reck", 8)).step_for(22)
    assert step.light_input == "I4"
    assert all(step.required_states[m] == "cross" for m in (19, 20, 21))
    assert {"I0", "I1", "I2", "I3"} <= set(step.dark_inputs)


@pytest.mark.parametrize("kind", ["reck", "clements", "diamond", "bokun"])
def test_plan_well_formed(kind):
    t = build(kind, 8)
    plan = calibration_plan(t)
    assert sorted(s.mzi_id for s in plan.steps) == list(range(1, t.n_mzi + 1))
    done = set()
    for s in plan.steps:
        assert set(s.dark_inputs) | {s.light_input} == set(t.main_inputs + t.aux_inputs)
        for m, st_ in s.required_states.items():
            assert m in done or st_ == "free"
        done.add(s.mzi_id)
    counts = plan.classification_counts()
    if kind in ("diamond", "bokun"):
        assert counts[EXACT] == t.n_mzi
    if kind == "clements":
        assert counts[AVERAGING] > 0


@pytest.mark.parametrize("kind", ["diamond", "bokun"])
def test_plan_null_inputs_replay(kind, rng):
    """Replaying each step leaves the target's off-path input and every downstream off-path input dark."""
    t = build(kind, 8)
    for s in calibration_plan(t).steps:
        th = rng.uniform(0, 2 * PI, t.n_mzi)
        for m, st_ in s.required_states.items():
            if st_ != "free":
                th[m - 1] = 0.0 if st_ == "cross" else PI
        state = MeshState(t, th, rng.uniform(0, 2 * PI, t.n_mzi))
        x = np.zeros((1, t.n_ports), complex)
        x[0, t.row(t.port_wg(s.light_input))] = 1.0
        _, trace = propagate_fields(state, x, record=True)
        stage_of = {int(i) + 1: k for k, idx in enumerate(t.stages) for i in idx}
        pos_of = {int(i) + 1: j for k, idx in enumerate(t.stages) for j, i in enumerate(idx)}

        def inputs(m):
            a, b = trace[stage_of[m]]
            return a[0, pos_of[m]], b[0, pos_of[m]]

        a, b = inputs(s.mzi_id)
        tgt = t.mzi(s.mzi_id)
        off = b if s.entry_wg == tgt.top_wg else a
        assert abs(off) ** 2 < 1e-20
        assert abs(a) ** 2 + abs(b) ** 2 > 1e-6


def test_simulated_calibration_ideal_exact_meshes():
    for kind in ("diamond", "bokun"):
        rep = simulate_calibration(build(kind, 8), seed=1)
        assert rep.max_error < 0.005 * PI


def test_simulated_clements_residual_and_averaging(tmp_path):
    t = build("clements", 8)
    plain = simulate_calibration(t, seed=1, residual_db=-10)
    assert plain.max_error == pytest.approx(2 * math.atan(math.sqrt(0.1)), abs=0.005 * PI)
    assert abs(plain.max_error - 0.18 * PI) < 0.02 * PI
    avg = simulate_calibration(t, seed=1, residual_db=-10, averaging=True)
    assert avg.max_error < 0.01 * PI
    full = simulate_calibration(t, seed=1, averaging=True)
    assert full.max_error < 0.01 * PI
    full.write_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "mzi_id,true,recovered,abs_error"


def test_simulate_rejects_wrong_offsets():
    with pytest.raises(ValueError):
        simulate_calibration(build("bokun", 4), np.zeros(3))
