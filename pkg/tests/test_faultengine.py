import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from pfqsim.faultengine import (
    DelayBeyondRun,
    FaultPulse,
    PredictionUnavailable,
    ResponseCurve,
    arm,
    default_curve,
    load_curve,
    predict,
    roll_fault,
    run_armed,
    save_curve,
    suppress_refill,
)
from pfqsim.isa import assemble_text
from pfqsim.memhier import CacheConfig, FetchPath, cycles_to_ns
from pfqsim.scenarios import scenario_add_sequence
from pfqsim.simulator import Simulator

BASE = 0x0800_0000


def test_default_curve_peaks():
    assert default_curve(CacheConfig(True, True)).peak_power_dbm == -1.7
    assert default_curve(CacheConfig(False, False)).peak_power_dbm == 4.5
    assert default_curve(CacheConfig(True, False)).peak_power_dbm == 4.5
    curve = default_curve(CacheConfig())
    assert curve(-1.7) == pytest.approx(0.96)
    assert curve.width_dbm == 3.0


@pytest.mark.parametrize("shape", ["triangular", "gaussian", "flat"])
def test_curve_unimodal_and_bounded(shape):
    curve = ResponseCurve(0.0, 0.9, 2.0, shape)
    values = [curve(d / 10) for d in range(0, 100)]
    assert all(0 <= v <= 0.9 for v in values)
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert curve(1.0) == curve(-1.0)


def test_curve_validation():
    with pytest.raises(ValueError):
        ResponseCurve(0, 1.5)
    with pytest.raises(ValueError):
        ResponseCurve(0, 0.5, 0)
    with pytest.raises(ValueError):
        ResponseCurve(0, 0.5, 1, "square")


def test_roll_zero_region_and_determinism():
    curve = ResponseCurve(0.0, 0.96, 0.5)
    assert not any(roll_fault(FaultPulse(0, 5.0, s), curve) for s in range(200))
    pulse = FaultPulse(10, 0.1, 1234)
    assert roll_fault(pulse, curve) == roll_fault(pulse, curve)


def test_roll_rate_at_peak():
    curve = default_curve(CacheConfig())
    hits = sum(roll_fault(FaultPulse(0, -1.7, s), curve) for s in range(10_000))
    # binomial 3 sigma at n=10000, p=0.96 is about 0.0059
    assert abs(hits / 10_000 - 0.96) <= 0.01


def test_pulse_validation():
    with pytest.raises(ValueError):
        FaultPulse(-1, 0)
    with pytest.raises(ValueError):
        FaultPulse(0, 0, 2**64)
    assert FaultPulse(cycles_to_ns(10), 0).delay_cycles == 10


def test_arm_and_run(add_source):
    program = assemble_text(add_source)
    sim = Simulator(program)
    armed = arm(sim, FaultPulse(cycles_to_ns(3), -1.7), force=True)
    result = run_armed(armed)
    assert result.fault_fired and result.fault_target.line_base == BASE + 16
    with pytest.raises(DelayBeyondRun):
        run_armed(arm(sim, FaultPulse(10_000, -1.7), force=True))


def test_trigger_offsets_the_arm_cycle(add_source):
    sim = Simulator(assemble_text(add_source))
    armed = arm(sim, FaultPulse(cycles_to_ns(2), 0), trigger_cycle=9, force=True)
    assert armed.arm_cycle == 11


def test_suppress_refill_leaves_payload(add_source):
    program = assemble_text(add_source)
    path = FetchPath(program)
    path.fetch_halfword(BASE, 0)
    before = path.pfq.payload
    suppress_refill(path, BASE + 16)
    assert path.pfq.base == BASE + 16 and path.pfq.payload == before
    hw, _, _ = path.fetch_halfword(BASE + 16, 5)
    assert hw == 0xF102  # i1's first halfword, served at i5's address
    assert path.source_of(BASE + 20) == BASE + 4


def test_predict_aligned_and_shifted():
    p0 = scenario_add_sequence(0)
    pred = predict(p0.program, BASE + 16)
    assert (pred.replayed, pred.skipped, pred.resume_at) == ((1, 2, 3, 4), (5, 6, 7, 8), 9)
    # class 1: three leading nop.w occupy ordinals 1-3, so i_k has ordinal k + 3
    p1 = scenario_add_sequence(1)
    pred = predict(p1.program, BASE + 32)
    assert pred.replayed == (5, 6, 7, 8) and pred.skipped == (9, 10, 11, 12)
    assert pred.resume_at == 13


def test_predict_sixteen_bit_line():
    program = assemble_text(".nop16 8\n.nop16 8\nbkpt #0\n")
    pred = predict(program, BASE + 16)
    assert pred.replayed == tuple(range(1, 9)) and pred.skipped == tuple(range(9, 17))
    assert pred.resume_at == 17


def test_predict_unavailable():
    with pytest.raises(PredictionUnavailable):
        predict(assemble_text("nop.w\nnop.w\nnop.w\nb x\nx: nop.w\n.nop32 3\n"), BASE + 16)
    with pytest.raises(PredictionUnavailable):
        predict(assemble_text(".nop32 4\n.nop16 2\n.nop32 3\n"), BASE + 16)
    with pytest.raises(PredictionUnavailable):
        predict(assemble_text(".nop32 8\n"), BASE)
    with pytest.raises(ValueError):
        predict(assemble_text(".nop32 8\n"), BASE + 4)


def test_prediction_reorder():
    pred = predict(scenario_add_sequence(0).program, BASE + 16)
    assert pred.reorder(list(range(1, 12))) == [1, 2, 3, 4, 1, 2, 3, 4, 9, 10, 11]


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 6))
def test_prediction_windows_are_one_line(line_no):
    program = assemble_text(".nop32 28\n")
    pred = predict(program, program.line_address(line_no))
    assert len(pred.replayed) * 4 == 16 == len(pred.skipped) * 4
    assert pred.resume_at == pred.skipped[-1] + 1


def test_curve_file_round_trip(tmp_path):
    curve = ResponseCurve(2.0, 0.5, 1.5, "gaussian")
    path = tmp_path / "curve.json"
    save_curve(curve, path)
    assert load_curve(path) == curve
    path.write_text(json.dumps({"peak_power_dbm": 1, "colour": "red"}))
    with pytest.raises(ValueError):
        load_curve(path)


def test_forced_curve():
    f = ResponseCurve(0.0).forced()
    assert f(100.0) == 1.0 and f(-100.0) == 1.0
    assert math.isinf(f.width_dbm)
