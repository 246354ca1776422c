import json
import random

import pytest

from pfqsim.campaign import (
    CSV_HEADER,
    Campaign,
    GoldenRunCrashed,
    OutcomeClass,
    SweepGrid,
    export_report,
    golden_run,
    grid_for,
    import_report,
    load_campaign_config,
    sweep,
)
from pfqsim.faultengine import FaultPulse, ResponseCurve
from pfqsim.isa import assemble_text
from pfqsim.memhier import CacheConfig, InvalidConfiguration, cycles_to_ns
from pfqsim.scenarios import scenario_unmask

from oracles import random_straight_line, reordered_ordinals

BASE = 0x0800_0000


@pytest.fixture
def add_campaign(add_source):
    return Campaign(assemble_text(add_source), CacheConfig())


def test_golden_add_sequence(add_campaign):
    g = add_campaign.golden
    regs = g.final_state.regs
    assert regs[2] == 1 and regs[4] == 6 and regs[5:12] == (1,) * 7
    assert g.trace == tuple(range(1, 12))
    assert g.cycles == 29 and g.trigger_cycle == 0


def test_golden_bkpt_only():
    g = golden_run(assemble_text("bkpt #0\n"))
    assert g.final_state.regs[:15] == g.initial_state.regs[:15]
    assert g.final_state.halted


def test_golden_unmask_applies_masks_once():
    sc = scenario_unmask()
    g = golden_run(sc.program, values=sc.values, ram_init=sc.ram_init)
    from pfqsim.scenarios import UNMASK_MASKS, UNMASK_STATE

    for r, x, m in zip((1, 2, 3, 4), UNMASK_STATE, UNMASK_MASKS):
        assert g.final_state.regs[r] == x ^ m


def test_golden_crash_is_an_error():
    with pytest.raises(GoldenRunCrashed):
        golden_run(assemble_text("nop.w\n"))


def test_golden_trigger_label():
    g = golden_run(assemble_text(".nop32 5\ntrigger: nop.w\nbkpt #0\n"))
    # line 1: 6 wait + 4 nops; line 2: 6 wait + 1 nop before the label
    assert g.trigger_cycle == 6 + 4 + 6 + 1


def test_d_only_rejected(add_source):
    with pytest.raises(InvalidConfiguration):
        Campaign(assemble_text(add_source), CacheConfig(False, True))


def test_run_one_classes(add_campaign):
    c = add_campaign
    delay = c.delay_for_line(BASE + 16)
    assert c.run_one(FaultPulse(delay, 9.0, 1)).outcome is OutcomeClass.NORMAL
    out = c.run_one(FaultPulse(delay, 9.0, 1), force=True)
    assert out.outcome is OutcomeClass.MODEL_FAULT
    assert c.run_one(FaultPulse(0, 0, 0), force=True).outcome is OutcomeClass.CRASH
    assert c.run_one(FaultPulse(10_000, 0), force=True).outcome is OutcomeClass.NO_EFFECT


def test_first_refill_never_normal(add_source):
    for cfg in (CacheConfig(True, True), CacheConfig(False, False)):
        c = Campaign(assemble_text(add_source), cfg)
        assert c.run_one(FaultPulse(0, 0), force=True).outcome in (
            OutcomeClass.CRASH, OutcomeClass.OTHER_FAULT)


def test_last_line_fault_is_crash(add_campaign):
    delay = add_campaign.delay_for_line(BASE + 32)
    assert add_campaign.run_one(FaultPulse(delay, 0), force=True).outcome is OutcomeClass.CRASH


def test_straddling_instruction_is_other_fault():
    # a 16-bit lead-in makes add.w #4 straddle lines 1 and 2; its upper
    # halfword would come from the stale line, replacing the instruction
    src = "movs r0, #1\n" + "add.w r1, r1, #1\n" * 12 + "bkpt #0\n"
    c = Campaign(assemble_text(src), CacheConfig())
    delay = c.delay_for_line(BASE + 16)
    assert c.run_one(FaultPulse(delay, 0), force=True).outcome is OutcomeClass.OTHER_FAULT
    aligned = Campaign(assemble_text("movs r0, #1\nnop\n" + src.split("\n", 1)[1]))
    out = aligned.run_one(FaultPulse(aligned.delay_for_line(BASE + 16), 0), force=True)
    assert out.outcome is OutcomeClass.MODEL_FAULT


def test_model_fault_traces_are_predicted_reorderings():
    """Independent post-hoc check of every run labelled ModelFault."""
    rng = random.Random(9)
    checked = 0
    for _ in range(40):
        _, program = random_straight_line(rng, rng.randint(8, 24))
        c = Campaign(program, CacheConfig(), values={12: 0x2000_0000})
        for arm in range(0, c.golden.cycles + 1):
            out = c.execute(arm, True)
            if out.outcome is not OutcomeClass.MODEL_FAULT:
                continue
            line = out.result.fault_target.line_base
            assert out.result.ordinals(program) == reordered_ordinals(program, line)
            checked += 1
    assert checked > 50


def test_sweep_counts_sum_to_reps(add_campaign):
    grid = SweepGrid.build(delay_stop_ns=200, delay_step_ns=7, power_start_dbm=1,
                           power_stop_dbm=-4, power_step_dbm=1, reps=13)
    report = sweep(add_campaign, grid, seed=3)
    assert len(report.cells) == grid.n_cells
    for cell in report.cells:
        assert cell.n_runs == 13
        assert sum(cell.count(o) for o in OutcomeClass) == 13


def test_single_cell_certain_fault(add_campaign):
    curve = ResponseCurve(0.0, 1.0, 1.0, "flat")
    c = Campaign(add_campaign.program, CacheConfig(), curve=curve)
    grid = SweepGrid((c.delay_for_line(BASE + 16),), (0.0,), reps=1)
    cell = sweep(c, grid, 0).cells[0]
    assert cell.n_model_fault == 1 and cell.n_runs == 1


def test_sweep_deterministic_and_job_independent(add_campaign):
    grid = SweepGrid.build(delay_stop_ns=120, delay_step_ns=3, power_start_dbm=0, reps=40)
    a = sweep(add_campaign, grid, seed=11)
    b = sweep(add_campaign, grid, seed=11)
    c = sweep(add_campaign, grid, seed=11, jobs=3)
    assert a.cells == b.cells == c.cells
    assert sweep(add_campaign, grid, seed=12).cells != a.cells


def test_sweep_reuse_equals_full_simulation(add_campaign):
    grid = SweepGrid.build(delay_stop_ns=180, delay_step_ns=11, power_start_dbm=-1,
                           power_stop_dbm=-3, reps=15)
    assert sweep(add_campaign, grid, 5).cells == sweep(add_campaign, grid, 5, reuse=False).cells


def test_default_grid():
    on = SweepGrid.default(CacheConfig(True, True), 10)
    off = SweepGrid.default(CacheConfig(False, False), 10)
    assert on.powers_dbm[0] == 0.0 and off.powers_dbm[0] == 4.0
    assert on.powers_dbm[-1] == off.powers_dbm[-1] == -5.0
    assert on.powers_dbm[1] - on.powers_dbm[0] == -0.5
    assert on.delays_ns == tuple(range(11)) and on.reps == 500
    with pytest.raises(ValueError):
        SweepGrid((0,), (0.0,), reps=0)


def test_rate_is_unimodal_in_power(add_campaign):
    grid = SweepGrid.build(delay_start_ns=cycles_to_ns(1), delay_stop_ns=cycles_to_ns(10),
                           power_start_dbm=3, power_stop_dbm=-6, power_step_dbm=0.5, reps=500)
    rates = list(sweep(add_campaign, grid, 1).rate_by_power(pooled=True).values())
    smooth = [sum(rates[max(0, i - 1):i + 2]) / len(rates[max(0, i - 1):i + 2])
              for i in range(len(rates))]
    peak = smooth.index(max(smooth))
    assert all(a <= b + 0.02 for a, b in zip(smooth[:peak], smooth[1:peak + 1]))
    assert all(a >= b - 0.02 for a, b in zip(smooth[peak:], smooth[peak + 1:]))


def test_report_round_trip(add_campaign, tmp_path):
    grid = SweepGrid.build(delay_stop_ns=60, delay_step_ns=5, power_start_dbm=0,
                           power_stop_dbm=-2, reps=9)
    report = sweep(add_campaign, grid, 2)
    path = export_report(report, tmp_path / "r.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert len(lines) - 1 == grid.n_cells
    assert import_report(path) == report


def test_import_rejects_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n")
    with pytest.raises(ValueError):
        import_report(p)


def test_campaign_config_file(tmp_path, add_source):
    (tmp_path / "prog.s").write_text(add_source)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"program": "prog.s", "config": "i-only",
                               "grid": {"reps": 5, "delay_step_ns": 10},
                               "curve": {"peak_power_dbm": 3.0}, "seed": 4}))
    cc = load_campaign_config(cfg)
    assert cc.config == CacheConfig(True, False) and cc.seed == 4
    assert cc.curve.peak_power_dbm == 3.0
    cfg.write_text(json.dumps({"program": "x", "scenario": "y"}))
    with pytest.raises(ValueError):
        load_campaign_config(cfg)


def test_grid_for_defaults(add_campaign):
    grid = grid_for(add_campaign, {}, reps=2)
    assert grid.delays_ns[-1] == cycles_to_ns(29) and grid.powers_dbm[0] == 0.0
