import csv
import filecmp
import xml.etree.ElementTree as ET

import pytest
import yaml

from xdcpipe.analysis import (
    SweepConfig,
    best_schedule,
    bubble_stride_demo,
    compare_schedules,
    delay_sweep,
    family_problem,
    load_sweep_config,
    memory_tradeoff,
    normalize_any_family,
    render_gantt,
    with_delay_ratios,
    write_sweep_csv,
)
from xdcpipe.analysis.sweep import SWEEP_COLUMNS, sweep_table
from xdcpipe.core.types import OpRecord, Timeline
from xdcpipe.patterns import build_graph
from xdcpipe.simulator import simulate
from xdcpipe.static_schedules import build_static
from conftest import two_dc, uniform_problem

GRID = [0.0, 0.5, 1.0, 2.0]
UD_FAMILIES = ("1F1B", "ZBH1", "CrossUD", "CrossUDSub")
WAVE_FAMILIES = ("ZBV", "CrossWave")


def sweep_base():
    return uniform_problem(n_pp=4, n_mb=8, dc_of_stage=two_dc(4))


@pytest.fixture(scope="module")
def sweep_rows():
    config = SweepConfig(base=sweep_base(), lat_ratios=GRID, bw_ratios=GRID)
    return sweep_table(delay_sweep(config))


def span(table, family, point):
    row = table[family][point]
    assert row.error is None, row.error
    return row.makespan


@pytest.mark.slow
def test_sweep_reference_cell(sweep_rows):
    assert sweep_rows["ZBV"][(0.0, 0.0)].slowdown == 1.0
    assert len(sweep_rows) == 7
    assert all(len(cells) == 16 for cells in sweep_rows.values())


@pytest.mark.slow
def test_wave_best_without_delay(sweep_rows):
    wave = min(span(sweep_rows, f, (0.0, 0.0)) for f in WAVE_FAMILIES)
    assert all(wave <= span(sweep_rows, f, (0.0, 0.0)) for f in UD_FAMILIES)


@pytest.mark.slow
def test_ud_best_under_heavy_delay(sweep_rows):
    ud = min(span(sweep_rows, f, (2.0, 2.0)) for f in UD_FAMILIES)
    assert all(ud <= span(sweep_rows, f, (2.0, 2.0)) for f in WAVE_FAMILIES)


@pytest.mark.slow
def test_loop_most_delay_sensitive(sweep_rows):
    for lat in GRID:
        for bw in GRID:
            if lat == bw == 0.0:
                continue
            loop = span(sweep_rows, "IV1F1B", (lat, bw))
            assert loop >= min(span(sweep_rows, f, (lat, bw)) for f in WAVE_FAMILIES)
            assert loop >= min(span(sweep_rows, f, (lat, bw)) for f in UD_FAMILIES)


@pytest.mark.slow
def test_greedy_sub_blocks_track_exact(sweep_rows):
    close = 0
    for point, row in sweep_rows["CrossUDSub"].items():
        exact = span(sweep_rows, "CrossUD", point)
        if (row.makespan - exact) / exact <= 0.05:
            close += 1
    assert close >= 0.8 * len(sweep_rows["CrossUDSub"])


def test_sweep_csv(tmp_path):
    config = SweepConfig(base=sweep_base(), families=["1F1B", "zbh1", "ZBV"], lat_ratios=[0, 1], bw_ratios=[0])
    rows = delay_sweep(config, workers=1)
    path = tmp_path / "sweep.csv"
    write_sweep_csv(rows, str(path))
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == SWEEP_COLUMNS
        records = list(reader)
    assert [(r["family"], r["lat_ratio"]) for r in records] == [
        ("1F1B", "0.0"), ("1F1B", "1.0"), ("ZBH1", "0.0"), ("ZBH1", "1.0"), ("ZBV", "0.0"), ("ZBV", "1.0"),
    ]
    zbv = next(r for r in records if r["family"] == "ZBV" and r["lat_ratio"] == "0.0")
    assert float(zbv["slowdown"]) == 1.0
    assert all(r["error"] == "" for r in records)


def test_sweep_records_failed_cells():
    config = SweepConfig(base=uniform_problem(n_pp=4, n_mb=6, dc_of_stage=two_dc(4)),
                         families=["IV1F1B", "ZBV"], lat_ratios=[0], bw_ratios=[0])
    rows = {r.family: r for r in delay_sweep(config, workers=1)}
    assert "divisible" in rows["IV1F1B"].error
    assert rows["IV1F1B"].makespan is None
    assert rows["ZBV"].slowdown == 1.0


def test_sweep_config_validation():
    with pytest.raises(ValueError, match="reference family"):
        SweepConfig(base=sweep_base(), families=["1F1B"])
    with pytest.raises(ValueError, match="non-negative"):
        SweepConfig(base=sweep_base(), lat_ratios=[-1.0])
    config = SweepConfig(base=uniform_problem(n_pp=4, n_mb=8), n_dp=3)
    assert config.epsilon == 2
    assert config.global_batch_size == 24


def test_load_sweep_config(tmp_path):
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump({
        "base": {"n_pp": 2, "n_mb": 4, "t_f": 1.0, "t_d": 1.0, "t_w": 1.0},
        "families": "1f1b, zbv",
        "lat_ratios": [0, 0.5],
    }))
    config = load_sweep_config(str(path))
    assert config.families == ["1F1B", "ZBV"]
    assert config.lat_ratios == [0, 0.5]


def test_family_names():
    assert normalize_any_family("cross-ud-sub") == "CrossUDSub"
    assert normalize_any_family("cross_wave") == "CrossWave"
    with pytest.raises(ValueError, match="unknown schedule family"):
        normalize_any_family("gpipe")


def test_family_problem_keeps_stage_work():
    base = uniform_problem(n_pp=2, n_mb=4, m_limit=3.0)
    wave = family_problem(base, "CrossWave")
    assert (wave.pattern, wave.n_chunks) == ("Wave", 2)
    assert wave.t_f == [[0.5, 0.5], [0.5, 0.5]]
    assert wave.m_f == [[0.5, 0.5], [0.5, 0.5]]
    assert family_problem(base, "1F1B") is base


def test_delay_ratios_scale_with_forward_time():
    spec = with_delay_ratios(uniform_problem(n_pp=4, n_mb=4, t=2.0, dc_of_stage=two_dc(4), msg_fwd=4.0), 0.5, 1.5)
    assert spec.comm_delays(1, 2, 4.0) == pytest.approx((1.0, 3.0))
    assert spec.comm_delays(0, 1, 4.0) == (0.0, 0.0)
    with pytest.raises(ValueError, match="non-negative"):
        with_delay_ratios(spec, -1.0, 0.0)


def test_compare_ranks_families():
    base = with_delay_ratios(uniform_problem(n_pp=4, n_mb=6, dc_of_stage=two_dc(4)), 1.0, 1.0)
    rows = compare_schedules(base, families=["1F1B", "ZBH1", "IV1F1B", "CrossUDSub"], n_sub=2)
    assert rows[-1].family == "IV1F1B" and rows[-1].error
    spans = [r.makespan for r in rows[:-1]]
    assert spans == sorted(spans)
    assert best_schedule(rows) is rows[0]
    with pytest.raises(ValueError, match="no schedule family"):
        best_schedule(rows[-1:])


def test_memory_tradeoff():
    config = SweepConfig(base=sweep_base(), epsilons=[1, 2], budget_factors=[1.0, 2.0], n_sub=2, n_dp=2)
    rows = memory_tradeoff(config)
    assert [(r.epsilon, r.budget_factor) for r in rows] == [(1, 1.0), (1, 2.0), (2, 1.0), (2, 2.0)]
    assert [r.global_batch_size for r in rows] == [8, 8, 16, 16]
    for r in rows:
        assert r.error is None
        assert r.peak_memory <= r.budget_factor * 4 + 1e-9
        assert r.time_per_microbatch == pytest.approx(r.makespan / (r.epsilon * 4))


def rects(path):
    root = ET.parse(path).getroot()
    return [el for el in root.iter() if el.tag.endswith("rect") and "block" in el.get("class", "")]


def test_gantt_one_rect_per_block(tmp_path):
    spec = uniform_problem(n_pp=4, n_mb=8)
    timeline = simulate(build_graph(spec), build_static(spec, "1F1B"), spec)
    path = render_gantt(timeline, spec, str(tmp_path / "a.svg"))
    blocks = rects(path)
    assert len(blocks) == 96
    assert {b.get("class") for b in blocks} == {"block F", "block D", "block W"}


def test_gantt_is_deterministic(tmp_path):
    spec = uniform_problem(n_pp=4, n_mb=4, dc_of_stage=two_dc(4), beta=0.5, msg_fwd=1.0, msg_bwd=1.0)
    timeline = simulate(build_graph(spec), build_static(spec, "1F1B"), spec)
    first = render_gantt(timeline, spec, str(tmp_path / "a.svg"))
    second = render_gantt(timeline, spec, str(tmp_path / "b.svg"))
    assert filecmp.cmp(first, second, shallow=False)
    assert "dc-boundary" in open(first).read()
    assert any(b.get("class") == "block fwd" for b in rects(first))


def test_gantt_single_op_width(tmp_path):
    op = OpRecord(id=0, name="F:s0:c0:m0", kind="F", stage=0, start=0.0, end=1.0, available=1.0, mem_delta=1.0)
    path = render_gantt(Timeline(ops=[op], link_reservations={}, dc_of_stage=[0]), None, str(tmp_path / "one.svg"),
                        width=500)
    (block,) = rects(path)
    assert float(block.get("width")) == 500.0


def test_gantt_stage_mismatch(tmp_path):
    op = OpRecord(id=0, name="F:s0:c0:m0", kind="F", stage=0, start=0.0, end=1.0, available=1.0)
    timeline = Timeline(ops=[op], link_reservations={}, dc_of_stage=[0])
    with pytest.raises(ValueError, match="stages"):
        render_gantt(timeline, uniform_problem(n_pp=2, n_mb=2), str(tmp_path / "x.svg"))


def test_latency_accumulates_across_boundary(tmp_path):
    spec = uniform_problem(n_pp=16, n_mb=32, dc_of_stage=two_dc(16))
    report = bubble_stride_demo(spec, "1F1B", [0.0, 1.5], out_dir=str(tmp_path))
    zero, delayed = report.points
    assert delayed.makespan > zero.makespan + 1.5
    assert delayed.critical_crossings >= 2
    assert report.slope > 1.0
    assert all((tmp_path / f"1f1b_latency_{i}.svg").exists() for i in range(2))


def test_stride_slope_zero_between_zero_points():
    report = bubble_stride_demo(uniform_problem(n_pp=4, n_mb=8, dc_of_stage=two_dc(4)), "1F1B", [0.0, 0.0])
    assert report.slope == 0.0
    assert report.added_delay(1.0) == 0.0


def test_stride_needs_two_dcs():
    with pytest.raises(ValueError, match="2 DCs"):
        bubble_stride_demo(uniform_problem(n_pp=4, n_mb=8), "1F1B", [0.0, 1.0])
