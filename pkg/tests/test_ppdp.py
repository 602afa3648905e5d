import pytest
import yaml
from pydantic import ValidationError

from xdcpipe.analysis import PPDPConfig, load_ppdp_config, pp_vs_dp, scaled_replica_check
from xdcpipe.analysis.ppdp import single_dc_time


def by_point(rows):
    return {(row.bandwidth, row.latency): row for row in rows}


def test_default_stage_time():
    config = PPDPConfig()
    assert config.stage_forward_time == pytest.approx(0.109)
    assert config.n_mb == 32
    assert config.message_bytes == 8192 * 16384 * 64 * 2
    assert config.dp_bytes == pytest.approx(2 * 406e9 * 2)


def test_problem_splits_dcs():
    spec = PPDPConfig().problem(bandwidth=8.0, latency=0.01, n_pp=4)
    assert spec.dc_of_stage == [0, 0, 1, 1]
    assert spec.n_mb == 8
    assert spec.comm_delays(1, 2, 0.0) == (0.01, 0.0)
    assert spec.comm_delays(0, 1, 1.0) == (0.0, 0.0)


def test_problem_without_link_is_single_dc():
    spec = PPDPConfig().problem()
    assert set(spec.dc_of_stage) == {0}


def test_problem_uneven_split():
    with pytest.raises(ValueError, match="split evenly"):
        PPDPConfig(n_dc=3).problem(bandwidth=4.0)


@pytest.mark.slow
def test_pp_beats_dp_on_slow_links():
    rows = by_point(pp_vs_dp(PPDPConfig(bandwidths=[4.0, 64.0])))
    assert rows[(4.0, 0.016)].speedup == pytest.approx(3.05, rel=0.15)
    assert rows[(64.0, 0.016)].slowdown_vs_single_dc == pytest.approx(1.3, rel=0.15)


@pytest.mark.slow
def test_speedup_shrinks_with_bandwidth():
    rows = pp_vs_dp(PPDPConfig(bandwidths=[4.0, 16.0, 64.0, 256.0]))
    speedups = [row.speedup for row in rows]
    assert all(b <= a + 1e-9 for a, b in zip(speedups, speedups[1:]))
    assert all(row.slowdown_vs_single_dc >= 1.0 - 1e-9 for row in rows)


@pytest.mark.slow
def test_pp_and_dp_even_on_fast_links():
    (row,) = pp_vs_dp(PPDPConfig(bandwidths=[1024.0]))
    assert row.speedup == pytest.approx(1.0, abs=0.05)


@pytest.mark.slow
def test_latency_hardly_matters_when_link_bound():
    rows = by_point(pp_vs_dp(PPDPConfig(bandwidths=[4.0, 16.0], latencies=[0.004, 0.128])))
    for bandwidth in (4.0, 16.0):
        fast, slow = rows[(bandwidth, 0.004)].t_pp, rows[(bandwidth, 0.128)].t_pp
        assert slow >= fast - 1e-9
        assert (slow - fast) / fast < 0.05


@pytest.mark.slow
def test_dp_time_accounts_for_allreduce():
    config = PPDPConfig(bandwidths=[8.0])
    (row,) = pp_vs_dp(config)
    expected = single_dc_time(config) + 2 * 0.016 + config.dp_bytes / 8e9
    assert row.t_dp == pytest.approx(expected)
    assert row.speedup == pytest.approx(row.t_dp / row.t_pp)


@pytest.mark.slow
def test_scaled_replica_greedy_near_exact():
    check = scaled_replica_check(PPDPConfig(), bandwidth=16.0, latency=0.016, n_pp=4)
    assert check.n_pp == 4
    assert check.exact <= check.greedy + 1e-9
    assert check.relative_gap >= -1e-9


def test_config_validation():
    with pytest.raises(ValidationError, match="positive"):
        PPDPConfig(bandwidths=[0.0])
    with pytest.raises(ValidationError, match="non-negative"):
        PPDPConfig(latencies=[-0.1])
    with pytest.raises(ValidationError, match="must not be empty"):
        PPDPConfig(latencies=[])
    with pytest.raises(ValidationError):
        PPDPConfig(n_pp=1)
    with pytest.raises(ValidationError):
        PPDPConfig(unknown_field=1)


def test_load_config(tmp_path):
    path = tmp_path / "ppdp.yaml"
    path.write_text(yaml.safe_dump({"n_pp": 8, "bandwidths": [4, 8], "latencies": [0.0]}))
    config = load_ppdp_config(str(path))
    assert config.n_pp == 8
    assert config.bandwidths == [4.0, 8.0]
    assert config.stage_forward_time == pytest.approx(0.218)


def test_load_config_missing(tmp_path):
    with pytest.raises(ValueError, match="not found"):
        load_ppdp_config(str(tmp_path / "nope.yaml"))
