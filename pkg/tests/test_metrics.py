import pytest
from hypothesis import given
from hypothesis import strategies as st

from dntwin.channels import Rat, RatProfile
from dntwin.metrics import (
    GainSample,
    PacketSetComparison,
    comparison_row,
    counts_csv,
    export_gain_trace,
    gain_trace,
    gain_trace_svg,
    los_intervals,
    packet_counts,
    prdr,
    prdr_csv,
)
from dntwin.reports import LosState
from dntwin.vanet import MobilityTrace, Scenario, StochasticBackend, dual_run, run_simulation
from scenes import scene_with

keys = st.frozensets(st.integers(0, 40))


def test_prdr_examples():
    assert prdr(s={1, 2}, r={1, 2}) == 0
    assert prdr(s={1}, r={2, 3}) == 1
    assert prdr(s={1, 2, 3}, r={2, 3, 4}) == 0.5
    assert prdr(s=set(), r=set()) == 0


@given(keys, keys)
def test_prdr_properties(s, r):
    v = prdr(s=s, r=r)
    assert 0 <= v <= 1
    assert v == prdr(s=r, r=s)
    if s | r:
        assert (v == 0) == (s == r)


def test_comparison_subset_invariant():
    with pytest.raises(ValueError):
        PacketSetComparison(frozenset({1}), frozenset(), frozenset())


def test_counts_empty_log():
    c = packet_counts([])
    assert (c.delivered, c.transmitted, c.per_link) == (0, 0, {})


def _free_space_logs(distance=10.0, duration=2.0):
    scene = scene_with(positions={1: (0, 0, 1.5), 2: (distance, 0, 1.5), 3: (0, distance, 1.5)})
    profile = RatProfile(Rat.WIFI_80211P, path_loss_exponent=2.0)
    return dual_run(Scenario(scene, MobilityTrace([]), profile, duration))


def test_counts_free_space_all_delivered():
    s_log, _ = _free_space_logs()
    c = packet_counts(s_log)
    assert c.delivered == c.transmitted == 3 * 20 * 2
    assert sum(d for d, _ in c.per_receiver().values()) == sum(v.delivered for p in s_log for v in p.verdicts.values())


def test_gain_trace_free_space_columns_agree():
    s_log, r_log = _free_space_logs()
    samples = gain_trace(s_log, r_log, (1, 2))
    assert len(samples) == 2 * 20
    for smp in samples:
        assert smp.gain_stochastic_db == pytest.approx(smp.gain_rt_db, abs=1e-6)
    assert len({smp.gain_rt_db for smp in samples}) == 1
    assert los_intervals(samples) == []
    with pytest.raises(KeyError):
        gain_trace(s_log, r_log, (1, 9))


def test_gain_trace_csv_layout():
    s_log, r_log = _free_space_logs()
    text = export_gain_trace(gain_trace(s_log, r_log, (2, 1)))
    lines = text.splitlines()
    assert lines[0] == "# dntwin gain-trace v1"
    assert lines[1] == "t,gain_stochastic_db,los_stochastic,gain_rt_db,los_rt"
    assert len(lines) == 2 + 40


def test_los_intervals_and_svg():
    L, N = LosState.LOS, LosState.NLOS
    states = [L, N, N, L, N]
    samples = [GainSample(float(i), -80.0, L, -90.0 - i, s) for i, s in enumerate(states)]
    assert los_intervals(samples) == [(1.0, 2.0), (4.0, 4.0)]
    svg = gain_trace_svg(samples)
    assert svg.startswith("<svg") and svg.count("<polyline") == 2 and svg.count('fill="#f4cccc"') == 2


def test_prdr_and_counts_csv():
    s_log, r_log = _free_space_logs()
    cmp = PacketSetComparison.from_logs(s_log, r_log)
    text = prdr_csv([comparison_row("wifi", "wifi-80211p", 5.89e9, cmp)])
    assert text.splitlines()[0] == "# dntwin prdr v1"
    assert text.splitlines()[2].endswith(",0,120,0.0")
    counts = counts_csv([("wifi", "rt", packet_counts(r_log))])
    assert counts.splitlines()[0] == "# dntwin packet-counts v1"
    assert len(counts.splitlines()) == 2 + 6


def test_from_logs_rejects_misaligned_runs():
    scene = scene_with(positions={1: (0, 0, 1.5), 2: (10, 0, 1.5)})
    p = RatProfile(Rat.WIFI_80211P)
    a = run_simulation(scene, MobilityTrace([]), p, StochasticBackend.from_scene(scene, p), 1.0)
    b = run_simulation(scene, MobilityTrace([]), p, StochasticBackend.from_scene(scene, p), 2.0)
    with pytest.raises(ValueError):
        PacketSetComparison.from_logs(a, b)
