import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dntwin.channels import Rat, RatProfile, friis_loss
from dntwin.metrics import PacketSetComparison, delivered_keys, gain_trace, los_intervals, prdr
from dntwin.protocol import ChannelClient, ChannelServer, ChannelService
from dntwin.raytracer import RtConfig
from dntwin.reports import NO_PATH_GAIN_DB, ChannelReport, LosState
from dntwin.scenario import load_scenario
from dntwin.vanet import (
    MobilityTrace,
    RayTracingBackend,
    RemoteBackend,
    Scenario,
    SimulationError,
    StochasticBackend,
    TraceError,
    decide_reception,
    dual_run,
    dump_mobility_trace,
    load_mobility_trace,
    run_simulation,
    schedule_cam_traffic,
)
from scenes import box, scene_with

WIFI = RatProfile(Rat.WIFI_80211P)


# --- mobility ------------------------------------------------------------------------------


def test_linear_interpolation():
    tr = load_mobility_trace("t,id,x,y,z\n0,1,0,0,1.5\n10,1,100,0,1.5\n")
    assert np.allclose(tr.position(1, 5.0), (50, 0, 1.5))
    assert np.allclose(tr.position(1, -3.0), (0, 0, 1.5))
    assert np.allclose(tr.position(1, 30.0), (100, 0, 1.5))


def test_static_sample_is_constant():
    tr = load_mobility_trace("# one sample\nt,id,x,y,z\n0,4,1,2,3\n")
    for t in (0, 1, 90):
        assert np.array_equal(tr.position(4, t), (1, 2, 3))


@pytest.mark.parametrize(
    "doc",
    [
        "t,id,x,y,z\n5,1,0,0,0\n2,1,1,0,0\n",
        "t,id,x,y\n0,1,0,0\n",
        "t,id,x,y,z\n0,1,a,0,0\n",
        "t,id,x,y,z\n0,1,0,0\n",
        "",
    ],
)
def test_trace_errors(doc):
    with pytest.raises(TraceError):
        load_mobility_trace(doc)


def test_trace_unknown_entity():
    scene = scene_with(positions={1: (0, 0, 1.5)})
    with pytest.raises(TraceError):
        load_mobility_trace("t,id,x,y,z\n0,2,0,0,1.5\n", scene)


def test_trace_round_trip():
    tr = load_mobility_trace("t,id,x,y,z\n0,1,0.1,0,1.5\n0,2,3,4,1.5\n2.5,1,9,0.3,1.5\n")
    assert load_mobility_trace(dump_mobility_trace(tr)).samples == tr.samples


# --- schedule --------------------------------------------------------------------------------


def test_stagger_example():
    ev = schedule_cam_traffic([0, 1], 1.0, 2.0)
    assert [(e.tx_id, e.t) for e in ev] == [(0, 0.0), (1, 0.5), (0, 1.0), (1, 1.5)]


def test_ninety_seconds_at_ten_hertz():
    ev = schedule_cam_traffic([1, 2], WIFI, 90.0)
    assert sum(e.tx_id == 1 for e in ev) == 900 and sum(e.tx_id == 2 for e in ev) == 900


def test_twenty_nodes_spacing():
    t = np.array([e.t for e in schedule_cam_traffic(range(20), 10.0, 3.0)])
    assert np.diff(t).min() == pytest.approx(1 / 200, abs=1e-12)
    assert len(set(t.tolist())) == len(t)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.sampled_from([1.0, 2.0, 5.0, 10.0]), st.integers(1, 30))
def test_schedule_count(n, rate, duration):
    ev = schedule_cam_traffic(range(n), rate, float(duration))
    assert len(ev) == n * rate * duration
    assert all(e.t < duration for e in ev)
    assert [(e.t, e.tx_id) for e in ev] == sorted((e.t, e.tx_id) for e in ev)


# --- reception -----------------------------------------------------------------------------


def test_reception_threshold():
    p = RatProfile(Rat.WIFI_80211P, tx_power=23.0, sensitivity=-92.0)
    assert decide_reception(ChannelReport(-103.0, 1e-7, LosState.LOS), p) == (True, -80.0)
    assert decide_reception(ChannelReport(-115.0, 1e-7, LosState.LOS), p) == (True, -92.0)
    assert decide_reception(ChannelReport(-115.5, 1e-7, LosState.NLOS), p)[0] is False
    hot = RatProfile(Rat.WIFI_80211P, tx_power=1000.0)
    assert decide_reception(ChannelReport.no_path(), hot)[0] is False


# --- runs ---------------------------------------------------------------------------------


def _static(distance):
    return scene_with(positions={1: (0, 0, 1.5), 2: (distance, 0, 1.5)}), MobilityTrace([])


def test_free_space_ten_metres_all_delivered():
    scene, trace = _static(10.0)
    log = run_simulation(scene, trace, WIFI, StochasticBackend.from_scene(scene, WIFI), 3.0)
    assert len(log) == 60
    assert all(v.delivered for p in log for v in p.verdicts.values())
    assert log[0].verdicts[2].pr_dbm == pytest.approx(23 - 77.8500891176254066, abs=1e-9)


def test_ten_kilometres_nothing_delivered():
    scene, trace = _static(1e4)
    log = run_simulation(scene, trace, WIFI, StochasticBackend.from_scene(scene, WIFI), 3.0)
    assert not any(v.delivered for p in log for v in p.verdicts.values())
    assert log[0].verdicts[2].pr_dbm == pytest.approx(23 - 167.850089117625407, abs=1e-9)


def _mobile():
    scene = scene_with(
        [box(-40, 40, 6, 26, 20), box(-40, 40, -26, -6, 20), box(-5, 5, -3, 3, 4)],
        {1: (-30, 0, 1.5), 2: (30, 0, 1.5), 3: (0, 4, 1.5)},
        ground=True,
    )
    trace = load_mobility_trace(
        "t,id,x,y,z\n0,1,-30,0,1.5\n0,2,30,0,1.5\n0,3,0,4,1.5\n2,1,-20,-4,1.5\n2,2,38,1,1.5\n2,3,0,-4,1.5\n", scene
    )
    return scene, trace


@pytest.mark.parametrize("rat", list(Rat))
def test_runs_are_deterministic(rat):
    scene, trace = _mobile()
    profile = RatProfile(rat, retransmissions=1)
    a = run_simulation(scene, trace, profile, StochasticBackend.from_scene(scene, profile, 3), 2.0)
    b = run_simulation(scene, trace, profile, StochasticBackend.from_scene(scene, profile, 3), 2.0)
    assert a == b


def test_rt_run_is_deterministic_and_wipes_on_moves():
    scene, trace = _mobile()
    backend = RayTracingBackend(scene, RtConfig(), WIFI.fc)
    a = run_simulation(scene, trace, WIFI, backend, 2.0)
    b = run_simulation(scene, trace, WIFI, RayTracingBackend(scene, RtConfig(), WIFI.fc), 2.0)
    assert a == b
    assert backend.cache.wipes == backend.service.stats.applied_moves > 0


def test_remote_backend_bit_identical_to_in_process():
    scene, trace = _mobile()
    local = run_simulation(scene, trace, WIFI, RayTracingBackend(scene, RtConfig(), WIFI.fc), 2.0)
    srv = ChannelServer(("127.0.0.1", 0), ChannelService(scene, RtConfig(), WIFI.fc))
    srv.start_background()
    try:
        with ChannelClient(srv.server_address, timeout=5.0) as client:
            remote = run_simulation(scene, trace, WIFI, RemoteBackend(client), 2.0)
    finally:
        srv.shutdown()
        srv.server_close()
    assert remote == local


@pytest.mark.parametrize("make", ["stochastic", "rt"])
def test_grouped_query_equals_individual_queries(make):
    scene, _ = _mobile()
    profile = RatProfile(Rat.NR_V2V)

    def backend():
        if make == "stochastic":
            return StochasticBackend.from_scene(scene, profile, 11)
        return RayTracingBackend(scene, RtConfig(), profile.fc)

    grouped = backend().query(1, [2, 3])
    single = backend()
    assert grouped == [single.query(1, [2])[0], single.query(1, [3])[0]]


def test_lower_sensitivity_never_loses_packets():
    scene, trace = _mobile()
    sets = []
    for sens in (-70.0, -80.0, -92.0, -100.0):
        profile = RatProfile(Rat.NR_V2V, sensitivity=sens, retransmissions=0)
        sets.append(delivered_keys(run_simulation(scene, trace, profile, StochasticBackend.from_scene(scene, profile, 5), 2.0)))
    assert all(a <= b for a, b in zip(sets, sets[1:]))


def test_retransmissions_requery():
    class Flaky:
        calls = 0

        def update_location(self, *_):
            pass

        def query(self, tx, rxs):
            self.calls += 1
            gain = -200.0 if self.calls % 3 else -60.0
            return [ChannelReport(gain, 1e-7, LosState.NLOS) for _ in rxs]

    scene, trace = _static(10.0)
    log = run_simulation(scene, trace, RatProfile(Rat.NR_V2V, retransmissions=2), Flaky(), 0.1)
    v = log[0].verdicts[2]
    assert v.delivered and v.attempts == 3


def test_backend_failure_carries_event_context():
    class Broken:
        def update_location(self, *_):
            pass

        def query(self, tx, rxs):
            raise OSError("link down")

    scene, trace = _static(10.0)
    with pytest.raises(SimulationError, match="seq=0") as info:
        run_simulation(scene, trace, WIFI, Broken(), 1.0)
    assert isinstance(info.value.__cause__, OSError)


def test_dual_run_free_space_equivalence():
    scene = scene_with(positions={1: (0, 0, 1.5), 2: (25, 0, 1.5), 3: (-140, 30, 1.5)})
    trace = load_mobility_trace("t,id,x,y,z\n0,1,0,0,1.5\n3,1,60,10,1.5\n", scene)
    profile = RatProfile(Rat.WIFI_80211P, path_loss_exponent=2.0, reference_distance=1.0)
    s_log, r_log = dual_run(Scenario(scene, trace, profile, 3.0))
    assert [p.packet_id for p in s_log] == [p.packet_id for p in r_log]
    for ps, pr in zip(s_log, r_log):
        for rx in ps.verdicts:
            assert ps.verdicts[rx].pr_dbm == pytest.approx(pr.verdicts[rx].pr_dbm, abs=1e-6)
    assert prdr(PacketSetComparison.from_logs(s_log, r_log)) == 0.0
    assert r_log[0].verdicts[2].gain_db == pytest.approx(-friis_loss(25.0, profile.fc), abs=1e-9)


def test_blocked_link_reports_no_path():
    scene = scene_with([box(-2, 2, -50, 50, 30)], {1: (-10, 0, 1.5), 2: (10, 0, 1.5)})
    backend = RayTracingBackend(scene, RtConfig(max_depth=0), WIFI.fc)
    rep = backend.query(1, [2])[0]
    assert rep.los == LosState.NO_PATH and rep.gain_db == NO_PATH_GAIN_DB
    assert math.isfinite(rep.delay_s)


def test_demo_stochastic_wifi_delivers_more_while_blocked():
    s_log, r_log = dual_run(load_scenario("demo").with_profile("wifi-80211p"))
    intervals = los_intervals(gain_trace(s_log, r_log, (1, 2)))
    assert intervals
    for a, b in intervals:
        count = lambda log: sum(v.delivered for p in log if a <= p.t <= b for v in p.verdicts.values())  # noqa: E731
        assert count(s_log) > count(r_log)
