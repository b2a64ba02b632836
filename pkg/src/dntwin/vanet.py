"""V2V CAM beaconing over interchangeable channel backends."""

from __future__ import annotations

import bisect
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .channels import LinkGeometry, RatProfile, RngStream, stochastic_gain
from .geometry import Scene
from .protocol import ChannelClient, ChannelService, LocStatus, LocUpdate
from .raytracer import PathCache, RtConfig, cached_channel
from .reports import ChannelReport, LosState

log = logging.getLogger(__name__)


class TraceError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


# --- mobility -------------------------------------------------------------------


@dataclass
class MobilityTrace:
    """Per-entity piecewise-linear trajectories; positions hold outside the sampled span."""

    samples: list[tuple[float, int, tuple[float, float, float]]]
    _tracks: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        per_id: dict[int, list] = {}
        for t, eid, pos in self.samples:
            per_id.setdefault(eid, []).append((t, *pos))
        for eid, rows in per_id.items():
            arr = np.array(rows, dtype=float)
            self._tracks[eid] = (arr[:, 0], arr[:, 1:])

    @property
    def ids(self) -> list[int]:
        return sorted(self._tracks)

    def position(self, entity_id: int, t: float) -> np.ndarray:
        times, pos = self._tracks[entity_id]
        if len(times) == 1 or t <= times[0]:
            return pos[0].copy()
        if t >= times[-1]:
            return pos[-1].copy()
        i = bisect.bisect_right(times, t) - 1
        t0, t1 = times[i], times[i + 1]
        if t1 == t0:
            return pos[i + 1].copy()
        w = (t - t0) / (t1 - t0)
        return pos[i] + w * (pos[i + 1] - pos[i])


def load_mobility_trace(document: str, scene: Scene | None = None) -> MobilityTrace:
    """Parse ``t,id,x,y,z`` CSV; ``#`` lines are comments."""
    lines = [ln for ln in document.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise TraceError("empty mobility trace") from None
    if header != ["t", "id", "x", "y", "z"]:
        raise TraceError(f"trace header must be t,id,x,y,z; got {','.join(header)}")
    samples = []
    last_t = -math.inf
    for lineno, row in enumerate(reader, start=2):
        try:
            t, eid, x, y, z = float(row[0]), int(row[1]), float(row[2]), float(row[3]), float(row[4])
        except (ValueError, IndexError) as exc:
            raise TraceError(f"row {lineno}: {exc}") from None
        if len(row) != 5:
            raise TraceError(f"row {lineno}: expected 5 columns, got {len(row)}")
        if t < last_t:
            raise TraceError(f"row {lineno}: time {t} goes backwards (previous {last_t})")
        if scene is not None and eid not in scene.entities:
            raise TraceError(f"row {lineno}: entity {eid} is not registered in the scene")
        last_t = t
        samples.append((t, eid, (x, y, z)))
    return MobilityTrace(samples)


def dump_mobility_trace(trace: MobilityTrace) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "id", "x", "y", "z"])
    for t, eid, (x, y, z) in trace.samples:
        w.writerow([repr(t), eid, repr(x), repr(y), repr(z)])
    return out.getvalue()


# --- traffic ----------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class Transmission:
    t: float
    tx_id: int
    seq: int


def schedule_cam_traffic(node_ids: Sequence[int], profile: RatProfile | float, duration: float) -> list[Transmission]:
    """Phase-staggered periodic CAMs: node i sends at i/(N f) + k/f."""
    rate = profile if isinstance(profile, (int, float)) else profile.cam_rate
    if not 1.0 <= rate <= 10.0:
        log.warning("CAM rate %.3g Hz outside 1-10 Hz", rate)
    if duration <= 0:
        raise ValueError("duration must be > 0")
    nodes = sorted(node_ids)
    n = len(nodes)
    count = math.ceil(round(duration * rate, 9))
    events = [
        Transmission(i / (n * rate) + k / rate, nid, k)
        for i, nid in enumerate(nodes)
        for k in range(count)
    ]
    events.sort(key=lambda e: (e.t, e.tx_id))
    return events


# --- reception ------------------------------------------------------------------------


def decide_reception(report: ChannelReport, profile: RatProfile) -> tuple[bool, float]:
    """Threshold reception with unit-gain antennas."""
    pr = profile.tx_power + report.gain_db
    if report.los == LosState.NO_PATH:
        return False, pr
    return pr >= profile.sensitivity, pr


# --- backends ----------------------------------------------------------------------------


class ChannelBackend(Protocol):
    def update_location(self, entity_id: int, position: Sequence[float]) -> None: ...

    def query(self, tx_id: int, rx_ids: Sequence[int]) -> list[ChannelReport]: ...


class StochasticBackend:
    """ns-3 style models; every link owns a counter-based stream."""

    def __init__(self, positions: dict[int, Sequence[float]], profile: RatProfile, seed: int = 0):
        self.positions = {k: np.asarray(v, dtype=float) for k, v in positions.items()}
        self.profile = profile
        self.seed = seed
        self._streams: dict[tuple[int, int], RngStream] = {}

    @classmethod
    def from_scene(cls, scene: Scene, profile: RatProfile, seed: int = 0) -> "StochasticBackend":
        return cls({e.id: e.position for e in scene.entities.values()}, profile, seed)

    def update_location(self, entity_id, position):
        if entity_id not in self.positions:
            raise KeyError(f"unknown entity id {entity_id}")
        self.positions[entity_id] = np.asarray(position, dtype=float)

    def _stream(self, tx, rx) -> RngStream:
        s = self._streams.get((tx, rx))
        if s is None:
            s = self._streams[(tx, rx)] = RngStream(self.seed, (tx, rx))
        return s

    def query(self, tx_id, rx_ids):
        h = self.profile.antenna_height
        out = []
        for rx in rx_ids:
            d = float(np.linalg.norm(self.positions[tx_id] - self.positions[rx]))
            out.append(stochastic_gain(LinkGeometry(d, h, h), self.profile, self._stream(tx_id, rx)))
        return out


class RayTracingBackend:
    """In-process ray tracer driven through the same service object as the UDP server."""

    def __init__(self, scene: Scene, config: RtConfig, fc: float, min_move_threshold: float = 0.5):
        self.service = ChannelService(scene, config, fc, min_move_threshold)

    @property
    def cache(self) -> PathCache:
        return self.service.cache

    def update_location(self, entity_id, position):
        x, y, z = (float(c) for c in position)
        reply = self.service.handle(LocUpdate(0, entity_id, x, y, z))
        if reply.status == LocStatus.UNKNOWN_ID:
            raise KeyError(f"unknown entity id {entity_id}")

    def query(self, tx_id, rx_ids):
        scene, cfg, fc = self.service.scene, self.service.rt_config, self.service.fc
        return [cached_channel(self.cache, scene, tx_id, rx, cfg, fc) for rx in rx_ids]


class RemoteBackend:
    """Ray tracer behind the UDP channel oracle."""

    def __init__(self, client: ChannelClient):
        self.client = client

    def update_location(self, entity_id, position):
        status = self.client.update_location(entity_id, position)
        if status == LocStatus.UNKNOWN_ID:
            raise KeyError(f"server does not know entity {entity_id}")

    def query(self, tx_id, rx_ids):
        rx_ids = list(rx_ids)
        if len(rx_ids) == 1:
            return [r for _t, _r, r in self.client.request_channel(tx_id, rx_ids[0])]
        got = {rx: r for _t, rx, r in self.client.request_channel(tx_id, None)}
        return [got[rx] for rx in rx_ids]


# --- simulation ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    delivered: bool
    pr_dbm: float
    gain_db: float
    los: LosState
    attempts: int


@dataclass(frozen=True)
class PacketRecord:
    tx_id: int
    seq: int
    t: float
    verdicts: dict[int, Verdict]

    @property
    def packet_id(self) -> tuple[int, int]:
        return (self.tx_id, self.seq)


def run_simulation(
    scene: Scene,
    trace: MobilityTrace,
    profile: RatProfile,
    backend: ChannelBackend,
    duration: float,
    min_move: float = 0.5,
) -> list[PacketRecord]:
    """Replay the CAM schedule against ``backend``.

    Randomness lives only in the backend (seeded at construction), so a run is
    a pure function of its inputs.
    """
    nodes = sorted(scene.entities)
    missing = set(trace.ids) - set(nodes)
    if missing:
        raise SimulationError(f"trace references unregistered entities {sorted(missing)}")
    pushed = {nid: np.asarray(scene.entities[nid].position, dtype=float) for nid in nodes}
    mobile = [nid for nid in nodes if nid in set(trace.ids)]
    log_: list[PacketRecord] = []
    for ev in schedule_cam_traffic(nodes, profile, duration):
        try:
            for nid in mobile:
                pos = trace.position(nid, ev.t)
                if math.dist(pos, pushed[nid]) >= min_move:
                    backend.update_location(nid, pos)
                    pushed[nid] = pos
            receivers = [n for n in nodes if n != ev.tx_id]
            reports = backend.query(ev.tx_id, receivers)
            verdicts = {}
            for rx, rep in zip(receivers, reports):
                ok, pr = decide_reception(rep, profile)
                attempts = 1
                while not ok and attempts <= profile.retransmissions:
                    ok, pr = decide_reception(backend.query(ev.tx_id, [rx])[0], profile)
                    attempts += 1
                verdicts[rx] = Verdict(ok, pr, rep.gain_db, rep.los, attempts)
        except (SimulationError, KeyboardInterrupt):
            raise
        except Exception as exc:
            raise SimulationError(f"t={ev.t:.6f}s tx={ev.tx_id} seq={ev.seq}: {exc}") from exc
        log_.append(PacketRecord(ev.tx_id, ev.seq, ev.t, verdicts))
    return log_


@dataclass
class Scenario:
    scene: Scene
    trace: MobilityTrace
    profile: RatProfile
    duration: float
    seed: int = 0
    rt_config: RtConfig = field(default_factory=RtConfig)
    min_move: float = 0.5


def initial_scene(scenario: Scenario) -> Scene:
    """Scene with every traced entity placed at its t=0 position."""
    scene = scenario.scene
    for nid in scenario.trace.ids:
        scene = scene.with_position(nid, scenario.trace.position(nid, 0.0))
    return scene


def dual_run(scenario: Scenario) -> tuple[list[PacketRecord], list[PacketRecord]]:
    """Same schedule and packet ids against the stochastic model and the ray tracer."""
    scene = initial_scene(scenario)
    stoch = StochasticBackend.from_scene(scene, scenario.profile, scenario.seed)
    rt = RayTracingBackend(scene, scenario.rt_config, scenario.profile.fc, scenario.min_move)
    s_log = run_simulation(scene, scenario.trace, scenario.profile, stoch, scenario.duration, scenario.min_move)
    r_log = run_simulation(scene, scenario.trace, scenario.profile, rt, scenario.duration, scenario.min_move)
    return s_log, r_log

