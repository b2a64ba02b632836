"""Stock ns-3 style stochastic channel models for 802.11p, LTE V2V and NR V2V.

Distances are meters and carrier frequencies are Hz at the API.  The 3GPP
table formulas take the carrier in GHz inside their ``log10(fc)`` terms.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, fields, replace
from typing import Mapping

import numpy as np

from .reports import SPEED_OF_LIGHT, ChannelReport, LosState

log = logging.getLogger(__name__)


class ChannelDomainError(ValueError):
    pass


class Rat(str, enum.Enum):
    WIFI_80211P = "Wifi80211p"
    LTE_V2V = "LteV2V"
    NR_V2V = "NrV2V"


@dataclass(frozen=True)
class RatProfile:
    rat: Rat
    fc: float = 5.89e9
    tx_power: float = 23.0
    path_loss_exponent: float = 3.0
    reference_distance: float = 1.0
    antenna_height: float = 1.5
    nlos_offset: float = 0.0
    shadowing_sigma: float = 3.0
    num_realizations: int = 1
    sensitivity: float = -92.0
    cam_rate: float = 10.0
    retransmissions: int = 0

    def __post_init__(self):
        object.__setattr__(self, "rat", Rat(self.rat))
        if not self.fc > 0:
            raise ValueError(f"carrier frequency must be > 0, got {self.fc}")
        if not self.reference_distance > 0:
            raise ValueError(f"reference distance must be > 0, got {self.reference_distance}")
        if self.num_realizations < 1:
            raise ValueError(f"num_realizations must be >= 1, got {self.num_realizations}")
        if self.shadowing_sigma < 0:
            raise ValueError(f"shadowing sigma must be >= 0, got {self.shadowing_sigma}")
        if self.retransmissions < 0:
            raise ValueError(f"retransmissions must be >= 0, got {self.retransmissions}")
        if not 1.0 <= self.cam_rate <= 10.0:
            log.warning("CAM rate %.3g Hz outside the 1-10 Hz range of the reference scenario", self.cam_rate)


DEFAULT_PROFILES: dict[str, RatProfile] = {
    "wifi-80211p": RatProfile(Rat.WIFI_80211P, retransmissions=0),
    "lte-v2v": RatProfile(Rat.LTE_V2V, retransmissions=1),
    "nr-v2v": RatProfile(Rat.NR_V2V, retransmissions=2),
}


def profiles_from_dict(doc: Mapping[str, Mapping]) -> dict[str, RatProfile]:
    known = {f.name for f in fields(RatProfile)}
    out = {}
    for name, entry in doc.items():
        unknown = set(entry) - known
        if unknown:
            raise ValueError(f"profile {name!r}: unknown keys {sorted(unknown)}")
        out[name] = RatProfile(**entry)
    return out


def load_profiles(document: str) -> dict[str, RatProfile]:
    return profiles_from_dict(json.loads(document))


def profile_to_dict(profile: RatProfile) -> dict:
    d = {f.name: getattr(profile, f.name) for f in fields(RatProfile)}
    d["rat"] = profile.rat.value
    return d


@dataclass(frozen=True)
class LinkGeometry:
    distance: float
    tx_height: float = 1.5
    rx_height: float = 1.5

    def __post_init__(self):
        if self.distance < 0:
            raise ChannelDomainError(f"distance must be >= 0, got {self.distance}")


class RngStream:
    """Counter-based stream: draw ``i`` depends only on (seed, pair, i).

    Each draw consumes one Philox block keyed by the seed and the ordered id
    pair, so two streams built from the same seed material replay the same
    sequence bit for bit, independently of any other stream.
    """

    _CHUNK = 256

    def __init__(self, seed: int, pair: tuple[int, int] = (0, 0), counter: int = 0):
        self.seed = int(seed)
        self.pair = (int(pair[0]), int(pair[1]))
        self.counter = int(counter)
        self._key = np.random.SeedSequence([self.seed, *self.pair]).generate_state(2, np.uint64)
        self._buf: np.ndarray | None = None
        self._buf_start = 0

    def _block(self) -> np.ndarray:
        # consecutive Philox blocks are consecutive counters, so a buffered
        # chunk yields exactly the per-counter blocks
        i = self.counter - self._buf_start
        if self._buf is None or not 0 <= i < len(self._buf):
            bg = np.random.Philox(key=self._key, counter=[self.counter, 0, 0, 0])
            self._buf = bg.random_raw(4 * self._CHUNK).reshape(self._CHUNK, 4)
            self._buf_start = self.counter
            i = 0
        self.counter += 1
        return self._buf[i]

    @staticmethod
    def _unit(word) -> float:
        # 53 high bits -> [0, 1)
        return (int(word) >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self) -> float:
        return self._unit(self._block()[0])

    def normal(self) -> float:
        """Standard normal via Box-Muller on one block."""
        w = self._block()
        u1 = 1.0 - self._unit(w[0])  # (0, 1]
        u2 = self._unit(w[1])
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def friis_loss(d: float, fc: float) -> float:
    if d <= 0 or fc <= 0:
        raise ChannelDomainError(f"friis_loss needs d > 0 and fc > 0 (d={d}, fc={fc})")
    return 20.0 * math.log10(4.0 * math.pi * d * fc / SPEED_OF_LIGHT)


def wifi_path_loss(geom: LinkGeometry, profile: RatProfile) -> float:
    d, d0 = geom.distance, profile.reference_distance
    if d < d0:
        raise ChannelDomainError(f"distance {d} m below reference distance {d0} m")
    return friis_loss(d0, profile.fc) + 10.0 * profile.path_loss_exponent * math.log10(d / d0)


def los_probability(d: float) -> float:
    if d <= 0:
        raise ChannelDomainError(f"distance must be > 0, got {d}")
    e = math.exp(-d / 36.0)
    return min(18.0 / d, 1.0) * (1.0 - e) + e


def sample_los_state(d: float, stream: RngStream) -> LosState:
    p = los_probability(d)
    return LosState.LOS if stream.uniform() < p else LosState.NLOS


def breakpoint_distance(h_bs: float, h_ms: float, fc: float) -> float:
    if h_bs < 1 or h_ms < 1:
        raise ChannelDomainError(f"antenna heights must be >= 1 m (h_bs={h_bs}, h_ms={h_ms})")
    if fc <= 0:
        raise ChannelDomainError(f"fc must be > 0, got {fc}")
    return 4.0 * (h_bs - 1.0) * (h_ms - 1.0) * fc / SPEED_OF_LIGHT


def lte_path_loss(geom: LinkGeometry, profile: RatProfile, state: LosState) -> float:
    d = geom.distance
    if d <= 0:
        raise ChannelDomainError(f"distance must be > 0, got {d}")
    h_bs, h_ms = geom.tx_height, geom.rx_height
    f_ghz = profile.fc / 1e9
    if state == LosState.LOS:
        if d <= breakpoint_distance(h_bs, h_ms, profile.fc):
            loss = 22.7 * math.log10(d) + 27.0 + 20.0 * math.log10(f_ghz)
        else:
            if h_bs <= 1 or h_ms <= 1:
                raise ChannelDomainError("LOS loss beyond the breakpoint needs antenna heights > 1 m")
            loss = (
                40.0 * math.log10(d)
                + 7.56
                - 17.3 * math.log10(h_bs - 1.0)
                - 17.3 * math.log10(h_ms - 1.0)
                + 2.7 * math.log10(f_ghz)
            )
    else:
        if h_bs <= 0:
            raise ChannelDomainError(f"antenna height must be > 0, got {h_bs}")
        loss = (
            (44.9 - 6.55 * math.log10(h_bs)) * math.log10(d)
            + 5.83 * math.log10(h_bs)
            + 18.38
            + 23.0 * math.log10(f_ghz)
            + profile.nlos_offset
        )
    return max(friis_loss(d, profile.fc), loss)


def nr_path_loss(geom: LinkGeometry, profile: RatProfile, state: LosState) -> float:
    d = geom.distance
    if d <= 0:
        raise ChannelDomainError(f"distance must be > 0, got {d}")
    f_ghz = profile.fc / 1e9
    if not 0.5 <= f_ghz <= 100.0:
        log.warning("NR carrier %.4g GHz outside the 0.5-100 GHz model range", f_ghz)
    if state == LosState.LOS:
        return 20.0 * math.log10(d) + 32.4 + 20.0 * math.log10(f_ghz)
    return 30.0 * math.log10(d) + 36.85 + 18.9 * math.log10(f_ghz)


def nr_shadowing_sample(stream: RngStream, sigma: float) -> float:
    if sigma < 0:
        raise ChannelDomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return 0.0
    return sigma * stream.normal()


def _one_realization(geom: LinkGeometry, profile: RatProfile, stream: RngStream) -> tuple[float, LosState]:
    if profile.rat == Rat.WIFI_80211P:
        return wifi_path_loss(geom, profile), LosState.LOS
    state = sample_los_state(geom.distance, stream)
    if profile.rat == Rat.LTE_V2V:
        return lte_path_loss(geom, profile, state), state
    loss = nr_path_loss(geom, profile, state) + nr_shadowing_sample(stream, profile.shadowing_sigma)
    return loss, state


def stochastic_gain(geom: LinkGeometry, profile: RatProfile, stream: RngStream) -> ChannelReport:
    """Average ``num_realizations`` draws in linear power and report the gain."""
    delay = geom.distance / SPEED_OF_LIGHT
    if profile.rat == Rat.WIFI_80211P:
        return ChannelReport(-wifi_path_loss(geom, profile), delay, LosState.LOS)
    k = profile.num_realizations
    if k == 1:
        loss, state = _one_realization(geom, profile, stream)
        return ChannelReport(-loss, delay, state)
    total = 0.0
    for _ in range(k):
        loss, state = _one_realization(geom, profile, stream)
        total += 10.0 ** (-loss / 10.0)
    return ChannelReport(10.0 * math.log10(total / k), delay, state)


def with_carrier(profile: RatProfile, fc: float) -> RatProfile:
    return replace(profile, fc=fc)
