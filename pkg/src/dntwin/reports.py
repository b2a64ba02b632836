"""Channel report shared by the stochastic and ray-traced backends."""

from __future__ import annotations

import enum
from dataclasses import dataclass

SPEED_OF_LIGHT = 299_792_458.0

#: Gain reported when no propagation path exists; finite so it survives the wire.
NO_PATH_GAIN_DB = -400.0


class LosState(enum.IntEnum):
    NO_PATH = 0
    LOS = 1
    NLOS = 2


@dataclass(frozen=True)
class ChannelReport:
    gain_db: float
    delay_s: float
    los: LosState

    @classmethod
    def no_path(cls) -> "ChannelReport":
        return cls(NO_PATH_GAIN_DB, 0.0, LosState.NO_PATH)
