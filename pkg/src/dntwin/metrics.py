"""Post-processing of packet logs: disagreement ratio, counts, gain traces."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .reports import LosState
from .vanet import PacketRecord

CSV_VERSION = 1

#: A reception outcome is identified by (tx id, sequence number, rx id).
ReceptionKey = tuple[int, int, int]


def delivered_keys(log: Iterable[PacketRecord]) -> set[ReceptionKey]:
    return {(p.tx_id, p.seq, rx) for p in log for rx, v in p.verdicts.items() if v.delivered}


def all_keys(log: Iterable[PacketRecord]) -> set[ReceptionKey]:
    return {(p.tx_id, p.seq, rx) for p in log for rx in p.verdicts}


@dataclass(frozen=True)
class PacketSetComparison:
    stochastic: frozenset
    raytraced: frozenset
    universe: frozenset

    def __post_init__(self):
        if not (self.stochastic <= self.universe and self.raytraced <= self.universe):
            raise ValueError("delivered sets must be subsets of the universe")

    @classmethod
    def from_logs(cls, stochastic_log: Sequence[PacketRecord], rt_log: Sequence[PacketRecord]) -> "PacketSetComparison":
        universe = all_keys(stochastic_log)
        if universe != all_keys(rt_log):
            raise ValueError("logs do not cover the same transmissions")
        return cls(frozenset(delivered_keys(stochastic_log)), frozenset(delivered_keys(rt_log)), frozenset(universe))


def prdr(cmp: PacketSetComparison | None = None, *, s: set | None = None, r: set | None = None) -> float:
    """Packet reception disagreement ratio |S ^ R| / |S | R| (0 for an empty union)."""
    if cmp is not None:
        s, r = cmp.stochastic, cmp.raytraced
    s, r = set(s or ()), set(r or ())
    union = s | r
    if not union:
        return 0.0
    return len(s ^ r) / len(union)


@dataclass(frozen=True)
class PacketCounts:
    per_link: dict[tuple[int, int], tuple[int, int]]  # (tx, rx) -> (delivered, transmitted)

    @property
    def delivered(self) -> int:
        return sum(d for d, _ in self.per_link.values())

    @property
    def transmitted(self) -> int:
        return sum(t for _, t in self.per_link.values())

    def per_receiver(self) -> dict[int, tuple[int, int]]:
        out: dict[int, list[int]] = {}
        for (_tx, rx), (d, t) in self.per_link.items():
            acc = out.setdefault(rx, [0, 0])
            acc[0] += d
            acc[1] += t
        return {k: (v[0], v[1]) for k, v in sorted(out.items())}


def packet_counts(log: Iterable[PacketRecord]) -> PacketCounts:
    delivered: Counter = Counter()
    sent: Counter = Counter()
    for p in log:
        for rx, v in p.verdicts.items():
            sent[(p.tx_id, rx)] += 1
            delivered[(p.tx_id, rx)] += int(v.delivered)
    return PacketCounts({k: (delivered[k], sent[k]) for k in sorted(sent)})


# --- gain traces ----------------------------------------------------------------


@dataclass(frozen=True)
class GainSample:
    t: float
    gain_stochastic_db: float
    los_stochastic: LosState
    gain_rt_db: float
    los_rt: LosState


def gain_trace(stochastic_log: Sequence[PacketRecord], rt_log: Sequence[PacketRecord], pair: tuple[int, int]) -> list[GainSample]:
    """First-attempt channel samples for the unordered ``pair``, both directions, in time order."""
    a, b = pair
    rows = []
    found = False
    for ps, pr in zip(stochastic_log, rt_log):
        if ps.packet_id != pr.packet_id:
            raise ValueError(f"logs are not aligned: {ps.packet_id} vs {pr.packet_id}")
        if ps.tx_id not in (a, b):
            continue
        other = b if ps.tx_id == a else a
        if other not in ps.verdicts:
            continue
        found = True
        vs, vr = ps.verdicts[other], pr.verdicts[other]
        rows.append(GainSample(ps.t, vs.gain_db, vs.los, vr.gain_db, vr.los))
    if not found:
        raise KeyError(f"pair {pair} not present in the logs")
    return rows


def _fmt(x: float) -> str:
    return repr(float(x))


def _header(kind: str) -> str:
    return f"# dntwin {kind} v{CSV_VERSION}\n"


def export_gain_trace(samples: Sequence[GainSample]) -> str:
    out = io.StringIO()
    out.write(_header("gain-trace"))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t", "gain_stochastic_db", "los_stochastic", "gain_rt_db", "los_rt"])
    for s in samples:
        w.writerow([_fmt(s.t), _fmt(s.gain_stochastic_db), s.los_stochastic.name, _fmt(s.gain_rt_db), s.los_rt.name])
    return out.getvalue()


def prdr_csv(rows: Sequence[dict]) -> str:
    """Rows with keys label, profile, fc_hz, delivered_stochastic, delivered_rt, disagreements, union, prdr."""
    cols = ["label", "profile", "fc_hz", "delivered_stochastic", "delivered_rt", "disagreements", "union", "prdr"]
    out = io.StringIO()
    out.write(_header("prdr"))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
    return out.getvalue()


def comparison_row(label: str, profile_name: str, fc: float, cmp: PacketSetComparison) -> dict:
    s, r = cmp.stochastic, cmp.raytraced
    return {
        "label": label,
        "profile": profile_name,
        "fc_hz": float(fc),
        "delivered_stochastic": len(s),
        "delivered_rt": len(r),
        "disagreements": len(s ^ r),
        "union": len(s | r),
        "prdr": prdr(cmp),
    }


def counts_csv(labelled: Sequence[tuple[str, str, PacketCounts]]) -> str:
    """``labelled`` holds (label, backend, counts) triples."""
    out = io.StringIO()
    out.write(_header("packet-counts"))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["label", "backend", "tx", "rx", "delivered", "transmitted"])
    for label, backend, counts in labelled:
        for (tx, rx), (d, t) in counts.per_link.items():
            w.writerow([label, backend, tx, rx, d, t])
    return out.getvalue()


def los_intervals(samples: Sequence[GainSample], rt: bool = True) -> list[tuple[float, float]]:
    """Maximal runs of non-LOS samples as (t_start, t_end) pairs."""
    runs = []
    start = end = None
    for s in samples:
        state = s.los_rt if rt else s.los_stochastic
        if state != LosState.LOS:
            if start is None:
                start = s.t
            end = s.t
        elif start is not None:
            runs.append((start, end))
            start = None
    if start is not None:
        runs.append((start, end))
    return runs


def gain_trace_svg(samples: Sequence[GainSample], width: int = 800, height: int = 300, floor_db: float = -160.0) -> str:
    """Line chart of both gain series with ray-traced NLOS intervals shaded."""
    if not samples:
        raise ValueError("no samples to plot")
    pad = 40
    t0, t1 = samples[0].t, samples[-1].t
    span = (t1 - t0) or 1.0
    gains = [max(g, floor_db) for s in samples for g in (s.gain_stochastic_db, s.gain_rt_db)]
    g_lo, g_hi = min(gains), max(gains)
    g_span = (g_hi - g_lo) or 1.0

    def x(t):
        return pad + (t - t0) / span * (width - 2 * pad)

    def y(g):
        return height - pad - (max(g, floor_db) - g_lo) / g_span * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    for a, b in los_intervals(samples):
        parts.append(
            f'<rect x="{x(a):.2f}" y="{pad}" width="{max(x(b) - x(a), 1.0):.2f}" height="{height - 2 * pad}" fill="#f4cccc"/>'
        )
    for attr, colour in (("gain_stochastic_db", "#1f77b4"), ("gain_rt_db", "#d62728")):
        pts = " ".join(f"{x(s.t):.2f},{y(getattr(s, attr)):.2f}" for s in samples)
        parts.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}"/>')
    parts.append(f'<text x="{pad}" y="{pad - 10}" font-size="12">blue: stochastic, red: ray traced, shaded: NLOS (ray traced)</text>')
    parts.append(f'<text x="5" y="{pad + 4}" font-size="10">{g_hi:.1f} dB</text>')
    parts.append(f'<text x="5" y="{height - pad}" font-size="10">{g_lo:.1f} dB</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
