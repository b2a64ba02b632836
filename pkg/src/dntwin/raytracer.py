"""Deterministic specular ray tracing over a 2.5D scene.

Two path searches are provided: the image method over every facet sequence up
to a depth (exhaustive) and shooting-and-bouncing rays from a Fibonacci
lattice (SBR).  SBR candidates are snapped onto exact specular paths by the
same image construction, so both searches produce identical paths whenever
SBR finds a sequence at all.
"""

from __future__ import annotations

import cmath
import enum
import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .geometry import EPS_GEO, Material, Scene, mirror_point
from .reports import NO_PATH_GAIN_DB, SPEED_OF_LIGHT, ChannelReport, LosState

VACUUM_PERMITTIVITY = 8.8541878128e-12


class Polarization(str, enum.Enum):
    TE = "TE"
    TM = "TM"


class Method(str, enum.Enum):
    EXHAUSTIVE = "exhaustive"
    SBR = "sbr"


class ComplexityError(RuntimeError):
    pass


@dataclass(frozen=True)
class RtConfig:
    method: Method = Method.EXHAUSTIVE
    max_depth: int = 2
    num_rays: int = 100_000
    capture_radius_floor: float = 0.1
    polarization: Polarization = Polarization.TE
    #: upper bound on facet_count ** max_depth for the exhaustive search
    sequence_budget: int = 1_000_000

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "polarization", Polarization(self.polarization))
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.num_rays < 1:
            raise ValueError("num_rays must be >= 1")

    @classmethod
    def from_dict(cls, doc: dict) -> "RtConfig":
        return cls(**doc)


@dataclass(frozen=True)
class Interaction:
    facet: int
    incidence_angle: float


@dataclass(frozen=True)
class PropagationPath:
    vertices: tuple[tuple[float, float, float], ...]
    length: float
    interactions: tuple[Interaction, ...]
    #: product of reflection coefficients (spreading and phase applied on combination)
    amplitude: complex = 1.0 + 0j

    @property
    def facet_sequence(self) -> tuple[int, ...]:
        return tuple(i.facet for i in self.interactions)

    @property
    def is_direct(self) -> bool:
        return not self.interactions


@dataclass(frozen=True)
class PathSet:
    paths: tuple[PropagationPath, ...]
    tx_id: int
    rx_id: int
    fc: float


# --- Fresnel ------------------------------------------------------------------


def complex_permittivity(material: Material, fc: float) -> complex:
    return complex(material.relative_permittivity, -material.conductivity / (2 * math.pi * fc * VACUUM_PERMITTIVITY))


def fresnel_reflection(theta_i: float, material: Material, fc: float, polarization=Polarization.TE) -> complex:
    """Reflection coefficient for a wave incident from vacuum at ``theta_i`` from the normal."""
    if not 0.0 <= theta_i < math.pi / 2:
        raise ValueError(f"incidence angle must lie in [0, pi/2), got {theta_i}")
    eta = complex_permittivity(material, fc)
    cos_t = math.cos(theta_i)
    root = cmath.sqrt(eta - math.sin(theta_i) ** 2)
    if Polarization(polarization) == Polarization.TE:
        return (cos_t - root) / (cos_t + root)
    return (root - eta * cos_t) / (root + eta * cos_t)


# --- image method ---------------------------------------------------------------


def _incidence_angle(direction: np.ndarray, normal: np.ndarray) -> float:
    c = abs(float(direction @ normal)) / float(np.linalg.norm(direction))
    return math.acos(min(1.0, c))


def trace_sequence(scene: Scene, tx: np.ndarray, rx: np.ndarray, sequence: tuple[int, ...]) -> PropagationPath | None:
    """Specular path through ``sequence`` by the image method, or None if invalid."""
    facets = scene.facets
    images = [tx]
    for k in sequence:
        images.append(mirror_point(facets[k], images[-1]))
    points = [None] * len(sequence)
    target = rx
    for j in range(len(sequence) - 1, -1, -1):
        f = facets[sequence[j]]
        src = images[j + 1]
        d_src = float(f.signed_distance(src))
        d_tgt = float(f.signed_distance(target))
        # the image sits behind the plane and the target in front of it
        if not (d_src < -EPS_GEO and d_tgt > EPS_GEO):
            return None
        s = d_src / (d_src - d_tgt)
        p = src + s * (target - src)
        points[j] = p
        target = p
    # the real predecessor of every reflection point must face the facet too
    prev = tx
    for j, k in enumerate(sequence):
        if float(facets[k].signed_distance(prev)) <= EPS_GEO:
            return None
        if not facets[k].contains(points[j])[0]:
            return None
        prev = points[j]
    verts = [tx, *points, rx]
    a = np.array(verts[:-1])
    b = np.array(verts[1:])
    seg = b - a
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len <= EPS_GEO):
        return None
    if scene.facets and scene.facet_set.segments_occluded(a, b).any():
        return None
    interactions = tuple(
        Interaction(k, _incidence_angle(seg[j], facets[k].normal)) for j, k in enumerate(sequence)
    )
    return PropagationPath(
        tuple(tuple(float(c) for c in v) for v in verts), float(seg_len.sum()), interactions
    )


def _with_coefficients(scene: Scene, path: PropagationPath, fc: float, polarization) -> PropagationPath:
    amp = 1.0 + 0j
    for inter in path.interactions:
        facet = scene.facets[inter.facet]
        amp *= fresnel_reflection(inter.incidence_angle, scene.material_of(facet), fc, polarization)
    return PropagationPath(path.vertices, path.length, path.interactions, amp)


def _sequences(n_facets: int, max_depth: int):
    for depth in range(1, max_depth + 1):
        for seq in itertools.product(range(n_facets), repeat=depth):
            if any(seq[i] == seq[i + 1] for i in range(depth - 1)):
                continue
            yield seq


def _endpoints(scene: Scene, tx, rx):
    tx_pos = scene.position(tx) if isinstance(tx, (int, np.integer)) else np.asarray(tx.position, dtype=float)
    rx_pos = scene.position(rx) if isinstance(rx, (int, np.integer)) else np.asarray(rx.position, dtype=float)
    tx_id = int(tx) if isinstance(tx, (int, np.integer)) else tx.id
    rx_id = int(rx) if isinstance(rx, (int, np.integer)) else rx.id
    if np.allclose(tx_pos, rx_pos, atol=EPS_GEO, rtol=0):
        raise ValueError("tx and rx positions coincide")
    return tx_id, tx_pos, rx_id, rx_pos


def _direct(scene: Scene, tx_pos, rx_pos) -> list[PropagationPath]:
    if scene.facets and scene.facet_set.segments_occluded(tx_pos[None], rx_pos[None])[0]:
        return []
    return [
        PropagationPath(
            (tuple(map(float, tx_pos)), tuple(map(float, rx_pos))), float(np.linalg.norm(rx_pos - tx_pos)), ()
        )
    ]


def _check_budget(n_facets: int, max_depth: int, budget: int):
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if n_facets and n_facets**max_depth > budget:
        raise ComplexityError(f"{n_facets} facets at depth {max_depth} exceed the sequence budget {budget}")


def compute_paths_exhaustive(
    scene: Scene, tx, rx, max_depth: int = 2, fc: float = 5.89e9, polarization=Polarization.TE, budget: int = 1_000_000
) -> PathSet:
    """Every valid specular path up to ``max_depth`` reflections, ordered by facet sequence."""
    tx_id, tx_pos, rx_id, rx_pos = _endpoints(scene, tx, rx)
    _check_budget(len(scene.facets), max_depth, budget)
    paths = _direct(scene, tx_pos, rx_pos)
    for seq in _sequences(len(scene.facets), max_depth):
        p = trace_sequence(scene, tx_pos, rx_pos, seq)
        if p is not None:
            paths.append(_with_coefficients(scene, p, fc, polarization))
    return PathSet(tuple(paths), tx_id, rx_id, fc)


# --- shooting and bouncing rays ----------------------------------------------------


GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` unit vectors on the Fibonacci sphere lattice, shape (n, 3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE
    d = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def lattice_spacing(n: int) -> float:
    """Mean angular spacing (rad) of an ``n``-point sphere lattice."""
    return math.sqrt(4.0 * math.pi / n)


def _sbr_candidates(scene: Scene, tx_pos, rx_pos, directions, max_depth, radius_floor) -> set[tuple[int, ...]]:
    fs = scene.facet_set
    spacing = lattice_spacing(len(directions))
    origins = np.repeat(tx_pos[None, :], len(directions), axis=0)
    dirs = directions.copy()
    travelled = np.zeros(len(dirs))
    history = np.zeros((len(dirs), max_depth), dtype=np.int64)
    last = np.full(len(dirs), -1, dtype=np.int64)
    alive = np.arange(len(dirs))
    found: set[tuple[int, ...]] = set()
    for depth in range(max_depth + 1):
        if len(alive) == 0:
            break
        o, d = origins[alive], dirs[alive]
        t_hit, k_hit = fs.first_hits(o, d, exclude=last[alive])
        if depth > 0:
            # closest approach to rx along this segment
            s = np.clip(np.einsum("ij,ij->i", rx_pos[None, :] - o, d), 0.0, t_hit)
            miss = np.linalg.norm(o + s[:, None] * d - rx_pos, axis=1)
            radius = np.maximum(radius_floor, (travelled[alive] + s) * spacing)
            caught = alive[miss < radius]
            if len(caught):
                for seq in np.unique(history[caught, :depth], axis=0):
                    found.add(tuple(int(x) for x in seq))
        if depth == max_depth:
            break
        hit = np.isfinite(t_hit)
        # rays striking a facet from behind are absorbed
        normals = fs.normals[np.where(hit, k_hit, 0)]
        front = hit & (np.einsum("ij,ij->i", d, normals) < 0)
        keep = alive[front]
        t_k, k_k, d_k, n_k = t_hit[front], k_hit[front], d[front], normals[front]
        origins[keep] = o[front] + t_k[:, None] * d_k
        dirs[keep] = d_k - 2.0 * np.einsum("ij,ij->i", d_k, n_k)[:, None] * n_k
        travelled[keep] += t_k
        history[keep, depth] = k_k
        last[keep] = k_k
        alive = keep
    return found


def compute_paths_sbr(
    scene: Scene,
    tx,
    rx,
    num_rays: int = 100_000,
    max_depth: int = 2,
    fc: float = 5.89e9,
    polarization=Polarization.TE,
    capture_radius_floor: float = 0.1,
    budget: int = 1_000_000,
    directions: np.ndarray | None = None,
) -> PathSet:
    """Ray-launching search; candidates are snapped to exact specular paths."""
    if num_rays < 1:
        raise ValueError("num_rays must be >= 1")
    tx_id, tx_pos, rx_id, rx_pos = _endpoints(scene, tx, rx)
    _check_budget(len(scene.facets), max_depth, budget)
    paths = _direct(scene, tx_pos, rx_pos)
    if scene.facets and max_depth > 0:
        dirs = fibonacci_directions(num_rays) if directions is None else np.atleast_2d(directions)
        for seq in sorted(_sbr_candidates(scene, tx_pos, rx_pos, dirs, max_depth, capture_radius_floor), key=lambda s: (len(s), s)):
            p = trace_sequence(scene, tx_pos, rx_pos, seq)
            if p is not None:
                paths.append(_with_coefficients(scene, p, fc, polarization))
    return PathSet(tuple(paths), tx_id, rx_id, fc)


def compute_paths(scene: Scene, tx, rx, config: RtConfig, fc: float) -> PathSet:
    if config.method == Method.SBR:
        return compute_paths_sbr(
            scene, tx, rx, config.num_rays, config.max_depth, fc, config.polarization,
            config.capture_radius_floor, config.sequence_budget,
        )
    return compute_paths_exhaustive(scene, tx, rx, config.max_depth, fc, config.polarization, config.sequence_budget)


# --- combination --------------------------------------------------------------------


def path_amplitudes(paths: PathSet) -> np.ndarray:
    wavelength = SPEED_OF_LIGHT / paths.fc
    out = np.empty(len(paths.paths), dtype=complex)
    for i, p in enumerate(paths.paths):
        cycles = math.fmod(p.length / wavelength, 1.0)
        out[i] = wavelength / (4 * math.pi * p.length) * p.amplitude * cmath.exp(-2j * math.pi * cycles)
    return out


def combine_paths(paths: PathSet) -> ChannelReport:
    """Coherent sum of all paths; delay is that of the strongest single path."""
    if not paths.paths:
        return ChannelReport.no_path()
    if paths.fc <= 0:
        raise ValueError("fc must be > 0")
    amps = path_amplitudes(paths)
    total = abs(amps.sum())
    gain = 20.0 * math.log10(total) if total > 0 else NO_PATH_GAIN_DB
    gain = max(gain, NO_PATH_GAIN_DB)
    strongest = int(np.argmax(np.abs(amps)))
    delay = paths.paths[strongest].length / SPEED_OF_LIGHT
    los = LosState.LOS if any(p.is_direct for p in paths.paths) else LosState.NLOS
    return ChannelReport(gain, delay, los)


# --- cache ------------------------------------------------------------------------------


@dataclass
class PathCache:
    """Path sets keyed by unordered entity pair; wiped on every applied move."""

    entries: dict[frozenset, PathSet] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0
    wipes: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @staticmethod
    def key(a: int, b: int) -> frozenset:
        return frozenset((int(a), int(b)))

    def wipe(self):
        with self._lock:
            self.entries.clear()
            self.wipes += 1

    def __len__(self):
        return len(self.entries)


def cached_channel(cache: PathCache, scene: Scene, tx_id: int, rx_id: int, config: RtConfig, fc: float) -> ChannelReport:
    for eid in (tx_id, rx_id):
        if eid not in scene.entities:
            raise KeyError(f"unknown entity id {eid}")
    key = cache.key(tx_id, rx_id)
    with cache._lock:
        paths = cache.entries.get(key)
        if paths is not None:
            cache.hits += 1
    if paths is None:
        paths = compute_paths(scene, tx_id, rx_id, config, fc)
        with cache._lock:
            cache.entries[key] = paths
            cache.misses += 1
    return combine_paths(paths)
