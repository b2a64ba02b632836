"""World model and geometric primitives.

The scene is 2.5D: buildings are extruded simple polygons with flat roofs,
optionally standing on an infinite ground plane at z = 0.  Everything the ray
tracer needs (facets, occlusion, mirroring, ray casting) lives here.
Coordinates are meters, z-up.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

#: Tolerance for every intersection predicate (meters).
EPS_GEO = 1e-9


class SceneError(ValueError):
    """Base class for scene loading problems."""


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


@dataclass(frozen=True)
class Material:
    relative_permittivity: float
    conductivity: float = 0.0

    def __post_init__(self):
        if not self.relative_permittivity >= 1.0:
            raise SceneValidationError(f"relative permittivity must be >= 1, got {self.relative_permittivity}")
        if not self.conductivity >= 0.0:
            raise SceneValidationError(f"conductivity must be >= 0, got {self.conductivity}")


@dataclass(frozen=True)
class Building:
    footprint: tuple[tuple[float, float], ...]
    height: float
    material: str


@dataclass(frozen=True)
class Entity:
    id: int
    position: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Facet:
    """Planar polygon: ``origin + a*u_axis + b*v_axis`` for (a, b) in ``polygon``.

    ``polygon`` is None for the unbounded ground plane.
    """

    origin: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray
    polygon: np.ndarray | None
    material: str

    def signed_distance(self, p) -> np.ndarray:
        return (np.asarray(p, dtype=float) - self.origin) @ self.normal

    def contains(self, points) -> np.ndarray:
        """In-extent test for points assumed to lie in the facet plane."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.polygon is None:
            return np.ones(len(pts), dtype=bool)
        rel = pts - self.origin
        return points_in_polygon(np.stack([rel @ self.u_axis, rel @ self.v_axis], axis=1), self.polygon)


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over ``points`` (M, 2)."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        straddles = (y1 > y) != (y2 > y)
        x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddles & (x < x_cross)
    return inside


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(q1, q2, p1), orient(q1, q2, p2)
    d3, d4 = orient(p1, p2, q1), orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 * d2 != 0 and d3 * d4 != 0:
        return True

    def on_seg(a, b, c):
        return orient(a, b, c) == 0 and min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return on_seg(q1, q2, p1) or on_seg(q1, q2, p2) or on_seg(p1, p2, q1) or on_seg(p1, p2, q2)


def is_simple_polygon(poly: Sequence[Sequence[float]]) -> bool:
    n = len(poly)
    if n < 3:
        return False
    if abs(polygon_area(poly)) <= EPS_GEO:
        return False
    for i in range(n):
        for j in range(i + 1, n):
            # adjacent edges share a vertex by construction
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]):
                return False
    return True


def building_facets(building: Building) -> list[Facet]:
    """One facet per wall (outward normal) followed by the roof."""
    fp = np.asarray(building.footprint, dtype=float)
    h = float(building.height)
    up = np.array([0.0, 0.0, 1.0])
    facets = []
    for i in range(len(fp)):
        a, b = fp[i], fp[(i + 1) % len(fp)]
        edge = b - a
        length = float(np.hypot(*edge))
        u = np.array([edge[0], edge[1], 0.0]) / length
        # right-hand normal of a counter-clockwise edge points outward
        normal = np.array([edge[1], -edge[0], 0.0]) / length
        rect = np.array([[0.0, 0.0], [length, 0.0], [length, h], [0.0, h]])
        facets.append(Facet(np.array([a[0], a[1], 0.0]), normal, u, up, rect, building.material))
    facets.append(
        Facet(np.array([0.0, 0.0, h]), up, np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), fp.copy(), building.material)
    )
    return facets


GROUND_MATERIAL = "ground"


def ground_facet(material: str = GROUND_MATERIAL) -> Facet:
    return Facet(
        np.zeros(3), np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), None, material
    )


@dataclass(frozen=True)
class Scene:
    buildings: tuple[Building, ...] = ()
    materials: dict[str, Material] = field(default_factory=dict)
    entities: dict[int, Entity] = field(default_factory=dict)
    ground_plane: bool = False

    @cached_property
    def facets(self) -> list[Facet]:
        out = []
        for b in self.buildings:
            out.extend(building_facets(b))
        if self.ground_plane:
            out.append(ground_facet())
        return out

    @cached_property
    def facet_set(self) -> "FacetSet":
        return FacetSet(self.facets)

    def material_of(self, facet: Facet) -> Material:
        return self.materials[facet.material]

    def position(self, entity_id: int) -> np.ndarray:
        try:
            return np.asarray(self.entities[entity_id].position, dtype=float)
        except KeyError:
            raise KeyError(f"unknown entity id {entity_id}") from None

    def with_position(self, entity_id: int, position: Sequence[float]) -> "Scene":
        """New snapshot with one entity moved; building geometry is shared."""
        if entity_id not in self.entities:
            raise KeyError(f"unknown entity id {entity_id}")
        pos = tuple(float(c) for c in position)
        if self.ground_plane and pos[2] < 0:
            raise SceneValidationError(f"entity {entity_id} below ground: z={pos[2]}")
        entities = dict(self.entities)
        entities[entity_id] = Entity(entity_id, pos)
        new = dataclasses.replace(self, entities=entities)
        for name in ("facets", "facet_set"):
            if name in self.__dict__:
                new.__dict__[name] = self.__dict__[name]
        return new


class FacetSet:
    """Facets packed for vectorized segment and ray queries."""

    def __init__(self, facets: Sequence[Facet]):
        self.facets = list(facets)
        self.origins = np.array([f.origin for f in facets]).reshape(-1, 3)
        self.normals = np.array([f.normal for f in facets]).reshape(-1, 3)

    def __len__(self):
        return len(self.facets)

    def segments_occluded(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Occlusion of open segments (a_i, b_i); arrays of shape (M, 3)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        d = b - a
        length = np.linalg.norm(d, axis=1)
        eps_t = EPS_GEO / np.where(length > 0, length, 1.0)
        hit = np.zeros(len(a), dtype=bool)
        for k, facet in enumerate(self.facets):
            n = self.normals[k]
            denom = d @ n
            dist_a = (facet.origin - a) @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = dist_a / denom
            cand = (np.abs(denom) > 1e-15) & (t > eps_t) & (t < 1.0 - eps_t) & ~hit
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            pts = a[idx] + t[idx, None] * d[idx]
            hit[idx[facet.contains(pts)]] = True
        return hit

    def first_hits(self, origins: np.ndarray, dirs: np.ndarray, exclude: np.ndarray | None = None):
        """Nearest facet hit along each ray.

        Returns ``(t, facet_index)``; rays that hit nothing get ``t = inf`` and
        index -1.  ``exclude`` optionally names, per ray, a facet to skip (the
        one the ray just left).
        """
        m = len(origins)
        best_t = np.full(m, np.inf)
        best_k = np.full(m, -1, dtype=np.int64)
        for k, facet in enumerate(self.facets):
            n = self.normals[k]
            denom = dirs @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = ((facet.origin - origins) @ n) / denom
            cand = (np.abs(denom) > 1e-15) & (t > EPS_GEO) & (t < best_t)
            if exclude is not None:
                cand &= exclude != k
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            pts = origins[idx] + t[idx, None] * dirs[idx]
            inside = facet.contains(pts)
            idx = idx[inside]
            best_t[idx] = t[idx]
            best_k[idx] = k
        return best_t, best_k


def segment_occluded(scene: Scene, a, b) -> bool:
    """True iff the open segment (a, b) crosses the interior of any facet."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.array_equal(a, b):
        raise ValueError("segment endpoints coincide")
    if not scene.facets:
        return False
    return bool(scene.facet_set.segments_occluded(a[None, :], b[None, :])[0])


def mirror_point(facet: Facet, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p - 2.0 * facet.signed_distance(p)[..., None] * facet.normal


# --- scene file -------------------------------------------------------------


def _validate(scene: Scene) -> None:
    for i, b in enumerate(scene.buildings):
        if not is_simple_polygon(b.footprint):
            raise SceneValidationError(f"building {i}: footprint is not a simple polygon with >= 3 vertices")
        if not b.height > 0:
            raise SceneValidationError(f"building {i}: height must be > 0, got {b.height}")
        if b.material not in scene.materials:
            raise SceneValidationError(f"building {i}: unknown material {b.material!r}")
    if scene.ground_plane:
        if GROUND_MATERIAL not in scene.materials:
            raise SceneValidationError(f"ground plane enabled but material {GROUND_MATERIAL!r} is not defined")
        for e in scene.entities.values():
            if e.position[2] < 0:
                raise SceneValidationError(f"entity {e.id} below ground: z={e.position[2]}")


def _ccw(footprint: Iterable[Sequence[float]]) -> tuple[tuple[float, float], ...]:
    pts = tuple((float(x), float(y)) for x, y in footprint)
    if len(pts) >= 3 and polygon_area(pts) < 0:
        pts = tuple(reversed(pts))
    return pts


def scene_from_dict(doc: dict) -> Scene:
    try:
        materials = {
            str(name): Material(float(m["eps_r"]), float(m.get("sigma", 0.0)))
            for name, m in doc.get("materials", {}).items()
        }
        buildings = []
        for b in doc.get("buildings", []):
            fp = b["footprint"]
            if any(len(v) != 2 for v in fp):
                raise SceneParseError("footprint vertices must be [x, y] pairs")
            buildings.append(Building(_ccw(fp), float(b["height"]), str(b["material"])))
        entities: dict[int, Entity] = {}
        for e in doc.get("entities", []):
            eid = int(e["id"])
            if eid < 0:
                raise SceneValidationError(f"entity id must be unsigned, got {eid}")
            if eid in entities:
                raise SceneValidationError(f"duplicate entity id {eid}")
            pos = e["position"]
            if len(pos) != 3:
                raise SceneParseError(f"entity {eid}: position must be [x, y, z]")
            entities[eid] = Entity(eid, tuple(float(c) for c in pos))
        ground = doc.get("ground_plane", False)
        if not isinstance(ground, bool):
            raise SceneParseError("ground_plane must be a boolean")
    except SceneError:
        raise
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise SceneParseError(f"malformed scene document: {exc!r}") from exc
    scene = Scene(tuple(buildings), materials, entities, ground)
    _validate(scene)
    return scene


def load_scene(document: str) -> Scene:
    """Parse and validate a JSON scene document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SceneParseError("scene document must be a JSON object")
    return scene_from_dict(doc)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "ground_plane": scene.ground_plane,
        "materials": {
            name: {"eps_r": m.relative_permittivity, "sigma": m.conductivity} for name, m in scene.materials.items()
        },
        "buildings": [
            {"footprint": [list(v) for v in b.footprint], "height": b.height, "material": b.material}
            for b in scene.buildings
        ],
        "entities": [{"id": e.id, "position": list(e.position)} for e in scene.entities.values()],
    }


def dump_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), indent=2)


def distance(a, b) -> float:
    return math.dist(a, b)
