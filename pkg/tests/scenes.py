"""Scene builders shared by the test modules."""

import numpy as np

from dntwin.geometry import Building, Entity, Material, Scene, points_in_polygon

MATERIALS = {"concrete": Material(5.24, 0.12), "ground": Material(15.0, 0.035)}


def box(x0, x1, y0, y1, height, material="concrete"):
    return Building(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), float(height), material)


def scene_with(buildings=(), positions=None, ground=False, materials=None):
    positions = positions or {}
    ents = {i: Entity(i, tuple(float(c) for c in p)) for i, p in positions.items()}
    return Scene(tuple(buildings), dict(materials or MATERIALS), ents, ground)


def single_wall_scene(tx=(0.0, 0.0, 1.5), rx=(0.0, 5.0, 1.5)):
    """A wall at x = 10 facing -x, large enough to act as an infinite plane."""
    return scene_with([box(10.0, 20.0, -1e4, 1e4, 1e4)], {0: tx, 1: rx})


def _free_point(rng, buildings, xy_low, xy_high, z=(1.0, 3.0)):
    while True:
        p = np.array([rng.uniform(xy_low[0], xy_high[0]), rng.uniform(xy_low[1], xy_high[1]), rng.uniform(*z)])
        if not any(points_in_polygon(p[None, :2], np.array(b.footprint))[0] for b in buildings):
            return tuple(float(c) for c in p)


def random_open_scene(rng, max_buildings=3):
    """Up to three non-overlapping boxes on a ground plane; at most 16 facets."""
    blds = []
    for _ in range(int(rng.integers(1, max_buildings + 1))):
        for _attempt in range(200):
            cx, cy = rng.uniform(-40, 40, 2)
            w, h = rng.uniform(5, 25, 2)
            cand = box(cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2, rng.uniform(5, 30))
            if all(_apart(cand, b) for b in blds):
                blds.append(cand)
                break
    pos = {i: _free_point(rng, blds, (-45, -45), (45, 45)) for i in (0, 1)}
    return scene_with(blds, pos, ground=True)


def _apart(a, b, gap=1.0):
    ax = [v[0] for v in a.footprint]
    ay = [v[1] for v in a.footprint]
    bx = [v[0] for v in b.footprint]
    by = [v[1] for v in b.footprint]
    return min(ax) > max(bx) + gap or min(bx) > max(ax) + gap or min(ay) > max(by) + gap or min(by) > max(ay) + gap


def random_canyon_scene(rng):
    """Street between two facing blocks, sometimes with a low obstacle; at most 16 facets."""
    w = rng.uniform(8, 30)
    l1, l2 = rng.uniform(40, 120, 2)
    o1, o2 = rng.uniform(-20, 20, 2)
    blds = [
        box(o1 - l1 / 2, o1 + l1 / 2, w / 2, w / 2 + 20, rng.uniform(6, 30)),
        box(o2 - l2 / 2, o2 + l2 / 2, -w / 2 - 20, -w / 2, rng.uniform(6, 30)),
    ]
    if rng.random() < 0.5:
        cx = rng.uniform(-30, 30)
        blds.append(box(cx - 5, cx + 5, -4, 4, rng.uniform(3, 10)))
    pos = {i: _free_point(rng, blds, (-60, -w / 2 + 0.5), (60, w / 2 - 0.5)) for i in (0, 1)}
    return scene_with(blds, pos, ground=True)
