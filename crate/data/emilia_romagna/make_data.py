"""Generates the Emilia-Romagna input files.

The region outline, city centres and road chains are coarse hand-digitised
longitude/latitude points projected to UTM zone 32N (metres). The mesh is a
quality Delaunay triangulation (Triangle, minimum angle 28 degrees) seeded
with rows of vertices along every road so that each connection band is
resolved by a contiguous strip of cells. Mesh coordinates
are written in model length units (metres / 1e6).

Usage: python3 make_data.py   (writes next to this script)
"""

import math
import os

import numpy as np
import triangle
from shapely.geometry import LineString, Point, Polygon

HERE = os.path.dirname(os.path.abspath(__file__))
ALPHA_X = 1e6

OUTLINE = [
    (9.20, 44.68), (9.28, 44.85), (9.30, 45.00), (9.45, 45.08), (9.60, 45.10),
    (9.82, 45.10), (9.95, 45.05), (10.10, 45.00), (10.30, 44.97), (10.45, 44.93),
    (10.60, 44.92), (10.80, 44.95), (10.95, 44.95), (11.15, 44.92), (11.35, 44.95),
    (11.50, 44.97), (11.70, 44.98), (11.90, 45.05), (12.15, 45.00), (12.30, 44.93),
    (12.33, 44.80), (12.27, 44.62), (12.32, 44.45), (12.40, 44.25), (12.53, 44.13),
    (12.65, 44.04), (12.75, 43.96), (12.60, 43.88), (12.40, 43.85), (12.25, 43.78),
    (12.05, 43.78), (11.85, 43.92), (11.70, 44.05), (11.50, 44.12), (11.30, 44.15),
    (11.05, 44.12), (10.85, 44.17), (10.65, 44.25), (10.45, 44.27), (10.25, 44.33),
    (10.05, 44.40), (9.85, 44.42), (9.65, 44.45), (9.48, 44.55), (9.33, 44.60),
]

# name, lon, lat, radius km, population, infected, commuter percentage
CITIES = [
    ("Piacenza", 9.693, 45.052, 4.5, 2.87e5, 174, 1.45),
    ("Parma", 10.328, 44.801, 6.0, 4.54e5, 59, 1.51),
    ("Reggio Emilia", 10.631, 44.698, 6.0, 5.32e5, 7, 5.42),
    ("Modena", 10.925, 44.647, 9.0, 7.07e5, 24, 3.63),
    ("Bologna", 11.343, 44.494, 15.0, 10.18e5, 2, 1.64),
    ("Ferrara", 11.620, 44.838, 4.5, 3.49e5, 0, 6.80),
    ("Ravenna", 12.204, 44.418, 4.5, 3.89e5, 2, 5.14),
    ("Cesena", 12.243, 44.139, 4.5, 3.98e5, 1, 3.41),
    ("Rimini", 12.566, 44.060, 3.0, 3.40e5, 16, 1.79),
]

MOBILITY = [
    ("Piacenza", "Parma", 4178),
    ("Parma", "Piacenza", 1707), ("Parma", "Reggio Emilia", 5142),
    ("Reggio Emilia", "Parma", 8969), ("Reggio Emilia", "Modena", 19841),
    ("Modena", "Reggio Emilia", 11488), ("Modena", "Bologna", 13034), ("Modena", "Ferrara", 1173),
    ("Bologna", "Modena", 6842), ("Bologna", "Ferrara", 5983), ("Bologna", "Ravenna", 3887),
    ("Ferrara", "Modena", 2682), ("Ferrara", "Bologna", 16865), ("Ferrara", "Ravenna", 2610),
    ("Ravenna", "Bologna", 9808), ("Ravenna", "Ferrara", 1016), ("Ravenna", "Cesena", 9211),
    ("Cesena", "Ravenna", 6646), ("Cesena", "Rimini", 6944),
    ("Rimini", "Cesena", 6075),
]

ROADS = {
    "highway_piacenza_rimini": [
        (9.693, 45.052), (9.91, 44.93), (10.06, 44.87), (10.328, 44.801), (10.631, 44.698),
        (10.925, 44.647), (11.343, 44.494), (11.714, 44.353), (11.883, 44.285), (12.041, 44.222),
        (12.243, 44.139), (12.566, 44.060),
    ],
    "ferrara_ravenna_rimini": [
        (11.620, 44.838), (11.84, 44.61), (11.99, 44.50), (12.204, 44.418), (12.35, 44.26),
        (12.40, 44.20), (12.566, 44.060),
    ],
    "ferrara_bologna": [(11.620, 44.838), (11.47, 44.68), (11.343, 44.494)],
}

ROAD_STEP = 1500.0
ROAD_OFFSET = 1000.0
OUTER_OFFSET = 2300.0
BACKGROUND = 3200.0


def utm32(lon, lat):
    """WGS84 geographic to UTM zone 32N (transverse Mercator series)."""
    a = 6378137.0
    f = 1 / 298.257223563
    k0 = 0.9996
    e2 = f * (2 - f)
    ep2 = e2 / (1 - e2)
    lon0 = math.radians(9.0)
    phi = math.radians(lat)
    lam = math.radians(lon)
    n = a / math.sqrt(1 - e2 * math.sin(phi) ** 2)
    t = math.tan(phi) ** 2
    c = ep2 * math.cos(phi) ** 2
    aa = math.cos(phi) * (lam - lon0)
    m = a * (
        (1 - e2 / 4 - 3 * e2**2 / 64 - 5 * e2**3 / 256) * phi
        - (3 * e2 / 8 + 3 * e2**2 / 32 + 45 * e2**3 / 1024) * math.sin(2 * phi)
        + (15 * e2**2 / 256 + 45 * e2**3 / 1024) * math.sin(4 * phi)
        - (35 * e2**3 / 3072) * math.sin(6 * phi)
    )
    x = k0 * n * (aa + (1 - t + c) * aa**3 / 6 + (5 - 18 * t + t * t + 72 * c - 58 * ep2) * aa**5 / 120) + 500000.0
    y = k0 * (
        m
        + n * math.tan(phi) * (aa * aa / 2 + (5 - t + 9 * c + 4 * c * c) * aa**4 / 24
                               + (61 - 58 * t + t * t + 600 * c - 330 * ep2) * aa**6 / 720)
    )
    return x, y


def resample(pts, step):
    """Points along a polyline at arc-length spacing close to `step`."""
    line = LineString(pts)
    n = max(1, round(line.length / step))
    return [line.interpolate(i * line.length / n) for i in range(n + 1)], line.length / n


def offsets(pts, step, dist, stagger):
    line = LineString(pts)
    n = max(1, round(line.length / step))
    h = line.length / n
    out = []
    for i in range(n + (0 if stagger else 1)):
        s = (i + 0.5) * h if stagger else i * h
        p = line.interpolate(s)
        q = line.interpolate(min(line.length, s + 1.0))
        r = line.interpolate(max(0.0, s - 1.0))
        tx, ty = q.x - r.x, q.y - r.y
        norm = math.hypot(tx, ty)
        nx, ny = -ty / norm, tx / norm
        out.append((p.x + dist * nx, p.y + dist * ny))
        out.append((p.x - dist * nx, p.y - dist * ny))
    return out


def main():
    outline = [utm32(*p) for p in OUTLINE]
    poly = Polygon(outline)
    roads = {k: [utm32(*p) for p in v] for k, v in ROADS.items()}
    road_lines = [LineString(v) for v in roads.values()]

    accepted = []

    def add(points, min_dist):
        arr = np.array(accepted) if accepted else np.zeros((0, 2))
        for p in points:
            if not poly.buffer(1.0).contains(Point(p)):
                continue
            if len(arr) and np.min(np.hypot(arr[:, 0] - p[0], arr[:, 1] - p[1])) < min_dist:
                continue
            accepted.append(p)
            arr = np.vstack([arr, p])

    ring, _ = resample(outline + [outline[0]], BACKGROUND)
    ring = [(p.x, p.y) for p in ring[:-1]]
    accepted.extend(ring)
    nb = len(ring)
    for v in roads.values():
        pts, _ = resample(v, ROAD_STEP)
        add([(p.x, p.y) for p in pts], 0.9 * ROAD_OFFSET)
    for v in roads.values():
        add(offsets(v, ROAD_STEP, ROAD_OFFSET, True), 0.9 * ROAD_OFFSET)
    for v in roads.values():
        add(offsets(v, OUTER_OFFSET, OUTER_OFFSET, False), 0.6 * OUTER_OFFSET)
    minx, miny, maxx, maxy = poly.bounds
    dy = BACKGROUND * math.sqrt(3) / 2
    grid = []
    j = 0
    y = miny
    while y <= maxy:
        x = minx + (0.5 * BACKGROUND if j % 2 else 0.0)
        while x <= maxx:
            p = Point(x, y)
            if poly.contains(p) and poly.exterior.distance(p) > 0.5 * BACKGROUND:
                if min(l.distance(p) for l in road_lines) > OUTER_OFFSET + 0.4 * BACKGROUND:
                    grid.append((x, y))
            x += BACKGROUND
        y += dy
        j += 1
    add(grid, 0.7 * BACKGROUND)

    # keep interior seeds away from the outline so that the quality pass
    # does not have to split short boundary features
    seeds = [p for p in accepted[nb:] if poly.exterior.distance(Point(p)) > 0.8 * ROAD_OFFSET]
    verts = np.array(ring + seeds)
    segs = np.array([[i, (i + 1) % nb] for i in range(nb)])
    out = triangle.triangulate({"vertices": verts, "segments": segs}, "pq28")
    pts = out["vertices"]
    cells = []
    for s in out["triangles"]:
        a, b, d = pts[s]
        area = 0.5 * ((b[0] - a[0]) * (d[1] - a[1]) - (d[0] - a[0]) * (b[1] - a[1]))
        cells.append(list(s) if area > 0 else [s[0], s[2], s[1]])
    used = sorted({v for c in cells for v in c})
    remap = {v: i for i, v in enumerate(used)}

    with open(os.path.join(HERE, "mesh.txt"), "w") as f:
        f.write("# Emilia-Romagna triangulation, coordinates in model units (metres / 1e6)\n")
        f.write(f"MESH2D {len(used)} {len(cells)}\n")
        for v in used:
            f.write(f"{float(pts[v][0]) / ALPHA_X!r} {float(pts[v][1]) / ALPHA_X!r}\n")
        for c in cells:
            f.write("3 " + " ".join(str(remap[v]) for v in c) + "\n")

    with open(os.path.join(HERE, "boundary.txt"), "w") as f:
        f.write("# region outline, UTM zone 32N metres\n")
        for x, y in outline:
            f.write(f"{x:.1f} {y:.1f}\n")

    os.makedirs(os.path.join(HERE, "connections"), exist_ok=True)
    for name, v in roads.items():
        with open(os.path.join(HERE, "connections", name + ".txt"), "w") as f:
            f.write("# connection polyline, UTM zone 32N metres\n")
            for x, y in v:
                f.write(f"{x:.1f} {y:.1f}\n")

    with open(os.path.join(HERE, "cities.csv"), "w") as f:
        f.write("name,x,y,r_km,P,I0,E0,C\n")
        for name, lon, lat, r, p, i0, c in CITIES:
            x, y = utm32(lon, lat)
            f.write(f"{name},{x:.1f},{y:.1f},{r},{p:.0f},{i0},{4 * i0},{c / 100:.4f}\n")

    with open(os.path.join(HERE, "mobility.csv"), "w") as f:
        f.write("origin,destination,count\n")
        for o, d, n in MOBILITY:
            f.write(f"{o},{d},{n}\n")

    print(f"{len(used)} vertices, {len(cells)} cells")


if __name__ == "__main__":
    main()
