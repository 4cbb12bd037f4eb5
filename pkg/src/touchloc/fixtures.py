"""Procedural test objects and the bundled fixture files.

The bundled OBJ files under ``touchloc/data`` are generated by
:func:`write_fixture_files`; ``fixture_mesh`` loads them through the regular
OBJ loader.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from touchloc.geometry import Mesh, load_mesh

FIXTURES = ("box", "back", "register")


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def _point_in_tri(p, a, b, c):
    def cross(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])
    return cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0


def ear_clip(poly):
    """Triangulate a simple counter-clockwise polygon; returns index triples."""
    poly = np.asarray(poly, dtype=float)
    idx = list(range(len(poly)))
    tris = []
    while len(idx) > 3:
        for k in range(len(idx)):
            i0, i1, i2 = idx[k - 1], idx[k], idx[(k + 1) % len(idx)]
            a, b, c = poly[i0], poly[i1], poly[i2]
            convex = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]) > 1e-12
            if not convex:
                continue
            if any(_point_in_tri(poly[j], a, b, c) for j in idx if j not in (i0, i1, i2)):
                continue
            tris.append((i0, i1, i2))
            del idx[k]
            break
        else:
            raise ValueError("polygon is not simple")
    tris.append(tuple(idx))
    return tris


def extrude(profile, depth):
    """Extrude a 2-D (u, v) profile along x, centered on the origin.

    The profile is placed in the y-z plane (u -> y, v -> z). Faces wind
    counter-clockwise seen from outside.
    """
    prof = np.asarray(profile, dtype=float)
    if _signed_area(prof) < 0:
        prof = prof[::-1]
    n = len(prof)
    x0, x1 = -depth / 2.0, depth / 2.0
    verts = [(x0, u, v) for u, v in prof] + [(x1, u, v) for u, v in prof]
    faces = []
    # cap at +x: profile is CCW in (y, z) seen from +x
    for a, b, c in ear_clip(prof):
        faces.append((n + a, n + b, n + c))
        faces.append((c, b, a))
    for i in range(n):
        j = (i + 1) % n
        faces.append((i, j, n + j))
        faces.append((i, n + j, n + i))
    verts = np.array(verts)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    verts -= 0.5 * (lo + hi)
    return Mesh(verts, faces)


def box_mesh(size=(160.0, 110.0, 80.0)):
    sx, sy, sz = (0.5 * s for s in size)
    v = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return Mesh(v, faces)


def back_mesh():
    """Chair-back slab: arched top, shoulder chamfers and a notch cut from the bottom."""
    arc = [(100.0 * np.cos(a), 160.0 + 40.0 * np.sin(a))
           for a in np.linspace(0.0, np.pi, 7)]
    profile = [(-100.0, 0.0), (-40.0, 0.0), (-40.0, 50.0), (40.0, 50.0), (40.0, 0.0),
               (100.0, 0.0), (100.0, 140.0)] + arc + [(-100.0, 140.0)]
    return extrude(profile, 24.0)


def register_mesh():
    """Cash-register-like stepped body: base, sloped keypad, display tower."""
    profile = [
        (-110.0, 0.0), (110.0, 0.0), (118.0, 10.0), (118.0, 42.0), (104.0, 50.0),
        (70.0, 54.0), (20.0, 80.0), (12.0, 96.0), (24.0, 128.0), (16.0, 150.0),
        (-30.0, 156.0), (-52.0, 140.0), (-60.0, 96.0), (-80.0, 86.0),
        (-112.0, 60.0), (-118.0, 36.0), (-118.0, 10.0),
    ]
    return extrude(profile, 260.0)


def stick_mesh(length=300.0, width=20.0):
    return box_mesh((length, width, width))


def build_fixture(name) -> Mesh:
    return {"box": box_mesh, "back": back_mesh, "register": register_mesh,
            "stick": stick_mesh}[name]()


def write_fixture_files(directory):
    from pathlib import Path
    directory = Path(directory)
    for name in FIXTURES + ("stick",):
        build_fixture(name).save(directory / f"{name}.obj")


def fixture_path(name):
    return resources.files("touchloc") / "data" / f"{name}.obj"


def fixture_mesh(name) -> Mesh:
    with resources.as_file(fixture_path(name)) as p:
        return load_mesh(p)
