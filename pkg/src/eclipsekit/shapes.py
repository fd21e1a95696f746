"""Procedurally generated test bodies: cube, icosphere, lumpy potato.

Real shape models are third-party data and are not shipped; these generators
provide watertight stand-ins for tests, demos and benchmarks.
"""

import math

import numpy as np

from .geometry import TriangleMesh

_PHI = (1.0 + math.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)

_ICO_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def cube_mesh(half_extent=0.5):
    """Axis-aligned cube [-h, h]^3 with outward-facing triangles."""
    h = float(half_extent)
    v = np.array([(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # vertex index = 4*(x>0) + 2*(y>0) + (z>0)
    faces = [
        (0, 1, 3), (0, 3, 2),      # -x
        (4, 6, 7), (4, 7, 5),      # +x
        (0, 4, 5), (0, 5, 1),      # -y
        (2, 3, 7), (2, 7, 6),      # +y
        (0, 2, 6), (0, 6, 4),      # -z
        (1, 5, 7), (1, 7, 3),      # +z
    ]
    return TriangleMesh(v, np.array(faces), 1.0)


def icosphere(subdivisions=0, radius=1.0):
    """Icosahedron subdivided `subdivisions` times, projected onto a sphere.

    Triangle count is 20 * 4**subdivisions.
    """
    verts = [v / np.linalg.norm(v) for v in _ICO_VERTS]
    faces = list(_ICO_FACES)
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    v = np.array(verts) * radius
    return TriangleMesh(v, np.array(faces), 1.0)


def bumpy_body(subdivisions=4, seed=20, n_lobes=12, amplitude=0.3,
               axis_scale=(1.0, 0.85, 0.7)):
    """Irregular star-convex body: a squashed sphere with random radial lobes.

    Deterministic for a fixed seed; watertight by construction. Coordinates
    are rescaled so the largest one is 0.95.
    """
    base = icosphere(subdivisions)
    dirs = base.vertices / np.linalg.norm(base.vertices, axis=1)[:, None]
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_lobes, 3))
    centers /= np.linalg.norm(centers, axis=1)[:, None]
    widths = rng.uniform(0.35, 0.8, n_lobes)
    amps = rng.uniform(-amplitude, amplitude, n_lobes)
    ang = np.arccos(np.clip(dirs @ centers.T, -1.0, 1.0))      # (V, n_lobes)
    radial = 1.0 + (amps * np.exp(-(ang / widths) ** 2)).sum(axis=1)
    radial = np.maximum(radial, 0.25)
    verts = dirs * radial[:, None] * np.asarray(axis_scale, dtype=np.float64)
    verts *= 0.95 / np.abs(verts).max()
    return TriangleMesh(verts, base.triangles, 1.0)
