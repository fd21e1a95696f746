"""Triangle-mesh geometry: OBJ loading, ray casting, mascon generation, sphere sampling.

All meshes live in body-normalized coordinates (vertices divided by the
characteristic length), so every coordinate is in [-1, 1]. Geometry objects
are immutable after construction and all queries are read-only, so they can
be shared freely between threads.
"""

import math

import numpy as np

from .errors import GeometryError, MasconError, MeshError

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

_MT_EPS = 1e-12          # determinant cutoff for ray-parallel triangles
_EDGE_TOL = 1e-9         # barycentric margin that counts as a grazing hit
_BVH_LEAF_SIZE = 8
_DEGENERATE_AREA = 1e-12

# Parity-ray directions: a nearly-axis-aligned primary with tiny incommensurate
# components (so it never lines up with mesh edges), plus fixed fallbacks used
# when a grazing hit is detected.
_PARITY_DIRECTIONS = [np.array([1.0, 1e-4, 1e-8])]
_PARITY_DIRECTIONS += list(np.random.default_rng(715517).normal(size=(8, 3)))
_PARITY_DIRECTIONS = [d / np.linalg.norm(d) for d in _PARITY_DIRECTIONS]


class TriangleMesh:
    """Indexed triangle surface of a body, in normalized coordinates."""

    def __init__(self, vertices, triangles, characteristic_length_km=1.0):
        # private copies: instances freeze their arrays, never the caller's
        vertices = np.array(vertices, dtype=np.float64, order="C")
        triangles = np.array(triangles, dtype=np.int64, order="C")
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must be an (N, 3) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshError("triangles must be an (M, 3) array")
        if len(vertices) == 0 or len(triangles) == 0:
            raise MeshError("empty mesh")
        if not np.isfinite(vertices).all():
            raise MeshError("non-finite vertex coordinate")
        if characteristic_length_km <= 0:
            raise MeshError("characteristic length must be positive")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshError(
                f"face index out of range (vertex count {len(vertices)})")
        top = np.abs(vertices).max()
        if top > 1.0 + 1e-9:
            raise MeshError(
                f"vertex coordinates reach {top:.6g} after dividing by the "
                "characteristic length; expected them inside [-1, 1]")

        v0, v1, v2 = (vertices[triangles[:, k]] for k in range(3))
        areas = 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)
        if (areas <= _DEGENERATE_AREA).any():
            bad = int(np.argmin(areas))
            raise MeshError(f"degenerate triangle at index {bad}")

        vertices.flags.writeable = False
        triangles.flags.writeable = False
        self.vertices = vertices
        self.triangles = triangles
        self.characteristic_length_km = float(characteristic_length_km)
        self._corners = None
        self._bvh = None
        self._watertight = None

    @property
    def vertex_count(self):
        return len(self.vertices)

    @property
    def triangle_count(self):
        return len(self.triangles)

    @property
    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_corners(self):
        """Per-triangle vertex arrays (v0, v1, v2), cached."""
        if self._corners is None:
            self._corners = tuple(
                np.ascontiguousarray(self.vertices[self.triangles[:, k]])
                for k in range(3))
        return self._corners

    @property
    def is_watertight(self):
        """True when every undirected edge is shared by exactly two triangles."""
        if self._watertight is None:
            tri = self.triangles
            edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
            edges = np.sort(edges, axis=1)
            _, counts = np.unique(edges, axis=0, return_counts=True)
            self._watertight = bool((counts == 2).all())
        return self._watertight

    @property
    def bvh(self):
        if self._bvh is None:
            self._bvh = _Bvh(self)
        return self._bvh


class Ray:
    """Half-line with a unit direction."""

    __slots__ = ("origin", "direction")

    def __init__(self, origin, direction):
        origin = np.asarray(origin, dtype=np.float64)
        direction = np.asarray(direction, dtype=np.float64)
        n = np.linalg.norm(direction)
        if abs(n - 1.0) > 1e-9:
            raise GeometryError(f"ray direction must be unit length, |d| = {n:.3g}")
        self.origin = origin
        self.direction = direction / n


def load_mesh(path, characteristic_length_km):
    """Read a Wavefront-style mesh (`v x y z`, `f i j k`) and normalize it.

    Vertex coordinates are divided by the characteristic length. Face records
    with texture/normal slots (`f 1/1/1 ...`) keep only the vertex index;
    polygons are fan-triangulated. Everything else in the file is ignored.
    """
    if characteristic_length_km <= 0:
        raise MeshError("characteristic length must be positive")
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: malformed vertex record")
                try:
                    verts.append([float(p) for p in parts[1:4]])
                except ValueError as exc:
                    raise MeshError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{lineno}: face needs >= 3 indices")
                idx = []
                for tok in parts[1:]:
                    try:
                        idx.append(int(tok.split("/")[0]))
                    except ValueError as exc:
                        raise MeshError(f"{path}:{lineno}: bad face index {tok!r}") from exc
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
    if not verts:
        raise MeshError(f"{path}: no vertices found")
    if not faces:
        raise MeshError(f"{path}: no faces found")
    vertices = np.array(verts, dtype=np.float64)
    if not np.isfinite(vertices).all():
        raise MeshError(f"{path}: non-finite vertex coordinate")
    triangles = np.array(faces, dtype=np.int64)
    if triangles.min() < 1 or triangles.max() > len(vertices):
        raise MeshError(
            f"{path}: face index out of range 1..{len(vertices)}")
    return TriangleMesh(vertices / characteristic_length_km, triangles - 1,
                        characteristic_length_km)


def _fmt(x):
    """Shortest round-tripping decimal of a scalar."""
    return repr(float(x))


def save_obj(mesh, path):
    """Write mesh coordinates as they are stored (normalized units)."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def ray_triangle_intersect(ray, v0, v1, v2):
    """Moller-Trumbore intersection; returns the hit distance t >= 0 or None.

    The triangle must be non-degenerate; rays parallel to the triangle plane
    miss by definition.
    """
    ox, oy, oz = (float(c) for c in ray.origin)
    dx, dy, dz = (float(c) for c in ray.direction)
    ax, ay, az = (float(c) for c in v0)
    e1x, e1y, e1z = float(v1[0]) - ax, float(v1[1]) - ay, float(v1[2]) - az
    e2x, e2y, e2z = float(v2[0]) - ax, float(v2[1]) - ay, float(v2[2]) - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < _MT_EPS:
        return None
    inv = 1.0 / det
    tx, ty, tz = ox - ax, oy - ay, oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < 0.0 or u > 1.0:
        return None
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t if t >= 0.0 else None


class _Bvh:
    """Axis-aligned BVH, median split on the longest centroid axis."""

    def __init__(self, mesh):
        v0, v1, v2 = mesh.triangle_corners()
        lo = np.minimum(np.minimum(v0, v1), v2)
        hi = np.maximum(np.maximum(v0, v1), v2)
        centroids = (v0 + v1 + v2) / 3.0

        self._bounds = []     # (lox, loy, loz, hix, hiy, hiz)
        self._children = []   # (left, right) or (-1, -1) for leaves
        self._ranges = []     # (start, count) into the triangle order
        order = []

        def build(idx):
            node = len(self._bounds)
            nlo = lo[idx].min(axis=0)
            nhi = hi[idx].max(axis=0)
            self._bounds.append((nlo[0], nlo[1], nlo[2], nhi[0], nhi[1], nhi[2]))
            self._children.append((-1, -1))
            self._ranges.append((0, 0))
            if len(idx) <= _BVH_LEAF_SIZE:
                self._ranges[node] = (len(order), len(idx))
                order.extend(idx.tolist())
                return node
            c = centroids[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            perm = np.argsort(c[:, axis], kind="stable")
            half = len(idx) // 2
            left = build(idx[perm[:half]])
            right = build(idx[perm[half:]])
            self._children[node] = (left, right)
            return node

        import sys
        depth = max(64, 4 * int(math.log2(max(2, mesh.triangle_count))) + 64)
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(old + depth)
        try:
            build(np.arange(mesh.triangle_count))
        finally:
            sys.setrecursionlimit(old)

        order = np.array(order, dtype=np.int64)
        # Leaf triangles as flat python tuples: the traversal is scalar code and
        # plain floats beat numpy indexing there.
        self._tris = [
            (
                tuple(float(x) for x in v0[i]),
                tuple(float(x) for x in v1[i] - v0[i]),
                tuple(float(x) for x in v2[i] - v0[i]),
            )
            for i in order
        ]

    def any_hit(self, origin, direction):
        ox, oy, oz = (float(c) for c in origin)
        dx, dy, dz = (float(c) for c in direction)
        invx = 1.0 / dx if dx != 0.0 else math.inf
        invy = 1.0 / dy if dy != 0.0 else math.inf
        invz = 1.0 / dz if dz != 0.0 else math.inf
        bounds = self._bounds
        children = self._children
        ranges = self._ranges
        tris = self._tris
        stack = [0]
        while stack:
            node = stack.pop()
            lox, loy, loz, hix, hiy, hiz = bounds[node]
            tmin = 0.0
            tmax = math.inf
            if dx != 0.0:
                t1 = (lox - ox) * invx
                t2 = (hix - ox) * invx
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif ox < lox or ox > hix:
                continue
            if dy != 0.0:
                t1 = (loy - oy) * invy
                t2 = (hiy - oy) * invy
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif oy < loy or oy > hiy:
                continue
            if dz != 0.0:
                t1 = (loz - oz) * invz
                t2 = (hiz - oz) * invz
                if t1 > t2:
                    t1, t2 = t2, t1
                if t1 > tmin:
                    tmin = t1
                if t2 < tmax:
                    tmax = t2
            elif oz < loz or oz > hiz:
                continue
            if tmax < tmin:
                continue
            left, right = children[node]
            if left >= 0:
                stack.append(left)
                stack.append(right)
                continue
            start, count = ranges[node]
            for k in range(start, start + count):
                (ax, ay, az), (e1x, e1y, e1z), (e2x, e2y, e2z) = tris[k]
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if -_MT_EPS < det < _MT_EPS:
                    continue
                inv = 1.0 / det
                tx, ty, tz = ox - ax, oy - ay, oz - az
                u = (tx * px + ty * py + tz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t >= 0.0:
                    return True
        return False


def ray_hits_mesh(ray, mesh, accelerated=True):
    """True iff any triangle intersects the ray at t >= 0."""
    if accelerated:
        return mesh.bvh.any_hit(ray.origin, ray.direction)
    return bool(rays_hit_mesh_exhaustive(ray.origin[None, :],
                                         ray.direction[None, :], mesh)[0])


def _pair_budget_chunk(n_triangles, budget=1_000_000):
    return max(1, budget // max(1, n_triangles))


def rays_hit_mesh_exhaustive(origins, directions, mesh):
    """Vectorized any-hit test of many rays against every triangle."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    v0, v1, v2 = mesh.triangle_corners()
    e1 = v1 - v0
    e2 = v2 - v0
    n = len(origins)
    out = np.zeros(n, dtype=bool)
    chunk = _pair_budget_chunk(mesh.triangle_count)
    for s in range(0, n, chunk):
        o = origins[s:s + chunk][:, None, :]
        d = directions[s:s + chunk][:, None, :]
        p = np.cross(d, e2[None, :, :])
        det = np.einsum("rtk,tk->rt", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(det) > _MT_EPS, 1.0 / det, 0.0)
        tv = o - v0[None, :, :]
        u = np.einsum("rtk,rtk->rt", tv, p) * inv
        q = np.cross(tv, e1[None, :, :])
        v = np.einsum("rk,rtk->rt", d[:, 0, :], q) * inv
        t = np.einsum("tk,rtk->rt", e2, q) * inv
        hit = ((np.abs(det) > _MT_EPS) & (u >= 0.0) & (u <= 1.0)
               & (v >= 0.0) & (u + v <= 1.0) & (t >= 0.0))
        out[s:s + chunk] = hit.any(axis=1)
    return out


def _parity_counts(points, direction, mesh):
    """Crossing counts along one shared direction, plus grazing flags."""
    v0, v1, v2 = mesh.triangle_corners()
    e1 = v1 - v0
    e2 = v2 - v0
    d = np.asarray(direction, dtype=np.float64)
    p = np.cross(d[None, :], e2)                   # per triangle, shared ray dir
    det = np.einsum("tk,tk->t", p, e1)
    usable = np.abs(det) > _MT_EPS
    with np.errstate(divide="ignore"):
        inv = np.where(usable, 1.0 / det, 0.0)

    n = len(points)
    counts = np.zeros(n, dtype=np.int64)
    grazing = np.zeros(n, dtype=bool)
    chunk = _pair_budget_chunk(mesh.triangle_count)
    for s in range(0, n, chunk):
        tv = points[s:s + chunk][:, None, :] - v0[None, :, :]
        u = np.einsum("rtk,tk->rt", tv, p) * inv
        q = np.cross(tv, e1[None, :, :])
        v = np.einsum("rtk,k->rt", q, d) * inv
        t = np.einsum("rtk,tk->rt", q, e2) * inv
        w = 1.0 - u - v
        inside = usable & (u >= 0.0) & (v >= 0.0) & (w >= 0.0)
        hit = inside & (t > 0.0)
        counts[s:s + chunk] = hit.sum(axis=1)
        near_edge = hit & ((u < _EDGE_TOL) | (v < _EDGE_TOL) | (w < _EDGE_TOL))
        near_plane = inside & (np.abs(t) <= 1e-12)
        grazing[s:s + chunk] = (near_edge | near_plane).any(axis=1)
    return counts, grazing


def points_in_polyhedron(points, mesh, direction=None, max_retries=8):
    """Ray-parity interiority test for a batch of points.

    Grazing hits (an intersection within tolerance of a triangle edge or of
    the query point itself) invalidate the parity, so those points are re-cast
    along fallback directions; after `max_retries` failures an error is raised.
    """
    if not mesh.is_watertight:
        raise GeometryError("point-in-polyhedron needs a watertight mesh")
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    dirs = _PARITY_DIRECTIONS if direction is None else (
        [np.asarray(direction, dtype=np.float64)] + _PARITY_DIRECTIONS[1:])
    for attempt in range(max_retries):
        d = dirs[attempt % len(dirs)]
        counts, grazing = _parity_counts(points[pending], d, mesh)
        settled = ~grazing
        inside[pending[settled]] = counts[settled] % 2 == 1
        pending = pending[grazing]
        if pending.size == 0:
            return inside
    raise GeometryError(
        f"parity ray still grazing after {max_retries} retries "
        f"for {pending.size} point(s)")


def point_in_polyhedron(p, mesh, direction=None):
    """True iff p lies inside the watertight mesh."""
    return bool(points_in_polyhedron(np.asarray(p)[None, :], mesh,
                                     direction=direction)[0])


def mesh_volume_centroid(mesh):
    """(volume, centroid) of a closed mesh via divergence-theorem sums.

    Requires consistent outward winding; the returned volume is made positive
    regardless of orientation.
    """
    if not mesh.is_watertight:
        raise GeometryError("volume needs a watertight mesh")
    v0, v1, v2 = mesh.triangle_corners()
    w = np.einsum("ij,ij->i", v0, np.cross(v1, v2))   # 6 x signed tet volume
    total = w.sum()
    if abs(total) < 1e-15:
        raise GeometryError("mesh encloses no volume")
    centroid = ((v0 + v1 + v2) / 4.0 * w[:, None]).sum(axis=0) / total
    return abs(total) / 6.0, centroid


class MasconModel:
    """Point-mass gravity model; masses are normalized so they sum to one."""

    def __init__(self, positions, masses, total_mass_kg):
        positions = np.array(positions, dtype=np.float64, order="C")
        masses = np.array(masses, dtype=np.float64, order="C")
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise MasconError("positions must be an (N, 3) array")
        if masses.shape != (len(positions),):
            raise MasconError("masses must match positions")
        if len(masses) == 0:
            raise MasconError("empty mascon model")
        if (masses <= 0).any():
            raise MasconError("mascon masses must be positive")
        if abs(masses.sum() - 1.0) > 1e-12:
            raise MasconError(
                f"mascon masses must sum to 1, got {masses.sum()!r}")
        if total_mass_kg <= 0:
            raise MasconError("total mass must be positive")
        positions.flags.writeable = False
        masses.flags.writeable = False
        self.positions = positions
        self.masses = masses
        self.total_mass_kg = float(total_mass_kg)

    @property
    def count(self):
        return len(self.masses)

    def center_of_mass(self):
        return self.masses @ self.positions


def generate_mascons_voxel(mesh, grid_n, total_mass_kg):
    """Equal-mass mascons at the interior cell centers of a regular voxel grid.

    The grid spans the mesh bounding box exactly; a cell contributes a mascon
    when its center is inside the mesh.
    """
    if grid_n < 2:
        raise MasconError("grid_n must be >= 2")
    if not mesh.is_watertight:
        raise MasconError("mascon generation needs a watertight mesh")
    lo, hi = mesh.bounds
    centers_1d = [lo[k] + (np.arange(grid_n) + 0.5) * (hi[k] - lo[k]) / grid_n
                  for k in range(3)]
    gx, gy, gz = np.meshgrid(*centers_1d, indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    inside = points_in_polyhedron(centers, mesh)
    n_in = int(inside.sum())
    if n_in == 0:
        raise MasconError("no voxel centers fall inside the mesh; raise grid_n")
    masses = np.full(n_in, 1.0 / n_in)
    masses /= masses.sum()
    return MasconModel(centers[inside], masses, total_mass_kg)


def save_mascons(model, path):
    """CSV with header x,y,z,m in normalized units."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z,m\n")
        for p, m in zip(model.positions, model.masses):
            fh.write(f"{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{_fmt(m)}\n")


def load_mascons(path, total_mass_kg):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "x,y,z,m":
            raise MasconError(f"{path}: expected header 'x,y,z,m', got {header!r}")
        rows = []
        for lineno, line in enumerate(fh, 2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise MasconError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise MasconError(f"{path}:{lineno}: bad number") from exc
    if not rows:
        raise MasconError(f"{path}: no mascons")
    arr = np.array(rows, dtype=np.float64)
    return MasconModel(arr[:, :3], arr[:, 3], total_mass_kg)


def fibonacci_sphere(n, offset_seed=0):
    """n quasi-uniform unit vectors from a golden-angle spiral.

    The azimuthal phase is a deterministic function of `offset_seed`, so two
    calls with different seeds give point sets that share no direction.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    phase = float(np.random.default_rng(offset_seed).random())
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * GOLDEN_ANGLE + 2.0 * math.pi * phase
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    pts /= np.linalg.norm(pts, axis=1)[:, None]
    return pts
