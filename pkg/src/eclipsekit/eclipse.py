"""Shadow-cylinder silhouettes and the signed eclipse function.

With the Sun at infinity along the unit vector s, a body casts a cylindrical
shadow. In the plane through the origin orthogonal to s, the eclipse function
F(x, y) is the distance to the silhouette boundary, negative for points inside
the shadow and positive outside. The silhouette is traced by marching squares
over a membership grid whose edges are then refined by bisection.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .errors import BoundaryError, GeometryError
from . import geometry

_AXES = np.eye(3)

DEFAULT_WINDOW = 1.2
DEFAULT_REFINE_TOL = 1e-6


@dataclass(frozen=True)
class ProjectionFrame:
    """Right-handed orthonormal triad (u, v, s); u and v span the shadow plane."""

    s_hat: np.ndarray
    u_hat: np.ndarray
    v_hat: np.ndarray

    def project(self, points):
        """3D points -> (x, y) plane coordinates."""
        points = np.asarray(points, dtype=np.float64)
        return np.stack([points @ self.u_hat, points @ self.v_hat], axis=-1)

    def lift(self, xy):
        """(x, y) plane coordinates -> 3D points in the plane through the origin."""
        xy = np.asarray(xy, dtype=np.float64)
        return (xy[..., 0:1] * self.u_hat[None, :]
                + xy[..., 1:2] * self.v_hat[None, :])


def build_frame(s_hat):
    """Deterministic frame orthogonal to the Sun direction.

    u = normalize(a x s) where a is the coordinate axis least aligned with s
    (ties broken in x, y, z order); v = s x u. The rule is exact for repeated
    inputs but only piecewise-continuous in s.
    """
    s = np.asarray(s_hat, dtype=np.float64)
    n = np.linalg.norm(s)
    if n < 1e-12:
        raise GeometryError("Sun direction must not be the zero vector")
    if abs(n - 1.0) > 1e-9:
        raise GeometryError(f"Sun direction must be unit length, |s| = {n:.6g}")
    s = s / n
    a = _AXES[int(np.argmin(np.abs(s)))]
    u = np.cross(a, s)
    u /= np.linalg.norm(u)
    v = np.cross(s, u)
    for arr in (s, u, v):
        arr.flags.writeable = False
    return ProjectionFrame(s, u, v)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class ShadowSampler:
    """Batched shadow-cylinder membership tests for one frame.

    Every mesh triangle is projected onto the frame plane once; a query point
    lies in the shadow cylinder iff it falls inside some projected triangle,
    which is equivalent to the line through the point along s intersecting the
    mesh. Triangles are binned on a coarse 2D grid so each query only checks
    nearby candidates; the predicate is identical to the exhaustive scan.
    """

    def __init__(self, mesh, frame, bin_n=None):
        self.mesh = mesh
        self.frame = frame
        P = mesh.vertices @ np.column_stack([frame.u_hat, frame.v_hat])
        tri = P[mesh.triangles]                       # (M, 3, 2)
        a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
        area2 = _cross2(b - a, c - a)
        keep = np.abs(area2) > 1e-14                  # drop edge-on projections
        self._a = a[keep]
        self._ab = (b - a)[keep]
        self._ac = (c - a)[keep]
        self._inv = 1.0 / area2[keep]

        tlo = tri[keep].min(axis=1)
        thi = tri[keep].max(axis=1)
        self._lo = tlo.min(axis=0)
        self._hi = thi.max(axis=0)
        m = len(self._a)
        if bin_n is None:
            bin_n = int(np.clip(math.sqrt(max(m, 1)) * 0.7, 8, 96))
        self._bin_n = bin_n
        span = np.maximum(self._hi - self._lo, 1e-12)
        self._cell = span / bin_n
        i0 = np.clip(((tlo - self._lo) / self._cell).astype(np.int64), 0, bin_n - 1)
        i1 = np.clip(((thi - self._lo) / self._cell).astype(np.int64), 0, bin_n - 1)
        cells = [[] for _ in range(bin_n * bin_n)]
        for t in range(m):
            for ix in range(i0[t, 0], i1[t, 0] + 1):
                base = ix * bin_n
                for iy in range(i0[t, 1], i1[t, 1] + 1):
                    cells[base + iy].append(t)
        self._cells = [np.array(c, dtype=np.int64) for c in cells]

    def membership(self, points):
        """Boolean shadow membership for an (N, 2) array of plane points."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(len(points), dtype=bool)
        inb = ((points >= self._lo) & (points <= self._hi)).all(axis=1)
        if not inb.any():
            return out
        idx = np.flatnonzero(inb)
        pts = points[idx]
        ij = np.clip(((pts - self._lo) / self._cell).astype(np.int64),
                     0, self._bin_n - 1)
        flat = ij[:, 0] * self._bin_n + ij[:, 1]
        order = np.argsort(flat, kind="stable")
        flat_sorted = flat[order]
        starts = np.flatnonzero(np.r_[True, flat_sorted[1:] != flat_sorted[:-1]])
        bounds = np.r_[starts, len(flat_sorted)]
        for k in range(len(starts)):
            cand = self._cells[flat_sorted[starts[k]]]
            if len(cand) == 0:
                continue
            sel = order[bounds[k]:bounds[k + 1]]
            p = pts[sel]
            d = p[:, None, :] - self._a[None, cand, :]
            s = _cross2(d, self._ac[None, cand, :]) * self._inv[cand]
            t = _cross2(self._ab[None, cand, :], d) * self._inv[cand]
            inside = (s >= 0.0) & (t >= 0.0) & (s + t <= 1.0)
            out[idx[sel]] = inside.any(axis=1)
        return out


def in_shadow_cylinder(xy, frame, mesh):
    """True iff the line through x*u + y*v along s intersects the mesh.

    Cast as a single ray starting 4 length units on the anti-Sun side, which
    is guaranteed outside a [-1, 1]-normalized mesh.
    """
    xy = np.asarray(xy, dtype=np.float64)
    origin = xy[0] * frame.u_hat + xy[1] * frame.v_hat - 4.0 * frame.s_hat
    return geometry.ray_hits_mesh(geometry.Ray(origin, frame.s_hat), mesh)


@dataclass
class SilhouetteBoundary:
    """Refined, ordered silhouette points with outward plane normals.

    `loops` holds (start, stop, closed) index ranges into `points`; several
    disconnected silhouette components all land in the same cloud. Distances
    are measured to the polyline through consecutive points, not just to the
    points themselves.
    """

    s_hat: np.ndarray
    points: np.ndarray               # (N, 2)
    normals: np.ndarray              # (N, 2)
    loops: tuple
    grid_pitch: float
    _tree: object = field(default=None, repr=False)
    _segs: object = field(default=None, repr=False)

    def __len__(self):
        return len(self.points)

    def _segments(self):
        if self._segs is None:
            seg_a = []
            seg_b = []
            point_segs = np.full((len(self.points), 2), -1, dtype=np.int64)
            for start, stop, closed in self.loops:
                n = stop - start
                for i in range(start, stop):
                    j = i + 1
                    if j == stop:
                        if not closed or n < 3:
                            continue
                        j = start
                    sid = len(seg_a)
                    seg_a.append(i)
                    seg_b.append(j)
                    point_segs[i, 1] = sid
                    point_segs[j, 0] = sid
            self._segs = (np.array(seg_a, dtype=np.int64),
                          np.array(seg_b, dtype=np.int64), point_segs)
        return self._segs

    def distance(self, points):
        """Distance from plane points to the refined boundary polyline."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self._tree is None:
            self._tree = cKDTree(self.points)
        k = min(6, len(self.points))
        d_pt, nn = self._tree.query(points, k=k)
        if k == 1:
            d_pt = d_pt[:, None]
            nn = nn[:, None]
        seg_a, seg_b, point_segs = self._segments()
        best = d_pt[:, 0].copy()
        if len(seg_a):
            cand = point_segs[nn].reshape(len(points), -1)      # (Q, 2k)
            valid = cand >= 0
            c = np.where(valid, cand, 0)
            A = self.points[seg_a[c]]
            B = self.points[seg_b[c]]
            AB = B - A
            denom = np.maximum((AB * AB).sum(axis=-1), 1e-300)
            tt = ((points[:, None, :] - A) * AB).sum(axis=-1) / denom
            tt = np.clip(tt, 0.0, 1.0)
            proj = A + tt[..., None] * AB
            d = np.linalg.norm(points[:, None, :] - proj, axis=-1)
            d = np.where(valid, d, np.inf)
            best = np.minimum(best, d.min(axis=1))
        return best

    def smooth_mask(self, max_turn_deg=20.0):
        """Mask of points whose local tangent turns by at most `max_turn_deg`.

        Sharp points (silhouette corners) and their two neighbors on each side
        are excluded, as are the ends of open chains.
        """
        mask = np.zeros(len(self.points), dtype=bool)
        limit = math.radians(max_turn_deg)
        for start, stop, closed in self.loops:
            n = stop - start
            if n < 5:
                continue
            p = self.points[start:stop]
            if closed:
                fwd = np.roll(p, -2, axis=0) - p
                bwd = p - np.roll(p, 2, axis=0)
            else:
                fwd = np.empty_like(p)
                bwd = np.empty_like(p)
                fwd[:-2] = p[2:] - p[:-2]
                fwd[-2:] = p[-1] - p[-3:-1]
                bwd[2:] = p[2:] - p[:-2]
                bwd[:2] = p[1:3] - p[0]
            cosang = ((fwd * bwd).sum(axis=1)
                      / np.maximum(np.linalg.norm(fwd, axis=1)
                                   * np.linalg.norm(bwd, axis=1), 1e-300))
            sharp = np.arccos(np.clip(cosang, -1.0, 1.0)) > limit
            wide = sharp.copy()
            for shift in (-2, -1, 1, 2):
                if closed:
                    wide |= np.roll(sharp, shift)
                else:
                    s = np.zeros_like(sharp)
                    if shift > 0:
                        s[shift:] = sharp[:-shift]
                    else:
                        s[:shift] = sharp[-shift:]
                    wide |= s
            ok = ~wide
            if not closed:
                ok[:2] = False
                ok[-2:] = False
            mask[start:stop] = ok
        return mask

    def save_csv(self, path):
        fmt = geometry._fmt
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,y,nx,ny\n")
            for p, n in zip(self.points, self.normals):
                fh.write(f"{fmt(p[0])},{fmt(p[1])},{fmt(n[0])},{fmt(n[1])}\n")


def _refine_crossings(p_inside, p_outside, sampler, tol):
    """Bisect membership transitions along segments, vectorized."""
    a = p_inside.copy()
    b = p_outside.copy()
    span = np.linalg.norm(b - a, axis=1).max()
    n_iter = max(1, int(math.ceil(math.log2(max(span, tol) / tol))))
    for _ in range(n_iter):
        mid = 0.5 * (a + b)
        member = sampler.membership(mid)
        a[member] = mid[member]
        b[~member] = mid[~member]
    return 0.5 * (a + b)


def extract_boundary(frame, mesh, grid_n=256, window=DEFAULT_WINDOW,
                     refine_tol=DEFAULT_REFINE_TOL, sampler=None):
    """Trace the silhouette boundary for one Sun direction.

    Marching squares over a grid_n x grid_n membership grid on
    [-window, window]^2 gives ordered crossing chains; every chain vertex sits
    on a grid edge with a membership sign change and is refined by bisection
    to `refine_tol`. Outward normals come from neighboring boundary points,
    oriented toward the non-member side.
    """
    if grid_n < 64:
        raise BoundaryError("grid_n must be >= 64")
    if sampler is None:
        sampler = ShadowSampler(mesh, frame)
    xs = np.linspace(-window, window, grid_n)
    pitch = xs[1] - xs[0]
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    grid_pts = np.column_stack([gx.ravel(), gy.ravel()])
    member = sampler.membership(grid_pts).reshape(grid_n, grid_n)
    if not member.any():
        raise BoundaryError("no silhouette found: membership grid is empty")
    contours = measure.find_contours(member.astype(np.float64), 0.5)
    if not contours:
        raise BoundaryError("no silhouette found: no membership contour")

    chains = []          # (n_points, closed)
    ins = []
    outs = []
    for contour in contours:
        closed = bool(np.allclose(contour[0], contour[-1]))
        if closed:
            contour = contour[:-1]
        if len(contour) < 2:
            continue
        r = contour[:, 0]
        c = contour[:, 1]
        r_is_frac = np.abs(r - np.round(r)) > 0.25
        i0 = np.where(r_is_frac, np.floor(r), np.round(r)).astype(np.int64)
        i1 = np.where(r_is_frac, i0 + 1, i0)
        j0 = np.where(r_is_frac, np.round(c), np.floor(c)).astype(np.int64)
        j1 = np.where(r_is_frac, j0, j0 + 1)
        m0 = member[i0, j0]
        node0 = np.column_stack([xs[i0], xs[j0]])
        node1 = np.column_stack([xs[i1], xs[j1]])
        p_in = np.where(m0[:, None], node0, node1)
        p_out = np.where(m0[:, None], node1, node0)
        chains.append((len(contour), closed))
        ins.append(p_in)
        outs.append(p_out)
    if not chains:
        raise BoundaryError("no silhouette found: contours degenerate")

    refined = _refine_crossings(np.vstack(ins), np.vstack(outs), sampler,
                                refine_tol)

    loops = []
    pos = 0
    for n, closed in chains:
        loops.append((pos, pos + n, closed))
        pos += n

    # Outward normals from the local tangent, oriented by a membership probe.
    normals = np.zeros_like(refined)
    for start, stop, closed in loops:
        p = refined[start:stop]
        if closed:
            tan = np.roll(p, -1, axis=0) - np.roll(p, 1, axis=0)
        else:
            tan = np.empty_like(p)
            tan[1:-1] = p[2:] - p[:-2]
            tan[0] = p[1] - p[0]
            tan[-1] = p[-1] - p[-2]
        tan /= np.maximum(np.linalg.norm(tan, axis=1), 1e-300)[:, None]
        normals[start:stop] = np.column_stack([tan[:, 1], -tan[:, 0]])
    for delta in (0.5 * pitch, 0.25 * pitch):
        probe_plus = sampler.membership(refined + delta * normals)
        probe_minus = sampler.membership(refined - delta * normals)
        flip = probe_plus & ~probe_minus
        normals[flip] = -normals[flip]
        settled = probe_plus != probe_minus
        if settled.all():
            break

    refined.flags.writeable = False
    normals.flags.writeable = False
    return SilhouetteBoundary(np.array(frame.s_hat), refined, normals,
                              tuple(loops), float(pitch))


def eclipse_function(xy, boundary, frame, mesh):
    """Signed distance from a plane point to the silhouette boundary.

    Negative inside the shadow cylinder, positive outside; the magnitude is
    measured to the refined boundary polyline.
    """
    xy = np.asarray(xy, dtype=np.float64)
    d = float(boundary.distance(xy[None, :])[0])
    return -d if in_shadow_cylinder(xy, frame, mesh) else d


def eclipse_function_batch(points, boundary, sampler):
    """Vectorized eclipse_function using a prebuilt membership sampler."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = boundary.distance(points)
    member = sampler.membership(points)
    return np.where(member, -d, d)


def check_gradient_identity(boundary, frame, mesh, h=1e-4,
                            max_turn_deg=20.0, sampler=None):
    """Max deviation of the along-normal derivative of F from one.

    Central finite differences of the eclipse function at points offset 2h
    outside each boundary point, along the outward normal. Points whose local
    tangent turns by more than `max_turn_deg` (silhouette corners, where a
    signed distance field is not differentiable) are excluded.
    """
    if not (1e-6 <= h <= 1e-3):
        raise GeometryError("h must lie in [1e-6, 1e-3]")
    if sampler is None:
        sampler = ShadowSampler(mesh, frame)
    mask = boundary.smooth_mask(max_turn_deg)
    if not mask.any():
        raise BoundaryError("no smooth boundary points left after corner mask")
    p = boundary.points[mask]
    n = boundary.normals[mask]
    f_plus = eclipse_function_batch(p + 3.0 * h * n, boundary, sampler)
    f_minus = eclipse_function_batch(p + 1.0 * h * n, boundary, sampler)
    fd = (f_plus - f_minus) / (2.0 * h)
    return float(np.abs(fd - 1.0).max())
