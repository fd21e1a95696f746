import numpy as np
import pytest

from eclipsekit import shapes
from eclipsekit.eclipse import (
    ShadowSampler,
    build_frame,
    check_gradient_identity,
    eclipse_function,
    eclipse_function_batch,
    extract_boundary,
    in_shadow_cylinder,
)
from eclipsekit.errors import BoundaryError, GeometryError


@pytest.fixture(scope="module")
def sphere_setup(icosphere4):
    s = np.array([0.3, -0.5, 0.81])
    s /= np.linalg.norm(s)
    frame = build_frame(s)
    sampler = ShadowSampler(icosphere4, frame)
    boundary = extract_boundary(frame, icosphere4, grid_n=256, sampler=sampler)
    return icosphere4, frame, sampler, boundary


@pytest.fixture(scope="module")
def cube_setup(cube):
    frame = build_frame(np.array([0.0, 0.0, 1.0]))
    sampler = ShadowSampler(cube, frame)
    boundary = extract_boundary(frame, cube, grid_n=256, sampler=sampler)
    return cube, frame, sampler, boundary


class TestBuildFrame:
    def test_z_axis(self):
        f = build_frame([0.0, 0.0, 1.0])
        assert np.allclose(f.u_hat, [0, -1, 0])
        assert np.allclose(f.v_hat, [1, 0, 0])

    def test_x_axis_right_handed(self):
        f = build_frame([1.0, 0.0, 0.0])
        assert np.allclose(np.cross(f.u_hat, f.v_hat), f.s_hat)
        assert abs(f.u_hat @ f.s_hat) < 1e-15

    def test_random_orthonormal(self, rng):
        s = rng.normal(size=(10_000, 3))
        s /= np.linalg.norm(s, axis=1)[:, None]
        for k in range(0, 10_000, 37):
            f = build_frame(s[k])
            assert abs(np.linalg.norm(f.u_hat) - 1) < 1e-12
            assert abs(np.linalg.norm(f.v_hat) - 1) < 1e-12
            assert abs(f.u_hat @ f.v_hat) < 1e-12
            assert abs(f.u_hat @ f.s_hat) < 1e-12
            assert abs(f.v_hat @ f.s_hat) < 1e-12
            assert np.abs(np.cross(f.u_hat, f.v_hat) - f.s_hat).max() < 1e-12

    def test_deterministic(self):
        s = np.array([0.6, -0.3, 0.7416198487095663])
        s /= np.linalg.norm(s)
        f1, f2 = build_frame(s), build_frame(s)
        assert np.array_equal(f1.u_hat, f2.u_hat)

    def test_rejects_bad_input(self):
        with pytest.raises(GeometryError):
            build_frame([0.0, 0.0, 0.0])
        with pytest.raises(GeometryError):
            build_frame([0.0, 0.0, 2.0])


class TestShadowMembership:
    def test_sphere_axis_and_outside(self, sphere_setup):
        mesh, frame, _, _ = sphere_setup
        assert in_shadow_cylinder([0.0, 0.0], frame, mesh)
        assert not in_shadow_cylinder([1.5, 0.0], frame, mesh)

    def test_batch_equals_single_ray(self, sphere_setup, rng):
        mesh, frame, sampler, _ = sphere_setup
        pts = rng.uniform(-1.3, 1.3, size=(500, 2))
        batch = sampler.membership(pts)
        single = np.array([in_shadow_cylinder(p, frame, mesh) for p in pts])
        assert np.array_equal(batch, single)

    def test_circle_oracle(self, sphere_setup, rng):
        _, _, sampler, _ = sphere_setup
        pts = rng.uniform(-1.2, 1.2, size=(10_000, 2))
        r = np.linalg.norm(pts, axis=1)
        keep = np.abs(r - 1.0) > 2e-3
        assert np.array_equal(sampler.membership(pts)[keep], r[keep] < 1.0)


class TestExtractBoundary:
    def test_circle_radius(self, sphere_setup):
        _, _, _, boundary = sphere_setup
        radii = np.linalg.norm(boundary.points, axis=1)
        assert np.abs(radii - 1.0).max() < 2e-3

    def test_points_sit_on_membership_flip(self, sphere_setup):
        mesh, frame, sampler, boundary = sphere_setup
        idx = np.arange(0, len(boundary.points), 7)
        p = boundary.points[idx]
        n = boundary.normals[idx]
        outside = sampler.membership(p + 3e-6 * n)
        inside = sampler.membership(p - 3e-6 * n)
        flips = (~outside) & inside
        assert flips.mean() > 0.99

    def test_adjacent_spacing(self, sphere_setup):
        _, _, _, boundary = sphere_setup
        for start, stop, closed in boundary.loops:
            pts = boundary.points[start:stop]
            gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            if closed:
                gaps = np.r_[gaps, np.linalg.norm(pts[0] - pts[-1])]
            assert gaps.max() < 2.0 * boundary.grid_pitch

    def test_square_silhouette(self, cube_setup):
        _, _, _, boundary = cube_setup
        edge_dev = np.abs(np.max(np.abs(boundary.points), axis=1) - 0.5)
        assert edge_dev.max() < 1e-4

    def test_circle_normals(self, sphere_setup):
        _, _, _, boundary = sphere_setup
        radial = boundary.points / np.linalg.norm(boundary.points, axis=1)[:, None]
        assert np.linalg.norm(boundary.normals - radial, axis=1).max() < 5e-2

    def test_empty_silhouette_raises(self):
        # a body much smaller than the grid pitch slips between the samples
        tiny = shapes.icosphere(1, radius=5e-4)
        frame = build_frame([0.0, 0.0, 1.0])
        with pytest.raises(BoundaryError, match="no silhouette"):
            extract_boundary(frame, tiny, grid_n=64)

    def test_rejects_small_grid(self, cube):
        frame = build_frame([0.0, 0.0, 1.0])
        with pytest.raises(BoundaryError, match="grid_n"):
            extract_boundary(frame, cube, grid_n=32)

    def test_csv_export(self, cube_setup, tmp_path):
        _, _, _, boundary = cube_setup
        path = tmp_path / "boundary.csv"
        boundary.save_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "x,y,nx,ny"
        assert len(lines) == len(boundary.points) + 1


class TestEclipseFunction:
    def test_inside_value(self, sphere_setup):
        mesh, frame, _, boundary = sphere_setup
        f = eclipse_function([0.5, 0.0], boundary, frame, mesh)
        assert f == pytest.approx(-0.5, abs=3e-3)

    def test_outside_value(self, sphere_setup):
        mesh, frame, _, boundary = sphere_setup
        f = eclipse_function([2.0, 0.0], boundary, frame, mesh)
        assert f == pytest.approx(1.0, abs=3e-3)

    def test_zero_on_boundary_point(self, sphere_setup):
        mesh, frame, _, boundary = sphere_setup
        f = eclipse_function(boundary.points[33], boundary, frame, mesh)
        assert abs(f) <= 1e-6

    def test_batch_matches_single(self, sphere_setup, rng):
        mesh, frame, sampler, boundary = sphere_setup
        pts = rng.uniform(-1.2, 1.2, size=(50, 2))
        batch = eclipse_function_batch(pts, boundary, sampler)
        single = [eclipse_function(p, boundary, frame, mesh) for p in pts]
        assert np.allclose(batch, single, atol=0.0)

    def test_sign_matches_membership(self, sphere_setup, rng):
        _, _, sampler, boundary = sphere_setup
        pts = rng.uniform(-1.2, 1.2, size=(2000, 2))
        f = eclipse_function_batch(pts, boundary, sampler)
        member = sampler.membership(pts)
        nonzero = np.abs(f) > 0
        assert np.array_equal(f[nonzero] < 0, member[nonzero])

    def test_sphere_analytic_profile(self, sphere_setup, rng):
        _, _, sampler, boundary = sphere_setup
        pts = rng.uniform(-1.2, 1.2, size=(10_000, 2))
        f = eclipse_function_batch(pts, boundary, sampler)
        truth = np.linalg.norm(pts, axis=1) - 1.0
        assert np.abs(f - truth).max() < 5e-3

    def test_lipschitz(self, sphere_setup, rng):
        _, _, sampler, boundary = sphere_setup
        p = rng.uniform(-1.2, 1.2, size=(3000, 2))
        q = p + rng.normal(scale=0.1, size=p.shape)
        fp = eclipse_function_batch(p, boundary, sampler)
        fq = eclipse_function_batch(q, boundary, sampler)
        slack = 5e-5    # twice the boundary discretization error
        assert (np.abs(fp - fq) <= np.linalg.norm(p - q, axis=1) + slack).all()

    def test_refinement_convergence(self, icosphere4, rng):
        """Doubling grid_n at least halves the sampled change in F."""
        s = np.array([0.2, 0.9, 0.5])
        s /= np.linalg.norm(s)
        frame = build_frame(s)
        sampler = ShadowSampler(icosphere4, frame)
        pts = rng.uniform(-1.1, 1.1, size=(500, 2))
        f = {}
        for g in (128, 256, 512):
            b = extract_boundary(frame, icosphere4, grid_n=g, sampler=sampler)
            f[g] = eclipse_function_batch(pts, b, sampler)
        d1 = np.abs(f[128] - f[256]).max()
        d2 = np.abs(f[256] - f[512]).max()
        assert d2 <= 0.5 * d1 + 2e-6


class TestGradientIdentity:
    def test_circle(self, sphere_setup):
        mesh, frame, sampler, boundary = sphere_setup
        dev = check_gradient_identity(boundary, frame, mesh, h=1e-4,
                                      sampler=sampler)
        assert dev < 1e-2

    def test_square_off_corners(self, cube_setup):
        mesh, frame, sampler, boundary = cube_setup
        dev = check_gradient_identity(boundary, frame, mesh, h=1e-4,
                                      sampler=sampler)
        assert dev < 1e-2

    def test_corner_mask_excludes_corners(self, cube_setup):
        _, _, _, boundary = cube_setup
        mask = boundary.smooth_mask(20.0)
        assert mask.any()
        assert (~mask).sum() >= 4    # at least the four corners

    def test_rejects_bad_h(self, sphere_setup):
        mesh, frame, sampler, boundary = sphere_setup
        with pytest.raises(GeometryError):
            check_gradient_identity(boundary, frame, mesh, h=1e-2,
                                    sampler=sampler)
