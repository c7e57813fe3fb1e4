import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from avatarkit.envmap import read_pfm
from avatarkit.mesh import icosphere, vertex_normals
from avatarkit.nnkit import Tensor
from avatarkit.nnkit.gradcheck import check_gradients
from avatarkit.raster import (
    PinholeCamera, StaleGBufferError, dump_gbuffer, gbuffer_grads, interpolate, rasterize, scatter_image,
)


def front_cam(res=128, dist=3.0, fov=40.0):
    return PinholeCamera.look_at((0, 0, dist), (0, 0, 0), fov_deg=fov, width=res, height=res)


def raster_tri(cam, v, faces=None):
    faces = np.array([[0, 1, 2]]) if faces is None else faces
    n = np.tile([0.0, 0.0, 1.0], (len(v), 1))
    return rasterize(cam, v, v, n, faces)


def test_project_convention():
    cam = front_cam(100)
    xy, z, clipped = cam.project(np.array([[0, 0, 0.0], [0, 0.5, 0], [0.5, 0, 0], [0, 0, 5.0]]))
    np.testing.assert_allclose(xy[0], [50, 50])
    assert xy[1, 1] < 50            # world up is image up (smaller row)
    assert xy[2, 0] > 50            # world +x is image right
    assert z[0] == pytest.approx(3.0)
    assert clipped.tolist() == [False, False, False, True]
    np.testing.assert_allclose(cam.center, [0, 0, 3])


def test_pixel_rays_hit_projected_points():
    cam = front_cam(64)
    rays = cam.pixel_rays()
    p = cam.center + 2.7 * rays[10, 40]
    xy, _, _ = cam.project(p)
    np.testing.assert_allclose(xy, [40.5, 10.5], atol=1e-9)


def test_triangle_area_at_512():
    cam = front_cam(512)
    v = np.array([[-0.6, -0.5, 0.0], [0.7, -0.4, 0.0], [0.1, 0.65, 0.0]])
    gb = raster_tri(cam, v)
    xy, _, _ = cam.project(v)
    e1, e2 = xy[1] - xy[0], xy[2] - xy[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    assert abs(gb.mask.sum() / area - 1) < 0.02


def test_sphere_coverage_matches_silhouette():
    cam = front_cam(256, dist=4.0)
    m = icosphere(4)
    gb = rasterize(cam, m.vertices, m.vertices, vertex_normals(m), m.faces)
    # silhouette of a unit sphere from distance d has angular radius asin(1/d)
    rad_px = cam.fx * np.tan(np.arcsin(1 / 4.0))
    assert abs(gb.mask.sum() / (np.pi * rad_px ** 2) - 1) < 0.02
    # visible smooth normals face the camera except in a thin band at the silhouette
    n = gb.n_d[gb.mask]
    view = cam.center - gb.x_d[gb.mask]
    assert np.mean(np.einsum("pc,pc->p", n, view) > 0) > 0.99


def test_linear_attribute_is_exact_under_perspective():
    cam = PinholeCamera.look_at((0.4, 0.3, 2.5), (0, 0, 0), fov_deg=50, width=96, height=80)
    v = np.array([[-1.0, -0.8, -0.6], [1.2, -0.6, 0.5], [0.0, 1.0, 0.1]])
    gb = raster_tri(cam, v)
    assert gb.mask.sum() > 500
    # interpolated position must lie on the pixel ray and on the triangle plane
    rays = cam.pixel_rays()[gb.mask]
    p = gb.x_d[gb.mask]
    to_p = p - cam.center
    cosang = np.einsum("pc,pc->p", to_p, rays) / np.linalg.norm(to_p, axis=1)
    np.testing.assert_allclose(cosang, 1.0, atol=1e-12)
    nrm = np.cross(v[1] - v[0], v[2] - v[0])
    np.testing.assert_allclose((p - v[0]) @ nrm, 0.0, atol=1e-12)
    # any affine function of position interpolates exactly
    A, b = np.array([[0.3, -1.0, 2.0]]).T, 0.7
    attr = v @ A + b
    out = interpolate(gb, attr).data
    np.testing.assert_allclose(out, p @ A + b, atol=1e-12)


def test_backface_culled_and_degenerate_skipped():
    cam = front_cam(64)
    v = np.array([[-0.5, -0.5, 0.0], [0.5, -0.5, 0.0], [0.0, 0.5, 0.0]])
    assert raster_tri(cam, v).mask.any()
    assert not raster_tri(cam, v, np.array([[0, 2, 1]])).mask.any()
    flat = np.array([[0, 0, 0.0], [1, 0, 0], [2, 0, 0]])
    assert not raster_tri(cam, flat).mask.any()
    behind = v + np.array([0, 0, 5.0])      # straddles / lies behind the camera
    assert not raster_tri(cam, behind).mask.any()


def test_depth_order_and_ties():
    cam = front_cam(64)
    base = np.array([[-0.8, -0.8, 0.0], [0.8, -0.8, 0.0], [0.0, 0.8, 0.0]])
    near = base + [0, 0, 0.5]
    v = np.concatenate([base, near])
    for faces, want in ((np.array([[0, 1, 2], [3, 4, 5]]), 1), (np.array([[3, 4, 5], [0, 1, 2]]), 0)):
        gb = raster_tri(cam, v, faces)
        assert set(np.unique(gb.face[gb.mask])) == {want}
    # coincident triangles: lower face index wins
    v2 = np.concatenate([base, base])
    gb = raster_tri(cam, v2, np.array([[3, 4, 5], [0, 1, 2]]))
    assert set(np.unique(gb.face[gb.mask])) == {0}


def test_shared_edge_has_no_cracks():
    cam = front_cam(128)
    v = np.array([[-0.7, -0.7, 0.0], [0.7, -0.7, 0.0], [0.7, 0.7, 0.0], [-0.7, 0.7, 0.0]])
    gb = raster_tri(cam, v, np.array([[0, 1, 2], [0, 2, 3]]))
    ys, xs = np.nonzero(gb.mask)
    box = gb.mask[ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    assert box.all()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=6, max_size=6), st.floats(-0.5, 0.5))
def test_barycentrics_are_convex(coords, depth):
    cam = front_cam(48)
    v = np.column_stack([np.reshape(coords, (3, 2)), [0.0, depth, -depth]])
    for faces in (np.array([[0, 1, 2]]), np.array([[0, 2, 1]])):
        gb = raster_tri(cam, v, faces)
        b = gb.bary[gb.mask]
        assert np.all(b >= -1e-12)
        np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(gb.bary[~gb.mask] == 0)


def test_interpolate_gradients_and_gbuffer_grads():
    cam = front_cam(32)
    m = icosphere(1)
    gb = rasterize(cam, m.vertices, m.vertices, vertex_normals(m), m.faces)
    rng = np.random.default_rng(0)
    attr = Tensor(rng.normal(size=(m.n_vertices, 2)))
    w = rng.normal(size=(int(gb.mask.sum()), 2))
    assert check_gradients(lambda: (interpolate(gb, attr) * Tensor(w)).sum(), [attr]) < 1e-6
    attr.grad = None
    (interpolate(gb, attr) * Tensor(w)).sum().backward()
    np.testing.assert_allclose(gbuffer_grads(gb, scatter_image(gb, w), m.n_vertices), attr.grad, atol=1e-12)


def test_stale_topology_detected():
    cam = front_cam(32)
    m = icosphere(1)
    gb = rasterize(cam, m.vertices, m.vertices, vertex_normals(m), m.faces)
    with pytest.raises(StaleGBufferError):
        interpolate(gb, np.zeros((m.n_vertices + 1, 3)))
    with pytest.raises(StaleGBufferError):
        gbuffer_grads(gb, np.zeros(gb.shape + (3,)), m.n_vertices, faces=m.faces[::-1])


def test_dump_gbuffer(tmp_path):
    cam = front_cam(24)
    m = icosphere(1)
    gb = rasterize(cam, m.vertices, m.vertices, vertex_normals(m), m.faces)
    dump_gbuffer(gb, tmp_path)
    np.testing.assert_allclose(read_pfm(tmp_path / "n_d.pfm"), gb.n_d, atol=1e-6)
    np.testing.assert_array_equal(read_pfm(tmp_path / "mask.pfm") > 0.5, gb.mask)
    np.testing.assert_array_equal(read_pfm(tmp_path / "face.pfm").astype(int), gb.face)
