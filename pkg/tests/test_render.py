"""Projection and soft rasterization against analytic silhouettes.

Oracle notes:
  * orthographic sphere: a unit sphere from distance 2.5 with window
    half-width 1.2 projects to the disk x^2 + y^2 <= (1/1.2)^2 in NDC.
  * perspective sphere: the visual cone half-angle is asin(r/d), so the
    NDC radius is tan(asin(0.4)) / tan(fov/2).
  * a pixel center exactly on the one edge of a single face gets
    sigmoid(0) = 0.5 coverage.
"""
import numpy as np
import pytest

from sketchmesh import autodiff as ad
from sketchmesh.autodiff import Tape, Tensor, backward, grad_check
from sketchmesh.geometry import icosphere
from sketchmesh.render import (CameraPose, RenderConfig, camera_basis,
                               canonical_pose, hard_mask, project,
                               project_points, render_silhouette,
                               sample_poses, soft_rasterize, soft_silhouette)


def pixel_grid(res):
    xs = (2.0 * np.arange(res) + 1.0) / res - 1.0
    ys = 1.0 - (2.0 * np.arange(res) + 1.0) / res
    return np.meshgrid(xs, ys)  # (X[i,j], Y[i,j]) with row 0 on top


def mask_iou(a, b):
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 1.0


# ------------------------------------------------------------------- cameras

def test_canonical_pose_faces_origin_down_z():
    basis, eye = camera_basis(canonical_pose())
    np.testing.assert_allclose(eye, [0.0, 0.0, 2.5], atol=1e-12)
    np.testing.assert_allclose(basis, [[1, 0, 0], [0, 1, 0], [0, 0, -1]],
                               atol=1e-12)


def test_projection_hand_cases_ortho():
    cfg = RenderConfig()
    ndc, depth = project_points(np.array([[0.3, 0.4, 0.0]]),
                                canonical_pose(), cfg)
    np.testing.assert_allclose(ndc[0], [0.3 / 1.2, 0.4 / 1.2], atol=1e-12)
    np.testing.assert_allclose(depth[0], 2.5, atol=1e-12)

    side = CameraPose(90.0, 0.0)
    ndc, depth = project_points(np.array([[0.0, 0.0, 1.0]]), side, cfg)
    # viewed from +x, a point at +z sits on the left edge of the window
    np.testing.assert_allclose(ndc[0], [-1.0 / 1.2, 0.0], atol=1e-12)
    np.testing.assert_allclose(depth[0], 2.5, atol=1e-12)


def test_projection_elevation_moves_image_down():
    cfg = RenderConfig()
    above = CameraPose(0.0, 30.0)
    ndc, _ = project_points(np.array([[0.0, 0.5, 0.0]]), above, cfg)
    assert 0.0 < ndc[0, 1] < 0.5 / 1.2  # foreshortened but still above center


def test_perspective_rejects_points_behind_camera():
    cfg = RenderConfig(projection="persp")
    with pytest.raises(ValueError):
        project_points(np.array([[0.0, 0.0, 5.0]]), canonical_pose(), cfg)


def test_camera_up_degeneracy():
    with pytest.raises(ValueError):
        camera_basis(CameraPose(0.0, 90.0))


def test_differentiable_project_matches_plain():
    cfg = RenderConfig()
    pose = CameraPose(33.0, 12.0)
    verts = icosphere(1).vertices.astype(np.float32)
    ndc64, _ = project_points(verts, pose, cfg)
    ndc32 = project(Tensor(verts), pose, cfg).data
    np.testing.assert_allclose(ndc32, ndc64, atol=1e-5)


def test_sample_poses_ranges_and_uniformity():
    poses = sample_poses(4000, np.random.default_rng(11))
    az = np.array([p.azimuth_deg for p in poses])
    el = np.array([p.elevation_deg for p in poses])
    assert az.min() >= 0.0 and az.max() < 360.0
    assert el.min() >= -20.0 and el.max() <= 40.0
    assert all(p.distance == 2.5 for p in poses)
    # chi-square against uniform azimuth, 8 bins, df=7: 24.32 is p ~ 0.001
    counts, _ = np.histogram(az, bins=8, range=(0.0, 360.0))
    expected = 4000 / 8
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 24.32, chi2


def test_sample_poses_accepts_seed():
    a = sample_poses(3, 7)
    b = sample_poses(3, np.random.default_rng(7))
    assert a == b


# ---------------------------------------------------------------- rasterizer

def test_sphere_silhouette_matches_disk():
    # geometric fidelity is measured at a sharp sigma; at the wide training
    # default the halo where several rim faces overlap moves the 0.5 level
    # set outward by about a third of a pixel, which alone costs ~0.02 IoU
    cfg = RenderConfig(resolution=64, sigma=3e-5)
    sil = soft_silhouette(icosphere(3), canonical_pose(), cfg)
    assert sil.shape == (64, 64)
    assert sil.min() >= 0.0 and sil.max() <= 1.0
    xg, yg = pixel_grid(64)
    disk = xg ** 2 + yg ** 2 <= (1.0 / 1.2) ** 2
    assert mask_iou(hard_mask(sil), disk) >= 0.98


def test_perspective_sphere_radius():
    cfg = RenderConfig(resolution=128, projection="persp", sigma=3e-5)
    sil = soft_silhouette(icosphere(3), canonical_pose(), cfg)
    area_ndc = hard_mask(sil).mean() * 4.0
    r_measured = np.sqrt(area_ndc / np.pi)
    r_expected = np.tan(np.arcsin(1.0 / 2.5)) / np.tan(np.deg2rad(51.28) / 2.0)
    assert abs(r_measured - r_expected) / r_expected < 0.01


def test_pixel_center_on_edge_is_half():
    res = 64
    x_edge = (2.0 * 40 + 1.0) / res - 1.0  # center of column 40
    verts = Tensor(np.array([[x_edge, -3.0], [x_edge, 3.0], [-4.0, 0.0]],
                            dtype=np.float32))
    faces = np.array([[0, 1, 2]])
    sil = soft_rasterize(verts, faces, res, 1e-4).data
    np.testing.assert_allclose(sil[:, 40], 0.5, atol=1e-6)
    # strictly inside saturates on, strictly outside saturates off
    assert np.all(sil[:, :39] > 0.999)
    assert np.all(sil[:, 42:] < 1e-6)


def test_row_zero_is_top_of_image():
    verts = Tensor(np.array([[-2.0, 0.3], [2.0, 0.3], [0.0, 3.0]],
                            dtype=np.float32))
    sil = soft_rasterize(verts, np.array([[0, 1, 2]]), 32, 1e-4).data
    assert sil[:4].mean() > 0.9   # top rows covered
    assert sil[-4:].mean() < 1e-6


def test_rotation_equivariance():
    """Rotating the mesh and the camera together must not change pixels."""
    rng = np.random.default_rng(5)
    base = icosphere(2)
    bump = 1.0 + 0.25 * rng.standard_normal((base.n_vertices, 1))
    verts = (base.vertices * bump).astype(np.float32)
    cfg = RenderConfig(resolution=64)

    for az, el, phi in ((20.0, 5.0, 37.5), (200.0, -15.0, 141.0)):
        c, s = np.cos(np.deg2rad(phi)), np.sin(np.deg2rad(phi))
        rot_y = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        a = render_silhouette(verts @ rot_y.T, base.faces,
                              CameraPose(az + phi, el), cfg).data
        b = render_silhouette(verts, base.faces, CameraPose(az, el), cfg).data
        assert np.abs(a.astype(np.float64) - b).max() <= 1e-5


def test_render_is_deterministic():
    cfg = RenderConfig(resolution=48)
    pose = CameraPose(77.0, 13.0)
    a = soft_silhouette(icosphere(2), pose, cfg)
    b = soft_silhouette(icosphere(2), pose, cfg)
    assert np.array_equal(a, b)


def test_downsampled_render_matches_coarse():
    fine_cfg = RenderConfig(resolution=128)
    coarse_cfg = RenderConfig(resolution=64)
    pose = CameraPose(25.0, 10.0)
    fine = soft_silhouette(icosphere(3), pose, fine_cfg)
    coarse = soft_silhouette(icosphere(3), pose, coarse_cfg)
    pooled = fine.reshape(64, 2, 64, 2).mean(axis=(1, 3))
    assert np.abs(pooled - coarse).mean() <= 0.05


def test_empty_frame_when_mesh_outside_window():
    verts = icosphere(1).vertices.astype(np.float32) + np.float32(50.0)
    sil = render_silhouette(verts, icosphere(1).faces,
                            canonical_pose(), RenderConfig(resolution=32)).data
    assert sil.max() < 1e-6


def test_degenerate_face_does_not_crash():
    verts = Tensor(np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]],
                            dtype=np.float32))
    sil = soft_rasterize(verts, np.array([[0, 1, 2]]), 16, 1e-4).data
    assert np.all(np.isfinite(sil))


def test_rasterize_rejects_bad_config():
    verts = Tensor(np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ValueError):
        soft_rasterize(verts, np.array([[0, 1, 2]]), 0, 1e-4)
    with pytest.raises(ValueError):
        soft_rasterize(verts, np.array([[0, 1, 2]]), 16, 0.0)


# ---------------------------------------------------------------- gradients

def test_rasterizer_gradient_matches_finite_differences():
    """Vertex gradients of a weighted pixel sum, wide sigma for support.

    The step balances float32 output quantization (hurts small h) against
    sigmoid curvature (hurts large h); 1e-3 sits in the valley.
    """
    rng = np.random.default_rng(21)
    res = 16
    weights = Tensor(rng.uniform(-1.0, 1.0, (res, res)).astype(np.float32))
    tri = Tensor(np.array([[-0.52, -0.41], [0.61, -0.33], [0.07, 0.55]],
                          dtype=np.float32))
    faces = np.array([[0, 1, 2]])

    def f(t):
        sil = soft_rasterize(t, faces, res, 5e-3)
        return ad.tsum(ad.mul(sil, weights))

    rep = grad_check(f, tri, h=1e-3, tol=5e-3)
    assert rep.passed, rep


def test_rasterizer_gradient_two_faces_shared_vertex():
    rng = np.random.default_rng(22)
    res = 12
    weights = Tensor(rng.uniform(-1.0, 1.0, (res, res)).astype(np.float32))
    quad = Tensor(np.array([[-0.6, -0.5], [0.55, -0.45], [0.5, 0.52],
                            [-0.48, 0.6]], dtype=np.float32))
    faces = np.array([[0, 1, 2], [0, 2, 3]])

    def f(t):
        sil = soft_rasterize(t, faces, res, 5e-3)
        return ad.tsum(ad.mul(sil, weights))

    rep = grad_check(f, quad, h=1e-3, tol=5e-3)
    assert rep.passed, rep


def test_end_to_end_vertex_gradient_through_projection():
    base = icosphere(1)
    verts = Tensor(base.vertices.astype(np.float32), requires_grad=True)
    cfg = RenderConfig(resolution=32, sigma=1e-3)
    pose = CameraPose(30.0, 10.0)
    with Tape() as tape:
        sil = render_silhouette(verts, base.faces, pose, cfg)
        loss = ad.tmean(ad.mul(sil, sil))
    g = backward(tape, loss).get(verts)
    assert g is not None and g.shape == verts.shape
    assert np.all(np.isfinite(g.data))
    assert np.abs(g.data).max() > 0.0


def test_gradient_pushes_silhouette_toward_target():
    """One SGD step on vertex positions must reduce the coverage loss."""
    base = icosphere(1)
    cfg = RenderConfig(resolution=32, sigma=1e-3)

    def coverage(verts):
        with Tape() as tape:
            sil = render_silhouette(verts, base.faces, canonical_pose(), cfg)
            loss = ad.tmean(sil)
            grads = backward(tape, loss)
        return loss.item(), grads.get(verts).data

    v = Tensor(base.vertices.astype(np.float32), requires_grad=True)
    before, g = coverage(v)
    v2 = Tensor(v.data - 0.5 * g, requires_grad=True)
    after, _ = coverage(v2)
    assert after < before
