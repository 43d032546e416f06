import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lane3d.geometry import (
    CameraIntrinsics, CameraPose, Homography, RigidTransform, TopViewSpec, UnprojectableError,
    below_horizon, bilinear_sample, bilinear_sample_backward, flat_ground_backproject,
    ipm_sampling_grid, pose_to_transform, project_camera_points, road_to_image_homography,
)

K = CameraIntrinsics()


def test_intrinsics_and_pose_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=0)
    with pytest.raises(ValueError):
        CameraIntrinsics(cx=480)
    with pytest.raises(ValueError):
        CameraPose(0.1, 0.0)
    with pytest.raises(ValueError):
        CameraPose(math.pi / 2, 1.5)


def test_pose_zero_pitch_is_translation():
    t = pose_to_transform(CameraPose(0.0, 1.65))
    assert np.array_equal(t.rotation, np.eye(3))
    assert np.allclose(t.translation, [0, 0, 1.65])


def test_pose_quarter_turn_points_axis_down():
    # pi/2 itself is outside the pose domain; use the rotation limit
    t = pose_to_transform(CameraPose(math.nextafter(math.pi / 2, 0), 1.0))
    assert np.allclose(t.rotation @ [0, 1, 0], [0, 0, -1], atol=1e-12)
    assert np.allclose(t.translation, [0, 0, 1.0])


def test_pose_pitch_rotation_oracle():
    t = pose_to_transform(CameraPose(math.radians(2.5), 1.65))
    assert np.allclose(t.rotation @ [0, 1, 0], [0, 0.99905, -0.04362], atol=5e-6)
    c, s = math.cos(math.radians(2.5)), math.sin(math.radians(2.5))
    assert np.allclose(t.rotation @ [0, 1, 0], [0, c, -s], atol=1e-15)


def test_rotation_orthonormal_random_poses():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        r = pose_to_transform(CameraPose(rng.uniform(0, 1.5), rng.uniform(0.5, 3))).rotation
        assert np.abs(r.T @ r - np.eye(3)).max() < 1e-12
        assert abs(np.linalg.det(r) - 1) < 1e-12


def test_rigid_inverse_and_compose():
    t = pose_to_transform(CameraPose(0.3, 1.7))
    p = np.random.default_rng(1).normal(size=(20, 3))
    assert np.allclose(t.inverse().apply(t.apply(p)), p, atol=1e-12)
    ident = t.compose(t.inverse())
    assert np.allclose(ident.rotation, np.eye(3), atol=1e-15)
    assert np.allclose(ident.translation, 0, atol=1e-15)


def test_homography_pinhole_examples():
    h = road_to_image_homography(CameraPose(0.0, 1.65), K)
    assert np.allclose(h.apply([0, 20]), [[240, 219.6]], atol=1e-9)
    assert np.allclose(h.apply([2, 20]), [[288, 219.6]], atol=1e-9)
    assert np.max(np.abs(h.matrix)) == 1.0


def test_homography_matches_projection_of_road_points():
    pose = CameraPose(math.radians(3.0), 1.5)
    r2c = pose_to_transform(pose).inverse()
    pts = np.array([[x, y, 0.0] for x in (-5, 0, 4) for y in (5, 30, 70)])
    direct = project_camera_points(r2c.apply(pts), K)
    assert np.allclose(road_to_image_homography(pose, K).apply(pts[:, :2]), direct, atol=1e-9)


def test_homography_rejects_singular():
    with pytest.raises(ValueError):
        Homography(np.zeros((3, 3)))


@settings(max_examples=200, deadline=None)
@given(pitch=st.floats(0, math.radians(5)), h=st.floats(1.4, 1.9),
       x=st.floats(-10.24, 10.24), y=st.floats(1, 100))
def test_homography_round_trip_property(pitch, h, x, y):
    hom = road_to_image_homography(CameraPose(pitch, h), K)
    back = hom.inverse().apply(hom.apply([x, y]))
    assert np.abs(back - [x, y]).max() < 1e-9


def test_top_view_defaults_and_scaling():
    spec = TopViewSpec()
    assert (spec.W, spec.H) == (128, 208)
    assert TopViewSpec(px_x=0.32).W == 64
    with pytest.raises(ValueError):
        TopViewSpec(px_x=0.2)


def test_grid_is_homography_at_cell_centres():
    spec = TopViewSpec()
    hom = road_to_image_homography(CameraPose(0.04, 1.6), K)
    g = ipm_sampling_grid(hom, spec)
    assert g.shape == (spec.H, spec.W)
    # bottom row, centre column pair: road (x, y_min + 0.5 px_y)
    xs, ys = spec.cell_centers()
    r, c = spec.H - 1, spec.W // 2
    assert ys[r, c] == pytest.approx(spec.y_min + 0.5 * spec.px_y)
    assert np.allclose(g.coords[r, c], hom.apply([xs[r, c], ys[r, c]])[0], atol=1e-12)


@pytest.mark.parametrize("scale", [0.5, 0.25, 0.125])
def test_grid_feature_scales(scale):
    spec = TopViewSpec()
    hom = road_to_image_homography(CameraPose(0.02, 1.7), K)
    g = ipm_sampling_grid(hom, spec, scale)
    assert g.shape == (round(spec.H * scale), round(spec.W * scale))
    xs, ys = spec.cell_centers(scale)
    full = hom.apply(np.column_stack([xs.ravel(), ys.ravel()]))
    assert np.allclose(g.coords.reshape(-1, 2), (full + 0.5) * scale - 0.5, atol=1e-12)


def test_grid_rejects_other_scales():
    with pytest.raises(ValueError):
        ipm_sampling_grid(road_to_image_homography(CameraPose(0, 1.5), K), TopViewSpec(), 0.3)


def test_grid_in_view_flags():
    hom = road_to_image_homography(CameraPose(0.0, 1.5), K)
    g = ipm_sampling_grid(hom, TopViewSpec(), 1.0, source_shape=(360, 480))
    u, v = g.coords[..., 0], g.coords[..., 1]
    assert np.array_equal(g.in_view, (u > -1) & (u < 480) & (v > -1) & (v < 360))
    assert g.in_view.any() and not g.in_view.all()


def test_top_view_cell_independent_of_camera():
    spec = TopViewSpec()
    rng = np.random.default_rng(2)
    r, c = 150, 40
    for _ in range(20):
        k = CameraIntrinsics(fx=rng.uniform(300, 900), fy=rng.uniform(300, 900))
        hom = road_to_image_homography(CameraPose(rng.uniform(0, 0.09), rng.uniform(1.4, 1.9)), k)
        grid = ipm_sampling_grid(hom, spec)
        x, y = hom.inverse().apply(grid.coords[r, c])[0]
        assert spec.road_to_cell(x, y) == (r, c)


# -- bilinear sampler ------------------------------------------------------

def _hand_bilinear(img, u, v):
    """Textbook bilinear with explicit zero padding (independent of the library code)."""
    pad = 3
    p = np.zeros((img.shape[0] + 2 * pad, img.shape[1] + 2 * pad) + img.shape[2:])
    p[pad:-pad, pad:-pad] = img
    u, v = u + pad, v + pad
    x0, y0 = int(math.floor(u)), int(math.floor(v))
    a, b = u - x0, v - y0
    return ((1 - a) * (1 - b) * p[y0, x0] + a * (1 - b) * p[y0, x0 + 1]
            + (1 - a) * b * p[y0 + 1, x0] + a * b * p[y0 + 1, x0 + 1])


def test_bilinear_hand_example():
    img = np.array([[0.0, 1.0], [2.0, 3.0]])[..., None]
    assert bilinear_sample(img, np.array([[[0.5, 0.5]]]))[0, 0, 0] == 1.5


def test_bilinear_zero_padding():
    img = np.ones((3, 3, 1))
    assert bilinear_sample(img, np.array([[[-5.0, -5.0]]]))[0, 0, 0] == 0.0
    # half a pixel outside the left edge blends with zero
    assert bilinear_sample(img, np.array([[[-0.5, 1.0]]]))[0, 0, 0] == pytest.approx(0.5)


def test_bilinear_identity_is_bit_exact():
    img = np.random.default_rng(3).normal(size=(7, 9, 4))
    vv, uu = np.mgrid[0:7, 0:9]
    grid = np.stack([uu, vv], axis=-1).astype(float)
    assert np.array_equal(bilinear_sample(img, grid), img)


def test_bilinear_against_hand_oracle():
    rng = np.random.default_rng(4)
    img = rng.normal(size=(5, 6, 2))
    pts = rng.uniform(-2, 7, size=(200, 2))
    out = bilinear_sample(img, pts[None])[0]
    ref = np.array([_hand_bilinear(img, u, v) for u, v in pts])
    assert np.allclose(out, ref, atol=1e-12)


def test_backward_zero_upstream():
    rng = np.random.default_rng(5)
    img, grid = rng.normal(size=(4, 4, 1)), rng.uniform(0, 3, (3, 3, 2))
    gi, gg = bilinear_sample_backward(img, grid, np.zeros((3, 3, 1)))
    assert not gi.any() and not gg.any()


def test_backward_identity_grid():
    rng = np.random.default_rng(6)
    img, up = rng.normal(size=(4, 5, 2)), rng.normal(size=(4, 5, 2))
    vv, uu = np.mgrid[0:4, 0:5]
    gi, _ = bilinear_sample_backward(img, np.stack([uu, vv], -1).astype(float), up)
    assert np.array_equal(gi, up)


def test_backward_finite_differences_4x4():
    rng = np.random.default_rng(7)
    img = rng.normal(size=(4, 4, 1))
    grid = rng.uniform(0.1, 2.9, (3, 3, 2))
    grid += np.where(np.abs(grid - np.round(grid)) < 0.01, 0.05, 0.0)
    up = rng.normal(size=(3, 3, 1))
    f = lambda im, gr: float(np.sum(bilinear_sample(im, gr) * up))
    gi, gg = bilinear_sample_backward(img, grid, up)
    eps = 1e-6
    for arr, ana in ((img, gi), (grid, gg)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            hi, lo = arr.copy(), arr.copy()
            hi[idx] += eps
            lo[idx] -= eps
            args = (hi, grid) if arr is img else (img, hi)
            args_lo = (lo, grid) if arr is img else (img, lo)
            num[idx] = (f(*args) - f(*args_lo)) / (2 * eps)
        assert np.linalg.norm(ana - num) / np.linalg.norm(num) < 1e-5


def test_backward_integer_grid_uses_left_interval():
    img = np.array([[0.0, 1.0, 5.0]])[..., None]
    _, gg = bilinear_sample_backward(img, np.array([[[1.0, 0.0]]]), np.ones((1, 1, 1)))
    assert gg[0, 0, 0] == 1.0  # slope of [0, 1], not [1, 5]


# -- flat-ground back-projection -------------------------------------------

def test_backproject_example():
    p = flat_ground_backproject([[240, 219.6]], CameraPose(0.0, 1.65), K)
    assert np.allclose(p, [[0, 20, 0]], atol=1e-9)


def test_backproject_round_trip():
    pose = CameraPose(math.radians(4), 1.8)
    rng = np.random.default_rng(8)
    pts = np.column_stack([rng.uniform(-10, 10, 100), rng.uniform(3, 100, 100)])
    pix = road_to_image_homography(pose, K).apply(pts)
    back = flat_ground_backproject(pix, pose, K)
    assert np.abs(back[:, :2] - pts).max() < 1e-9
    assert not back[:, 2].any()


def test_backproject_horizon_is_unprojectable():
    with pytest.raises(UnprojectableError) as e:
        flat_ground_backproject([[240, 250], [240, 180], [100, 100]], CameraPose(0.0, 1.6), K)
    assert e.value.indices == [1, 2]


def test_below_horizon_tracks_pitch():
    pix = np.array([[240.0, 175.0]])
    assert not below_horizon(pix, CameraPose(0.0, 1.6), K)[0]
    assert below_horizon(pix, CameraPose(math.radians(2), 1.6), K)[0]


def test_rigid_transform_apply_shape():
    t = RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(t.apply([0, 0, 0]), [1, 2, 3])
