"""Eye renderer: projection geometry, painter order, PPM io."""

import numpy as np
import pytest

from crib_lab import body as B
from crib_lab import render as R
from crib_lab.body import BACKGROUND_RGB, Distractor


def ball(center, radius, color):
    c = tuple(center)
    return Distractor(c, c, radius, color)


def nonbg_mask(img):
    return np.any(img != np.array(BACKGROUND_RGB, dtype=np.uint8), axis=-1)


def color_mask(img, color):
    return np.all(img == np.array(color, dtype=np.uint8), axis=-1)


def centroid(mask):
    pts = np.argwhere(mask)
    return pts[:, 1].mean() + 0.5, pts[:, 0].mean() + 0.5  # (px, py)


def test_projected_ball_lands_where_project_point_says():
    color = (250, 10, 10)
    # points chosen to sit inside both eye frustums
    for point in ([0.0, 0.25, 0.33], [0.03, 0.20, 0.30], [-0.03, 0.22, 0.38]):
        spec = B.default_body(distractors=[ball(point, 0.012, color)])
        poses = B.forward_kinematics(spec, np.zeros(22))
        for eye in (0, 1):
            img = R.render_eye(spec, poses, eye)
            mask = color_mask(img, color)
            assert mask.sum() > 4
            px, py = centroid(mask)
            want = R.project_point(spec, poses, eye, np.array(point))
            assert want is not None
            assert px == pytest.approx(want[0], abs=1.0)
            assert py == pytest.approx(want[1], abs=1.0)


def test_project_point_behind_camera_is_none(spec):
    poses = B.forward_kinematics(spec, np.zeros(22))
    # a point behind the head (negative anterior offset from the eyes)
    assert R.project_point(spec, poses, 0, np.array([0.0, -0.3, 0.3])) is None


def test_stereo_disparity_sign(spec):
    poses = B.forward_kinematics(spec, np.zeros(22))
    p = np.array([0.0, 0.2, 0.335])
    left = R.project_point(spec, poses, 0, p)
    right = R.project_point(spec, poses, 1, p)
    # the right eye sits at +x, so the point appears further left in its image
    assert right[0] < left[0]
    assert left[2] == pytest.approx(right[2], rel=1e-6)


def test_out_of_view_capsule_culled():
    spec = B.default_body(distractors=[ball([2.0, 0.25, 0.3], 0.05, (0, 255, 0))])
    poses = B.forward_kinematics(spec, np.zeros(22))
    img = R.render_eye(spec, poses, 0)
    assert not color_mask(img, (0, 255, 0)).any()


def test_painter_order_near_occludes_far():
    center = [0.0, 0.15, 0.335]
    near = ball(center, 0.01, (200, 0, 0))
    far = ball([0.0, 0.25, 0.335], 0.04, (0, 0, 200))
    for order in ([near, far], [far, near]):
        spec = B.default_body(distractors=list(order))
        poses = B.forward_kinematics(spec, np.zeros(22))
        img = R.render_eye(spec, poses, 0)
        red = color_mask(img, (200, 0, 0))
        blue = color_mask(img, (0, 0, 200))
        assert red.any() and blue.any()
        # the pixel under the near ball's center is red whatever the list order
        px, py, _ = R.project_point(spec, poses, 0, np.array(center))
        assert red[int(py), int(px)]


def test_capsule_spanning_near_plane_still_draws():
    spec = B.default_body(distractors=[
        Distractor((0.0, -0.1, 0.335), (0.0, 0.4, 0.335), 0.02, (255, 255, 0))])
    poses = B.forward_kinematics(spec, np.zeros(22))
    img = R.render_eye(spec, poses, 0)
    assert color_mask(img, (255, 255, 0)).any()


def test_rest_pose_eyes_see_background_only(spec):
    poses = B.forward_kinematics(spec, np.zeros(22))
    left, right = R.render_frame(spec, poses)
    assert not nonbg_mask(left).any()
    assert not nonbg_mask(right).any()


def test_raised_hand_visible_as_skin(spec):
    q = np.zeros(22)
    q[spec.arm_joint_indices("right")] = [1.58, 0.79, 0.22, 0.7, 0.68]
    poses = B.forward_kinematics(spec, q)
    left, right = R.render_frame(spec, poses)
    assert color_mask(left, B.SKIN_RGB).sum() > 50
    assert color_mask(right, B.SKIN_RGB).sum() > 50


def test_render_deterministic(spec, rng):
    q = B.randomize_pose(spec, rng)
    poses = B.forward_kinematics(spec, q)
    a = R.render_eye(spec, poses, 0)
    b = R.render_eye(spec, poses, 0)
    np.testing.assert_array_equal(a, b)


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.integers(0, 256, (64, 128, 3), dtype=np.uint8)
    path = tmp_path / "x.ppm"
    R.write_ppm(path, img)
    np.testing.assert_array_equal(R.read_ppm(path), img)
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n128 64\n255\n")
    assert len(raw) == len(b"P6\n128 64\n255\n") + 64 * 128 * 3


def test_ppm_header_comment_tolerated(tmp_path):
    img = np.zeros((2, 2, 3), dtype=np.uint8)
    img[0, 0] = (9, 8, 7)
    path = tmp_path / "c.ppm"
    with open(path, "wb") as f:
        f.write(b"P6\n# a comment\n2 2\n255\n")
        f.write(img.tobytes())
    np.testing.assert_array_equal(R.read_ppm(path), img)


def test_frame_file_naming(tmp_path):
    left = np.zeros((4, 4, 3), dtype=np.uint8)
    right = np.ones((4, 4, 3), dtype=np.uint8)
    path = R.write_frame(tmp_path, 42, left, right)
    assert path.name == "frame_000042.ppm"
    out = R.read_ppm(path)
    assert out.shape == (4, 8, 3)
    np.testing.assert_array_equal(out[:, :4], left)
    np.testing.assert_array_equal(out[:, 4:], right)
