"""Tests for the parametric scene model."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from gazebench import scene
from gazebench.errors import (
    ConfigError,
    GeometryError,
    ProjectionError,
    ValidationError,
)


def make_screen(**kw):
    return scene.ScreenConfig(width_mm=400.0, height_mm=300.0, **kw)


def make_camera(position=(0.0, 0.0, 0.0), aim=(0.0, 0.0, 550.0)):
    return scene.CameraModel.looking_at(900.0, (640, 360), position, aim)


class TestScreen:
    def test_default_origin_centers_screen(self):
        s = make_screen()
        npt.assert_allclose(s.origin_mm, [-200.0, -150.0, 0.0])
        npt.assert_allclose(s.center_mm, [0.0, 0.0, 0.0])

    def test_to_world(self):
        s = make_screen()
        npt.assert_allclose(s.to_world(0.0, 0.0), s.origin_mm)
        npt.assert_allclose(s.to_world(400.0, 300.0), [200.0, 150.0, 0.0])

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ValidationError):
            scene.ScreenConfig(width_mm=0.0, height_mm=300.0)


class TestRotations:
    def test_euler_round_trip(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            yaw, roll = rng.uniform(-179.0, 179.0, size=2)
            pitch = rng.uniform(-89.0, 89.0)
            rot = scene.rotation_from_euler(yaw, pitch, roll)
            back = scene.euler_from_rotation(rot)
            npt.assert_allclose(back, (yaw, pitch, roll), atol=1e-9)

    def test_rotation_is_orthonormal(self):
        rot = scene.rotation_from_euler(31.0, -12.0, 55.0)
        npt.assert_allclose(rot @ rot.T, np.eye(3), atol=1e-12)
        assert math.isclose(np.linalg.det(rot), 1.0, abs_tol=1e-12)

    def test_rodrigues_matches_matrix_for_z_axis(self):
        v = np.array([1.0, 2.0, 3.0])
        got = scene.rotate_about_axis(v, [0.0, 0.0, 1.0], 90.0)
        npt.assert_allclose(got, [-2.0, 1.0, 3.0], atol=1e-12)

    def test_look_rotation_faces_forward(self):
        pos = np.array([50.0, -30.0, 600.0])
        rot = scene.look_rotation(np.zeros(3) - pos)
        fwd = -rot[:, 2]
        npt.assert_allclose(fwd, pos / np.linalg.norm(pos) * -1.0, atol=1e-12)

    def test_look_rotation_zero_roll_keeps_lateral_level(self):
        # lateral axis must stay horizontal (no Y component) at zero roll
        rot = scene.look_rotation([30.0, -40.0, -500.0])
        assert abs(rot[1, 0]) < 1e-12

    def test_look_rotation_roll_round_trips_through_euler(self):
        rot = scene.look_rotation([10.0, 5.0, -550.0], roll_deg=7.5)
        _, _, roll = scene.euler_from_rotation(rot)
        # roll about the facing axis is not exactly Euler roll for a
        # tilted head, but must match at this mild tilt to a degree
        assert abs(roll - 7.5) < 1.0


class TestCamera:
    def test_centered_camera_is_identity(self):
        cam = make_camera()
        npt.assert_allclose(cam.orientation, np.eye(3), atol=1e-12)

    def test_project_known_point(self):
        # 10 mm lateral at 1 m, f=1400: 1400*10/1000 = 14 px off centre
        cam = scene.CameraModel(focal_px=1400.0, principal_point_px=(960.0, 540.0),
                                resolution_px=(1920, 1080),
                                position_mm=(0.0, 0.0, 0.0))
        uv = scene.project(cam, (10.0, 0.0, 1000.0))
        npt.assert_allclose(uv, [974.0, 540.0], atol=1e-12)

    def test_project_behind_camera_raises(self):
        cam = make_camera()
        with pytest.raises(ProjectionError):
            scene.project(cam, (0.0, 0.0, -5.0))

    def test_raised_camera_aims_through_target(self):
        cam = make_camera(position=(0.0, -180.0, 0.0), aim=(0.0, 0.0, 550.0))
        uv = scene.project(cam, (0.0, 0.0, 550.0))
        npt.assert_allclose(uv, [320.0, 180.0], atol=1e-9)

    def test_projection_preserves_image_right(self):
        cam = make_camera(position=(0.0, -180.0, 0.0), aim=(0.0, 0.0, 550.0))
        right = scene.project(cam, (30.0, 0.0, 550.0))
        center = scene.project(cam, (0.0, 0.0, 550.0))
        assert right[0] > center[0]
        npt.assert_allclose(right[1], center[1], atol=1e-9)


class TestGrid:
    def test_two_by_two_with_margin(self):
        s = make_screen()
        targets = scene.build_grid(2, 2, s, margin_mm=50.0)
        got = [tuple(t.position_screen_mm) for t in targets]
        assert got == [(50.0, 50.0), (350.0, 50.0), (50.0, 250.0), (350.0, 250.0)]

    def test_row_major_indexing(self):
        s = make_screen()
        targets = scene.build_grid(3, 5, s, margin_mm=20.0)
        assert [t.index for t in targets] == list(range(15))
        # first row shares sy, columns increase in sx
        row0 = targets[:5]
        assert len({round(float(t.position_screen_mm[1]), 9) for t in row0}) == 1
        xs = [float(t.position_screen_mm[0]) for t in row0]
        assert xs == sorted(xs)

    def test_world_positions_match_screen_positions(self):
        s = make_screen()
        for t in scene.build_grid(4, 8, s, margin_mm=20.0):
            npt.assert_allclose(t.position_mm,
                                s.to_world(*t.position_screen_mm), atol=1e-12)
            assert t.position_mm[2] == 0.0

    def test_single_point_axis_uses_midline(self):
        s = make_screen()
        (t,) = scene.build_grid(1, 1, s, margin_mm=20.0)
        npt.assert_allclose(t.position_screen_mm, [200.0, 150.0])

    def test_region_restricts_targets(self):
        s = make_screen()
        targets = scene.build_grid(3, 5, s, margin_mm=20.0,
                                   region_mm=(0.0, 0.0, 400.0, 130.0))
        for t in targets:
            assert 20.0 <= t.position_screen_mm[1] <= 110.0

    def test_margin_too_large_raises(self):
        s = make_screen()
        with pytest.raises(ConfigError):
            scene.build_grid(2, 2, s, margin_mm=200.0)

    def test_grid_spec_center_point_appended_last(self):
        s = make_screen()
        spec = scene.GridSpec(8, 8, 20.0, add_center=True)
        targets = spec.build(s)
        assert len(targets) == 65 == spec.n_points
        assert targets[-1].index == 64
        npt.assert_allclose(targets[-1].position_screen_mm, [200.0, 150.0])


class TestHeadPoseLattice:
    def test_counts(self):
        poses = scene.head_pose_lattice((5, 5, 5),
                                        ((-100, 100), (-50, 50), (450, 650)))
        assert len(poses) == 125

    def test_single_cell_is_range_midpoint(self):
        (pose,) = scene.head_pose_lattice((1, 1, 1),
                                          ((-100, 100), (-50, 50), (450, 650)))
        npt.assert_allclose(pose.position_mm, [0.0, 0.0, 550.0])

    def test_all_poses_face_the_aim_point(self):
        poses = scene.head_pose_lattice((2, 2, 2),
                                        ((-80, 80), (-50, 50), (480, 620)),
                                        aim_mm=(0.0, 0.0, 0.0))
        for pose in poses:
            fwd = -pose.rotation()[:, 2]
            want = -pose.position_mm / np.linalg.norm(pose.position_mm)
            npt.assert_allclose(fwd, want, atol=1e-9)

    def test_roll_jitter_is_seeded(self):
        a = scene.head_pose_lattice((2, 2, 2), ((-80, 80), (-50, 50), (480, 620)),
                                    roll_jitter_deg=10.0, seed=3)
        b = scene.head_pose_lattice((2, 2, 2), ((-80, 80), (-50, 50), (480, 620)),
                                    roll_jitter_deg=10.0, seed=3)
        c = scene.head_pose_lattice((2, 2, 2), ((-80, 80), (-50, 50), (480, 620)),
                                    roll_jitter_deg=10.0, seed=4)
        for pa, pb in zip(a, b):
            assert pa.roll_deg == pb.roll_deg
        assert any(pa.roll_deg != pc.roll_deg for pa, pc in zip(a, c))

    def test_central_lattice_member_has_no_roll_without_jitter(self):
        poses = scene.head_pose_lattice((1, 1, 3), ((0, 0), (0, 0), (450, 650)))
        for pose in poses:
            assert pose.yaw_deg == pytest.approx(0.0, abs=1e-12)
            assert pose.roll_deg == pytest.approx(0.0, abs=1e-12)


def frontal_pose(z=550.0):
    # identity orientation: lateral +X, down +Y, back +Z, so the head
    # faces -Z, straight at the screen
    return scene.HeadPose(position_mm=np.array([0.0, 0.0, z]))


class TestGazeRays:
    def test_frontal_head_axes(self):
        rot = frontal_pose().rotation()
        npt.assert_allclose(rot[:, 2], [0.0, 0.0, 1.0], atol=1e-12)  # back = +Z
        npt.assert_allclose(rot[:, 1], [0.0, 1.0, 0.0], atol=1e-12)  # down = +Y

    def test_eye_centers_split_interocular(self):
        eyes = scene.EyeballParams()
        pose = frontal_pose()
        geom = scene.gaze_rays(eyes, pose, _center_target())
        gap = np.linalg.norm(geom.right.center - geom.left.center)
        assert gap == pytest.approx(62.0, abs=1e-9)
        mid = 0.5 * (geom.right.center + geom.left.center)
        npt.assert_allclose(mid, pose.position_mm, atol=1e-9)

    def test_left_eye_is_image_left(self):
        # lower world x projects to lower pixel u
        geom = scene.gaze_rays(scene.EyeballParams(), frontal_pose(), _center_target())
        assert geom.left.center[0] < geom.right.center[0]

    def test_visual_axes_hit_the_target(self):
        eyes = scene.EyeballParams()
        target = _target(130.0, 40.0)
        geom = scene.gaze_rays(eyes, frontal_pose(), target)
        for eye in (geom.left, geom.right):
            assert eye.visual_ray().distance_to(target.position_mm) < 1e-9

    def test_vergence_two_eyes_share_fixation(self):
        # closest approach of the two visual rays is the target itself
        target = _target(300.0, 100.0)
        geom = scene.gaze_rays(scene.EyeballParams(), frontal_pose(480.0), target)
        rl, rr = geom.left.visual_ray(), geom.right.visual_ray()
        assert rl.distance_to(target.position_mm) < 1e-9
        assert rr.distance_to(target.position_mm) < 1e-9
        assert float(np.dot(rl.direction, rr.direction)) < 1.0  # not parallel

    def test_kappa_angle_between_axes(self):
        eyes = scene.EyeballParams(kappa_deg=5.0)
        geom = scene.gaze_rays(eyes, frontal_pose(), _center_target())
        for eye in (geom.left, geom.right):
            cosang = float(np.dot(eye.visual_dir, eye.optical_dir))
            ang = math.degrees(math.acos(max(-1.0, min(1.0, cosang))))
            assert ang == pytest.approx(5.0, abs=1e-9)

    def test_kappa_rotates_temporally(self):
        # optical axes diverge: left eye's optical axis points further
        # image-left than its visual axis, right eye mirrors it
        geom = scene.gaze_rays(scene.EyeballParams(kappa_deg=5.0),
                               frontal_pose(), _center_target())
        assert geom.left.optical_dir[0] < geom.left.visual_dir[0]
        assert geom.right.optical_dir[0] > geom.right.visual_dir[0]

    def test_zero_kappa_aligns_axes(self):
        geom = scene.gaze_rays(scene.EyeballParams(kappa_deg=0.0),
                               frontal_pose(), _target(300.0, 100.0))
        npt.assert_allclose(geom.left.optical_dir, geom.left.visual_dir, atol=1e-12)

    def test_iris_on_eyeball_sphere(self):
        eyes = scene.EyeballParams()
        geom = scene.gaze_rays(eyes, frontal_pose(), _target(60.0, 90.0))
        for eye in (geom.left, geom.right):
            d = np.linalg.norm(eye.iris_center - eye.center)
            assert d == pytest.approx(eyes.eyeball_radius_mm, abs=1e-9)
            npt.assert_allclose(eye.pupil_center, eye.iris_center, atol=1e-12)

    def test_corners_on_eyeball_sphere(self):
        eyes = scene.EyeballParams()
        geom = scene.gaze_rays(eyes, frontal_pose(), _center_target())
        for eye in (geom.left, geom.right):
            for corner in (eye.outer_corner, eye.inner_corner):
                d = np.linalg.norm(corner - eye.center)
                assert d == pytest.approx(eyes.eyeball_radius_mm, abs=1e-9)

    def test_corner_layout_frontal(self):
        # frontal head: outer-left corner is the leftmost landmark in x,
        # outer-right the rightmost, inner corners between the eyes
        geom = scene.gaze_rays(scene.EyeballParams(), frontal_pose(), _center_target())
        assert geom.left.outer_corner[0] < geom.left.center[0]
        assert geom.left.inner_corner[0] > geom.left.center[0]
        assert geom.right.outer_corner[0] > geom.right.center[0]
        assert geom.right.inner_corner[0] < geom.right.center[0]

    def test_corners_fixed_in_head_frame(self):
        # corners do not move when only the fixation target changes
        eyes = scene.EyeballParams()
        pose = frontal_pose()
        g1 = scene.gaze_rays(eyes, pose, _target(20.0, 20.0))
        g2 = scene.gaze_rays(eyes, pose, _target(380.0, 280.0))
        npt.assert_allclose(g1.left.outer_corner, g2.left.outer_corner, atol=1e-12)
        npt.assert_allclose(g1.right.inner_corner, g2.right.inner_corner, atol=1e-12)
        assert np.linalg.norm(g1.left.iris_center - g2.left.iris_center) > 0.1

    def test_sagittal_mirror_symmetry(self):
        # mirroring the target across x=0 swaps and mirrors the eyes
        eyes = scene.EyeballParams()
        pose = frontal_pose()
        ga = scene.gaze_rays(eyes, pose, _target(140.0, 150.0))
        gb = scene.gaze_rays(eyes, pose, _target(260.0, 150.0))

        def mirror(v):
            return np.array([-v[0], v[1], v[2]])

        npt.assert_allclose(ga.left.iris_center, mirror(gb.right.iris_center), atol=1e-6)
        npt.assert_allclose(ga.left.visual_dir, mirror(gb.right.visual_dir), atol=1e-6)
        npt.assert_allclose(ga.left.optical_dir, mirror(gb.right.optical_dir), atol=1e-6)

    def test_target_behind_head_raises(self):
        # yaw 180 turns the head away from the screen
        pose = scene.HeadPose(position_mm=(0.0, 0.0, 550.0), yaw_deg=180.0)
        with pytest.raises(GeometryError):
            scene.gaze_rays(scene.EyeballParams(), pose, _center_target())


def _screen():
    return make_screen()


def _target(sx, sy):
    s = _screen()
    return scene.GazeTarget(index=0, position_mm=s.to_world(sx, sy),
                            position_screen_mm=(sx, sy))


def _center_target():
    return _target(200.0, 150.0)


class TestSessionGeneration:
    def test_session_has_one_sample_per_target(self):
        user = scene.UserSpec(0, scene.EyeballParams(), appearance_seed=1)
        s = _screen()
        cam = make_camera()
        grid = scene.build_grid(3, 5, s, 20.0, region_mm=(0, 0, 400, 130))
        samples = scene.generate_session(user, frontal_pose(), grid, s, cam, session_id=2)
        assert len(samples) == 15
        assert [smp.target.index for smp in samples] == list(range(15))
        assert all(smp.session_id == 2 for smp in samples)

    def test_landmarks_2d_match_projection(self):
        user = scene.UserSpec(0, scene.EyeballParams(), appearance_seed=1)
        s = _screen()
        cam = make_camera()
        grid = scene.build_grid(2, 2, s, 50.0)
        for smp in scene.generate_session(user, frontal_pose(), grid, s, cam):
            for name in scene.LANDMARK_NAMES:
                npt.assert_allclose(smp.landmarks_2d[name],
                                    scene.project(cam, smp.landmarks_3d[name]),
                                    atol=1e-9)

    def test_camera_distance_recorded(self):
        user = scene.UserSpec(0, scene.EyeballParams(), appearance_seed=1)
        s = _screen()
        cam = make_camera()
        (t,) = scene.build_grid(1, 1, s, 0.0)
        (smp,) = scene.generate_session(user, frontal_pose(), [t], s, cam)
        want = np.linalg.norm(t.position_mm - cam.position_mm)
        assert smp.camera_distance_mm == pytest.approx(want, abs=1e-12)

    def test_gaze_rays_stored_per_eye(self):
        user = scene.UserSpec(0, scene.EyeballParams(), appearance_seed=1)
        s = _screen()
        cam = make_camera()
        (t,) = scene.build_grid(1, 1, s, 0.0)
        (smp,) = scene.generate_session(user, frontal_pose(), [t], s, cam)
        for ray in smp.gaze_rays:
            assert ray.distance_to(t.position_mm) < 1e-9


class TestProfiles:
    def test_profile_u_shape(self):
        p = scene.default_profile("U")
        assert p.n_poses() == 125
        assert p.samples_per_user() == 125 * 47
        assert sorted(p.grids) == ["g15", "g32"]
        assert p.grids["g15"].n_points == 15
        assert p.grids["g32"].n_points == 32
        npt.assert_allclose(p.camera.position_mm, [0.0, 0.0, 0.0])

    def test_profile_u_targets_above_camera(self):
        # camera sits at the screen centre; both grids live in the band
        # above it so no fixation coincides with the camera axis
        p = scene.default_profile("U")
        for targets in p.build_grids().values():
            for t in targets:
                assert t.position_mm[1] < 0.0

    def test_profile_i_shape(self):
        p = scene.default_profile("I")
        assert p.n_poses() == 8
        plan = p.sessions()
        assert len(plan) == 8
        assert sum(1 for s in plan if s.central) == 4
        per_session = [p.grids[s.grid_id].n_points for s in plan]
        assert sum(per_session) == 232
        central = sum(p.grids[s.grid_id].n_points for s in plan if s.central)
        assert central == 164

    def test_profile_i_camera_above_screen(self):
        p = scene.default_profile("I")
        assert p.camera.position_mm[1] == pytest.approx(-180.0)
        # camera tilted: optical axis passes through the aim point
        uv = scene.project(p.camera, (0.0, 0.0, 550.0))
        npt.assert_allclose(uv, [320.0, 180.0], atol=1e-9)

    def test_unknown_profile_rejected(self):
        with pytest.raises(ConfigError):
            scene.default_profile("X")


class TestCohort:
    def micro_profile(self):
        p = scene.default_profile("U")
        p.grids = {"g6": scene.GridSpec(2, 3, 20.0, (0.0, 0.0, 400.0, 130.0))}
        p.pose_counts = (1, 1, 2)
        p.pose_ranges = ((0.0, 0.0), (0.0, 0.0), (450.0, 650.0))
        return p

    def test_cohort_structure(self):
        cohort = scene.generate_cohort(3, self.micro_profile(), master_seed=11)
        assert cohort.user_ids() == [0, 1, 2]
        assert cohort.n_samples() == 3 * 2 * 6
        for user in cohort.users:
            assert len(user.sessions) == 2
            for sess in user.sessions:
                assert len(sess.samples) == 6

    def test_cohort_deterministic(self):
        a = scene.generate_cohort(2, self.micro_profile(), master_seed=5)
        b = scene.generate_cohort(2, self.micro_profile(), master_seed=5)
        for ua, ub in zip(a.users, b.users):
            assert ua.spec.eyes.to_dict() == ub.spec.eyes.to_dict()
            assert ua.spec.appearance_seed == ub.spec.appearance_seed
            for sa, sb in zip(ua.all_samples(), ub.all_samples()):
                npt.assert_array_equal(sa.landmarks_2d["iris_left"],
                                       sb.landmarks_2d["iris_left"])

    def test_users_differ_within_cohort(self):
        cohort = scene.generate_cohort(3, self.micro_profile(), master_seed=5)
        eyes = [u.spec.eyes.interocular_mm for u in cohort.users]
        assert len(set(eyes)) == 3

    def test_seed_changes_cohort(self):
        a = scene.generate_cohort(2, self.micro_profile(), master_seed=5)
        b = scene.generate_cohort(2, self.micro_profile(), master_seed=6)
        assert (a.users[0].spec.eyes.interocular_mm
                != b.users[0].spec.eyes.interocular_mm)

    def test_eye_params_within_ranges(self):
        cohort = scene.generate_cohort(5, self.micro_profile(), master_seed=2)
        for u in cohort.users:
            e = u.spec.eyes
            assert 58.0 <= e.interocular_mm <= 66.0
            assert 11.0 <= e.eyeball_radius_mm <= 13.0
            assert 5.5 <= e.iris_radius_mm <= 6.5
            assert 3.0 <= e.kappa_deg <= 7.0
