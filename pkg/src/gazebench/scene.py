"""Parametric 3D scene model for binocular gaze-fixation data.

A scene is a physical screen, a pinhole camera at or near the screen,
and a simulated subject fixating grid points on the screen. Every
generated sample carries exact 3D ground truth (fixated point, head
pose, per-eye geometry) together with the pinhole projections of the
eye landmarks, so downstream rendering and preprocessing can be checked
against the geometry rather than against themselves.

Coordinate conventions
----------------------
World frame (right-handed, millimetres):

    +X  image right, as seen by the camera
    +Y  down
    +Z  from the screen plane toward the subject

The screen lies in the plane z = 0 with its centre at the world origin.
In-screen coordinates (sx, sy) run from the screen's top-left corner,
sx rightward and sy downward, so ``world = screen.origin_mm + (sx, sy, 0)``.

The camera frame follows the usual pinhole convention (x right, y down,
z forward); the camera looks toward the subject, i.e. roughly along +Z.
Pixels are square: ``u = f * x / z + cx``, ``v = f * y / z + cy``.

Heads face the screen, forward axis roughly along -Z. A head's local
axes at identity orientation coincide with the world axes (lateral +X,
down +Y, back +Z); orientation is stored as yaw/pitch/roll degrees with
rotation matrix ``Ry(yaw) @ Rx(pitch) @ Rz(roll)``.

Eyes are labelled by image side: the "left" eye is the one on the
camera's image-left (negative lateral offset), which is the subject's
anatomical right eye. Eye corners are fixed in the head frame; iris and
pupil centres sit on the eyeball sphere along the optical axis, which
is the visual axis rotated temporally by the kappa angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GeometryError, ProjectionError, ValidationError

Vec3 = np.ndarray
Vec2 = np.ndarray

# Corner placement on the eyeball sphere, degrees from the face-forward
# direction in the horizontal head plane. Fixed anatomy, not per-user.
OUTER_CORNER_DEG = 50.0
INNER_CORNER_DEG = 45.0

LANDMARK_NAMES = (
    "outer_left", "inner_left", "iris_left", "pupil_left",
    "outer_right", "inner_right", "iris_right", "pupil_right",
)

# The six landmarks a rendered annotation carries.
KEY_LANDMARK_NAMES = (
    "outer_left", "inner_left", "iris_left",
    "outer_right", "inner_right", "iris_right",
)


def _vec3(v) -> Vec3:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValidationError(f"expected 3-vector, got shape {a.shape}")
    return a


def _vec2(v) -> Vec2:
    a = np.asarray(v, dtype=float)
    if a.shape != (2,):
        raise ValidationError(f"expected 2-vector, got shape {a.shape}")
    return a


def _unit(v: Vec3) -> Vec3:
    n = float(np.linalg.norm(v))
    if n < 1e-12:
        raise GeometryError("cannot normalize near-zero vector")
    return v / n


def rotate_about_axis(v: Vec3, axis: Vec3, angle_deg: float) -> Vec3:
    """Rodrigues rotation of `v` about unit `axis` by `angle_deg` (right-hand rule)."""
    k = _unit(np.asarray(axis, dtype=float))
    v = np.asarray(v, dtype=float)
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    return v * c + np.cross(k, v) * s + k * float(np.dot(k, v)) * (1.0 - c)


def _rx(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _ry(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rz(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rotation_from_euler(yaw_deg: float, pitch_deg: float, roll_deg: float) -> np.ndarray:
    """Head orientation matrix, columns = head-local axes in world coordinates."""
    return _ry(yaw_deg) @ _rx(pitch_deg) @ _rz(roll_deg)


def euler_from_rotation(rot: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_from_euler`; assumes |pitch| < 90 degrees."""
    pitch = math.degrees(math.asin(max(-1.0, min(1.0, -float(rot[1, 2])))))
    yaw = math.degrees(math.atan2(float(rot[0, 2]), float(rot[2, 2])))
    roll = math.degrees(math.atan2(float(rot[1, 0]), float(rot[1, 1])))
    return yaw, pitch, roll


def look_rotation(forward: Vec3, roll_deg: float = 0.0) -> np.ndarray:
    """Orientation whose -z (face forward) axis is `forward`, rolled about it.

    Zero roll keeps the head upright: the local down axis is the world
    +Y projected into the plane orthogonal to `forward`.
    """
    f = _unit(_vec3(forward))
    back = -f
    world_down = np.array([0.0, 1.0, 0.0])
    lateral = np.cross(world_down, back)
    if np.linalg.norm(lateral) < 1e-9:
        raise GeometryError("facing direction parallel to the vertical axis")
    lateral = _unit(lateral)
    down = np.cross(back, lateral)
    r0 = np.column_stack([lateral, down, back])
    return r0 @ _rz(roll_deg)


@dataclass(eq=False)
class ScreenConfig:
    """Physical screen: extent, placement of its top-left corner, camera offset.

    `camera_offset_mm` is the camera position relative to the screen
    centre and must agree with the CameraModel built for the same scene.
    """

    width_mm: float
    height_mm: float
    origin_mm: Vec3 = None  # type: ignore[assignment]
    camera_offset_mm: Vec3 = None  # type: ignore[assignment]

    def __post_init__(self):
        if not (self.width_mm > 0 and self.height_mm > 0):
            raise ValidationError("screen extent must be positive")
        if self.origin_mm is None:
            self.origin_mm = np.array([-self.width_mm / 2.0, -self.height_mm / 2.0, 0.0])
        self.origin_mm = _vec3(self.origin_mm)
        if self.camera_offset_mm is None:
            self.camera_offset_mm = np.zeros(3)
        self.camera_offset_mm = _vec3(self.camera_offset_mm)

    @property
    def center_mm(self) -> Vec3:
        return self.origin_mm + np.array([self.width_mm / 2.0, self.height_mm / 2.0, 0.0])

    def to_world(self, sx: float, sy: float) -> Vec3:
        return self.origin_mm + np.array([float(sx), float(sy), 0.0])

    def to_dict(self) -> dict:
        return {
            "width_mm": self.width_mm,
            "height_mm": self.height_mm,
            "origin_mm": self.origin_mm.tolist(),
            "camera_offset_mm": self.camera_offset_mm.tolist(),
        }


@dataclass(eq=False)
class CameraModel:
    """Pinhole camera with square pixels and an explicit world pose."""

    focal_px: float
    principal_point_px: Vec2
    resolution_px: tuple[int, int]
    position_mm: Vec3
    orientation: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValidationError("focal length must be positive")
        self.principal_point_px = _vec2(self.principal_point_px)
        w, h = self.resolution_px
        if not (int(w) > 0 and int(h) > 0):
            raise ValidationError("resolution components must be positive")
        self.resolution_px = (int(w), int(h))
        self.position_mm = _vec3(self.position_mm)
        if self.orientation is None:
            self.orientation = np.eye(3)
        self.orientation = np.asarray(self.orientation, dtype=float)
        if self.orientation.shape != (3, 3):
            raise ValidationError("orientation must be a 3x3 rotation matrix")

    @classmethod
    def looking_at(cls, focal_px, resolution_px, position_mm, aim_mm,
                   principal_point_px=None) -> "CameraModel":
        """Camera at `position_mm` with its optical axis through `aim_mm`."""
        position_mm = _vec3(position_mm)
        aim = _vec3(aim_mm)
        fwd = _unit(aim - position_mm)
        world_down = np.array([0.0, 1.0, 0.0])
        right = np.cross(world_down, fwd)
        if np.linalg.norm(right) < 1e-9:
            raise GeometryError("camera axis parallel to vertical")
        right = _unit(right)
        down = np.cross(fwd, right)
        rot = np.column_stack([right, down, fwd])
        if principal_point_px is None:
            principal_point_px = (resolution_px[0] / 2.0, resolution_px[1] / 2.0)
        return cls(focal_px=focal_px, principal_point_px=principal_point_px,
                   resolution_px=resolution_px, position_mm=position_mm, orientation=rot)

    def world_to_camera(self, point_mm: Vec3) -> Vec3:
        return self.orientation.T @ (_vec3(point_mm) - self.position_mm)

    def to_dict(self) -> dict:
        return {
            "focal_px": self.focal_px,
            "principal_point_px": self.principal_point_px.tolist(),
            "resolution_px": list(self.resolution_px),
            "position_mm": self.position_mm.tolist(),
            "orientation": self.orientation.tolist(),
        }


@dataclass(eq=False)
class EyeballParams:
    """Per-subject eye geometry. Lengths in millimetres, kappa in degrees."""

    interocular_mm: float = 62.0
    eyeball_radius_mm: float = 12.0
    iris_radius_mm: float = 6.0
    kappa_deg: float = 5.0

    def __post_init__(self):
        for name in ("interocular_mm", "eyeball_radius_mm", "iris_radius_mm"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 <= self.kappa_deg < 15.0:
            raise ValidationError("kappa_deg must be in [0, 15)")
        if self.iris_radius_mm >= self.eyeball_radius_mm:
            raise ValidationError("iris radius must be smaller than the eyeball radius")

    def to_dict(self) -> dict:
        return {
            "interocular_mm": self.interocular_mm,
            "eyeball_radius_mm": self.eyeball_radius_mm,
            "iris_radius_mm": self.iris_radius_mm,
            "kappa_deg": self.kappa_deg,
        }


@dataclass(eq=False)
class HeadPose:
    """Eyes-midpoint position plus head orientation in degrees."""

    position_mm: Vec3
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0

    def __post_init__(self):
        self.position_mm = _vec3(self.position_mm)
        for a in (self.yaw_deg, self.pitch_deg, self.roll_deg):
            if not math.isfinite(a):
                raise ValidationError("head angles must be finite")
        if not self.position_mm[2] > 100.0:
            raise ValidationError("subject must sit more than 100 mm from the camera plane")

    def rotation(self) -> np.ndarray:
        return rotation_from_euler(self.yaw_deg, self.pitch_deg, self.roll_deg)

    def to_dict(self) -> dict:
        return {
            "position_mm": self.position_mm.tolist(),
            "yaw_deg": self.yaw_deg,
            "pitch_deg": self.pitch_deg,
            "roll_deg": self.roll_deg,
        }


@dataclass(eq=False)
class GazeTarget:
    """One fixation point: grid index, world position, in-screen position."""

    index: int
    position_mm: Vec3
    position_screen_mm: Vec2

    def __post_init__(self):
        self.position_mm = _vec3(self.position_mm)
        self.position_screen_mm = _vec2(self.position_screen_mm)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "position_mm": self.position_mm.tolist(),
            "position_screen_mm": self.position_screen_mm.tolist(),
        }


@dataclass(eq=False)
class Ray3:
    origin: Vec3
    direction: Vec3

    def __post_init__(self):
        self.origin = _vec3(self.origin)
        self.direction = _unit(_vec3(self.direction))

    def distance_to(self, point: Vec3) -> float:
        rel = _vec3(point) - self.origin
        return float(np.linalg.norm(rel - self.direction * float(np.dot(rel, self.direction))))

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "direction": self.direction.tolist()}


@dataclass(eq=False)
class EyeState:
    """Geometry of one eye while fixating a target."""

    center: Vec3
    visual_dir: Vec3
    optical_dir: Vec3
    iris_center: Vec3
    pupil_center: Vec3
    outer_corner: Vec3
    inner_corner: Vec3

    def visual_ray(self) -> Ray3:
        return Ray3(self.center, self.visual_dir)


@dataclass(eq=False)
class GazeGeometry:
    left: EyeState
    right: EyeState


@dataclass(eq=False)
class SceneSample:
    """One annotated fixation: ground truth plus projected landmarks."""

    user_id: int
    session_id: int
    target: GazeTarget
    head_pose: HeadPose
    landmarks_3d: dict[str, Vec3]
    landmarks_2d: dict[str, Vec2]
    gaze_rays: tuple[Ray3, Ray3]
    camera_distance_mm: float

    @property
    def sample_key(self) -> str:
        return f"u{self.user_id}/s{self.session_id}/p{self.target.index}"

    def to_dict(self, image_path: str | None = None) -> dict:
        d = {
            "user_id": self.user_id,
            "session_id": self.session_id,
            "target": self.target.to_dict(),
            "head_pose": self.head_pose.to_dict(),
            "landmarks_3d": {k: v.tolist() for k, v in self.landmarks_3d.items()},
            "landmarks_2d": {k: v.tolist() for k, v in self.landmarks_2d.items()},
            "gaze_rays": {"left": self.gaze_rays[0].to_dict(),
                          "right": self.gaze_rays[1].to_dict()},
            "camera_distance_mm": self.camera_distance_mm,
        }
        if image_path is not None:
            d["image"] = image_path
        return d


def _axis_positions(n: int, lo: float, hi: float) -> np.ndarray:
    if n < 1:
        raise ValidationError("axis count must be >= 1")
    if n == 1:
        return np.array([(lo + hi) / 2.0])
    return np.linspace(lo, hi, n)


def build_grid(rows: int, cols: int, screen: ScreenConfig, margin_mm: float,
               region_mm: tuple[float, float, float, float] | None = None) -> list[GazeTarget]:
    """Evenly spaced rows x cols fixation targets, row-major order.

    Targets span the margin-inset rectangle of `region_mm`
    (x0, y0, x1, y1 in in-screen mm; defaults to the whole screen).
    A 1-point axis collapses to the rectangle midline.
    """
    if rows < 1 or cols < 1:
        raise ValidationError("grid needs at least one row and one column")
    if region_mm is None:
        region_mm = (0.0, 0.0, screen.width_mm, screen.height_mm)
    x0, y0, x1, y1 = (float(v) for v in region_mm)
    if margin_mm < 0:
        raise ConfigError("grid margin must be nonnegative")
    if x1 - x0 - 2 * margin_mm <= 0 or y1 - y0 - 2 * margin_mm <= 0:
        raise ConfigError("grid margins leave no usable screen area")
    xs = _axis_positions(cols, x0 + margin_mm, x1 - margin_mm)
    ys = _axis_positions(rows, y0 + margin_mm, y1 - margin_mm)
    targets = []
    idx = 0
    for sy in ys:
        for sx in xs:
            targets.append(GazeTarget(index=idx,
                                      position_mm=screen.to_world(sx, sy),
                                      position_screen_mm=(sx, sy)))
            idx += 1
    return targets


def head_pose_lattice(counts: tuple[int, int, int],
                      ranges: tuple[tuple[float, float], ...],
                      aim_mm=(0.0, 0.0, 0.0),
                      roll_jitter_deg: float = 0.0,
                      seed: int = 0) -> list[HeadPose]:
    """Cartesian product of per-axis positions, faces aimed at `aim_mm`.

    Ordering is x-major (x varies slowest, z fastest). With nonzero
    `roll_jitter_deg` each pose gets a seeded uniform roll in
    [-jitter, +jitter] about its facing axis.
    """
    if len(counts) != 3 or len(ranges) != 3:
        raise ValidationError("lattice needs three axis counts and ranges")
    for lo, hi in ranges:
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValidationError("lattice ranges must be finite")
    axes = [_axis_positions(int(n), lo, hi) for n, (lo, hi) in zip(counts, ranges)]
    n_poses = len(axes[0]) * len(axes[1]) * len(axes[2])
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    rolls = (rng.uniform(-roll_jitter_deg, roll_jitter_deg, size=n_poses)
             if roll_jitter_deg > 0 else np.zeros(n_poses))
    aim = _vec3(aim_mm)
    poses = []
    i = 0
    for x in axes[0]:
        for y in axes[1]:
            for z in axes[2]:
                pos = np.array([x, y, z])
                rot = look_rotation(aim - pos, roll_deg=float(rolls[i]))
                yaw, pitch, roll = euler_from_rotation(rot)
                poses.append(HeadPose(position_mm=pos, yaw_deg=yaw,
                                      pitch_deg=pitch, roll_deg=roll))
                i += 1
    return poses


class _HeadFrame:
    """Per-pose quantities shared by every target of a session."""

    def __init__(self, eyes: EyeballParams, pose: HeadPose):
        rot = pose.rotation()
        self.lateral = rot[:, 0]
        self.down = rot[:, 1]
        self.back = rot[:, 2]
        self.forward = -self.back
        self.up = -self.down
        half = eyes.interocular_mm / 2.0
        self.center_left = pose.position_mm - half * self.lateral
        self.center_right = pose.position_mm + half * self.lateral
        r = eyes.eyeball_radius_mm
        # Corners are fixed in the head frame; outer is temporal, inner nasal.
        self.corners = {
            "outer_left": self.center_left + r * rotate_about_axis(self.forward, self.up, -OUTER_CORNER_DEG),
            "inner_left": self.center_left + r * rotate_about_axis(self.forward, self.up, +INNER_CORNER_DEG),
            "outer_right": self.center_right + r * rotate_about_axis(self.forward, self.up, +OUTER_CORNER_DEG),
            "inner_right": self.center_right + r * rotate_about_axis(self.forward, self.up, -INNER_CORNER_DEG),
        }


def gaze_rays(eyes: EyeballParams, pose: HeadPose, target: GazeTarget) -> GazeGeometry:
    """Binocular fixation geometry for one target.

    Both visual axes originate at their eyeball centres and pass through
    the target (exact vergence). The optical axis is the visual axis
    rotated temporally by kappa about the head-up axis; iris and pupil
    centres sit where it pierces the eyeball sphere (concentric disks,
    so the two centres coincide in this model).
    """
    frame = _HeadFrame(eyes, pose)
    if float(np.dot(target.position_mm - pose.position_mm, frame.forward)) <= 0.0:
        raise GeometryError("target lies behind the subject's facing direction")
    r = eyes.eyeball_radius_mm

    def eye_state(center: Vec3, kappa_sign: float, outer: Vec3, inner: Vec3) -> EyeState:
        visual = _unit(target.position_mm - center)
        optical = rotate_about_axis(visual, frame.up, kappa_sign * eyes.kappa_deg)
        iris = center + r * optical
        return EyeState(center=center, visual_dir=visual, optical_dir=optical,
                        iris_center=iris, pupil_center=iris.copy(),
                        outer_corner=outer, inner_corner=inner)

    left = eye_state(frame.center_left, -1.0,
                     frame.corners["outer_left"], frame.corners["inner_left"])
    right = eye_state(frame.center_right, +1.0,
                      frame.corners["outer_right"], frame.corners["inner_right"])
    return GazeGeometry(left=left, right=right)


def project(camera: CameraModel, point_mm) -> Vec2:
    """Pinhole projection of a world point to pixel coordinates."""
    p = camera.world_to_camera(point_mm)
    if p[2] <= 1e-9:
        raise ProjectionError("point at or behind the camera plane")
    f = camera.focal_px
    cx, cy = camera.principal_point_px
    return np.array([f * p[0] / p[2] + cx, f * p[1] / p[2] + cy])


def _project_many(camera: CameraModel, points: np.ndarray) -> np.ndarray:
    rel = (points - camera.position_mm) @ camera.orientation
    if np.any(rel[:, 2] <= 1e-9):
        raise ProjectionError("point at or behind the camera plane")
    uv = rel[:, :2] * (camera.focal_px / rel[:, 2:3])
    return uv + camera.principal_point_px


@dataclass(eq=False)
class UserSpec:
    """One simulated subject: id, eye geometry, appearance seed."""

    user_id: int
    eyes: EyeballParams
    appearance_seed: int

    def to_dict(self) -> dict:
        return {"user_id": self.user_id, "eyeball": self.eyes.to_dict(),
                "appearance_seed": self.appearance_seed}


def generate_session(user: UserSpec, pose: HeadPose, grid: list[GazeTarget],
                     screen: ScreenConfig, camera: CameraModel,
                     session_id: int = 0) -> list[SceneSample]:
    """One SceneSample per grid target for a fixed head pose.

    Pure function of its inputs; a failed target is reported with its
    grid index.
    """
    samples = []
    for target in grid:
        try:
            geom = gaze_rays(user.eyes, pose, target)
            pts3 = np.stack([
                geom.left.outer_corner, geom.left.inner_corner,
                geom.left.iris_center, geom.left.pupil_center,
                geom.right.outer_corner, geom.right.inner_corner,
                geom.right.iris_center, geom.right.pupil_center,
            ])
            names = ("outer_left", "inner_left", "iris_left", "pupil_left",
                     "outer_right", "inner_right", "iris_right", "pupil_right")
            pts2 = _project_many(camera, pts3)
        except (GeometryError, ProjectionError) as e:
            raise type(e)(f"target {target.index}: {e}") from e
        samples.append(SceneSample(
            user_id=user.user_id,
            session_id=session_id,
            target=target,
            head_pose=pose,
            landmarks_3d={n: pts3[i] for i, n in enumerate(names)},
            landmarks_2d={n: pts2[i] for i, n in enumerate(names)},
            gaze_rays=(geom.left.visual_ray(), geom.right.visual_ray()),
            camera_distance_mm=float(np.linalg.norm(target.position_mm - camera.position_mm)),
        ))
    return samples


@dataclass(eq=False)
class GridSpec:
    """Recipe for one named fixation grid."""

    rows: int
    cols: int
    margin_mm: float = 20.0
    region_mm: tuple[float, float, float, float] | None = None
    add_center: bool = False

    @property
    def n_points(self) -> int:
        return self.rows * self.cols + (1 if self.add_center else 0)

    def build(self, screen: ScreenConfig) -> list[GazeTarget]:
        targets = build_grid(self.rows, self.cols, screen, self.margin_mm, self.region_mm)
        if self.add_center:
            center = build_grid(1, 1, screen, 0.0, self.region_mm)[0]
            targets.append(GazeTarget(index=len(targets),
                                      position_mm=center.position_mm,
                                      position_screen_mm=center.position_screen_mm))
        return targets

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "margin_mm": self.margin_mm,
                "region_mm": list(self.region_mm) if self.region_mm else None,
                "add_center": self.add_center}


@dataclass(eq=False)
class SessionSpec:
    """Session slot in a profile's plan: which pose, which grid, central or not."""

    pose_index: int
    grid_id: str
    central: bool = True


@dataclass(eq=False)
class EyeRanges:
    """Uniform per-user sampling ranges for EyeballParams."""

    interocular_mm: tuple[float, float] = (58.0, 66.0)
    eyeball_radius_mm: tuple[float, float] = (11.0, 13.0)
    iris_radius_mm: tuple[float, float] = (5.5, 6.5)
    kappa_deg: tuple[float, float] = (3.0, 7.0)

    def sample(self, rng: np.random.Generator) -> EyeballParams:
        return EyeballParams(
            interocular_mm=float(rng.uniform(*self.interocular_mm)),
            eyeball_radius_mm=float(rng.uniform(*self.eyeball_radius_mm)),
            iris_radius_mm=float(rng.uniform(*self.iris_radius_mm)),
            kappa_deg=float(rng.uniform(*self.kappa_deg)),
        )

    def to_dict(self) -> dict:
        return {"interocular_mm": list(self.interocular_mm),
                "eyeball_radius_mm": list(self.eyeball_radius_mm),
                "iris_radius_mm": list(self.iris_radius_mm),
                "kappa_deg": list(self.kappa_deg)}


@dataclass(eq=False)
class SceneProfile:
    """A full scene recipe: screen, camera, grids, pose lattice, session plan.

    Two stock layouts ship with the package (see :func:`default_profile`):

    * ``U``: camera at the screen centre, fixation grids confined to the
      band above it, 5x5x5 head-position lattice.
    * ``I``: camera 30 mm above the screen's top edge (tilted toward the
      subject), full-screen grids, 2x2x2 head-position lattice, four of
      the eight sessions flagged central.
    """

    profile_id: str
    screen: ScreenConfig
    camera: CameraModel
    grids: dict[str, GridSpec]
    pose_counts: tuple[int, int, int]
    pose_ranges: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    roll_jitter_deg: float = 10.0
    session_plan: list[SessionSpec] | None = None
    eye_ranges: EyeRanges = field(default_factory=EyeRanges)
    noise_sigma: float = 0.0
    aim_mm: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def n_poses(self) -> int:
        return int(np.prod(self.pose_counts))

    def sessions(self) -> list[SessionSpec]:
        if self.session_plan is not None:
            return list(self.session_plan)
        plan = []
        for pose_index in range(self.n_poses()):
            for grid_id in sorted(self.grids):
                plan.append(SessionSpec(pose_index=pose_index, grid_id=grid_id, central=True))
        return plan

    def samples_per_user(self) -> int:
        return sum(self.grids[s.grid_id].n_points for s in self.sessions())

    def build_poses(self, roll_seed: int = 0) -> list[HeadPose]:
        return head_pose_lattice(self.pose_counts, self.pose_ranges,
                                 aim_mm=self.aim_mm,
                                 roll_jitter_deg=self.roll_jitter_deg,
                                 seed=roll_seed)

    def build_grids(self) -> dict[str, list[GazeTarget]]:
        return {gid: spec.build(self.screen) for gid, spec in self.grids.items()}


@dataclass(eq=False)
class SessionRecord:
    session_id: int
    grid_id: str
    central: bool
    head_pose: HeadPose
    samples: list[SceneSample]


@dataclass(eq=False)
class UserRecord:
    spec: UserSpec
    sessions: list[SessionRecord]

    @property
    def user_id(self) -> int:
        return self.spec.user_id

    def all_samples(self) -> list[SceneSample]:
        return [s for sess in self.sessions for s in sess.samples]


@dataclass(eq=False)
class Cohort:
    """Generated dataset: users -> sessions -> samples, plus its provenance."""

    profile: SceneProfile
    master_seed: int
    users: list[UserRecord]

    def n_samples(self) -> int:
        return sum(len(sess.samples) for u in self.users for sess in u.sessions)

    def user_ids(self) -> list[int]:
        return [u.user_id for u in self.users]


def _user_spec(profile: SceneProfile, master_seed: int, user_index: int) -> UserSpec:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(user_index,))
    params_seq, appearance_seq, _roll_seq = ss.spawn(3)
    rng = np.random.default_rng(params_seq)
    eyes = profile.eye_ranges.sample(rng)
    appearance_seed = int(np.random.default_rng(appearance_seq).integers(0, 2**31 - 1))
    return UserSpec(user_id=user_index, eyes=eyes, appearance_seed=appearance_seed)


def _user_roll_seed(master_seed: int, user_index: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(user_index,))
    _params, _appearance, roll_seq = ss.spawn(3)
    return int(np.random.default_rng(roll_seq).integers(0, 2**31 - 1))


def generate_cohort(n_users: int, profile: SceneProfile, master_seed: int) -> Cohort:
    """Deterministic cohort: per-user eye parameters, poses, and samples.

    Every random draw derives from `master_seed` through per-user seed
    sequences, so regenerating with identical inputs is bit-identical
    and users could be generated independently in parallel.
    """
    if n_users < 1:
        raise ValidationError("cohort needs at least one user")
    grids = profile.build_grids()
    users = []
    for ui in range(n_users):
        spec = _user_spec(profile, master_seed, ui)
        poses = profile.build_poses(roll_seed=_user_roll_seed(master_seed, ui))
        sessions = []
        for sid, sess in enumerate(profile.sessions()):
            pose = poses[sess.pose_index]
            samples = generate_session(spec, pose, grids[sess.grid_id],
                                       profile.screen, profile.camera, session_id=sid)
            sessions.append(SessionRecord(session_id=sid, grid_id=sess.grid_id,
                                          central=sess.central, head_pose=pose,
                                          samples=samples))
        users.append(UserRecord(spec=spec, sessions=sessions))
    return Cohort(profile=profile, master_seed=master_seed, users=users)


def default_profile(profile_id: str) -> SceneProfile:
    """Stock scene layouts ``U`` (camera centred) and ``I`` (camera above screen)."""
    screen_w, screen_h = 400.0, 300.0
    focal = 900.0
    resolution = (640, 360)
    aim = (0.0, 0.0, 550.0)
    if profile_id == "U":
        screen = ScreenConfig(screen_w, screen_h, camera_offset_mm=(0.0, 0.0, 0.0))
        camera = CameraModel.looking_at(focal, resolution,
                                        position_mm=screen.center_mm + np.array([0.0, 0.0, 0.0]),
                                        aim_mm=aim)
        # Fixation grids live in the band above the camera. The band stops
        # 70 mm short of the camera: angular error divides by the
        # camera-to-target distance, and targets a few cm from the lens
        # would swamp the error distribution with that one geometric factor.
        region = (0.0, 0.0, screen_w, 100.0)
        return SceneProfile(
            profile_id="U", screen=screen, camera=camera,
            grids={"g15": GridSpec(3, 5, 20.0, region),
                   "g32": GridSpec(4, 8, 20.0, region)},
            pose_counts=(5, 5, 5),
            pose_ranges=((-100.0, 100.0), (-50.0, 50.0), (450.0, 650.0)),
            roll_jitter_deg=10.0,
            session_plan=None,
            noise_sigma=0.0,
            aim_mm=(0.0, 0.0, 0.0),
        )
    if profile_id == "I":
        screen = ScreenConfig(screen_w, screen_h, camera_offset_mm=(0.0, -screen_h / 2.0 - 30.0, 0.0))
        camera = CameraModel.looking_at(focal, resolution,
                                        position_mm=(0.0, -screen_h / 2.0 - 30.0, 0.0),
                                        aim_mm=aim)
        plan = [
            SessionSpec(pose_index=0, grid_id="g65", central=True),
            SessionSpec(pose_index=3, grid_id="g65", central=True),
            SessionSpec(pose_index=5, grid_id="g17", central=True),
            SessionSpec(pose_index=6, grid_id="g17", central=True),
            SessionSpec(pose_index=1, grid_id="g17", central=False),
            SessionSpec(pose_index=2, grid_id="g17", central=False),
            SessionSpec(pose_index=4, grid_id="g17", central=False),
            SessionSpec(pose_index=7, grid_id="g17", central=False),
        ]
        return SceneProfile(
            profile_id="I", screen=screen, camera=camera,
            grids={"g65": GridSpec(8, 8, 20.0, add_center=True),
                   "g17": GridSpec(4, 4, 20.0, add_center=True)},
            pose_counts=(2, 2, 2),
            pose_ranges=((-80.0, 80.0), (-50.0, 50.0), (480.0, 620.0)),
            roll_jitter_deg=10.0,
            session_plan=plan,
            noise_sigma=36.0,
            aim_mm=(0.0, 0.0, 0.0),
        )
    raise ConfigError(f"unknown profile id {profile_id!r}")
