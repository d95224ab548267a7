"""Eye-strip preprocessing: roll normalization, corner crop, canvas padding.

Input is a grayscale frame (2D uint8) plus the pixel positions of the
two outer eye corners. The chain rotates the frame so the corner line
is horizontal, crops a strip whose width is a fixed multiple of the
corner distance, and pads the strip onto a fixed 390x85 canvas. The
pad border encodes apparent scale: a subject further from the camera
yields a smaller strip and a larger border.

Every step returns the affine map from its input pixel coordinates to
its output pixel coordinates, and :func:`preprocess` composes them into
a single original-frame -> canvas transform, so annotations can be
carried through exactly instead of being re-detected.

Pixel coordinates are (x, y) with the origin at the top-left pixel
centre, x rightward, y downward. Arrays are indexed [row, col].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, OversizeError, ValidationError

CANVAS_W = 390
CANVAS_H = 85
CROP_FACTOR = 1.5


def _check_frame(image: np.ndarray, stage: str) -> np.ndarray:
    a = np.asarray(image)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise ValidationError(f"{stage}: expected a 2D uint8 array, got "
                              f"ndim={a.ndim} dtype={a.dtype}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"{stage}: empty frame")
    return a


@dataclass(frozen=True)
class AffineTransform2D:
    """Affine map of pixel coordinates, p_out = A @ p_in + t.

    `matrix` is 2x3 with the translation in the last column.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 3):
            raise ValidationError("affine matrix must be 2x3")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "AffineTransform2D":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "AffineTransform2D":
        return cls(np.array([[1.0, 0.0, float(dx)], [0.0, 1.0, float(dy)]]))

    @classmethod
    def rotation_about(cls, cx: float, cy: float, angle_deg: float) -> "AffineTransform2D":
        """Rotation by `angle_deg` about (cx, cy), positive x-toward-y.

        With y down this turns image content clockwise on screen.
        """
        th = math.radians(angle_deg)
        c, s = math.cos(th), math.sin(th)
        tx = cx - c * cx + s * cy
        ty = cy - s * cx - c * cy
        return cls(np.array([[c, -s, tx], [s, c, ty]]))

    @property
    def linear(self) -> np.ndarray:
        return self.matrix[:, :2]

    @property
    def offset(self) -> np.ndarray:
        return self.matrix[:, 2]

    def apply(self, points) -> np.ndarray:
        """Map one (2,) point or an (N, 2) batch."""
        p = np.asarray(points, dtype=float)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        if p.shape[-1] != 2:
            raise ValidationError("points must have two coordinates")
        out = p @ self.linear.T + self.offset
        return out[0] if single else out

    def then(self, other: "AffineTransform2D") -> "AffineTransform2D":
        """Composite that applies self first, `other` second."""
        a = other.linear @ self.linear
        t = other.linear @ self.offset + other.offset
        return AffineTransform2D(np.column_stack([a, t]))

    def inverse(self) -> "AffineTransform2D":
        det = float(np.linalg.det(self.linear))
        if abs(det) < 1e-12:
            raise ValidationError("transform is not invertible")
        ainv = np.linalg.inv(self.linear)
        return AffineTransform2D(np.column_stack([ainv, -ainv @ self.offset]))

    def is_rigid(self, tol: float = 1e-9) -> bool:
        return bool(np.allclose(self.linear @ self.linear.T, np.eye(2), atol=tol))

    def to_dict(self) -> dict:
        return {"matrix": self.matrix.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform2D":
        return cls(np.asarray(d["matrix"], dtype=float))


def roll_angle(corner_a, corner_b) -> float:
    """Roll of the eye line through two corner points, degrees in (-90, 90].

    The line is undirected, so the angle is reduced mod 180 and the
    corner order does not matter.
    """
    a = np.asarray(corner_a, dtype=float)
    b = np.asarray(corner_b, dtype=float)
    dx, dy = float(b[0] - a[0]), float(b[1] - a[1])
    if math.hypot(dx, dy) < 1e-9:
        raise DegenerateInputError("eye corners coincide", stage="roll")
    ang = math.degrees(math.atan2(dy, dx))
    if ang <= -90.0:
        ang += 180.0
    elif ang > 90.0:
        ang -= 180.0
    return ang


def _bilinear_sample(image: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear lookup at float coordinates; outside the frame reads 0."""
    h, w = image.shape
    img = image.astype(np.float64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape, dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            weight = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += weight * np.where(inside, vals, 0.0)
    return out


def normalize_roll(image: np.ndarray, corner_a, corner_b):
    """Rotate the frame so the corner line is horizontal.

    Rotates by -roll about the corner midpoint with bilinear resampling
    (zero fill outside the frame); the frame size is unchanged. Returns
    ``(rotated, transform)`` with `transform` mapping input pixels to
    output pixels.
    """
    image = _check_frame(image, "roll")
    theta = roll_angle(corner_a, corner_b)
    a = np.asarray(corner_a, dtype=float)
    b = np.asarray(corner_b, dtype=float)
    mid = 0.5 * (a + b)
    transform = AffineTransform2D.rotation_about(mid[0], mid[1], -theta)
    if abs(theta) < 1e-12:
        return image.copy(), transform
    inv = transform.inverse()
    h, w = image.shape
    ys, xs = np.mgrid[0.0:h, 0.0:w]
    src = np.stack([xs.ravel(), ys.ravel()], axis=1) @ inv.linear.T + inv.offset
    vals = _bilinear_sample(image, src[:, 0].reshape(h, w), src[:, 1].reshape(h, w))
    rotated = np.clip(np.rint(vals), 0, 255).astype(np.uint8)
    return rotated, transform


def crop_strip(image: np.ndarray, corner_a, corner_b):
    """Crop the eye strip around the corner midpoint.

    The strip is ``round(CROP_FACTOR * corner_distance)`` wide and keeps
    the canvas aspect ratio; regions outside the frame fill with zero.
    Returns ``(strip, transform)``.
    """
    image = _check_frame(image, "crop")
    a = np.asarray(corner_a, dtype=float)
    b = np.asarray(corner_b, dtype=float)
    d = float(np.linalg.norm(b - a))
    if d < 1e-9:
        raise DegenerateInputError("eye corners coincide", stage="crop")
    w_c = int(np.rint(CROP_FACTOR * d))
    h_c = int(np.rint(w_c * CANVAS_H / CANVAS_W))
    if w_c < 2 or h_c < 2:
        raise DegenerateInputError(f"corner distance {d:.3f} px collapses the strip", stage="crop")
    mid = 0.5 * (a + b)
    # integer corner so the crop is a pure pixel translation
    x0 = int(np.rint(mid[0] - (w_c - 1) / 2.0))
    y0 = int(np.rint(mid[1] - (h_c - 1) / 2.0))
    strip = np.zeros((h_c, w_c), dtype=np.uint8)
    h, w = image.shape
    sx0, sx1 = max(x0, 0), min(x0 + w_c, w)
    sy0, sy1 = max(y0, 0), min(y0 + h_c, h)
    if sx0 < sx1 and sy0 < sy1:
        strip[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = image[sy0:sy1, sx0:sx1]
    return strip, AffineTransform2D.translation(-x0, -y0)


@dataclass(eq=False)
class ProcessedSample:
    """A canvas-sized strip plus everything needed to trace it back."""

    canvas: np.ndarray
    transform: AffineTransform2D
    border_fraction: float
    roll_deg: float
    strip_size: tuple[int, int]
    landmarks: dict[str, np.ndarray] | None = None

    def to_dict(self) -> dict:
        d = {
            "transform": self.transform.to_dict(),
            "border_fraction": self.border_fraction,
            "roll_deg": self.roll_deg,
            "strip_size": list(self.strip_size),
        }
        if self.landmarks is not None:
            d["landmarks"] = {k: np.asarray(v).tolist() for k, v in self.landmarks.items()}
        return d


def pad_to_canvas(strip: np.ndarray, landmarks=None, prior_transform=None,
                  roll_deg: float = 0.0) -> ProcessedSample:
    """Centre the strip on the 390x85 canvas, zero border.

    A strip larger than the canvas raises OversizeError rather than
    scaling: apparent size is the depth cue and must survive. With an
    odd gap the extra pixel goes right/bottom. `landmarks` are original
    frame coordinates and are mapped by ``prior_transform`` plus the
    padding shift; `border_fraction` is the zero-border share of the
    canvas area.
    """
    strip = _check_frame(strip, "pad")
    h, w = strip.shape
    if w > CANVAS_W or h > CANVAS_H:
        raise OversizeError(f"strip {w}x{h} exceeds canvas {CANVAS_W}x{CANVAS_H}", stage="pad")
    left = (CANVAS_W - w) // 2
    top = (CANVAS_H - h) // 2
    canvas = np.zeros((CANVAS_H, CANVAS_W), dtype=np.uint8)
    canvas[top:top + h, left:left + w] = strip
    shift = AffineTransform2D.translation(left, top)
    total = shift if prior_transform is None else prior_transform.then(shift)
    mapped = None
    if landmarks is not None:
        mapped = {k: total.apply(np.asarray(v, dtype=float)) for k, v in landmarks.items()}
    border = 1.0 - (w * h) / float(CANVAS_W * CANVAS_H)
    return ProcessedSample(canvas=canvas, transform=total, border_fraction=border,
                           roll_deg=roll_deg, strip_size=(w, h), landmarks=mapped)


def preprocess(image: np.ndarray, outer_left_px, outer_right_px,
               landmarks=None) -> ProcessedSample:
    """Full chain: roll normalization, corner crop, canvas padding.

    `outer_left_px` / `outer_right_px` are the outer eye corners in the
    input frame; `landmarks` (optional dict of frame-coordinate points)
    come back mapped onto the canvas.
    """
    rolled, t_roll = normalize_roll(image, outer_left_px, outer_right_px)
    a2 = t_roll.apply(np.asarray(outer_left_px, dtype=float))
    b2 = t_roll.apply(np.asarray(outer_right_px, dtype=float))
    strip, t_crop = crop_strip(rolled, a2, b2)
    theta = roll_angle(outer_left_px, outer_right_px)
    return pad_to_canvas(strip, landmarks=landmarks,
                         prior_transform=t_roll.then(t_crop), roll_deg=theta)
